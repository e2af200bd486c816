#include "collectium/simcost.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include <fmt/core.h>

namespace collectium {

void CostModel::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0 || driver_query_delay < 0) {
    throw ParameterError("cost model parameters must be non-negative");
  }
  if (parallel_channels < 1) {
    throw ParameterError("parallel_channels must be >= 1");
  }
}

SimConfig CostModel::sim_config() const {
  validate();
  SimConfig cfg;
  cfg.link = LinkModel{alpha, beta};
  cfg.gamma = gamma;
  cfg.channels = parallel_channels;
  return cfg;
}

CostModel cost_model_from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ParameterError("cost model must be a JSON object");
  }
  CostModel c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "alpha") c.alpha = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "gamma") c.gamma = value.get<double>();
      else if (key == "driver_query_delay") c.driver_query_delay = value.get<double>();
      else if (key == "parallel_channels") c.parallel_channels = value.get<int>();
      else throw ParameterError(fmt::format("cost model: unknown field '{}'", key));
    } catch (const nlohmann::json::exception& e) {
      throw ParameterError(fmt::format("cost model field '{}': {}", key, e.what()));
    }
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const CostModel& c) {
  return nlohmann::json{{"alpha", c.alpha},
                        {"beta", c.beta},
                        {"gamma", c.gamma},
                        {"driver_query_delay", c.driver_query_delay},
                        {"parallel_channels", c.parallel_channels}};
}

double predict_allreduce_time(Algorithm algo, double n_bytes, int p, const CostModel& costs,
                              std::size_t switch_bytes) {
  if (p < 1) {
    throw InvalidGroupError(fmt::format("p must be >= 1, got {}", p));
  }
  if (n_bytes < 0) {
    throw ParameterError("message size must be non-negative");
  }
  if (p == 1) {
    return 0.0;
  }
  const double a = costs.alpha;
  const double b = costs.beta;
  const double g = costs.gamma;
  const double pm1 = p - 1;
  const double frac = pm1 / p;
  switch (resolve_algorithm(algo, static_cast<std::size_t>(n_bytes), switch_bytes)) {
    case Algorithm::kRing:
      return 2 * pm1 * a + 2 * frac * n_bytes * b + frac * n_bytes * g;
    case Algorithm::kFlat:
      return 2 * pm1 * a + 2 * pm1 * n_bytes * b + pm1 * n_bytes * g;
    case Algorithm::kRhd: {
      const int pow2 = static_cast<int>(std::bit_floor(static_cast<unsigned>(p)));
      const double steps = std::countr_zero(static_cast<unsigned>(pow2));
      const double core_frac = static_cast<double>(pow2 - 1) / pow2;
      double t = 2 * steps * a + 2 * core_frac * n_bytes * b + core_frac * n_bytes * g;
      if (pow2 != p) {
        t += 2 * (a + n_bytes * b) + n_bytes * g;
      }
      return t;
    }
    case Algorithm::kAuto:
      break;
  }
  throw ParameterError("predict_allreduce_time: unresolved algorithm");
}

double ModelSpec::total_gradient_bytes() const {
  double total = 0;
  for (const auto& l : layers) total += l.gradient_bytes;
  return total;
}

double ModelSpec::backward_seconds() const {
  double total = 0;
  for (const auto& l : layers) total += l.backward_seconds;
  return total;
}

void ModelSpec::validate() const {
  if (layers.empty()) {
    throw ParameterError(fmt::format("model '{}' has no layers", name));
  }
  if (!(forward_seconds > 0) || batch_size < 1) {
    throw ParameterError(fmt::format("model '{}': forward time and batch size must be positive", name));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!(layers[i].gradient_bytes > 0) || !(layers[i].backward_seconds > 0)) {
      throw ParameterError(
          fmt::format("model '{}': layer {} needs positive gradient bytes and backward time", name, i));
    }
  }
}

ModelSpec model_from_json(const nlohmann::json& j) {
  ModelSpec m;
  try {
    m.name = j.at("name").get<std::string>();
    m.forward_seconds = j.at("forward_seconds").get<double>();
    m.batch_size = j.value("batch_size", 64);
    for (const auto& layer : j.at("layers")) {
      m.layers.push_back(LayerSpec{layer.at("gradient_bytes").get<double>(),
                                   layer.at("backward_seconds").get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(fmt::format("model spec: {}", e.what()));
  }
  m.validate();
  return m;
}

nlohmann::json to_json(const ModelSpec& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers) {
    layers.push_back({{"gradient_bytes", l.gradient_bytes}, {"backward_seconds", l.backward_seconds}});
  }
  return {{"name", m.name},
          {"forward_seconds", m.forward_seconds},
          {"batch_size", m.batch_size},
          {"layers", layers}};
}

namespace {

// Layer sizes grow linearly with depth (later layers carry more weights);
// backward time is spread evenly. Sizes are rounded to whole float32 elements.
ModelSpec synthesize(std::string name, int layers, double total_bytes, double forward_s,
                     double backward_s) {
  ModelSpec m;
  m.name = std::move(name);
  m.forward_seconds = forward_s;
  const double weight_sum = layers * (layers + 1) / 2.0;
  for (int i = 0; i < layers; ++i) {
    const double share = (i + 1) / weight_sum;
    const double bytes = std::max(4.0, 4.0 * std::round(total_bytes * share / 4.0));
    m.layers.push_back(LayerSpec{bytes, backward_s / layers});
  }
  return m;
}

}  // namespace

ModelSpec builtin_model(std::string_view name) {
  // Parameter counts 4.2M / 25.6M / 88.9M float32 weights; compute per
  // batch of 64 scaled with per-image FLOPs.
  if (name == "mobilenet_like") return synthesize("mobilenet_like", 28, 16.9e6, 0.012, 0.024);
  if (name == "resnet50_like") return synthesize("resnet50_like", 54, 102.4e6, 0.087, 0.175);
  if (name == "nasnet_like") return synthesize("nasnet_like", 120, 355.6e6, 0.507, 1.014);
  throw ParameterError(fmt::format("unknown model '{}'", name));
}

std::vector<std::string> builtin_model_names() {
  return {"mobilenet_like", "resnet50_like", "nasnet_like"};
}

std::string_view strategy_name(Strategy strategy) {
  switch (strategy) {
    case Strategy::kHorovodAllreduce:
      return "horovod_allreduce";
    case Strategy::kBaiduRing:
      return "baidu_ring";
    case Strategy::kPsPull:
      return "ps_pull";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  if (name == "horovod_allreduce") return Strategy::kHorovodAllreduce;
  if (name == "baidu_ring") return Strategy::kBaiduRing;
  if (name == "ps_pull") return Strategy::kPsPull;
  throw ParameterError(fmt::format("unknown strategy '{}'", name));
}

ThroughputReport simulate_training_step(const ModelSpec& model, int p, Strategy strategy,
                                        const CostModel& costs, const TrainingOptions& options) {
  model.validate();
  costs.validate();
  if (p < 1) {
    throw InvalidGroupError(fmt::format("p must be >= 1, got {}", p));
  }
  if (options.fusion.threshold_bytes == 0) {
    throw ParameterError("fusion threshold must be > 0");
  }

  // Ready times, output layer first.
  const std::size_t n = model.layers.size();
  std::vector<double> ready(n);
  double t = model.forward_seconds;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t layer = n - 1 - k;
    t += model.layers[layer].backward_seconds;
    ready[k] = t;
  }
  const double backward_end = t;

  struct Transfer {
    double dispatch;
    double duration;
    std::size_t server = 0;
  };
  std::vector<Transfer> transfers;
  if (p > 1) {
    switch (strategy) {
      case Strategy::kHorovodAllreduce: {
        const double query = options.cache_policy == CachePolicy::kNoCache ? costs.driver_query_delay : 0.0;
        const double threshold = static_cast<double>(options.fusion.threshold_bytes);
        double open_bytes = 0;
        double open_ready = 0;
        bool open = false;
        auto close = [&] {
          transfers.push_back(Transfer{open_ready,
                                       predict_allreduce_time(options.algo, open_bytes, p, costs,
                                                              options.switch_bytes) +
                                           query});
          open = false;
        };
        for (std::size_t k = 0; k < n; ++k) {
          const double bytes = model.layers[n - 1 - k].gradient_bytes;
          if (open && open_bytes + bytes > threshold) close();
          if (!open) {
            open = true;
            open_bytes = 0;
          }
          open_bytes += bytes;
          open_ready = ready[k];
          if (bytes >= threshold) close();
        }
        if (open) close();
        break;
      }
      case Strategy::kBaiduRing:
        for (std::size_t k = 0; k < n; ++k) {
          transfers.push_back(Transfer{
              ready[k], predict_allreduce_time(Algorithm::kRing, model.layers[n - 1 - k].gradient_bytes, p, costs)});
        }
        break;
      case Strategy::kPsPull: {
        // Whole tensors live on p co-located servers, round-robin by layer.
        // An owner's ingress takes the other p-1 workers ceil((p-1)/k) at a
        // time, so each server is one lane.
        const double rounds = std::ceil(static_cast<double>(p - 1) / costs.parallel_channels);
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t layer = n - 1 - k;
          const double bytes = model.layers[layer].gradient_bytes;
          transfers.push_back(Transfer{ready[k],
                                       2 * rounds * (costs.alpha + bytes * costs.beta) +
                                           (p - 1) * bytes * costs.gamma,
                                       layer % static_cast<std::size_t>(p)});
        }
        break;
      }
    }
  }

  // Allreduce transfers share the worker's channels; PS transfers queue on
  // their owning server.
  const bool per_server = strategy == Strategy::kPsPull;
  std::vector<double> lanes(per_server ? static_cast<std::size_t>(p)
                                       : static_cast<std::size_t>(costs.parallel_channels),
                            0.0);
  double comm_end = 0.0;
  for (const Transfer& tr : transfers) {
    auto lane = per_server ? lanes.begin() + static_cast<std::ptrdiff_t>(tr.server)
                           : std::min_element(lanes.begin(), lanes.end());
    const double start = std::max(tr.dispatch, *lane);
    *lane = start + tr.duration;
    comm_end = std::max(comm_end, *lane);
  }

  ThroughputReport r;
  r.model = model.name;
  r.strategy = strategy;
  r.p = p;
  r.compute_seconds = backward_end;
  r.exposed_comm_seconds = std::max(0.0, comm_end - backward_end);
  r.step_seconds = backward_end + r.exposed_comm_seconds;
  const double batch = model.batch_size;
  r.images_per_sec = p * batch / r.step_seconds;
  r.ideal_images_per_sec = (batch / backward_end) * p;
  r.efficiency = r.images_per_sec / r.ideal_images_per_sec;
  return r;
}

std::vector<ThroughputReport> sweep(const std::vector<ModelSpec>& models,
                                    const std::vector<Strategy>& strategies,
                                    const std::vector<int>& p_list, const CostModel& costs,
                                    const TrainingOptions& options) {
  if (models.empty() || strategies.empty() || p_list.empty()) {
    throw ParameterError("sweep needs at least one model, strategy, and p");
  }
  std::vector<ThroughputReport> rows;
  for (const auto& m : models) {
    for (Strategy s : strategies) {
      for (int p : p_list) {
        rows.push_back(simulate_training_step(m, p, s, costs, options));
      }
    }
  }
  return rows;
}

std::string format_float(double value) { return fmt::format("{:.9g}", value); }

std::string sweep_csv(const std::vector<ThroughputReport>& reports) {
  std::ostringstream out;
  out << kSweepCsvHeader << '\n';
  for (const auto& r : reports) {
    out << r.model << ',' << strategy_name(r.strategy) << ',' << r.p << ','
        << format_float(r.images_per_sec) << ',' << format_float(r.ideal_images_per_sec) << ','
        << format_float(r.efficiency) << ',' << format_float(r.exposed_comm_seconds) << '\n';
  }
  return out.str();
}

}  // namespace collectium
