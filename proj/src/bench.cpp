#include "collectium/bench.hpp"

#include <algorithm>
#include <bit>
#include <functional>
#include <iterator>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/core.h>

#include "collectium/paramserver.hpp"
#include "collectium/sim_transport.hpp"
#include "collectium/socket_transport.hpp"

namespace collectium {

namespace {

constexpr int kTagDigestGather = 0x300;
constexpr int kTagDigestVerdict = 0x301;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Values in [-1, 1) with 24 significant bits, exact in float32.
std::vector<float> seeded_values(std::size_t count, std::uint64_t stream) {
  std::vector<float> v(count);
  std::uint64_t state = splitmix64(stream);
  for (auto& x : v) {
    state = splitmix64(state);
    const auto mantissa = static_cast<float>(state >> 40);
    x = mantissa * (2.0f / 16777216.0f) - 1.0f;
  }
  return v;
}

std::uint64_t stream_id(std::uint64_t seed, std::int64_t iteration, std::size_t layer,
                        RankId rank) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(iteration));
  h = splitmix64(h ^ layer);
  return splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(rank)));
}

std::size_t payload_elements(const LayerSpec& layer, double scale) {
  const double elems = std::llround(layer.gradient_bytes / 4.0 * scale);
  return static_cast<std::size_t>(std::max(1.0, elems));
}

std::string layer_name(std::size_t i) { return fmt::format("layer_{:03d}", i); }

std::string expand_rank(const std::string& pattern, RankId rank) {
  std::string out = pattern;
  for (auto pos = out.find("%r"); pos != std::string::npos; pos = out.find("%r")) {
    out.replace(pos, 2, std::to_string(rank));
  }
  return out;
}

void write_text(const std::string& path, const std::string& text, std::ostream& fallback) {
  if (path.empty()) {
    fallback << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) {
    throw ConfigError(fmt::format("cannot write output file {}", path));
  }
  f << text;
}

template <typename T>
T get_field(const nlohmann::json& value, std::string_view key) {
  try {
    return value.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("config field '{}': {}", key, e.what()));
  }
}

template <typename Parse>
auto parse_field(const nlohmann::json& value, std::string_view key, Parse parse) {
  const auto text = get_field<std::string>(value, key);
  try {
    return parse(text);
  } catch (const ParameterError& e) {
    throw ConfigError(fmt::format("config field '{}': {}", key, e.what()));
  }
}

BenchMode parse_mode(std::string_view s) {
  if (s == "microbench") return BenchMode::kMicrobench;
  if (s == "train") return BenchMode::kTrain;
  if (s == "sweep") return BenchMode::kSweep;
  throw ParameterError(fmt::format("unknown mode '{}'", s));
}

TransportKind parse_transport(std::string_view s) {
  if (s == "sim") return TransportKind::kSim;
  if (s == "socket") return TransportKind::kSocket;
  throw ParameterError(fmt::format("unknown transport '{}'", s));
}

TrainingOptions training_options(const BenchConfig& cfg) {
  TrainingOptions o;
  o.fusion.threshold_bytes = cfg.fusion_threshold;
  o.algo = cfg.algo;
  o.switch_bytes = cfg.switch_bytes;
  o.cache_policy = cfg.cache_policy;
  return o;
}

Tensor vector_tensor(std::vector<double> values) { return Tensor("stats", std::move(values)); }

}  // namespace

std::string_view mode_name(BenchMode mode) {
  switch (mode) {
    case BenchMode::kMicrobench:
      return "microbench";
    case BenchMode::kTrain:
      return "train";
    case BenchMode::kSweep:
      return "sweep";
  }
  return "unknown";
}

std::string_view transport_name(TransportKind kind) {
  return kind == TransportKind::kSim ? "sim" : "socket";
}

void BenchConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (p < 1) fail(fmt::format("p must be >= 1, got {}", p));
  if (timed_iters < 1) fail("timed_iters must be >= 1");
  if (warmup_iters < 0) fail("warmup_iters must be >= 0");
  if (switch_bytes == 0) fail("switch_bytes must be > 0");
  if (fusion_threshold == 0) fail("fusion_threshold must be > 0");
  if (min_bytes < 4 || !std::has_single_bit(min_bytes)) {
    fail("min_bytes must be a power of two >= 4");
  }
  if (max_bytes < min_bytes) fail("max_bytes must be >= min_bytes");
  if (!(payload_scale > 0) || payload_scale > 1) fail("payload_scale must be in (0, 1]");
  if (recv_timeout_s <= 0 || connect_timeout_s <= 0) fail("timeouts must be positive");
  if (mode == BenchMode::kSweep && (p_list.empty() || models.empty() || strategies.empty())) {
    fail("sweep needs non-empty p_list, models, and strategies");
  }
  for (int q : p_list) {
    if (q < 1) fail(fmt::format("p_list entries must be >= 1, got {}", q));
  }
  try {
    costs.validate();
  } catch (const ParameterError& e) {
    fail(e.what());
  }
  if (transport == TransportKind::kSocket && mode != BenchMode::kSweep && hostfile.empty()) {
    fail("socket transport needs a hostfile");
  }
}

nlohmann::json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError(fmt::format("cannot open config file {}", path));
  }
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
    const auto last_nl = text.rfind('\n', upto == 0 ? 0 : upto - 1);
    const std::size_t column = last_nl == std::string::npos ? upto : upto - last_nl - 1;
    throw ConfigError(fmt::format("{}:{}:{}: invalid JSON: {}", path, line, column, e.what()));
  }
}

BenchConfig config_from_json(const nlohmann::json& j, BenchConfig cfg) {
  if (!j.is_object()) {
    throw ConfigError("config must be a JSON object");
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "mode") cfg.mode = parse_field(value, key, parse_mode);
    else if (key == "transport") cfg.transport = parse_field(value, key, parse_transport);
    else if (key == "algo") cfg.algo = parse_field(value, key, parse_algorithm);
    else if (key == "switch_bytes") cfg.switch_bytes = get_field<std::size_t>(value, key);
    else if (key == "fusion_threshold") cfg.fusion_threshold = get_field<std::size_t>(value, key);
    else if (key == "strategy") cfg.strategy = parse_field(value, key, parse_strategy);
    else if (key == "model") cfg.model = get_field<std::string>(value, key);
    else if (key == "model_spec") cfg.model_spec = get_field<std::string>(value, key);
    else if (key == "p") cfg.p = get_field<int>(value, key);
    else if (key == "warmup_iters") cfg.warmup_iters = get_field<int>(value, key);
    else if (key == "timed_iters") cfg.timed_iters = get_field<int>(value, key);
    else if (key == "seed") cfg.seed = get_field<std::uint64_t>(value, key);
    else if (key == "output") cfg.output = get_field<std::string>(value, key);
    else if (key == "min_bytes") cfg.min_bytes = get_field<std::size_t>(value, key);
    else if (key == "max_bytes") cfg.max_bytes = get_field<std::size_t>(value, key);
    else if (key == "payload_scale") cfg.payload_scale = get_field<double>(value, key);
    else if (key == "learning_rate") cfg.learning_rate = get_field<double>(value, key);
    else if (key == "cache_policy") cfg.cache_policy = parse_field(value, key, parse_cache_policy);
    else if (key == "hostfile") cfg.hostfile = get_field<std::string>(value, key);
    else if (key == "rank") cfg.rank = get_field<int>(value, key);
    else if (key == "recv_timeout_s") cfg.recv_timeout_s = get_field<double>(value, key);
    else if (key == "connect_timeout_s") cfg.connect_timeout_s = get_field<double>(value, key);
    else if (key == "digest_output") cfg.digest_output = get_field<std::string>(value, key);
    else if (key == "p_list") cfg.p_list = get_field<std::vector<int>>(value, key);
    else if (key == "models") cfg.models = get_field<std::vector<std::string>>(value, key);
    else if (key == "strategies") {
      cfg.strategies.clear();
      for (const auto& name : get_field<std::vector<std::string>>(value, key)) {
        try {
          cfg.strategies.push_back(parse_strategy(name));
        } catch (const ParameterError& e) {
          throw ConfigError(fmt::format("config field 'strategies': {}", e.what()));
        }
      }
    } else if (key == "cost_model") {
      // Partial objects overlay the current costs.
      nlohmann::json merged = to_json(cfg.costs);
      if (!value.is_object()) throw ConfigError("config field 'cost_model' must be an object");
      merged.update(value);
      try {
        cfg.costs = cost_model_from_json(merged);
      } catch (const ParameterError& e) {
        throw ConfigError(fmt::format("config field 'cost_model': {}", e.what()));
      }
    } else {
      throw ConfigError(fmt::format("unknown config field '{}'", key));
    }
  }
  cfg.validate();
  return cfg;
}

ModelSpec resolve_model(const BenchConfig& cfg) {
  try {
    if (!cfg.model_spec.empty()) {
      std::ifstream in(cfg.model_spec);
      if (!in) throw ConfigError(fmt::format("cannot open model spec {}", cfg.model_spec));
      return model_from_json(nlohmann::json::parse(in));
    }
    return builtin_model(cfg.model);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("model spec {}: {}", cfg.model_spec, e.what()));
  }
}

GradientSet synthesize_gradients(const ModelSpec& model, double payload_scale, std::uint64_t seed,
                                 std::int64_t iteration, RankId rank) {
  GradientSet g;
  g.iteration = iteration;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    g.tensors.emplace_back(layer_name(i),
                           seeded_values(payload_elements(model.layers[i], payload_scale),
                                         stream_id(seed, iteration, i, rank)));
  }
  return g;
}

ParamSet initial_params(const ModelSpec& model, double payload_scale, std::uint64_t seed) {
  ParamSet params;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    params.emplace(layer_name(i),
                   Tensor(layer_name(i), seeded_values(payload_elements(model.layers[i], payload_scale),
                                                       stream_id(seed, -1, i, -1))));
  }
  return params;
}

std::uint64_t digest(const GradientSet& grads) {
  std::uint64_t h = fnv1a64(std::string_view{});
  for (const auto& t : grads.tensors) {
    h = fnv1a64(std::as_bytes(std::span(t.name().data(), t.name().size())), h);
    h = fnv1a64(t.bytes(), h);
  }
  return h;
}

std::uint64_t digest(const ParamSet& params) {
  std::uint64_t h = fnv1a64(std::string_view{});
  for (const auto& [name, t] : params) {
    h = fnv1a64(std::as_bytes(std::span(name.data(), name.size())), h);
    h = fnv1a64(t.bytes(), h);
  }
  return h;
}

void verify_consistent(Transport& transport, std::uint64_t value, std::string_view what) {
  const int p = transport.size();
  if (p == 1) return;
  std::uint8_t verdict = 1;
  if (transport.rank() == 0) {
    for (RankId src = 1; src < p; ++src) {
      if (payload_as<std::uint64_t>(transport.recv(src, kTagDigestGather)) != value) verdict = 0;
    }
    for (RankId dst = 1; dst < p; ++dst) {
      transport.send(dst, kTagDigestVerdict, as_payload(verdict));
    }
  } else {
    transport.send(0, kTagDigestGather, as_payload(value));
    verdict = payload_as<std::uint8_t>(transport.recv(0, kTagDigestVerdict));
  }
  if (verdict == 0) {
    throw InvariantViolation(fmt::format("ranks disagree on {}", what));
  }
}

std::vector<std::size_t> message_sizes(const BenchConfig& cfg) {
  std::vector<std::size_t> sizes;
  for (std::size_t s = cfg.min_bytes; s <= cfg.max_bytes; s *= 2) {
    sizes.push_back(s);
    if (s > (std::size_t{1} << 62)) break;
  }
  return sizes;
}

std::vector<MicrobenchRow> run_microbench(const BenchConfig& cfg) {
  cfg.validate();
  const int p = cfg.p;
  SimNetwork net(p, cfg.costs.sim_config());
  std::vector<MicrobenchRow> rows;
  for (std::size_t bytes : message_sizes(cfg)) {
    MicrobenchRow row;
    row.message_bytes = bytes;
    row.p = p;
    row.algo = resolve_algorithm(cfg.algo, bytes, cfg.switch_bytes);
    double sum = 0;
    double lo = 0;
    double hi = 0;
    const int total = cfg.warmup_iters + cfg.timed_iters;
    for (int it = 0; it < total; ++it) {
      std::vector<CollectiveStats> stats(static_cast<std::size_t>(p));
      std::vector<std::uint64_t> digests(static_cast<std::size_t>(p));
      net.reset();
      net.run([&](Transport& t) {
        const auto r = static_cast<std::size_t>(t.rank());
        Tensor input("msg", seeded_values(bytes / 4, stream_id(cfg.seed, it, bytes, t.rank())));
        AllreduceResult res = allreduce(input, ReduceOp::kSum, t, cfg.algo, cfg.switch_bytes);
        stats[r] = res.stats;
        digests[r] = fnv1a64(res.tensor.bytes());
      });
      int messages = 0;
      for (RankId r = 0; r < p; ++r) {
        const auto& s = stats[static_cast<std::size_t>(r)];
        if (net.log().counters(r).messages_sent != static_cast<std::uint64_t>(s.messages_per_rank)) {
          throw InvariantViolation(fmt::format("rank {} message count disagrees with event log", r));
        }
        if (digests[static_cast<std::size_t>(r)] != digests[0]) {
          throw InvariantViolation(fmt::format("{} B allreduce results differ across ranks", bytes));
        }
        messages = std::max(messages, s.messages_per_rank);
      }
      if (net.log().total_bytes_sent() != net.log().total_bytes_received()) {
        throw InvariantViolation("bytes sent and received do not balance");
      }
      row.messages_per_rank = messages;
      if (it < cfg.warmup_iters) continue;
      const double latency = net.max_virtual_time();
      sum += latency;
      lo = it == cfg.warmup_iters ? latency : std::min(lo, latency);
      hi = it == cfg.warmup_iters ? latency : std::max(hi, latency);
    }
    row.mean_latency_s = sum / cfg.timed_iters;
    row.min_latency_s = lo;
    row.max_latency_s = hi;
    rows.push_back(row);
  }
  return rows;
}

std::vector<MicrobenchRow> run_microbench_rank(const BenchConfig& cfg, Transport& transport) {
  using Clock = std::chrono::steady_clock;
  const int p = transport.size();
  std::vector<MicrobenchRow> rows;
  for (std::size_t bytes : message_sizes(cfg)) {
    const int total = cfg.warmup_iters + cfg.timed_iters;
    std::vector<double> samples;  // timed latencies, then message count
    double messages = 0;
    for (int it = 0; it < total; ++it) {
      Tensor input("msg", seeded_values(bytes / 4, stream_id(cfg.seed, it, bytes, transport.rank())));
      const auto before = transport.log().counters(transport.rank()).messages_sent;
      const auto t0 = Clock::now();
      AllreduceResult res = allreduce(input, ReduceOp::kSum, transport, cfg.algo, cfg.switch_bytes);
      const auto t1 = Clock::now();
      const auto after = transport.log().counters(transport.rank()).messages_sent;
      if (after - before != static_cast<std::uint64_t>(res.stats.messages_per_rank)) {
        throw InvariantViolation("message count disagrees with event log");
      }
      verify_consistent(transport, fnv1a64(res.tensor.bytes()), "microbench allreduce result");
      messages = res.stats.messages_per_rank;
      if (it >= cfg.warmup_iters) {
        samples.push_back(std::chrono::duration<double>(t1 - t0).count());
      }
    }
    samples.push_back(messages);
    // Max over ranks so every rank reports the same row.
    auto maxed = allreduce_flat(vector_tensor(samples), ReduceOp::kMax, transport).tensor;
    auto values = maxed.values<double>();
    MicrobenchRow row;
    row.message_bytes = bytes;
    row.p = p;
    row.algo = resolve_algorithm(cfg.algo, bytes, cfg.switch_bytes);
    row.messages_per_rank = static_cast<int>(values.back());
    auto timed = values.first(values.size() - 1);
    row.min_latency_s = *std::min_element(timed.begin(), timed.end());
    row.max_latency_s = *std::max_element(timed.begin(), timed.end());
    double sum = 0;
    for (double v : timed) sum += v;
    row.mean_latency_s = sum / static_cast<double>(timed.size());
    rows.push_back(row);
  }
  return rows;
}

std::string microbench_csv(const std::vector<MicrobenchRow>& rows) {
  std::ostringstream out;
  out << kMicrobenchCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.message_bytes << ',' << algorithm_name(r.algo) << ',' << r.p << ','
        << format_float(r.mean_latency_s) << ',' << r.messages_per_rank << ','
        << format_float(r.min_latency_s) << ',' << format_float(r.max_latency_s) << '\n';
  }
  return out.str();
}

TrainRow run_train_bench_rank(const BenchConfig& cfg, Transport& transport) {
  using Clock = std::chrono::steady_clock;
  const ModelSpec model = resolve_model(cfg);
  const int p = transport.size();
  const RankId me = transport.rank();

  AggregateOptions agg;
  agg.algo = cfg.algo;
  agg.switch_bytes = cfg.switch_bytes;
  agg.fusion.threshold_bytes = cfg.fusion_threshold;
  agg.cache_policy = cfg.cache_policy;
  if (cfg.strategy == Strategy::kBaiduRing) {
    agg.algo = Algorithm::kRing;
    agg.fusion.threshold_bytes = 1;
  }
  BufferRegistry registry(static_cast<std::uint64_t>(cfg.costs.driver_query_delay * 1e9));
  agg.registry = &registry;

  ParamSet params = initial_params(model, cfg.payload_scale, cfg.seed);
  std::vector<RankId> everyone(static_cast<std::size_t>(p));
  for (RankId r = 0; r < p; ++r) everyone[static_cast<std::size_t>(r)] = r;
  std::vector<std::string> names;
  for (const auto& [name, t] : params) names.push_back(name);
  const PsTopology topology = PsTopology::round_robin(everyone, everyone, names);
  PsStepOptions ps_options;
  ps_options.timeout_s = cfg.recv_timeout_s;

  TrainRow row;
  row.model = model.name;
  row.strategy = cfg.strategy;
  row.p = p;
  std::vector<double> comm_seconds;
  const int total = cfg.warmup_iters + cfg.timed_iters;
  for (int it = 0; it < total; ++it) {
    const GradientSet grads = synthesize_gradients(model, cfg.payload_scale, cfg.seed, it, me);
    std::uint64_t d = 0;
    const auto t0 = Clock::now();
    if (cfg.strategy == Strategy::kPsPull) {
      ps_training_step(transport, topology, grads, params, cfg.learning_rate, ps_options);
      d = digest(params);
    } else {
      const GradientSet mean = aggregate(grads, transport, agg);
      apply_sgd(params, mean, cfg.learning_rate);
      d = digest(mean);
    }
    const auto t1 = Clock::now();
    verify_consistent(transport, d, fmt::format("iteration {} results", it));
    row.iteration_digests.push_back(d);
    if (it >= cfg.warmup_iters) {
      comm_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  }
  row.final_digest = row.iteration_digests.back();

  const double compute = model.forward_seconds + model.backward_seconds();
  const double batch = model.batch_size;
  row.ideal = batch / compute * p;
  if (transport.simulated()) {
    const ThroughputReport report =
        simulate_training_step(model, p, cfg.strategy, cfg.costs, training_options(cfg));
    row.images_per_sec = report.images_per_sec;
    row.ideal = report.ideal_images_per_sec;
  } else {
    auto maxed = allreduce_flat(vector_tensor(comm_seconds), ReduceOp::kMax, transport).tensor;
    double step_sum = 0;
    for (double c : maxed.values<double>()) step_sum += compute + (p > 1 ? c : 0.0);
    row.images_per_sec = p * batch / (step_sum / cfg.timed_iters);
  }
  row.efficiency = row.images_per_sec / row.ideal;
  return row;
}

TrainRow run_train_bench(const BenchConfig& cfg) {
  cfg.validate();
  resolve_model(cfg);
  SimNetwork net(cfg.p, cfg.costs.sim_config());
  std::vector<TrainRow> rows(static_cast<std::size_t>(cfg.p));
  net.run([&](Transport& t) { rows[static_cast<std::size_t>(t.rank())] = run_train_bench_rank(cfg, t); });
  return rows.front();
}

std::string train_csv(const std::vector<TrainRow>& rows) {
  std::ostringstream out;
  out << kTrainCsvHeader << '\n';
  for (const auto& r : rows) {
    out << r.model << ',' << strategy_name(r.strategy) << ',' << r.p << ','
        << format_float(r.images_per_sec) << ',' << format_float(r.ideal) << ','
        << format_float(r.efficiency) << '\n';
  }
  return out.str();
}

std::vector<ThroughputReport> run_sweep(const BenchConfig& cfg) {
  cfg.validate();
  std::vector<ModelSpec> models;
  try {
    for (const auto& name : cfg.models) models.push_back(builtin_model(name));
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (!cfg.model_spec.empty()) models.push_back(resolve_model(cfg));
  return sweep(models, cfg.strategies, cfg.p_list, cfg.costs, training_options(cfg));
}

namespace {

std::string digest_text(const TrainRow& row, RankId rank) {
  std::string text = fmt::format("rank {} final_digest {:016x}\n", rank, row.final_digest);
  for (std::size_t i = 0; i < row.iteration_digests.size(); ++i) {
    text += fmt::format("iteration {} {:016x}\n", i, row.iteration_digests[i]);
  }
  return text;
}

int guarded(std::ostream& err, const std::function<void()>& body) {
  try {
    body();
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParameterError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvalidGroupError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const InvariantViolation& e) {
    err << "invariant violation: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const ShapeError& e) {
    err << "invariant violation: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const Error& e) {
    // Transport, routing, deadlock, and stalled-producer failures.
    err << "transport error: " << e.what() << '\n';
    return kExitTransport;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int run_bench(const BenchConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.transport == TransportKind::kSocket && cfg.mode != BenchMode::kSweep) {
    return launch_socket_group(cfg, out, err);
  }
  return guarded(err, [&] {
    cfg.validate();
    switch (cfg.mode) {
      case BenchMode::kSweep:
        write_text(cfg.output, sweep_csv(run_sweep(cfg)), out);
        break;
      case BenchMode::kMicrobench:
        write_text(cfg.output, microbench_csv(run_microbench(cfg)), out);
        break;
      case BenchMode::kTrain: {
        const TrainRow row = run_train_bench(cfg);
        write_text(cfg.output, train_csv({row}), out);
        if (!cfg.digest_output.empty()) {
          write_text(expand_rank(cfg.digest_output, 0), digest_text(row, 0), out);
        }
        break;
      }
    }
  });
}

int launch_socket_group(const BenchConfig& cfg, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.validate();
    std::vector<HostEntry> hosts;
    try {
      hosts = load_hostfile(cfg.hostfile);
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    const int nprocs = static_cast<int>(hosts.size());
    RankId rank = cfg.rank;
    if (rank < 0) {
      const char* env = std::getenv(kEnvRank);
      if (env == nullptr) {
        throw ConfigError(fmt::format("no rank given: pass --rank or set {}", kEnvRank));
      }
      char* end = nullptr;
      rank = static_cast<RankId>(std::strtol(env, &end, 10));
      if (end == env || *end != '\0') {
        throw ConfigError(fmt::format("{}='{}' is not an integer", kEnvRank, env));
      }
    }
    if (const char* env = std::getenv(kEnvNprocs); env != nullptr && std::atoi(env) != nprocs) {
      throw ConfigError(fmt::format("{}={} but the hostfile lists {} ranks", kEnvNprocs, env, nprocs));
    }
    if (rank < 0 || rank >= nprocs) {
      throw ConfigError(fmt::format("rank {} is not in the hostfile ({} ranks)", rank, nprocs));
    }
    if (cfg.p != 1 && cfg.p != nprocs) {
      throw ConfigError(fmt::format("p={} but the hostfile lists {} ranks", cfg.p, nprocs));
    }
    BenchConfig local = cfg;
    local.p = nprocs;
    local.rank = rank;

    SocketOptions options;
    options.recv_timeout_s = cfg.recv_timeout_s;
    options.connect_timeout_s = cfg.connect_timeout_s;
    auto transport = SocketTransport::connect(hosts, rank, options);
    const std::string output = expand_rank(cfg.output, rank);
    if (cfg.mode == BenchMode::kMicrobench) {
      write_text(output, microbench_csv(run_microbench_rank(local, *transport)), out);
    } else {
      const TrainRow row = run_train_bench_rank(local, *transport);
      write_text(output, train_csv({row}), out);
      if (!cfg.digest_output.empty()) {
        write_text(expand_rank(cfg.digest_output, rank), digest_text(row, rank), out);
      }
    }
  });
}

}  // namespace collectium
