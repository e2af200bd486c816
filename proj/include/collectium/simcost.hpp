#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "collectium/aggregation.hpp"
#include "collectium/collectives.hpp"
#include "collectium/registry.hpp"
#include "collectium/sim_transport.hpp"
#include "json.hpp"

namespace collectium {

// Alpha-beta-gamma parameters. The defaults are the shipped calibration used
// by the benchmark CLI.
struct CostModel {
  double alpha = 5e-6;                // s per message
  double beta = 1e-9;                 // s per byte on the wire
  double gamma = 1e-11;               // s per byte reduced locally
  double driver_query_delay = 1e-6;   // s per buffer-kind driver query
  int parallel_channels = 1;

  void validate() const;
  SimConfig sim_config() const;
};

CostModel cost_model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CostModel& costs);

// Closed forms, p ranks, n bytes:
//   ring: 2(p-1)a + 2((p-1)/p) n b + ((p-1)/p) n g
//   rhd:  2 log2(p) a + 2((p-1)/p) n b + ((p-1)/p) n g     (p a power of two)
//         plus 2(a + n b) + n g for the fold/unfold when p is not
//   flat: 2(p-1)a + 2(p-1) n b + (p-1) n g                 (root serialised)
// kAuto resolves by switch_bytes first.
double predict_allreduce_time(Algorithm algo, double n_bytes, int p, const CostModel& costs,
                              std::size_t switch_bytes = kDefaultSwitchBytes);

struct LayerSpec {
  double gradient_bytes = 0.0;
  double backward_seconds = 0.0;  // per batch
};

struct ModelSpec {
  std::string name;
  std::vector<LayerSpec> layers;  // input to output
  double forward_seconds = 0.0;   // per batch
  int batch_size = 64;

  double total_gradient_bytes() const;
  double backward_seconds() const;
  void validate() const;
};

ModelSpec model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelSpec& model);

// Calibration artifacts with parameter bytes in ratio about 1 : 6 : 21 and
// per-batch compute ordered mobilenet < resnet50 < nasnet.
ModelSpec builtin_model(std::string_view name);
std::vector<std::string> builtin_model_names();

enum class Strategy { kHorovodAllreduce, kBaiduRing, kPsPull };

std::string_view strategy_name(Strategy strategy);
Strategy parse_strategy(std::string_view name);

struct TrainingOptions {
  FusionConfig fusion;
  Algorithm algo = Algorithm::kAuto;
  std::size_t switch_bytes = kDefaultSwitchBytes;
  CachePolicy cache_policy = CachePolicy::kInterceptCache;
};

struct ThroughputReport {
  std::string model;
  Strategy strategy = Strategy::kHorovodAllreduce;
  int p = 1;
  double images_per_sec = 0.0;
  double ideal_images_per_sec = 0.0;
  double efficiency = 0.0;
  double compute_seconds = 0.0;  // forward + backward
  double exposed_comm_seconds = 0.0;
  double step_seconds = 0.0;
};

// Gradients become ready in reverse layer order as backward compute
// finishes; their transfers queue on parallel_channels lanes and overlap the
// remaining backward pass. Step time = forward + backward + exposed
// communication.
//
//   horovod_allreduce: fused buffers, algorithm per options, one driver query
//                      per allreduce under no_cache
//   baidu_ring:        one ring allreduce per tensor, no fusion
//   ps_pull:           per tensor, push and pull through the owning PS whose
//                      ingress serves ceil((p-1)/k) worker rounds:
//                      2 ceil((p-1)/k) (a + n b) + (p-1) n g
//                      Layer L is owned by server L mod p and each server
//                      is one lane, so owners run in parallel.
ThroughputReport simulate_training_step(const ModelSpec& model, int p, Strategy strategy,
                                        const CostModel& costs,
                                        const TrainingOptions& options = {});

std::vector<ThroughputReport> sweep(const std::vector<ModelSpec>& models,
                                    const std::vector<Strategy>& strategies,
                                    const std::vector<int>& p_list, const CostModel& costs,
                                    const TrainingOptions& options = {});

inline constexpr std::string_view kSweepCsvHeader =
    "model,strategy,p,images_per_sec,ideal,efficiency,exposed_comm_s";

std::string sweep_csv(const std::vector<ThroughputReport>& reports);

// Nine significant digits, the CSV float convention.
std::string format_float(double value);

}  // namespace collectium
