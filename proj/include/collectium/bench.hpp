#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "collectium/aggregation.hpp"
#include "collectium/collectives.hpp"
#include "collectium/registry.hpp"
#include "collectium/simcost.hpp"
#include "collectium/transport.hpp"
#include "json.hpp"

namespace collectium {

class ConfigError : public Error {
 public:
  using Error::Error;
};

// A run produced results that break a cross-rank or accounting invariant.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

enum class BenchMode { kMicrobench, kTrain, kSweep };
enum class TransportKind { kSim, kSocket };

// Process exit codes of the benchmark CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitTransport = 3;
inline constexpr int kExitInvariant = 4;

// Environment variables read when --rank is absent.
inline constexpr const char* kEnvNprocs = "COLLECTIUM_NPROCS";
inline constexpr const char* kEnvRank = "COLLECTIUM_RANK";

struct BenchConfig {
  BenchMode mode = BenchMode::kMicrobench;
  TransportKind transport = TransportKind::kSim;
  Algorithm algo = Algorithm::kAuto;
  std::size_t switch_bytes = kDefaultSwitchBytes;
  std::size_t fusion_threshold = kDefaultFusionThresholdBytes;
  Strategy strategy = Strategy::kHorovodAllreduce;
  std::string model = "resnet50_like";
  std::string model_spec;  // JSON path; wins over `model`
  int p = 1;
  int warmup_iters = 5;
  int timed_iters = 10;
  std::uint64_t seed = 1;
  std::string output;  // "" = stdout; "%r" expands to the rank
  std::size_t min_bytes = 8;
  std::size_t max_bytes = std::size_t{256} << 20;
  // Fraction of each layer's gradient materialised by the train bench data
  // path; throughput always uses the full model sizes.
  double payload_scale = 1.0;
  double learning_rate = 0.01;
  CostModel costs;
  CachePolicy cache_policy = CachePolicy::kInterceptCache;
  // sweep mode
  std::vector<int> p_list{1, 2, 4, 8, 16, 32, 64, 128};
  std::vector<std::string> models{"mobilenet_like", "resnet50_like", "nasnet_like"};
  std::vector<Strategy> strategies{Strategy::kHorovodAllreduce, Strategy::kBaiduRing,
                                   Strategy::kPsPull};
  // socket mode
  std::string hostfile;
  int rank = -1;
  double recv_timeout_s = 30.0;
  double connect_timeout_s = 30.0;
  std::string digest_output;  // "%r" expands to the rank

  void validate() const;
};

// Overlays the fields present in `j` onto `base`. Unknown keys and badly typed
// values raise ConfigError naming the field.
BenchConfig config_from_json(const nlohmann::json& j, BenchConfig base = {});
// Parses a JSON config file; syntax errors report line and column.
nlohmann::json read_config_file(const std::string& path);

std::string_view mode_name(BenchMode mode);
std::string_view transport_name(TransportKind kind);

ModelSpec resolve_model(const BenchConfig& cfg);

// Seeded per (seed, iteration, layer, rank); float32 tensors named layer_NNN.
GradientSet synthesize_gradients(const ModelSpec& model, double payload_scale, std::uint64_t seed,
                                 std::int64_t iteration, RankId rank);
ParamSet initial_params(const ModelSpec& model, double payload_scale, std::uint64_t seed);

std::uint64_t digest(const GradientSet& grads);
std::uint64_t digest(const ParamSet& params);

// Every rank passes its digest; throws InvariantViolation on all ranks if any
// two differ.
void verify_consistent(Transport& transport, std::uint64_t value, std::string_view what);

struct MicrobenchRow {
  std::size_t message_bytes = 0;
  Algorithm algo = Algorithm::kFlat;
  int p = 1;
  double mean_latency_s = 0.0;
  int messages_per_rank = 0;
  double min_latency_s = 0.0;
  double max_latency_s = 0.0;
};

inline constexpr std::string_view kMicrobenchCsvHeader =
    "message_bytes,algo,p,mean_latency_s,messages_per_rank,min_latency_s,max_latency_s";

std::vector<std::size_t> message_sizes(const BenchConfig& cfg);
// Simulated transport, all ranks in this process; latency is virtual time.
std::vector<MicrobenchRow> run_microbench(const BenchConfig& cfg);
// One rank of a real group; latency is wall time, maxed over ranks.
std::vector<MicrobenchRow> run_microbench_rank(const BenchConfig& cfg, Transport& transport);
std::string microbench_csv(const std::vector<MicrobenchRow>& rows);

struct TrainRow {
  std::string model;
  Strategy strategy = Strategy::kHorovodAllreduce;
  int p = 1;
  double images_per_sec = 0.0;
  double ideal = 0.0;
  double efficiency = 0.0;
  std::uint64_t final_digest = 0;
  std::vector<std::uint64_t> iteration_digests;
};

inline constexpr std::string_view kTrainCsvHeader =
    "model,strategy,p,images_per_sec,ideal,efficiency";

// Runs warmup + timed iterations of the full data path. In simulated mode
// throughput comes from simulate_training_step; on sockets each step is the
// modeled compute plus the measured communication wall time, maxed over ranks.
TrainRow run_train_bench(const BenchConfig& cfg);
TrainRow run_train_bench_rank(const BenchConfig& cfg, Transport& transport);
std::string train_csv(const std::vector<TrainRow>& rows);

std::vector<ThroughputReport> run_sweep(const BenchConfig& cfg);

// Runs `cfg` in this process (sim or sweep) or as one socket rank, writes the
// CSV, and maps failures to exit codes. Diagnostics go to `err`.
int run_bench(const BenchConfig& cfg, std::ostream& out, std::ostream& err);

// Resolves this process's rank (flag, else COLLECTIUM_RANK), connects per the
// hostfile, and runs `cfg`. Returns the exit code.
int launch_socket_group(const BenchConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace collectium
