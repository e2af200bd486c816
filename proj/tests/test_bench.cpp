#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "collectium/bench.hpp"
#include "process_util.hpp"
#include "test_util.hpp"

using namespace collectium;

namespace {

const std::string kBench = COLLECTIUM_BENCH_PATH;

BenchConfig small_train(int p) {
  BenchConfig cfg;
  cfg.mode = BenchMode::kTrain;
  cfg.model = "mobilenet_like";
  cfg.p = p;
  cfg.payload_scale = 0.01;
  cfg.warmup_iters = 1;
  cfg.timed_iters = 2;
  return cfg;
}

std::string write_hostfile(const std::string& dir, int n) {
  const auto ports = testutil::free_ports(n);
  const std::string path = dir + "/hosts.txt";
  std::ofstream f(path);
  for (int r = 0; r < n; ++r) f << r << " 127.0.0.1 " << ports[static_cast<std::size_t>(r)] << "\n";
  return path;
}

}  // namespace

TEST(Config, DefaultsAndOverlay) {
  const BenchConfig d;
  EXPECT_EQ(d.warmup_iters, 5);
  EXPECT_EQ(d.timed_iters, 10);
  EXPECT_EQ(d.min_bytes, 8u);
  EXPECT_EQ(d.max_bytes, std::size_t{256} << 20);
  const auto cfg = config_from_json(nlohmann::json{{"mode", "train"},
                                                   {"algo", "ring"},
                                                   {"p", 4},
                                                   {"cost_model", {{"alpha", 2e-6}}},
                                                   {"strategies", {"ps_pull"}}});
  EXPECT_EQ(cfg.mode, BenchMode::kTrain);
  EXPECT_EQ(cfg.algo, Algorithm::kRing);
  EXPECT_EQ(cfg.p, 4);
  EXPECT_EQ(cfg.costs.alpha, 2e-6);
  EXPECT_EQ(cfg.costs.beta, CostModel{}.beta);
  EXPECT_EQ(cfg.strategies, (std::vector<Strategy>{Strategy::kPsPull}));
}

TEST(Config, ErrorsNameTheField) {
  auto message = [](const nlohmann::json& j) {
    try {
      config_from_json(j);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message({{"timed_iters", 0}}).find("timed_iters"), std::string::npos);
  EXPECT_NE(message({{"p", "four"}}).find("'p'"), std::string::npos);
  EXPECT_NE(message({{"colour", 1}}).find("colour"), std::string::npos);
  EXPECT_NE(message({{"algo", "tree"}}).find("algo"), std::string::npos);
  EXPECT_NE(message({{"cost_model", {{"alpah", 1}}}}).find("alpah"), std::string::npos);
}

TEST(Config, FileSyntaxErrorsReportLine) {
  const auto dir = testutil::temp_dir("cfg");
  const std::string path = dir + "/bad.json";
  std::ofstream(path) << "{\n  \"mode\": \"train\",\n  \"p\": ,\n}\n";
  try {
    read_config_file(path);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(path + ":3:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_config_file(dir + "/missing.json"), ConfigError);
}

TEST(Microbench, RingLatencyMatchesFormula) {
  BenchConfig cfg;
  cfg.p = 4;
  cfg.algo = Algorithm::kRing;
  cfg.min_bytes = 16;
  cfg.max_bytes = 1 << 16;
  cfg.warmup_iters = 1;
  cfg.timed_iters = 2;
  for (const auto& row : run_microbench(cfg)) {
    EXPECT_EQ(row.algo, Algorithm::kRing);
    EXPECT_EQ(row.messages_per_rank, 6);
    EXPECT_TRUE(testutil::rel_equal(row.mean_latency_s,
                                    predict_allreduce_time(Algorithm::kRing, row.message_bytes, 4, cfg.costs), 1e-9))
        << row.message_bytes;
    EXPECT_EQ(row.min_latency_s, row.max_latency_s);
  }
}

TEST(Microbench, AutoDispatchRows) {
  BenchConfig cfg;
  cfg.p = 16;
  cfg.min_bytes = 8;
  cfg.max_bytes = 1 << 20;
  cfg.warmup_iters = 0;
  cfg.timed_iters = 1;
  const auto rows = run_microbench(cfg);
  ASSERT_EQ(rows.front().message_bytes, 8u);
  ASSERT_EQ(rows.back().message_bytes, std::size_t{1} << 20);
  EXPECT_EQ(rows.front().algo, Algorithm::kRhd);
  EXPECT_EQ(rows.front().messages_per_rank, 8);
  EXPECT_EQ(rows.back().algo, Algorithm::kRing);
  EXPECT_EQ(rows.back().messages_per_rank, 30);
}

TEST(Microbench, SingleRankIsFree) {
  BenchConfig cfg;
  cfg.max_bytes = 1024;
  for (const auto& row : run_microbench(cfg)) {
    EXPECT_EQ(row.mean_latency_s, 0.0);
    EXPECT_EQ(row.messages_per_rank, 0);
  }
}

TEST(Microbench, CsvIsReproducible) {
  BenchConfig cfg;
  cfg.p = 3;
  cfg.max_bytes = 4096;
  const auto a = microbench_csv(run_microbench(cfg));
  const auto b = microbench_csv(run_microbench(cfg));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.substr(0, a.find('\n')), kMicrobenchCsvHeader);
}

TEST(TrainBench, SingleRankIsIdeal) {
  BenchConfig cfg = small_train(1);
  cfg.model = "resnet50_like";
  const auto row = run_train_bench(cfg);
  const auto m = builtin_model("resnet50_like");
  EXPECT_EQ(row.efficiency, 1.0);
  EXPECT_TRUE(testutil::rel_equal(row.images_per_sec, m.batch_size / (m.forward_seconds + m.backward_seconds()), 1e-9));
}

TEST(TrainBench, ModelOrderingAt64) {
  auto eff = [](const char* model) {
    BenchConfig cfg = small_train(64);
    cfg.model = model;
    cfg.payload_scale = 1e-4;
    cfg.warmup_iters = 0;
    cfg.timed_iters = 1;
    return run_train_bench(cfg).efficiency;
  };
  const double mob = eff("mobilenet_like");
  const double res = eff("resnet50_like");
  const double nas = eff("nasnet_like");
  EXPECT_LT(mob, res);
  EXPECT_LT(res, nas);
}

TEST(TrainBench, StrategiesProduceSameParameters) {
  // Horovod and baidu digest gradient means; compare their trajectories.
  BenchConfig h = small_train(4);
  BenchConfig b = h;
  b.strategy = Strategy::kBaiduRing;
  h.algo = Algorithm::kRing;
  h.fusion_threshold = 1;
  EXPECT_EQ(run_train_bench(h).iteration_digests, run_train_bench(b).iteration_digests);
  BenchConfig ps = small_train(3);
  ps.strategy = Strategy::kPsPull;
  const auto row = run_train_bench(ps);
  EXPECT_EQ(row.iteration_digests.size(), 3u);
  EXPECT_EQ(row.final_digest, run_train_bench(ps).final_digest);
}

TEST(TrainBench, SeedChangesData) {
  BenchConfig a = small_train(2);
  BenchConfig b = a;
  b.seed = 2;
  EXPECT_NE(run_train_bench(a).final_digest, run_train_bench(b).final_digest);
  const auto m = builtin_model("mobilenet_like");
  EXPECT_EQ(digest(synthesize_gradients(m, 0.01, 1, 0, 0)), digest(synthesize_gradients(m, 0.01, 1, 0, 0)));
  EXPECT_NE(digest(synthesize_gradients(m, 0.01, 1, 0, 0)), digest(synthesize_gradients(m, 0.01, 1, 0, 1)));
  EXPECT_NE(digest(synthesize_gradients(m, 0.01, 1, 0, 0)), digest(synthesize_gradients(m, 0.01, 1, 1, 0)));
}

TEST(Cli, SweepIsByteIdenticalAcrossRuns) {
  const auto dir = testutil::temp_dir("cli");
  const std::vector<std::string> args{kBench, "--mode", "sweep", "--p-list", "1", "8", "128"};
  ASSERT_EQ(testutil::run(args, {}, dir + "/a.csv"), kExitOk);
  ASSERT_EQ(testutil::run(args, {}, dir + "/b.csv"), kExitOk);
  const auto a = testutil::slurp(dir + "/a.csv");
  EXPECT_EQ(a, testutil::slurp(dir + "/b.csv"));
  EXPECT_EQ(a.substr(0, a.find('\n')), kSweepCsvHeader);
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 1 + 3 * 3 * 3);
}

TEST(Cli, FlagsOverrideConfigFile) {
  const auto dir = testutil::temp_dir("cli");
  std::ofstream(dir + "/cfg.json") << R"({"p": 2, "max_bytes": 64, "algo": "rhd", "output": ")" << dir
                                   << R"(/from_config.csv"})";
  ASSERT_EQ(testutil::run({kBench, "--config", dir + "/cfg.json", "--p", "4", "--output", dir + "/flag.csv"}), kExitOk);
  const auto csv = testutil::slurp(dir + "/flag.csv");
  EXPECT_NE(csv.find("64,rhd,4,"), std::string::npos) << csv;
  EXPECT_EQ(csv.find("128,"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  const auto dir = testutil::temp_dir("cli");
  EXPECT_EQ(testutil::run({kBench, "--mode", "bogus"}, {}, "", dir + "/err"), kExitConfig);
  EXPECT_NE(testutil::slurp(dir + "/err").find("mode"), std::string::npos);
  EXPECT_EQ(testutil::run({kBench, "--timed-iters", "0"}, {}, "", dir + "/err"), kExitConfig);
  EXPECT_EQ(testutil::run({kBench, "--no-such-flag"}, {}, "", dir + "/err"), kExitConfig);
  std::ofstream(dir + "/bad.json") << "{ \"p\": 2,\n \"seed\": }";
  EXPECT_EQ(testutil::run({kBench, "--config", dir + "/bad.json"}, {}, "", dir + "/err"), kExitConfig);
  EXPECT_NE(testutil::slurp(dir + "/err").find(":2:"), std::string::npos);
  EXPECT_EQ(testutil::run({kBench, "--transport", "socket", "--hostfile", dir + "/none.txt"}, {}, "", dir + "/err"),
            kExitConfig);
}

TEST(Cli, TwoSocketRanksAgree) {
  const auto dir = testutil::temp_dir("sock");
  const auto hosts = write_hostfile(dir, 2);
  std::vector<pid_t> pids;
  for (int r = 0; r < 2; ++r) {
    pids.push_back(testutil::spawn({kBench, "--mode", "microbench", "--transport", "socket", "--hostfile", hosts,
                                    "--rank", std::to_string(r), "--max-bytes", "4096", "--warmup-iters", "1",
                                    "--timed-iters", "3", "--output", dir + "/out%r.csv"},
                                   {}, "", dir + "/err" + std::to_string(r)));
  }
  for (pid_t pid : pids) EXPECT_EQ(testutil::wait_exit(pid), kExitOk);
  const auto a = testutil::slurp(dir + "/out0.csv");
  EXPECT_EQ(a, testutil::slurp(dir + "/out1.csv"));
  EXPECT_NE(a.find("4096,rhd,2,"), std::string::npos) << a;
}

TEST(Cli, RankFromEnvironmentMatchesFlag) {
  const auto dir = testutil::temp_dir("env");
  const auto hosts = write_hostfile(dir, 2);
  const std::vector<std::string> common{kBench,       "--mode", "train", "--transport", "socket", "--hostfile", hosts,
                                        "--model", "mobilenet_like", "--payload-scale", "0.01", "--warmup-iters",
                                        "1", "--timed-iters", "2", "--digest-output", dir + "/digest%r.txt",
                                        "--output", dir + "/out%r.csv"};
  auto with_rank_flag = common;
  with_rank_flag.insert(with_rank_flag.end(), {"--rank", "0"});
  const pid_t flag_rank = testutil::spawn(with_rank_flag, {}, "", dir + "/err0");
  const pid_t env_rank = testutil::spawn(common, {"COLLECTIUM_RANK=1", "COLLECTIUM_NPROCS=2"}, "", dir + "/err1");
  EXPECT_EQ(testutil::wait_exit(flag_rank), kExitOk) << testutil::slurp(dir + "/err0");
  EXPECT_EQ(testutil::wait_exit(env_rank), kExitOk) << testutil::slurp(dir + "/err1");
  const auto d0 = testutil::slurp(dir + "/digest0.txt");
  const auto d1 = testutil::slurp(dir + "/digest1.txt");
  EXPECT_EQ(d0.substr(d0.find('\n')), d1.substr(d1.find('\n')));

  // Same run in simulation produces the same payload digests.
  ASSERT_EQ(testutil::run({kBench, "--mode", "train", "--p", "2", "--model", "mobilenet_like", "--payload-scale",
                           "0.01", "--warmup-iters", "1", "--timed-iters", "2", "--digest-output",
                           dir + "/sim%r.txt", "--output", dir + "/sim.csv"}),
            kExitOk);
  const auto sim = testutil::slurp(dir + "/sim0.txt");
  EXPECT_EQ(sim, d0);
}

TEST(Cli, EnvironmentGroupSizeMustMatchHostfile) {
  const auto dir = testutil::temp_dir("env");
  const auto hosts = write_hostfile(dir, 2);
  EXPECT_EQ(testutil::run({kBench, "--transport", "socket", "--hostfile", hosts},
                          {"COLLECTIUM_RANK=0", "COLLECTIUM_NPROCS=3"}, "", dir + "/err"),
            kExitConfig);
  EXPECT_EQ(testutil::run({kBench, "--transport", "socket", "--hostfile", hosts}, {}, "", dir + "/err"),
            kExitConfig);
}

TEST(Cli, MissingRankTimesOut) {
  const auto dir = testutil::temp_dir("miss");
  const auto hosts = write_hostfile(dir, 2);
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_EQ(testutil::run({kBench, "--transport", "socket", "--hostfile", hosts, "--rank", "1", "--connect-timeout",
                           "1"},
                          {}, "", dir + "/err"),
            kExitTransport);
  const double waited = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(waited, 10.0);
  EXPECT_NE(testutil::slurp(dir + "/err").find("transport error"), std::string::npos);
}
