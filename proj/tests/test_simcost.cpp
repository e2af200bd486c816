#include <gtest/gtest.h>

#include "collectium/collectives.hpp"
#include "collectium/sim_transport.hpp"
#include "collectium/simcost.hpp"
#include "test_util.hpp"

using namespace collectium;
using testutil::rel_equal;

namespace {

CostModel example_costs() {
  CostModel c;
  c.alpha = 1e-6;
  c.beta = 1e-9;
  c.gamma = 0;
  return c;
}

double simulated_allreduce(Algorithm algo, std::size_t bytes, int p, const CostModel& costs) {
  SimNetwork net(p, costs.sim_config());
  net.run([&](Transport& t) { allreduce(Tensor::zeros("x", DType::kFloat32, bytes / 4), ReduceOp::kSum, t, algo); });
  return net.max_virtual_time();
}

}  // namespace

TEST(Predict, WorkedExamples) {
  const auto c = example_costs();
  EXPECT_TRUE(rel_equal(predict_allreduce_time(Algorithm::kRing, 1024, 16, c), 30e-6 + 2 * (15.0 / 16) * 1024e-9, 1e-12));
  EXPECT_NEAR(predict_allreduce_time(Algorithm::kRing, 1024, 16, c), 3.192e-5, 1e-9);
  EXPECT_NEAR(predict_allreduce_time(Algorithm::kRhd, 1024, 16, c), 9.92e-6, 1e-9);
  for (Algorithm a : {Algorithm::kFlat, Algorithm::kRing, Algorithm::kRhd, Algorithm::kAuto}) {
    EXPECT_EQ(predict_allreduce_time(a, 12345, 1, c), 0.0);
  }
  EXPECT_THROW(predict_allreduce_time(Algorithm::kRing, 8, 0, c), InvalidGroupError);
  EXPECT_THROW(predict_allreduce_time(Algorithm::kRing, -1, 2, c), ParameterError);
}

TEST(Predict, SimulatorAgrees) {
  CostModel c;
  c.alpha = 3e-6;
  c.beta = 2e-10;
  c.gamma = 5e-11;
  for (int p : {2, 4, 8, 16}) {
    for (std::size_t bytes : {std::size_t{64}, std::size_t{4096}, std::size_t{1} << 20}) {
      for (Algorithm a : {Algorithm::kRing, Algorithm::kRhd, Algorithm::kFlat}) {
        const double sim = simulated_allreduce(a, bytes, p, c);
        const double want = predict_allreduce_time(a, static_cast<double>(bytes), p, c);
        EXPECT_TRUE(rel_equal(sim, want, 1e-9)) << algorithm_name(a) << " p=" << p << " n=" << bytes << " " << sim
                                                << " vs " << want;
      }
    }
  }
}

TEST(Predict, SimulatorAgreesForFoldedRhd) {
  const auto c = example_costs();
  for (int p : {3, 5, 6, 12}) {
    const std::size_t bytes = 4 * 8 * 3 * 5;  // divisible by every power of two below p
    EXPECT_TRUE(rel_equal(simulated_allreduce(Algorithm::kRhd, bytes, p, c),
                          predict_allreduce_time(Algorithm::kRhd, bytes, p, c), 1e-9))
        << p;
  }
}

// With two float32 elements on four ranks the chunks are {4,4,0,0} bytes, so
// every ring step moves a whole element rather than n/p bytes.
TEST(Predict, IndivisibleRingPaysWholeElements) {
  CostModel c;
  const double sim = simulated_allreduce(Algorithm::kRing, 8, 4, c);
  EXPECT_TRUE(rel_equal(sim, 6 * (c.alpha + 4 * c.beta) + 3 * 4 * c.gamma, 1e-12)) << sim;
  EXPECT_TRUE(rel_equal(simulated_allreduce(Algorithm::kRing, 16, 4, c),
                        predict_allreduce_time(Algorithm::kRing, 16, 4, c), 1e-12));
}

TEST(Predict, RhdBeatsRingForSmallMessages) {
  for (double alpha : {1e-7, 1e-6, 1e-5}) {
    CostModel c;
    c.alpha = alpha;
    for (int p : {4, 8, 16}) {
      EXPECT_LT(predict_allreduce_time(Algorithm::kRhd, 64, p, c), predict_allreduce_time(Algorithm::kRing, 64, p, c));
    }
  }
}

TEST(CostModel, JsonRoundTripAndValidation) {
  CostModel c;
  c.alpha = 2e-6;
  c.parallel_channels = 4;
  const auto back = cost_model_from_json(to_json(c));
  EXPECT_EQ(back.alpha, 2e-6);
  EXPECT_EQ(back.parallel_channels, 4);
  EXPECT_THROW(cost_model_from_json(nlohmann::json{{"alpah", 1}}), ParameterError);
  EXPECT_THROW(cost_model_from_json(nlohmann::json{{"beta", -1}}), ParameterError);
  EXPECT_THROW(cost_model_from_json(nlohmann::json{{"parallel_channels", 0}}), ParameterError);
}

TEST(Models, BuiltinsAndJson) {
  const auto names = builtin_model_names();
  ASSERT_EQ(names.size(), 3u);
  double prev_bytes = 0;
  double prev_compute = 0;
  for (const auto& n : names) {
    const auto m = builtin_model(n);
    EXPECT_GT(m.total_gradient_bytes(), prev_bytes);
    EXPECT_GT(m.forward_seconds + m.backward_seconds(), prev_compute);
    prev_bytes = m.total_gradient_bytes();
    prev_compute = m.forward_seconds + m.backward_seconds();
    const auto back = model_from_json(to_json(m));
    EXPECT_EQ(back.layers.size(), m.layers.size());
    EXPECT_EQ(back.total_gradient_bytes(), m.total_gradient_bytes());
  }
  EXPECT_THROW(builtin_model("vgg"), ParameterError);
  EXPECT_THROW(model_from_json(nlohmann::json{{"name", "x"}, {"forward_seconds", 1}, {"layers", nlohmann::json::array()}}),
               ParameterError);
}

TEST(TrainingStep, SingleRankIsIdeal) {
  CostModel c;
  for (const auto& n : builtin_model_names()) {
    for (Strategy s : {Strategy::kHorovodAllreduce, Strategy::kBaiduRing, Strategy::kPsPull}) {
      const auto m = builtin_model(n);
      const auto r = simulate_training_step(m, 1, s, c);
      EXPECT_EQ(r.efficiency, 1.0);
      EXPECT_TRUE(rel_equal(r.images_per_sec, m.batch_size / (m.forward_seconds + m.backward_seconds()), 1e-12));
    }
  }
}

TEST(TrainingStep, FreeNetworkIsIdeal) {
  CostModel c;
  c.alpha = c.beta = c.gamma = c.driver_query_delay = 0;
  for (int p : {2, 16, 128}) {
    for (Strategy s : {Strategy::kHorovodAllreduce, Strategy::kBaiduRing, Strategy::kPsPull}) {
      EXPECT_EQ(simulate_training_step(builtin_model("mobilenet_like"), p, s, c).efficiency, 1.0);
    }
  }
}

TEST(TrainingStep, ModelOrderingAtScale) {
  CostModel c;
  for (int p : {64, 128}) {
    const double mob = simulate_training_step(builtin_model("mobilenet_like"), p, Strategy::kHorovodAllreduce, c).efficiency;
    const double res = simulate_training_step(builtin_model("resnet50_like"), p, Strategy::kHorovodAllreduce, c).efficiency;
    const double nas = simulate_training_step(builtin_model("nasnet_like"), p, Strategy::kHorovodAllreduce, c).efficiency;
    EXPECT_LT(mob, res) << p;
    EXPECT_LT(res, nas) << p;
  }
}

TEST(TrainingStep, SingleChannelPsScalesWorst) {
  CostModel one;
  CostModel eight;
  eight.parallel_channels = 8;
  const auto m = builtin_model("nasnet_like");
  const double ps1 = simulate_training_step(m, 128, Strategy::kPsPull, one).efficiency;
  const double ps8 = simulate_training_step(m, 128, Strategy::kPsPull, eight).efficiency;
  EXPECT_LT(ps1, ps8);
  EXPECT_LT(ps1, simulate_training_step(m, 128, Strategy::kHorovodAllreduce, one).efficiency);
  EXPECT_LT(ps1, simulate_training_step(m, 128, Strategy::kBaiduRing, one).efficiency);
}

TEST(TrainingStep, NoCachePaysDriverQueries) {
  CostModel c;
  c.driver_query_delay = 1e-3;
  TrainingOptions cached;
  TrainingOptions uncached;
  uncached.cache_policy = CachePolicy::kNoCache;
  uncached.fusion.threshold_bytes = cached.fusion.threshold_bytes = 1;
  const auto m = builtin_model("mobilenet_like");
  EXPECT_LT(simulate_training_step(m, 16, Strategy::kHorovodAllreduce, c, uncached).efficiency,
            simulate_training_step(m, 16, Strategy::kHorovodAllreduce, c, cached).efficiency);
}

TEST(Sweep, PropertiesHoldAcrossGrid) {
  std::vector<ModelSpec> models;
  for (const auto& n : builtin_model_names()) models.push_back(builtin_model(n));
  const std::vector<Strategy> strategies{Strategy::kHorovodAllreduce, Strategy::kBaiduRing, Strategy::kPsPull};
  const std::vector<int> ps{1, 2, 4, 8, 16, 32, 64, 128};
  CostModel c;
  CostModel slow = c;
  slow.alpha *= 2;
  const auto rows = sweep(models, strategies, ps, c);
  const auto slow_rows = sweep(models, strategies, ps, slow);
  ASSERT_EQ(rows.size(), models.size() * strategies.size() * ps.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const auto single = simulate_training_step(builtin_model(r.model), 1, r.strategy, c);
    EXPECT_TRUE(rel_equal(r.ideal_images_per_sec, single.images_per_sec * r.p, 1e-9));
    EXPECT_GT(r.efficiency, 0.0);
    EXPECT_LE(r.efficiency, 1.0 + 1e-9);
    EXPECT_LE(slow_rows[i].efficiency, r.efficiency + 1e-15);
    if (i % ps.size() != 0 && r.p <= 8) {
      EXPECT_GE(r.images_per_sec, rows[i - 1].images_per_sec) << r.model << " " << strategy_name(r.strategy);
    }
  }
  EXPECT_THROW(sweep({}, strategies, ps, c), ParameterError);
}

TEST(Sweep, SlowerComputeNeverLowersEfficiency) {
  for (const auto& n : builtin_model_names()) {
    ModelSpec m = builtin_model(n);
    ModelSpec big = m;
    big.forward_seconds *= 10;
    for (auto& l : big.layers) l.backward_seconds *= 10;
    for (Strategy s : {Strategy::kHorovodAllreduce, Strategy::kBaiduRing, Strategy::kPsPull}) {
      EXPECT_GE(simulate_training_step(big, 64, s, CostModel{}).efficiency,
                simulate_training_step(m, 64, s, CostModel{}).efficiency);
    }
  }
}

TEST(Sweep, CsvFormat) {
  const auto rows = sweep({builtin_model("mobilenet_like")}, {Strategy::kHorovodAllreduce}, {1}, CostModel{});
  const auto csv = sweep_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kSweepCsvHeader);
  EXPECT_NE(csv.find("mobilenet_like,horovod_allreduce,1,"), std::string::npos);
  EXPECT_EQ(format_float(1.0 / 3), "0.333333333");
  EXPECT_EQ(format_float(1.0), "1");
}
