#include <gtest/gtest.h>

#include <filesystem>

#include <unistd.h>

#include "../support/fixtures.hpp"
#include "hybridflow/datagen.hpp"
#include "hybridflow/error.hpp"
#include "hybridflow/evalharness.hpp"
#include "hybridflow/png_io.hpp"

namespace hybridflow::evalharness {
namespace {

namespace fs = std::filesystem;
using network::TaskMode;

template <typename Fn>
void expect_error(ErrorCode code, Fn&& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

/// Emits the sample's own ground truth.
class OracleModel : public Model {
 public:
  explicit OracleModel(TaskMode mode = TaskMode::FlowNextFrame) : mode_(mode) {}
  TaskMode mode() const override { return mode_; }
  std::vector<Prediction> predict(const std::vector<const SampleTriplet*>& samples) const override {
    std::vector<Prediction> out;
    for (const auto* s : samples) {
      FlowField f = mode_ == TaskMode::NextFlowNextFrame ? *s->f23 : *s->f12;
      f.valid.reset();
      out.push_back({f, s->i3});
    }
    return out;
  }

 private:
  TaskMode mode_;
};

std::vector<SampleTriplet> uniform_flow_samples(int n) {
  std::vector<SampleTriplet> out;
  for (int i = 0; i < n; ++i) {
    auto s = testing::random_sample(static_cast<std::uint64_t>(i), 16, 16);
    s.f12 = FlowField::uniform(16, 16, 3.0f, 4.0f);
    out.push_back(s);
  }
  return out;
}

TEST(EvaluateFlow, OracleAndZeroStubs) {
  const auto samples = uniform_flow_samples(5);
  const auto oracle = evaluate_flow(OracleModel{}, samples);
  EXPECT_EQ(*oracle.mean_epe, 0.0);
  EXPECT_EQ(oracle.sample_count, 5u);
  ASSERT_EQ(oracle.per_sample.size(), 5u);

  const auto zero = evaluate_flow(CopyLastFrameModel{}, samples);
  EXPECT_EQ(*zero.mean_epe, 5.0);
  for (const auto& m : zero.per_sample) EXPECT_EQ(*m.epe, 5.0);
  EXPECT_EQ(evaluate_flow(CopyLastFrameModel{}, {}).sample_count, 0u);
}

TEST(EvaluateFlow, NextFlowModelsAreScoredAgainstF23) {
  auto samples = uniform_flow_samples(3);
  EXPECT_EQ(*evaluate_flow(OracleModel(TaskMode::NextFlowNextFrame), samples).mean_epe, 0.0);
  samples[1].f23.reset();
  expect_error(ErrorCode::MissingGroundTruth,
               [&] { evaluate_flow(OracleModel(TaskMode::NextFlowNextFrame), samples); });
  samples[2].f12.reset();
  expect_error(ErrorCode::MissingGroundTruth, [&] { evaluate_flow(CopyLastFrameModel{}, samples); });
}

TEST(EvaluateFlow, HonorsValidityMasks) {
  auto samples = uniform_flow_samples(1);
  Mask valid(16, 16, false);
  valid.set(3, 3, true);
  samples[0].f12->valid = valid;
  samples[0].f12->u[samples[0].f12->index(3, 3)] = 0.0f;
  samples[0].f12->v[samples[0].f12->index(3, 3)] = 1.0f;
  EXPECT_EQ(*evaluate_flow(CopyLastFrameModel{}, samples).mean_epe, 1.0);
}

TEST(EvaluateFlow, PerSampleEpeEqualsEndpointErrorOfFinalPrediction) {
  network::NetworkConfig c;
  c.depth = 3;
  c.alpha = 1.0 / 8.0;
  const NetworkModel model(c, network::init_parameters<float>(c, 9));
  std::vector<SampleTriplet> samples;
  for (int i = 0; i < 20; ++i) samples.push_back(testing::random_sample(100 + i, 16, 16));
  const auto report = evaluate_flow(model, samples);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto pred = model.predict({&samples[i]});
    EXPECT_EQ(*report.per_sample[i].epe, endpoint_error(*pred[0].flow, *samples[i].f12).mean) << i;
  }
}

datagen::SceneSpec small_moving_scene(float speed) {
  datagen::SceneSpec spec;
  spec.width = 48;
  spec.height = 48;
  spec.depth = 4;
  spec.background_texture_seed = 5;
  datagen::SceneObject obj;
  obj.shape = datagen::ShapeKind::Rectangle;
  obj.texture_seed = 6;
  obj.anchor_x = 20;
  obj.anchor_y = 22;
  obj.half_width = 5;
  obj.half_height = 4;
  obj.velocity_x = speed;
  obj.z_order = 1;
  spec.objects.push_back(obj);
  spec.seed = 3;
  return spec;
}

TEST(EvaluatePrediction, CopyBaselineOnStaticScenesHitsTheCap) {
  const std::vector<SampleTriplet> samples{datagen::generate_triplet(small_moving_scene(0.0f))};
  const auto report = evaluate_prediction(CopyLastFrameModel{}, samples);
  EXPECT_EQ(*report.psnr_whole, kMetricCapDb);
  EXPECT_TRUE(report.sharpness_whole.has_value());
  EXPECT_FALSE(report.psnr_moving.has_value());  // nothing moves
  EXPECT_EQ(report.moving_sample_count, 0u);
}

TEST(EvaluatePrediction, MovingRegionsScoreWorseForTheCopyBaseline) {
  const std::vector<SampleTriplet> samples{datagen::generate_triplet(small_moving_scene(3.0f))};
  const auto report = evaluate_prediction(CopyLastFrameModel{}, samples);
  ASSERT_TRUE(report.psnr_whole && report.psnr_moving && report.sharpness_whole && report.sharpness_moving);
  // Direct computation with the metric functions.
  const Mask moving = moving_region_mask(*samples[0].f23);
  EXPECT_GT(moving.count(), 0u);
  EXPECT_LT(moving.count(), 48u * 48u / 10u);
  EXPECT_EQ(*report.psnr_moving, psnr(samples[0].i2, samples[0].i3, moving));
  EXPECT_EQ(*report.psnr_whole, psnr(samples[0].i2, samples[0].i3));
  EXPECT_LT(*report.psnr_moving, *report.psnr_whole);

  const auto oracle = evaluate_prediction(OracleModel{}, samples);
  EXPECT_EQ(*oracle.psnr_whole, kMetricCapDb);
  EXPECT_EQ(*oracle.psnr_moving, kMetricCapDb);

  auto no_flow = samples;
  no_flow[0].f23.reset();
  expect_error(ErrorCode::MissingGroundTruth, [&] { evaluate_prediction(CopyLastFrameModel{}, no_flow); });
}

TEST(EvaluatePrediction, ReportJsonCarriesEveryField) {
  const std::vector<SampleTriplet> samples{datagen::generate_triplet(small_moving_scene(2.0f))};
  const auto json = evaluate_prediction(CopyLastFrameModel{}, samples).to_json();
  for (const char* key : {"psnr_whole", "sharpness_whole", "psnr_moving", "sharpness_moving", "sample_count"}) {
    EXPECT_NE(json.find(key), std::string::npos) << key;
  }
}

TEST(Statistics, MedianAndSpread) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_EQ(sample_stddev({5.0}), 0.0);
  EXPECT_DOUBLE_EQ(sample_stddev({1.0, 3.0}), std::sqrt(2.0));
  expect_error(ErrorCode::InvalidConfig, [] { median({}); });

  RatioRow worse{4, 1, "4:1", {10.0, 11.0, 12.0}, {}, 11.0, 0.0};
  RatioRow better{1, 5, "1:5", {8.0, 9.0, 10.0}, {}, 9.0, 0.0};
  auto t = compare_rows(worse, better);
  EXPECT_TRUE(t.expectation_met);
  EXPECT_FALSE(t.violated);
  EXPECT_DOUBLE_EQ(t.pooled_stddev, 1.0);
  t = compare_rows(better, worse);
  EXPECT_FALSE(t.expectation_met);
  EXPECT_TRUE(t.violated);  // beats it by 2 > 1 pooled stddev
  RatioRow close{4, 1, "4:1", {8.0, 8.5, 9.0}, {}, 8.5, 0.0};
  t = compare_rows(close, better);
  EXPECT_FALSE(t.expectation_met);
  EXPECT_FALSE(t.violated);
}

class Experiments : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = new fs::path(fs::temp_directory_path() / ("hybridflow_exp_" + std::to_string(::getpid())));
    datagen::DatasetConfig synth;
    synth.width = synth.height = 32;
    auto real = datagen::DatasetConfig::real_like_defaults();
    real.width = real.height = 32;
    synth.master_seed = 1;
    datagen::build_dataset(synth, 6, *root_ / "synth_train");
    synth.master_seed = 2;
    datagen::build_dataset(synth, 3, *root_ / "synth_eval");
    real.master_seed = 3;
    datagen::build_dataset(real, 6, *root_ / "real_train");
    real.master_seed = 4;
    datagen::build_dataset(real, 3, *root_ / "real_eval");
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root_);
    delete root_;
  }

  ExperimentConfig config(const std::string& out) const {
    ExperimentConfig c;
    c.network.depth = 2;
    c.network.alpha = 1.0 / 16.0;
    c.schedule = training::TrainSchedule::desk();
    c.schedule.total_iterations = 6;
    c.schedule.batch_size = 2;
    c.synthetic_train = *root_ / "synth_train";
    c.real_train = *root_ / "real_train";
    c.real_eval = *root_ / "real_eval";
    c.synthetic_eval = *root_ / "synth_eval";
    c.seeds = {1};
    c.out_dir = *root_ / out;
    return c;
  }

  static fs::path* root_;
};

fs::path* Experiments::root_ = nullptr;

TEST_F(Experiments, LoadSamplesAttachesWithheldTruthOnRequest) {
  const auto plain = load_samples(*root_ / "real_train", false);
  ASSERT_EQ(plain.size(), 6u);
  EXPECT_FALSE(plain[0].f12.has_value());
  EXPECT_EQ(plain[0].source, Source::Real);
  const auto scored = load_samples(*root_ / "real_train", true);
  EXPECT_TRUE(scored[0].f12.has_value());
  EXPECT_TRUE(scored[0].f23.has_value());
}

TEST_F(Experiments, SingleRatioSweepProducesOneRowAndArtifacts) {
  const auto cfg = config("sweep_one");
  const auto table = ratio_sweep(cfg, {{1, 5}});
  ASSERT_EQ(table.rows.size(), 1u);
  EXPECT_EQ(table.rows[0].label, "1:5");
  ASSERT_EQ(table.rows[0].epe.size(), 1u);
  EXPECT_GT(table.rows[0].median_epe, 0.0);
  EXPECT_GT(table.rows[0].median_psnr, 0.0);
  for (const char* f : {"sweep.tsv", "sweep.json", "sweep.png"}) EXPECT_TRUE(fs::exists(cfg.out_dir / f)) << f;
  const auto plot = read_frame_png(cfg.out_dir / "sweep.png");
  EXPECT_EQ(plot.width, render_sweep_plot(table).width);
}

TEST_F(Experiments, SupervisedOnlyRowIsLabelled) {
  auto cfg = config("sweep_two");
  cfg.seeds = {1, 2};
  const auto table = ratio_sweep(cfg, {{0, 1}, {1, 1}});
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.rows[0].label, "0:1 (supervised only)");
  EXPECT_NE(table.find(1, 1), nullptr);
  EXPECT_EQ(table.find(4, 1), nullptr);
  EXPECT_NE(table.to_tsv().find("epe_seed2"), std::string::npos);
}

TEST_F(Experiments, DomainShiftReportShapeAndDeterminism) {
  auto cfg = config("shift_a");
  cfg.seeds = {1, 2};
  const auto a = domain_shift_experiment(cfg);
  ASSERT_EQ(a.rows.size(), 3u);
  for (const auto& r : a.rows) EXPECT_EQ(r.epe.size(), 2u);
  EXPECT_EQ(a.rows[0].median, median(a.rows[0].epe));
  EXPECT_TRUE(fs::exists(cfg.out_dir / "domain_shift.tsv"));

  cfg.out_dir = config("shift_b").out_dir;  // fresh directory, no reuse
  const auto b = domain_shift_experiment(cfg);
  EXPECT_EQ(a.to_json(), b.to_json());

  // A rerun in the first directory reuses the finished runs.
  cfg.out_dir = config("shift_a").out_dir;
  EXPECT_EQ(domain_shift_experiment(cfg).to_json(), a.to_json());
}

TEST_F(Experiments, ValidationRejectsMissingInputs) {
  auto cfg = config("bad");
  cfg.seeds.clear();
  expect_error(ErrorCode::InvalidConfig, [&] { domain_shift_experiment(cfg); });
  cfg = config("bad");
  cfg.real_eval = *root_ / "nope";
  expect_error(ErrorCode::InvalidConfig, [&] { ratio_sweep(cfg, {{1, 5}}); });
}

}  // namespace
}  // namespace hybridflow::evalharness
