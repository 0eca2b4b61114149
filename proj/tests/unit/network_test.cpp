#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "../support/gradcheck.hpp"
#include "hybridflow/error.hpp"
#include "hybridflow/network.hpp"
#include "hybridflow/png_io.hpp"

namespace hybridflow::network {
namespace {

namespace fs = std::filesystem;

template <typename Fn>
void expect_error(ErrorCode code, Fn&& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

template <typename T>
Tensor<T> random_input(std::uint32_t seed, int n, int c, int h, int w) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  Tensor<T> t(n, c, h, w);
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

NetworkConfig tiny_config(TaskMode mode = TaskMode::FlowNextFrame) {
  NetworkConfig c;
  c.depth = 2;
  c.alpha = 1.0 / 16.0;
  c.mode = mode;
  return c;
}

TEST(BuildLayers, FullScaleGeometry) {
  NetworkConfig c;  // L = 6, alpha = 1
  const auto arch = build_layers(c);
  struct Row {
    const char* name;
    int k, s, p, out;
  };
  const Row expected[] = {{"conv1", 7, 2, 3, 64},    {"conv2", 5, 2, 2, 128},   {"conv3", 5, 2, 2, 256},
                          {"conv3_1", 3, 1, 1, 256}, {"conv4", 3, 2, 1, 512},   {"conv4_1", 3, 1, 1, 512},
                          {"conv5", 3, 2, 1, 512},   {"conv5_1", 3, 1, 1, 512}, {"conv6", 3, 2, 1, 1024},
                          {"conv6_1", 3, 1, 1, 1024}};
  ASSERT_EQ(arch.encoder.size(), 10u);
  int downsampling = 1;
  int in = 6;
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& l = arch.encoder[i];
    EXPECT_EQ(l.name, expected[i].name);
    EXPECT_EQ(l.kernel_h, expected[i].k);
    EXPECT_EQ(l.kernel_w, expected[i].k);
    EXPECT_EQ(l.stride, expected[i].s);
    EXPECT_EQ(l.padding, expected[i].p);
    EXPECT_EQ(l.out_channels, expected[i].out);
    EXPECT_EQ(l.in_channels, in);
    EXPECT_TRUE(l.leaky);
    in = l.out_channels;
    downsampling *= l.stride;
  }
  EXPECT_EQ(downsampling, 64);

  ASSERT_EQ(arch.flow_decoder.size(), 12u);
  ASSERT_EQ(arch.frame_decoder.size(), 12u);
  const int widths[] = {512, 256, 128, 64, 32, 16};
  for (int s = 0; s < 6; ++s) {
    const auto& up = arch.flow_decoder[2 * s];
    EXPECT_EQ(up.name, "flow_upconv" + std::to_string(5 - s));
    EXPECT_EQ(up.kind, LayerKind::Upconv);
    EXPECT_EQ(up.kernel_h, 4);
    EXPECT_EQ(up.stride, 2);
    EXPECT_EQ(up.padding, 1);
    EXPECT_EQ(up.out_channels, widths[s]);
    EXPECT_EQ(up.output_size(10), 20);
    const auto& pred = arch.flow_decoder[2 * s + 1];
    EXPECT_EQ(pred.kind, LayerKind::Predictor);
    EXPECT_EQ(pred.kernel_h, 3);
    EXPECT_EQ(pred.stride, 1);
    EXPECT_EQ(pred.padding, 1);
    EXPECT_FALSE(pred.leaky);
    EXPECT_EQ(pred.out_channels, 2);
    // Decoders are identical apart from the predictor outputs (and the
    // upsampled prediction they feed forward).
    const auto& fup = arch.frame_decoder[2 * s];
    const auto& fpred = arch.frame_decoder[2 * s + 1];
    EXPECT_EQ(fpred.out_channels, 3);
    EXPECT_EQ(fup.kernel_h, up.kernel_h);
    EXPECT_EQ(fup.out_channels, up.out_channels);
    EXPECT_EQ(fpred.in_channels - (s > 0 ? 3 : 0), pred.in_channels - (s > 0 ? 2 : 0));
  }
  // First decoder stage: deepest features; concat adds conv5_1 features.
  EXPECT_EQ(arch.flow_decoder[0].in_channels, 1024);
  EXPECT_EQ(arch.flow_decoder[1].in_channels, 512 + 512);
  // Last stage concatenates the input frames and the upsampled prediction.
  EXPECT_EQ(arch.flow_decoder[11].in_channels, 16 + 6 + 2);
}

TEST(BuildLayers, ScalingAndTruncation) {
  NetworkConfig c;
  c.alpha = 1.0 / 8.0;
  EXPECT_EQ(build_layers(c).encoder[0].out_channels, 8);
  c.depth = 4;
  const auto arch = build_layers(c);
  ASSERT_EQ(arch.encoder.size(), 6u);
  EXPECT_EQ(arch.encoder.back().name, "conv4_1");
  ASSERT_EQ(arch.flow_decoder.size(), 8u);
  EXPECT_EQ(arch.flow_decoder[0].name, "flow_upconv3");
  EXPECT_EQ(arch.flow_decoder[0].out_channels, 16);  // 128 / 8
  EXPECT_EQ(arch.flow_decoder[6].out_channels, 8);   // 16 / 8 -> minimum
  c.depth = 2;
  EXPECT_EQ(build_layers(c).encoder.size(), 2u);
  c.mode = TaskMode::FlowOnly;
  EXPECT_TRUE(build_layers(c).frame_decoder.empty());
  c.mode = TaskMode::NextFrameOnly;
  EXPECT_TRUE(build_layers(c).flow_decoder.empty());
}

TEST(BuildLayers, RejectsBadConfigs) {
  NetworkConfig c;
  c.depth = 7;
  expect_error(ErrorCode::InvalidConfig, [&] { build_layers(c); });
  c.depth = 1;
  expect_error(ErrorCode::InvalidConfig, [&] { build_layers(c); });
  c = NetworkConfig{};
  c.alpha = 0.0;
  expect_error(ErrorCode::InvalidConfig, [&] { build_layers(c); });
  c = NetworkConfig{};
  c.input_frames = 3;
  expect_error(ErrorCode::InvalidConfig, [&] { build_layers(c); });
}

TEST(InitParameters, DeterministicZeroBiasBounded) {
  NetworkConfig c;
  c.depth = 3;
  c.alpha = 0.25;
  const auto a = init_parameters<float>(c, 11);
  EXPECT_EQ(a, init_parameters<float>(c, 11));
  EXPECT_NE(a, init_parameters<float>(c, 12));
  const auto arch = build_layers(c);
  for (const auto& l : a.layers) {
    for (float b : l.bias) EXPECT_EQ(b, 0.0f);
    const double fan_in = static_cast<double>(l.weight_shape[l.group == ParamGroup::Encoder ||
                                                                     l.name.find("predict") != std::string::npos
                                                                 ? 1
                                                                 : 0]) *
                          l.weight_shape[2] * l.weight_shape[3];
    const double bound = std::sqrt(2.0 / fan_in);
    for (float w : l.weights) EXPECT_LE(std::abs(w), bound);
  }
}

TEST(InitParameters, FullScaleConv1Shape) {
  NetworkConfig c;
  c.depth = 2;
  const auto p = init_parameters<float>(c, 0);
  EXPECT_EQ(p.at("conv1").weight_shape, (std::vector<int>{64, 6, 7, 7}));
  c.input_frames = 4;
  EXPECT_EQ(init_parameters<float>(c, 0).at("conv1").weight_shape, (std::vector<int>{64, 12, 7, 7}));
}

TEST(Forward, ResolutionContract) {
  NetworkConfig c;
  c.depth = 4;
  c.alpha = 1.0 / 8.0;
  const auto params = init_parameters<float>(c, 1);
  const auto out = forward(params, c, random_input<float>(1, 1, 6, 64, 64)).predictions;
  ASSERT_EQ(out.flow.size(), 4u);
  ASSERT_EQ(out.frame.size(), 4u);
  const int sizes[] = {8, 16, 32, 64};
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(out.flow[i].h, sizes[i]);
    EXPECT_EQ(out.flow[i].w, sizes[i]);
    EXPECT_EQ(out.flow[i].c, 2);
    EXPECT_EQ(out.frame[i].c, 3);
  }
  for (float v : out.frame.back().data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Forward, ResolutionHoldsForNonSquareInputs) {
  for (int depth : {2, 3, 5}) {
    NetworkConfig c;
    c.depth = depth;
    c.alpha = 1.0 / 16.0;
    const auto params = init_parameters<float>(c, 2);
    const int unit = 1 << depth;
    const auto out = forward(params, c, random_input<float>(2, 2, 6, 2 * unit, 3 * unit)).predictions;
    EXPECT_EQ(out.flow.back().h, 2 * unit);
    EXPECT_EQ(out.flow.back().w, 3 * unit);
    EXPECT_EQ(out.frame.back().n, 2);
  }
}

TEST(Forward, ModesSelectBranches) {
  auto c = tiny_config(TaskMode::FlowOnly);
  auto out = forward(init_parameters<float>(c, 0), c, random_input<float>(3, 1, 6, 8, 8)).predictions;
  EXPECT_EQ(out.flow.size(), 2u);
  EXPECT_TRUE(out.frame.empty());
  c = tiny_config(TaskMode::NextFrameOnly);
  out = forward(init_parameters<float>(c, 0), c, random_input<float>(3, 1, 6, 8, 8)).predictions;
  EXPECT_TRUE(out.flow.empty());
  EXPECT_EQ(out.frame.size(), 2u);
  c = tiny_config();
  out = forward(init_parameters<float>(c, 0), c, random_input<float>(3, 1, 6, 8, 8), {false, true}).predictions;
  EXPECT_TRUE(out.flow.empty());
}

TEST(Forward, ZeroParametersGiveConstantOutputs) {
  NetworkConfig c;
  c.depth = 3;
  c.alpha = 1.0 / 8.0;
  const auto params = init_parameters<float>(c, 0).zeros_like();
  const auto out = forward(params, c, random_input<float>(4, 1, 6, 16, 16)).predictions;
  for (const auto& t : out.flow)
    for (float v : t.data) EXPECT_EQ(v, 0.0f);
  for (const auto& t : out.frame)
    for (float v : t.data) EXPECT_EQ(v, 0.5f);
}

TEST(Forward, RejectsBadInputs) {
  const auto c = tiny_config();
  const auto params = init_parameters<float>(c, 0);
  expect_error(ErrorCode::ShapeMismatch, [&] { forward(params, c, random_input<float>(0, 1, 6, 10, 8)); });
  expect_error(ErrorCode::ShapeMismatch, [&] { forward(params, c, random_input<float>(0, 1, 12, 8, 8)); });
}

TEST(Forward, Deterministic) {
  NetworkConfig c;
  c.depth = 3;
  c.alpha = 1.0 / 8.0;
  const auto params = init_parameters<float>(c, 5);
  const auto input = random_input<float>(5, 2, 6, 16, 24);
  const auto a = forward(params, c, input).predictions;
  const auto b = forward(params, c, input).predictions;
  EXPECT_EQ(a.flow, b.flow);
  EXPECT_EQ(a.frame, b.frame);
}

TEST(Forward, BranchIndependence) {
  NetworkConfig c;
  c.depth = 3;
  c.alpha = 1.0 / 8.0;
  const auto params = init_parameters<float>(c, 6);
  const auto input = random_input<float>(6, 1, 6, 16, 16);
  const auto base = forward(params, c, input).predictions;

  auto perturbed = params;
  for (auto& l : perturbed.layers) {
    if (l.group == ParamGroup::FlowDecoder)
      for (auto& w : l.weights) w += 0.01f;
  }
  auto out = forward(perturbed, c, input).predictions;
  EXPECT_EQ(out.frame, base.frame);
  EXPECT_NE(out.flow, base.flow);

  perturbed = params;
  for (auto& l : perturbed.layers) {
    if (l.group == ParamGroup::FrameDecoder)
      for (auto& w : l.weights) w += 0.01f;
  }
  out = forward(perturbed, c, input).predictions;
  EXPECT_EQ(out.flow, base.flow);
  EXPECT_NE(out.frame, base.frame);

  perturbed = params;
  for (auto& w : perturbed.at("conv2").weights) w += 0.01f;
  out = forward(perturbed, c, input).predictions;
  EXPECT_NE(out.flow, base.flow);
  EXPECT_NE(out.frame, base.frame);
}

TEST(Forward, TranslationCovarianceAwayFromBorders) {
  NetworkConfig c;
  c.depth = 2;
  c.alpha = 1.0 / 16.0;
  const auto params = init_parameters<double>(c, 7);
  const int size = 96, shift = 4, margin = 36;
  const auto input = random_input<double>(7, 1, 6, size, size);
  Tensor<double> rolled = input;
  for (int ch = 0; ch < 6; ++ch)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) rolled.at(0, ch, (y + shift) % size, (x + shift) % size) = input.at(0, ch, y, x);
  const auto a = forward(params, c, input).predictions;
  const auto b = forward(params, c, rolled).predictions;
  double worst = 0.0;
  for (const auto* pair : {&a.flow, &a.frame}) {
    const auto& pa = pair->back();
    const auto& pb = (pair == &a.flow ? b.flow : b.frame).back();
    for (int ch = 0; ch < pa.c; ++ch)
      for (int y = margin; y < size - margin - shift; ++y)
        for (int x = margin; x < size - margin - shift; ++x)
          worst = std::max(worst, std::abs(pa.at(0, ch, y, x) - pb.at(0, ch, y + shift, x + shift)));
  }
  EXPECT_LT(worst, 1e-5);
}

// Smooth test objective over every prediction: sum(c * p + p^2 / 2).
struct QuadraticObjective {
  std::vector<std::vector<double>> flow_coeffs, frame_coeffs;

  double value(const PredictionSet<double>& preds) const {
    double sum = 0.0;
    for (std::size_t l = 0; l < preds.flow.size(); ++l)
      for (std::size_t i = 0; i < preds.flow[l].data.size(); ++i)
        sum += flow_coeffs[l][i] * preds.flow[l].data[i] + 0.5 * preds.flow[l].data[i] * preds.flow[l].data[i];
    for (std::size_t l = 0; l < preds.frame.size(); ++l)
      for (std::size_t i = 0; i < preds.frame[l].data.size(); ++i)
        sum += frame_coeffs[l][i] * preds.frame[l].data[i] + 0.5 * preds.frame[l].data[i] * preds.frame[l].data[i];
    return sum;
  }

  PredictionGrads<double> grads(const PredictionSet<double>& preds) const {
    PredictionGrads<double> g;
    for (std::size_t l = 0; l < preds.flow.size(); ++l) {
      g.flow.push_back(preds.flow[l]);
      for (std::size_t i = 0; i < g.flow[l].data.size(); ++i) g.flow[l].data[i] += flow_coeffs[l][i];
    }
    for (std::size_t l = 0; l < preds.frame.size(); ++l) {
      g.frame.push_back(preds.frame[l]);
      for (std::size_t i = 0; i < g.frame[l].data.size(); ++i) g.frame[l].data[i] += frame_coeffs[l][i];
    }
    return g;
  }
};

QuadraticObjective make_objective(const PredictionSet<double>& shape, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  QuadraticObjective q;
  for (const auto& t : shape.flow) {
    q.flow_coeffs.emplace_back(t.data.size());
    for (auto& v : q.flow_coeffs.back()) v = dist(rng);
  }
  for (const auto& t : shape.frame) {
    q.frame_coeffs.emplace_back(t.data.size());
    for (auto& v : q.frame_coeffs.back()) v = dist(rng);
  }
  return q;
}

TEST(Backward, MatchesFiniteDifferences) {
  for (auto mode : {TaskMode::FlowNextFrame, TaskMode::NextFrameOnly}) {
    const auto c = tiny_config(mode);
    const auto params = init_parameters<double>(c, 21);
    const auto input = random_input<double>(21, 2, 6, 8, 8);
    const auto state = forward(params, c, input);
    const auto objective = make_objective(state.predictions, 22);
    auto analytic = params.zeros_like();
    backward(params, c, state, objective.grads(state.predictions), analytic);

    const auto result = testing::check_gradients(params, analytic, [&](const ParameterSet<double>& p) {
      const auto s = forward(p, c, input);
      return testing::Evaluation{objective.value(s.predictions), testing::network_pattern(s)};
    }, 1e-4, 1e-4, 1e-8, /*stride=*/5);
    EXPECT_EQ(result.failures, 0u) << "worst " << result.worst_relative_error << " at " << result.worst_parameter;
    EXPECT_GT(result.checked, 1000u);
    EXPECT_LT(result.skipped_kinks, result.checked / 100 + 1);
  }
}

TEST(Backward, SkippedBranchGetsNoGradient) {
  const auto c = tiny_config();
  const auto params = init_parameters<double>(c, 23);
  const auto input = random_input<double>(23, 1, 6, 8, 8);
  const auto state = forward(params, c, input, {false, true});
  const auto objective = make_objective(state.predictions, 24);
  auto grads = params.zeros_like();
  backward(params, c, state, objective.grads(state.predictions), grads);
  for (const auto& l : grads.layers) {
    bool any = false;
    for (double v : l.weights) any |= v != 0.0;
    EXPECT_EQ(any, l.group != ParamGroup::FlowDecoder) << l.name;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = fs::temp_directory_path() / "hybridflow_ckpt_test";
  fs::create_directories(dir);
  NetworkConfig c;
  c.depth = 3;
  c.alpha = 1.0 / 8.0;
  c.mode = TaskMode::NextFlowNextFrame;
  Checkpoint ckpt;
  ckpt.config = c;
  ckpt.iteration = 123456789012ULL;
  ckpt.params = init_parameters<float>(c, 9);
  ckpt.extra.push_back(ExtraRecord{"adam.m/conv1.weight", {2, 3}, {1, 2, 3, 4, 5, 6}});
  ckpt.metadata = R"({"note":"x"})";
  save_checkpoint(ckpt, dir / "a.ckpt");
  const auto back = load_checkpoint(dir / "a.ckpt", c);
  EXPECT_EQ(back.config, c);
  EXPECT_EQ(back.iteration, ckpt.iteration);
  EXPECT_EQ(back.params, ckpt.params);
  ASSERT_EQ(back.extra.size(), 1u);
  EXPECT_EQ(back.extra[0].name, "adam.m/conv1.weight");
  EXPECT_EQ(back.extra[0].data, ckpt.extra[0].data);
  EXPECT_EQ(back.metadata, ckpt.metadata);

  auto other = c;
  other.depth = 4;
  expect_error(ErrorCode::ShapeMismatch, [&] { load_checkpoint(dir / "a.ckpt", other); });

  auto bytes = read_file_bytes(dir / "a.ckpt");
  bytes.resize(bytes.size() - 10);
  write_file_bytes_atomic(dir / "t.ckpt", bytes);
  expect_error(ErrorCode::IoError, [&] { load_checkpoint(dir / "t.ckpt"); });

  bytes = read_file_bytes(dir / "a.ckpt");
  bytes[8] = 7;  // format version
  write_file_bytes_atomic(dir / "v.ckpt", bytes);
  expect_error(ErrorCode::FormatVersionMismatch, [&] { load_checkpoint(dir / "v.ckpt"); });

  expect_error(ErrorCode::IoError, [&] { load_checkpoint(dir / "missing.ckpt"); });
  fs::remove_all(dir);
}

TEST(Checkpoint, RejectsTamperedShapes) {
  const auto dir = fs::temp_directory_path() / "hybridflow_ckpt_shape";
  fs::create_directories(dir);
  const auto c = tiny_config();
  Checkpoint ckpt;
  ckpt.config = c;
  ckpt.params = init_parameters<float>(c, 1);
  ckpt.params.layers[0].weight_shape[0] = 4;
  ckpt.params.layers[0].weights.resize(4 * 6 * 49);
  save_checkpoint(ckpt, dir / "bad.ckpt");
  expect_error(ErrorCode::ShapeMismatch, [&] { load_checkpoint(dir / "bad.ckpt"); });
  fs::remove_all(dir);
}

TEST(StackInputs, OrdersFramesOldestFirst) {
  SampleTriplet s;
  s.i1 = Frame(2, 2, 0.25f);
  s.i2 = Frame(2, 2, 0.5f);
  s.i3 = Frame(2, 2, 0.75f);
  s.history = {Frame(2, 2, 0.0f), Frame(2, 2, 0.125f)};
  auto t = stack_inputs<float>({&s}, 2);
  EXPECT_EQ(t.c, 6);
  EXPECT_EQ(t.at(0, 0, 0, 0), 0.25f);
  EXPECT_EQ(t.at(0, 5, 1, 1), 0.5f);
  t = stack_inputs<float>({&s}, 4);
  EXPECT_EQ(t.c, 12);
  EXPECT_EQ(t.at(0, 0, 0, 0), 0.0f);
  EXPECT_EQ(t.at(0, 3, 0, 0), 0.125f);
  EXPECT_EQ(t.at(0, 6, 0, 0), 0.25f);
  EXPECT_EQ(t.at(0, 9, 0, 0), 0.5f);
  s.history.clear();
  expect_error(ErrorCode::ShapeMismatch, [&] { stack_inputs<float>({&s}, 4); });
}

}  // namespace
}  // namespace hybridflow::network
