#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>

#include "hybridflow/error.hpp"
#include "hybridflow/flowio.hpp"

namespace hybridflow {
namespace {

std::vector<std::uint8_t> flo_bytes(float magic, std::int32_t w, std::int32_t h, std::vector<float> values) {
  std::vector<std::uint8_t> out;
  auto put32 = [&](std::uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
  };
  put32(std::bit_cast<std::uint32_t>(magic));
  put32(static_cast<std::uint32_t>(w));
  put32(static_cast<std::uint32_t>(h));
  for (float v : values) put32(std::bit_cast<std::uint32_t>(v));
  return out;
}

template <typename Fn>
void expect_error(ErrorCode code, Fn&& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

FlowField random_flow(std::mt19937& rng, int w, int h, float range) {
  std::uniform_real_distribution<float> dist(-range, range);
  FlowField f(w, h);
  for (auto& x : f.u) x = dist(rng);
  for (auto& x : f.v) x = dist(rng);
  return f;
}

Frame random_frame(std::mt19937& rng, int w, int h) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Frame f(w, h);
  for (auto& x : f.data) x = dist(rng);
  return f;
}

// ---- .flo ------------------------------------------------------------------

TEST(Flo, ReadsInterleavedComponents) {
  const auto flow = read_flo(flo_bytes(202021.25f, 2, 1, {1.0f, -2.0f, 0.5f, 0.25f}));
  ASSERT_EQ(flow.width, 2);
  ASSERT_EQ(flow.height, 1);
  EXPECT_EQ(flow.u, (std::vector<float>{1.0f, 0.5f}));
  EXPECT_EQ(flow.v, (std::vector<float>{-2.0f, 0.25f}));
  EXPECT_FALSE(flow.valid.has_value());
}

TEST(Flo, ReadsZeroFlow) {
  const auto flow = read_flo(flo_bytes(202021.25f, 1, 1, {0.0f, 0.0f}));
  EXPECT_EQ(flow, FlowField(1, 1));
}

TEST(Flo, RejectsBadMagic) {
  expect_error(ErrorCode::BadMagic, [] { read_flo(flo_bytes(0.0f, 1, 1, {0.0f, 0.0f})); });
}

TEST(Flo, RejectsWrongLength) {
  expect_error(ErrorCode::Truncated, [] { read_flo(flo_bytes(202021.25f, 2, 2, {0.0f, 0.0f})); });
  expect_error(ErrorCode::Truncated, [] { read_flo(flo_bytes(202021.25f, 1, 1, {0.0f, 0.0f, 1.0f})); });
}

TEST(Flo, RejectsNonPositiveDims) {
  expect_error(ErrorCode::NonPositiveDims, [] { read_flo(flo_bytes(202021.25f, 0, 3, {})); });
  expect_error(ErrorCode::NonPositiveDims, [] { read_flo(flo_bytes(202021.25f, 2, -1, {})); });
}

TEST(Flo, WritesZeroFlowAsTwentyBytes) {
  const auto bytes = write_flo(FlowField(1, 1));
  EXPECT_EQ(bytes, flo_bytes(202021.25f, 1, 1, {0.0f, 0.0f}));
  EXPECT_EQ(bytes.size(), 20u);
  // "PIEH" tag in ASCII.
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PIEH");
}

TEST(Flo, RoundTripIsBitExactOverRandomFields) {
  std::mt19937 rng(7);
  std::uniform_int_distribution<int> dim(1, 23);
  for (int trial = 0; trial < 200; ++trial) {
    const auto original = random_flow(rng, dim(rng), dim(rng), 1e4f);
    const auto back = read_flo(write_flo(original));
    ASSERT_EQ(back.width, original.width);
    ASSERT_EQ(back.height, original.height);
    for (std::size_t i = 0; i < original.u.size(); ++i) {
      ASSERT_EQ(std::bit_cast<std::uint32_t>(back.u[i]), std::bit_cast<std::uint32_t>(original.u[i]));
      ASSERT_EQ(std::bit_cast<std::uint32_t>(back.v[i]), std::bit_cast<std::uint32_t>(original.v[i]));
    }
  }
  std::mt19937 rng2(3);
  const auto f75 = random_flow(rng2, 7, 5, 50.0f);
  EXPECT_EQ(read_flo(write_flo(f75)), f75);
}

TEST(Flo, RefusesNonFiniteField) {
  FlowField f(3, 2);
  f.u[4] = std::numeric_limits<float>::quiet_NaN();
  expect_error(ErrorCode::InvariantViolation, [&] { write_flo(f); });
}

TEST(Flo, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "hybridflow_flo_test";
  std::filesystem::create_directories(dir);
  std::mt19937 rng(11);
  const auto f = random_flow(rng, 9, 4, 3.0f);
  write_flo_file(dir / "a.flo", f);
  EXPECT_EQ(read_flo_file(dir / "a.flo"), f);
  std::filesystem::remove_all(dir);
}

// ---- KITTI PNG -------------------------------------------------------------

PngImage kitti_pixel(std::uint16_t r, std::uint16_t g, std::uint16_t b) {
  PngImage img;
  img.width = 1;
  img.height = 1;
  img.channels = 3;
  img.bit_depth = 16;
  img.samples = {r, g, b};
  return img;
}

TEST(Kitti, DecodesQuantizedValues) {
  auto f = decode_kitti_png(kitti_pixel(32768 + 64, 32768 - 128, 1));
  EXPECT_EQ(f.u[0], 1.0f);
  EXPECT_EQ(f.v[0], -2.0f);
  EXPECT_TRUE(f.valid->at(0, 0));

  f = decode_kitti_png(kitti_pixel(32768, 32768, 0));
  EXPECT_EQ(f.u[0], 0.0f);
  EXPECT_EQ(f.v[0], 0.0f);
  EXPECT_FALSE(f.valid->at(0, 0));

  f = decode_kitti_png(kitti_pixel(32768 + 1, 32768, 1));
  EXPECT_EQ(f.u[0], 0.015625f);
  EXPECT_EQ(f.v[0], 0.0f);
  EXPECT_TRUE(f.valid->at(0, 0));
}

TEST(Kitti, InvalidPixelsCarryZeroFlow) {
  auto f = decode_kitti_png(kitti_pixel(40000, 20000, 0));
  EXPECT_EQ(f.u[0], 0.0f);
  EXPECT_EQ(f.v[0], 0.0f);
}

TEST(Kitti, RejectsWrongFormats) {
  auto img = kitti_pixel(0, 0, 0);
  img.bit_depth = 8;
  expect_error(ErrorCode::WrongBitDepth, [&] { decode_kitti_png(img); });
  img = kitti_pixel(0, 0, 0);
  img.channels = 1;
  img.samples = {0};
  expect_error(ErrorCode::WrongChannelCount, [&] { decode_kitti_png(img); });
}

TEST(Kitti, EncodesInverseFormula) {
  auto f = FlowField::uniform(1, 1, 1.0f, -2.0f);
  const auto img = encode_kitti_png(f);
  EXPECT_EQ(img.samples, (std::vector<std::uint16_t>{32768 + 64, 32768 - 128, 1}));
}

TEST(Kitti, RangeOverflow) {
  auto f = FlowField::uniform(1, 1, 600.0f, 0.0f);
  expect_error(ErrorCode::RangeOverflow, [&] { encode_kitti_png(f); });
  // An invalid pixel may hold anything encodable or not.
  f.valid = Mask(1, 1, false);
  EXPECT_NO_THROW(encode_kitti_png(f));
}

TEST(Kitti, RoundTripWithinQuantization) {
  std::mt19937 rng(5);
  std::bernoulli_distribution coin(0.8);
  for (int trial = 0; trial < 50; ++trial) {
    auto f = random_flow(rng, 13, 7, 100.0f);
    f.valid = Mask(13, 7);
    for (auto& b : f.valid->bits) b = coin(rng) ? 1 : 0;
    // Through the actual PNG bytes.
    const auto back = decode_kitti_png(decode_png(encode_png(encode_kitti_png(f))));
    ASSERT_EQ(back.valid->bits, f.valid->bits);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      if (!f.valid->bits[i]) continue;
      ASSERT_LE(std::abs(back.u[i] - f.u[i]), 1.0f / 128.0f);
      ASSERT_LE(std::abs(back.v[i] - f.v[i]), 1.0f / 128.0f);
    }
  }
}

// ---- colorization ------------------------------------------------------------

TEST(Colorize, ZeroFlowIsWhite) {
  const auto img = colorize_flow(FlowField(5, 4));
  for (float x : img.data) EXPECT_EQ(x, 1.0f);
}

// HSV saturation of a rendered wheel color: every wheel entry has one channel
// at 0 and one at 1, so the rendered saturation equals the requested one.
double hsv_saturation(const Frame& f, int x, int y) {
  const float mx = std::max({f.at(x, y, 0), f.at(x, y, 1), f.at(x, y, 2)});
  const float mn = std::min({f.at(x, y, 0), f.at(x, y, 1), f.at(x, y, 2)});
  return mx <= 0 ? 0.0 : (mx - mn) / mx;
}

TEST(Colorize, OppositeFlowsGetComplementaryHuesAtEqualSaturation) {
  FlowField f(2, 1);
  f.u = {3.0f, -3.0f};
  const auto img = colorize_flow(f, 6.0f);
  EXPECT_NEAR(hsv_saturation(img, 0, 0), 0.5, 1e-6);
  EXPECT_NEAR(hsv_saturation(img, 1, 0), 0.5, 1e-6);
  const auto expected0 = wheel_color(0.0, 0.5);
  const auto expected1 = wheel_color(std::numbers::pi, 0.5);
  for (int c = 0; c < 3; ++c) {
    EXPECT_FLOAT_EQ(img.at(0, 0, c), expected0[c]);
    EXPECT_FLOAT_EQ(img.at(1, 0, c), expected1[c]);
  }
  EXPECT_NE(expected0, expected1);
}

TEST(Colorize, MagnitudeAtMaximumIsFullySaturatedAndUniform) {
  const auto img = colorize_flow(FlowField::uniform(4, 3, 0.0f, 2.0f), 2.0f);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      EXPECT_NEAR(hsv_saturation(img, x, y), 1.0, 1e-6);
      for (int c = 0; c < 3; ++c) EXPECT_EQ(img.at(x, y, c), img.at(0, 0, c));
    }
  }
}

TEST(Colorize, DefaultScaleIsNinetyNinthPercentile) {
  // 100 pixels with magnitudes 1..100: the 99th percentile is 99, so the
  // largest vector saturates and the one at 99 is exactly saturated.
  FlowField f(100, 1);
  for (int i = 0; i < 100; ++i) f.u[i] = static_cast<float>(i + 1);
  const auto img = colorize_flow(f);
  EXPECT_NEAR(hsv_saturation(img, 98, 0), 1.0, 1e-6);
  EXPECT_NEAR(hsv_saturation(img, 99, 0), 1.0, 1e-6);
  EXPECT_NEAR(hsv_saturation(img, 48, 0), 49.0 / 99.0, 1e-6);
}

TEST(Colorize, RotatingFlowRotatesHue) {
  std::mt19937 rng(9);
  const auto f = random_flow(rng, 8, 8, 5.0f);
  for (double degrees : {90.0, 180.0}) {
    const double theta = degrees * std::numbers::pi / 180.0;
    FlowField r(8, 8);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      r.u[i] = static_cast<float>(std::cos(theta) * f.u[i] - std::sin(theta) * f.v[i]);
      r.v[i] = static_cast<float>(std::sin(theta) * f.u[i] + std::cos(theta) * f.v[i]);
    }
    const auto base = colorize_flow(f, 5.0f);
    const auto rotated = colorize_flow(r, 5.0f);
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        const double angle = std::atan2(f.v_at(x, y), f.u_at(x, y));
        const double sat = std::min(1.0, std::hypot(f.u_at(x, y), f.v_at(x, y)) / 5.0);
        const auto expected = wheel_color(angle + theta, sat);
        for (int c = 0; c < 3; ++c) {
          EXPECT_NEAR(rotated.at(x, y, c), expected[c], 1e-4);
          EXPECT_NEAR(base.at(x, y, c), wheel_color(angle, sat)[c], 1e-6);
        }
      }
    }
  }
}

// ---- endpoint error ------------------------------------------------------------

TEST(EndpointError, ThreeFourFive) {
  const auto r = endpoint_error(FlowField(4, 3), FlowField::uniform(4, 3, 3.0f, 4.0f));
  EXPECT_EQ(r.mean, 5.0);
  for (float e : r.per_pixel) EXPECT_EQ(e, 5.0f);
}

TEST(EndpointError, IdenticalFieldsGiveZero) {
  std::mt19937 rng(1);
  const auto f = random_flow(rng, 6, 6, 10.0f);
  EXPECT_EQ(endpoint_error(f, f).mean, 0.0);
}

TEST(EndpointError, MeanOverMaskedPixels) {
  FlowField pred(2, 1);
  FlowField gt(2, 1);
  gt.u = {3.0f, 0.0f};
  gt.v = {4.0f, 0.0f};
  // errors 5 and 0, both selected: (5 + 0) / 2
  EXPECT_EQ(endpoint_error(pred, gt, Mask(2, 1, true)).mean, 2.5);
  Mask only_first(2, 1);
  only_first.set(0, 0, true);
  EXPECT_EQ(endpoint_error(pred, gt, only_first).mean, 5.0);
}

TEST(EndpointError, HonorsGroundTruthValidity) {
  FlowField pred(2, 1);
  FlowField gt(2, 1);
  gt.u = {3.0f, 100.0f};
  gt.v = {4.0f, 0.0f};
  gt.valid = Mask(2, 1);
  gt.valid->set(0, 0, true);
  EXPECT_EQ(endpoint_error(pred, gt).mean, 5.0);
}

TEST(EndpointError, Errors) {
  expect_error(ErrorCode::DimensionMismatch, [] { endpoint_error(FlowField(2, 2), FlowField(2, 3)); });
  expect_error(ErrorCode::EmptyMask, [] { endpoint_error(FlowField(2, 2), FlowField(2, 2), Mask(2, 2)); });
}

TEST(EndpointError, SymmetricAndScaleCovariant) {
  std::mt19937 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_flow(rng, 5, 4, 8.0f);
    const auto b = random_flow(rng, 5, 4, 8.0f);
    const double ab = endpoint_error(a, b).mean;
    EXPECT_DOUBLE_EQ(ab, endpoint_error(b, a).mean);
    // Power-of-two scaling is exact in floating point.
    for (float s : {0.5f, 2.0f, 4.0f}) {
      auto as = a;
      auto bs = b;
      for (auto& x : as.u) x *= s;
      for (auto& x : as.v) x *= s;
      for (auto& x : bs.u) x *= s;
      for (auto& x : bs.v) x *= s;
      EXPECT_DOUBLE_EQ(endpoint_error(as, bs).mean, s * ab);
    }
  }
}

// ---- PSNR / sharpness ------------------------------------------------------------

TEST(Psnr, IdenticalFramesHitCap) {
  std::mt19937 rng(2);
  const auto f = random_frame(rng, 6, 5);
  EXPECT_EQ(psnr(f, f), 99.0);
}

TEST(Psnr, UniformOffsets) {
  EXPECT_NEAR(psnr(Frame(8, 8, 0.1f), Frame(8, 8, 0.0f)), 20.0, 1e-6);
  EXPECT_NEAR(psnr(Frame(8, 8, 0.5f), Frame(8, 8, 0.0f)), 6.0206, 1e-4);
  EXPECT_NEAR(psnr(Frame(8, 8, 0.5f), Frame(8, 8, 0.0f)), 20.0 * std::log10(2.0), 1e-9);
}

TEST(Psnr, MaskRestrictsPixels) {
  Frame pred(2, 1, 0.0f);
  Frame gt(2, 1, 0.0f);
  for (int c = 0; c < 3; ++c) pred.at(1, 0, c) = 0.5f;
  Mask left(2, 1);
  left.set(0, 0, true);
  EXPECT_EQ(psnr(pred, gt, left), 99.0);
  expect_error(ErrorCode::EmptyMask, [&] { psnr(pred, gt, Mask(2, 1)); });
  expect_error(ErrorCode::DimensionMismatch, [&] { psnr(pred, Frame(3, 1)); });
}

TEST(Psnr, DecreasesWithNoiseAmplitude) {
  std::mt19937 rng(8);
  const auto clean = random_frame(rng, 32, 32);
  double previous = 1e9;
  for (float amplitude : {0.01f, 0.05f, 0.2f}) {
    std::mt19937 noise_rng(99);
    std::normal_distribution<float> noise(0.0f, amplitude);
    Frame noisy = clean;
    for (auto& x : noisy.data) x = x + noise(noise_rng);
    const double value = psnr(noisy, clean);
    EXPECT_LT(value, previous);
    previous = value;
  }
}

TEST(Sharpness, Cases) {
  std::mt19937 rng(12);
  const auto f = random_frame(rng, 7, 6);
  EXPECT_EQ(sharpness(f, f), 99.0);
  EXPECT_EQ(sharpness(Frame(5, 5, 0.2f), Frame(5, 5, 0.7f)), 99.0);
  Frame shifted(7, 6);
  auto base = random_frame(rng, 7, 6);
  // Keep values exactly representable after the offset: multiples of 1/64.
  for (auto& x : base.data) x = std::round(x * 32.0f) / 64.0f;
  for (std::size_t i = 0; i < base.data.size(); ++i) shifted.data[i] = base.data[i] + 0.125f;
  EXPECT_EQ(sharpness(shifted, base), 99.0);
  expect_error(ErrorCode::TooSmall, [] { sharpness(Frame(1, 5), Frame(1, 5)); });
  expect_error(ErrorCode::DimensionMismatch, [] { sharpness(Frame(3, 3), Frame(3, 4)); });
}

TEST(Sharpness, GradientDifferenceValue) {
  // gt flat, pred has a single unit step in x between column 0 and 1 on a 2x2
  // image: only the interior pixel (0,0) counts, |dx| = 1 on every channel.
  Frame gt(2, 2, 0.0f);
  Frame pred(2, 2, 0.0f);
  for (int c = 0; c < 3; ++c) {
    pred.at(1, 0, c) = 1.0f;
    pred.at(1, 1, c) = 1.0f;
  }
  EXPECT_NEAR(sharpness(pred, gt), 0.0, 1e-12);  // GDL = 1 -> 0 dB
}

// ---- moving regions ------------------------------------------------------------

TEST(MovingRegion, Cases) {
  EXPECT_EQ(moving_region_mask(FlowField(4, 4), 0.5f).count(), 0u);
  EXPECT_EQ(moving_region_mask(FlowField::uniform(4, 4, 3.0f, 4.0f), 0.5f).count(), 16u);
  EXPECT_FALSE(moving_region_mask(FlowField::uniform(1, 1, 0.5f, 0.0f), 0.5f).at(0, 0));
  EXPECT_TRUE(moving_region_mask(FlowField::uniform(1, 1, 0.5001f, 0.0f), 0.5f).at(0, 0));
}

// ---- warping -------------------------------------------------------------------

TEST(Warp, ZeroFlowIsIdentity) {
  std::mt19937 rng(3);
  const auto f = random_frame(rng, 5, 4);
  const auto r = warp_frame(f, FlowField(5, 4));
  EXPECT_EQ(r.frame, f);
  EXPECT_EQ(r.coverage.count(), 20u);
}

TEST(Warp, IntegerShift) {
  std::mt19937 rng(6);
  const auto f = random_frame(rng, 4, 4);
  const auto r = warp_frame(f, FlowField::uniform(4, 4, 1.0f, 0.0f));
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 3; ++x) {
      EXPECT_TRUE(r.coverage.at(x, y));
      for (int c = 0; c < 3; ++c) EXPECT_EQ(r.frame.at(x, y, c), f.at(x + 1, y, c));
    }
    EXPECT_FALSE(r.coverage.at(3, y));
  }
}

TEST(Warp, HalfPixelShiftAveragesAcrossEdge) {
  // Columns 0,1 dark (0.0), columns 2,3 bright (1.0). Sampling at x + 0.5:
  // x=0 -> 0, x=1 -> (0 + 1) / 2, x=2 -> 1, x=3 leaves the image.
  Frame f(4, 2, 0.0f);
  for (int y = 0; y < 2; ++y)
    for (int x = 2; x < 4; ++x)
      for (int c = 0; c < 3; ++c) f.at(x, y, c) = 1.0f;
  const auto r = warp_frame(f, FlowField::uniform(4, 2, 0.5f, 0.0f));
  for (int y = 0; y < 2; ++y) {
    EXPECT_EQ(r.frame.at(0, y, 0), 0.0f);
    EXPECT_EQ(r.frame.at(1, y, 0), 0.5f);
    EXPECT_EQ(r.frame.at(2, y, 0), 1.0f);
    EXPECT_FALSE(r.coverage.at(3, y));
  }
}

TEST(Warp, ForwardThenBackwardRestoresDoublyCoveredPixels) {
  std::mt19937 rng(10);
  const auto f = random_frame(rng, 9, 7);
  for (auto [du, dv] : {std::pair{2.0f, -1.0f}, std::pair{-3.0f, 2.0f}, std::pair{1.0f, 1.0f}}) {
    const auto once = warp_frame(f, FlowField::uniform(9, 7, du, dv));
    const auto twice = warp_frame(once.frame, FlowField::uniform(9, 7, -du, -dv));
    int checked = 0;
    for (int y = 0; y < 7; ++y) {
      for (int x = 0; x < 9; ++x) {
        if (!twice.coverage.at(x, y)) continue;
        const int sx = x - static_cast<int>(du);
        const int sy = y - static_cast<int>(dv);
        if (!once.coverage.at(sx, sy)) continue;
        ++checked;
        for (int c = 0; c < 3; ++c) EXPECT_EQ(twice.frame.at(x, y, c), f.at(x, y, c));
      }
    }
    EXPECT_GT(checked, 0);
  }
}

TEST(Warp, DimensionMismatch) {
  expect_error(ErrorCode::DimensionMismatch, [] { warp_frame(Frame(3, 3), FlowField(3, 2)); });
}

// ---- PNG helpers ------------------------------------------------------------------

TEST(Png, FrameRoundTripIsExactAfterQuantization) {
  std::mt19937 rng(13);
  const auto f = random_frame(rng, 11, 6).quantized();
  const auto back = frame_from_png(decode_png(encode_png(frame_to_png(f))));
  EXPECT_EQ(back, f);
}

TEST(Png, OneBitMaskRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "hybridflow_png_test";
  std::mt19937 rng(14);
  std::bernoulli_distribution coin(0.5);
  Mask m(13, 5);
  for (auto& b : m.bits) b = coin(rng) ? 1 : 0;
  write_mask_png(dir / "m.png", m);
  const auto raw = decode_png(read_file_bytes(dir / "m.png"));
  EXPECT_EQ(raw.bit_depth, 1);
  EXPECT_EQ(read_mask_png(dir / "m.png"), m);
  std::filesystem::remove_all(dir);
}

TEST(Png, CorruptStream) {
  std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  expect_error(ErrorCode::CorruptFile, [&] { decode_png(junk); });
  auto good = encode_png(frame_to_png(Frame(4, 4, 0.5f)));
  good.resize(good.size() / 2);
  expect_error(ErrorCode::CorruptFile, [&] { decode_png(good); });
}

}  // namespace
}  // namespace hybridflow
