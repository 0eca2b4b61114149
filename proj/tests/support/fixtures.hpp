#pragma once

// Hand-rolled generators and shared checks used by the unit and acceptance
// test binaries.

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "gradcheck.hpp"
#include "hybridflow/flowio.hpp"
#include "hybridflow/network.hpp"
#include "hybridflow/training.hpp"
#include "hybridflow/types.hpp"

namespace hybridflow::testing {

inline Frame random_frame(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Frame f(w, h);
  for (auto& v : f.data) v = dist(rng);
  return f;
}

inline FlowField random_flow(std::mt19937_64& rng, int w, int h, float max_abs) {
  std::uniform_real_distribution<float> dist(-max_abs, max_abs);
  FlowField f(w, h);
  for (auto& v : f.u) v = dist(rng);
  for (auto& v : f.v) v = dist(rng);
  return f;
}

/// Synthetic-tagged triplet with random frames and random F12/F23.
inline SampleTriplet random_sample(std::uint64_t seed, int w, int h, int history = 0) {
  std::mt19937_64 rng(seed);
  SampleTriplet s;
  s.i1 = random_frame(rng, w, h);
  s.i2 = random_frame(rng, w, h);
  s.i3 = random_frame(rng, w, h);
  s.f12 = random_flow(rng, w, h, 3.0f);
  s.f23 = random_flow(rng, w, h, 3.0f);
  for (int k = 0; k < history; ++k) s.history.push_back(random_frame(rng, w, h));
  return s;
}

inline Minibatch random_batch(std::uint64_t seed, int n, int w, int h, Source source) {
  Minibatch b;
  b.source = source;
  for (int i = 0; i < n; ++i) {
    auto s = random_sample(seed * 1000 + static_cast<std::uint64_t>(i), w, h);
    b.samples.push_back(source == Source::Real ? s.without_ground_truth() : s);
  }
  return b;
}

/// Smallest network the gradient check runs on: L = 2, every width 8.
inline network::NetworkConfig gradcheck_config(network::TaskMode mode) {
  network::NetworkConfig c;
  c.depth = 2;
  c.alpha = 1.0 / 16.0;
  c.mode = mode;
  return c;
}

/// Signs of the frame residuals at every level (the L1 kinks) on top of the
/// network's own activation pattern.
inline Pattern loss_pattern(const network::ForwardState<double>& state, const Minibatch& batch) {
  Pattern p = network_pattern(state);
  for (const auto& pred : state.predictions.frame) {
    const int factor = batch.samples[0].width() / pred.w;
    for (int b = 0; b < pred.n; ++b) {
      const Frame gt = training::downscale_frame(batch.samples[b].i3, factor);
      for (int c = 0; c < pred.c; ++c)
        for (int y = 0; y < pred.h; ++y)
          for (int x = 0; x < pred.w; ++x) p.push_back(pred.at(b, c, y, x) > gt.at(x, y, c) ? 1 : 0);
    }
  }
  return p;
}

/// Independent extended-precision evaluation of the batch loss on the given
/// predictions: w1 * s * sum_l weight_l * mean EPE + w2 * sum_l weight_l * mean
/// L1, with targets pooled by the library's downscale helpers. Summing in
/// long double keeps the loss's rounding well below what a central difference
/// at h = 1e-4 can resolve for gradients near 1e-8.
inline long double reference_total_loss(const network::PredictionSet<double>& preds, const Minibatch& batch,
                                        const training::TrainSchedule& schedule, int s, network::TaskMode mode) {
  const auto use = training::branches_for(s, mode);
  const int full_w = batch.samples[0].width();
  long double total = 0.0L;
  if (use.flow) {
    const auto weights = schedule.weights_for(static_cast<int>(preds.flow.size()));
    for (std::size_t l = 0; l < preds.flow.size(); ++l) {
      const auto& p = preds.flow[l];
      long double sum = 0.0L;
      for (int b = 0; b < p.n; ++b) {
        const auto& sample = batch.samples[b];
        const FlowField& full = mode == network::TaskMode::NextFlowNextFrame ? *sample.f23 : *sample.f12;
        const FlowField gt = training::downscale_flow(full, full_w / p.w);
        for (int y = 0; y < p.h; ++y)
          for (int x = 0; x < p.w; ++x) {
            const long double du = static_cast<long double>(p.at(b, 0, y, x)) - gt.u_at(x, y);
            const long double dv = static_cast<long double>(p.at(b, 1, y, x)) - gt.v_at(x, y);
            sum += std::sqrt(du * du + dv * dv);
          }
      }
      total += static_cast<long double>(schedule.w1) * weights[l] * sum / (static_cast<long double>(p.n) * p.h * p.w);
    }
  }
  if (use.frame) {
    const auto weights = schedule.weights_for(static_cast<int>(preds.frame.size()));
    for (std::size_t l = 0; l < preds.frame.size(); ++l) {
      const auto& p = preds.frame[l];
      long double sum = 0.0L;
      for (int b = 0; b < p.n; ++b) {
        const Frame gt = training::downscale_frame(batch.samples[b].i3, full_w / p.w);
        for (int c = 0; c < p.c; ++c)
          for (int y = 0; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x) sum += std::abs(static_cast<long double>(p.at(b, c, y, x)) - gt.at(x, y, c));
      }
      total += static_cast<long double>(schedule.w2) * weights[l] * sum /
               (static_cast<long double>(p.n) * p.c * p.h * p.w);
    }
  }
  return total;
}

struct GradientCase {
  network::NetworkConfig config;
  network::ParameterSet<double> params;
  Minibatch batch;
  training::TrainSchedule schedule;
  network::Tensor<double> input;
  int s = 1;
};

inline GradientCase make_gradient_case(network::TaskMode mode, int s, std::uint64_t seed) {
  GradientCase g;
  g.config = gradcheck_config(mode);
  g.params = network::init_parameters<double>(g.config, seed);
  g.batch = random_batch(seed, 2, 8, 8, s == 0 ? Source::Real : Source::Synthetic);
  g.schedule.w1 = 0.7;
  g.schedule.w2 = 1.3;
  g.schedule.level_weights = {0.5, 1.0};
  g.s = s;
  std::vector<const SampleTriplet*> ptrs;
  for (const auto& x : g.batch.samples) ptrs.push_back(&x);
  g.input = network::stack_inputs<double>(ptrs, g.config.input_frames);
  return g;
}

/// Finite-difference check of the full total_loss gradient (forward, loss,
/// backward) for one switch value and task mode, at step 1e-4 and tolerance
/// 1e-4 on every parameter with |g| > 1e-8.
inline GradCheckResult check_total_loss_gradient(network::TaskMode mode, int s, std::uint64_t seed,
                                                 std::size_t stride = 1) {
  const GradientCase g = make_gradient_case(mode, s, seed);
  const auto& [config, params, batch, schedule, input, _] = g;
  const auto branches = training::branches_for(s, mode);

  const auto state = network::forward(params, config, input, branches);
  const auto loss = training::total_loss(state.predictions, batch, schedule, s, mode);
  auto analytic = params.zeros_like();
  network::backward(params, config, state, loss.grads, analytic);

  return check_gradients(
      params, analytic,
      [&](const network::ParameterSet<double>& p) {
        const auto st = network::forward(p, config, input, branches);
        return Evaluation{reference_total_loss(st.predictions, batch, schedule, s, mode), loss_pattern(st, batch)};
      },
      1e-4, 1e-4, 1e-8, stride);
}

/// FNV-1a digest of the exact bit patterns of a float vector.
inline std::uint64_t bits_digest(const std::vector<float>& values) {
  std::uint64_t h = 1469598103934665603ULL;
  for (float v : values) h = (h ^ std::bit_cast<std::uint32_t>(v)) * 1099511628211ULL;
  return h;
}

// Mean absolute difference between I1 and I2 warped back by F12 over pixels
// that are both visible at t+1 and covered by the warp.
inline double photometric_residual(const SampleTriplet& s) {
  const auto warped = warp_frame(s.i2, *s.f12);
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < s.height(); ++y) {
    for (int x = 0; x < s.width(); ++x) {
      if (!s.occlusion12->at(x, y) || !warped.coverage.at(x, y)) continue;
      for (int c = 0; c < 3; ++c) sum += std::abs(s.i1.at(x, y, c) - warped.frame.at(x, y, c));
      n += 3;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace hybridflow::testing
