#include <cmath>

#include "hybridflow/error.hpp"
#include "hybridflow/training.hpp"

namespace hybridflow::training {

namespace {

using network::Tensor;

int level_factor(int full_w, int full_h, int w, int h) {
  if (w <= 0 || h <= 0 || full_w % w != 0 || full_h % h != 0 || full_w / w != full_h / h) {
    throw Error(ErrorCode::ShapeMismatch, "prediction " + std::to_string(w) + "x" + std::to_string(h) +
                                              " is not an integer downscale of " + std::to_string(full_w) + "x" +
                                              std::to_string(full_h));
  }
  return full_w / w;
}

void check_levels(std::size_t preds, std::size_t weights) {
  if (preds != weights) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(preds) + " prediction levels but " +
                                              std::to_string(weights) + " level weights");
  }
}

template <typename T>
void check_batch(const Tensor<T>& pred, std::size_t targets, int channels) {
  if (pred.n != static_cast<int>(targets) || pred.c != channels) {
    throw Error(ErrorCode::ShapeMismatch, "prediction has batch " + std::to_string(pred.n) + " and " +
                                              std::to_string(pred.c) + " channels, expected " +
                                              std::to_string(targets) + " and " + std::to_string(channels));
  }
}

}  // namespace

FlowField downscale_flow(const FlowField& flow, int factor) {
  if (factor < 1 || flow.width % factor != 0 || flow.height % factor != 0) {
    throw Error(ErrorCode::ShapeMismatch, "cannot downscale flow by " + std::to_string(factor));
  }
  if (factor == 1) return flow;
  FlowField out(flow.width / factor, flow.height / factor);
  const double scale = 1.0 / (static_cast<double>(factor) * factor * factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double su = 0.0, sv = 0.0;
      for (int dy = 0; dy < factor; ++dy) {
        for (int dx = 0; dx < factor; ++dx) {
          su += flow.u_at(x * factor + dx, y * factor + dy);
          sv += flow.v_at(x * factor + dx, y * factor + dy);
        }
      }
      out.u[out.index(x, y)] = static_cast<float>(su * scale);
      out.v[out.index(x, y)] = static_cast<float>(sv * scale);
    }
  }
  return out;
}

Frame downscale_frame(const Frame& frame, int factor) {
  if (factor < 1 || frame.width % factor != 0 || frame.height % factor != 0) {
    throw Error(ErrorCode::ShapeMismatch, "cannot downscale frame by " + std::to_string(factor));
  }
  if (factor == 1) return frame;
  Frame out(frame.width / factor, frame.height / factor);
  const double scale = 1.0 / (static_cast<double>(factor) * factor);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < Frame::kChannels; ++c) {
        double sum = 0.0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) sum += frame.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = static_cast<float>(sum * scale);
      }
    }
  }
  return out;
}

template <typename T>
LossValue<T> flow_loss(const std::vector<Tensor<T>>& preds, const std::vector<const FlowField*>& targets,
                       const std::vector<double>& level_weights) {
  check_levels(preds.size(), level_weights.size());
  if (targets.empty()) throw Error(ErrorCode::ShapeMismatch, "flow loss needs at least one target");
  LossValue<T> out;
  for (std::size_t l = 0; l < preds.size(); ++l) {
    const auto& pred = preds[l];
    check_batch(pred, targets.size(), network::kFlowChannels);
    Tensor<T> grad(pred.n, pred.c, pred.h, pred.w);
    const double norm = level_weights[l] / (static_cast<double>(pred.n) * pred.plane());
    double sum = 0.0;
    for (int b = 0; b < pred.n; ++b) {
      const FlowField& full = *targets[b];
      if (full.width != targets[0]->width || full.height != targets[0]->height) {
        throw Error(ErrorCode::ShapeMismatch, "flow targets differ in size");
      }
      const FlowField gt = downscale_flow(full, level_factor(full.width, full.height, pred.w, pred.h));
      for (int y = 0; y < pred.h; ++y) {
        for (int x = 0; x < pred.w; ++x) {
          const double du = static_cast<double>(pred.at(b, 0, y, x)) - gt.u_at(x, y);
          const double dv = static_cast<double>(pred.at(b, 1, y, x)) - gt.v_at(x, y);
          const double epe = std::sqrt(du * du + dv * dv);
          sum += epe;
          if (epe > 0.0) {
            grad.at(b, 0, y, x) = static_cast<T>(norm * du / epe);
            grad.at(b, 1, y, x) = static_cast<T>(norm * dv / epe);
          }
        }
      }
    }
    out.value += norm * sum;
    out.grads.push_back(std::move(grad));
  }
  return out;
}

template <typename T>
LossValue<T> frame_loss(const std::vector<Tensor<T>>& preds, const std::vector<const Frame*>& targets,
                        const std::vector<double>& level_weights) {
  check_levels(preds.size(), level_weights.size());
  if (targets.empty()) throw Error(ErrorCode::ShapeMismatch, "frame loss needs at least one target");
  LossValue<T> out;
  for (std::size_t l = 0; l < preds.size(); ++l) {
    const auto& pred = preds[l];
    check_batch(pred, targets.size(), network::kFrameChannels);
    Tensor<T> grad(pred.n, pred.c, pred.h, pred.w);
    const double norm = level_weights[l] / (static_cast<double>(pred.n) * pred.c * pred.plane());
    double sum = 0.0;
    for (int b = 0; b < pred.n; ++b) {
      const Frame& full = *targets[b];
      if (full.width != targets[0]->width || full.height != targets[0]->height) {
        throw Error(ErrorCode::ShapeMismatch, "frame targets differ in size");
      }
      const Frame gt = downscale_frame(full, level_factor(full.width, full.height, pred.w, pred.h));
      for (int c = 0; c < pred.c; ++c) {
        for (int y = 0; y < pred.h; ++y) {
          for (int x = 0; x < pred.w; ++x) {
            const double d = static_cast<double>(pred.at(b, c, y, x)) - gt.at(x, y, c);
            sum += std::abs(d);
            if (d != 0.0) grad.at(b, c, y, x) = static_cast<T>(d > 0.0 ? norm : -norm);
          }
        }
      }
    }
    out.value += norm * sum;
    out.grads.push_back(std::move(grad));
  }
  return out;
}

network::BranchSelection branches_for(int s, network::TaskMode mode) {
  network::BranchSelection b;
  b.flow = s == 1 && mode != network::TaskMode::NextFrameOnly;
  b.frame = mode != network::TaskMode::FlowOnly;
  return b;
}

template <typename T>
TotalLoss<T> total_loss(const network::PredictionSet<T>& preds, const Minibatch& batch,
                        const TrainSchedule& schedule, int s, network::TaskMode mode) {
  if (s != 0 && s != 1) throw Error(ErrorCode::SourceMismatch, "switch value must be 0 or 1");
  const Source expected = s == 0 ? Source::Real : Source::Synthetic;
  if (batch.source != expected) {
    throw Error(ErrorCode::SourceMismatch, "s=" + std::to_string(s) + " requires a " +
                                               std::string(to_string(expected)) + " batch, got " +
                                               std::string(to_string(batch.source)));
  }
  batch.validate();
  const auto use = branches_for(s, mode);
  TotalLoss<T> out;
  if (use.flow) {
    const bool next_flow = mode == network::TaskMode::NextFlowNextFrame;
    std::vector<const FlowField*> targets;
    for (const auto& sample : batch.samples) {
      const auto& f = next_flow ? sample.f23 : sample.f12;
      if (!f) {
        throw Error(ErrorCode::MissingGroundTruth,
                    std::string("synthetic batch sample lacks ") + (next_flow ? "F23" : "F12"));
      }
      targets.push_back(&*f);
    }
    auto loss = flow_loss(preds.flow, targets, schedule.weights_for(static_cast<int>(preds.flow.size())));
    out.flow = loss.value;
    out.total += schedule.w1 * loss.value;
    for (auto& g : loss.grads) {
      for (auto& v : g.data) v = static_cast<T>(schedule.w1 * v);
    }
    out.grads.flow = std::move(loss.grads);
  }
  if (use.frame) {
    std::vector<const Frame*> targets;
    for (const auto& sample : batch.samples) targets.push_back(&sample.i3);
    auto loss = frame_loss(preds.frame, targets, schedule.weights_for(static_cast<int>(preds.frame.size())));
    out.frame = loss.value;
    out.total += schedule.w2 * loss.value;
    for (auto& g : loss.grads) {
      for (auto& v : g.data) v = static_cast<T>(schedule.w2 * v);
    }
    out.grads.frame = std::move(loss.grads);
  }
  return out;
}

LossWeights calibrate_weights(const std::vector<SampleTriplet>& samples, network::TaskMode mode, bool allow_few) {
  if (samples.empty() || (!allow_few && samples.size() < kCalibrationSamples)) {
    throw Error(ErrorCode::TooFewSamples, "calibration needs " + std::to_string(kCalibrationSamples) +
                                              " samples, got " + std::to_string(samples.size()));
  }
  const bool next_flow = mode == network::TaskMode::NextFlowNextFrame;
  // Pooled population statistics, two passes for accuracy.
  double flow_sum = 0.0, frame_sum = 0.0;
  std::size_t flow_n = 0, frame_n = 0;
  for (const auto& s : samples) {
    const auto& f = next_flow ? s.f23 : s.f12;
    if (!f) throw Error(ErrorCode::MissingGroundTruth, "calibration sample lacks flow ground truth");
    for (float v : f->u) flow_sum += v;
    for (float v : f->v) flow_sum += v;
    flow_n += f->u.size() + f->v.size();
    for (float v : s.i3.data) frame_sum += v;
    frame_n += s.i3.data.size();
  }
  const double flow_mean = flow_sum / static_cast<double>(flow_n);
  const double frame_mean = frame_sum / static_cast<double>(frame_n);
  double flow_ss = 0.0, frame_ss = 0.0;
  for (const auto& s : samples) {
    const auto& f = next_flow ? *s.f23 : *s.f12;
    for (float v : f.u) flow_ss += (v - flow_mean) * (v - flow_mean);
    for (float v : f.v) flow_ss += (v - flow_mean) * (v - flow_mean);
    for (float v : s.i3.data) frame_ss += (v - frame_mean) * (v - frame_mean);
  }
  LossWeights w;
  w.sigma_flow = std::sqrt(flow_ss / static_cast<double>(flow_n));
  w.sigma_frame = std::sqrt(frame_ss / static_cast<double>(frame_n));
  if (!(w.sigma_flow > 0.0) || !(w.sigma_frame > 0.0)) {
    throw Error(ErrorCode::DegenerateVariance, "flow or frame targets have zero variance");
  }
  w.w1 = w.sigma_frame / w.sigma_flow;
  w.w2 = 1.0;
  return w;
}

#define HYBRIDFLOW_INSTANTIATE_LOSSES(T)                                                                    \
  template LossValue<T> flow_loss<T>(const std::vector<Tensor<T>>&, const std::vector<const FlowField*>&,   \
                                     const std::vector<double>&);                                           \
  template LossValue<T> frame_loss<T>(const std::vector<Tensor<T>>&, const std::vector<const Frame*>&,      \
                                      const std::vector<double>&);                                          \
  template TotalLoss<T> total_loss<T>(const network::PredictionSet<T>&, const Minibatch&, const TrainSchedule&, \
                                      int, network::TaskMode);

HYBRIDFLOW_INSTANTIATE_LOSSES(float)
HYBRIDFLOW_INSTANTIATE_LOSSES(double)

#undef HYBRIDFLOW_INSTANTIATE_LOSSES

}  // namespace hybridflow::training
