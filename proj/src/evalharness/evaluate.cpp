#include <algorithm>

#include "json.hpp"

#include "hybridflow/datagen.hpp"
#include "hybridflow/error.hpp"
#include "hybridflow/evalharness.hpp"

namespace hybridflow::evalharness {

namespace {

using nlohmann::json;

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

template <typename Fn>
void for_each_chunk(const std::vector<SampleTriplet>& samples, Fn&& fn) {
  for (std::size_t begin = 0; begin < samples.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(samples.size(), begin + kEvalBatch);
    std::vector<const SampleTriplet*> chunk;
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(&samples[i]);
    fn(begin, chunk);
  }
}

}  // namespace

NetworkModel::NetworkModel(network::NetworkConfig config, network::ParameterSet<float> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

NetworkModel NetworkModel::load(const std::filesystem::path& checkpoint) {
  auto ckpt = network::load_checkpoint(checkpoint);
  return NetworkModel(ckpt.config, std::move(ckpt.params));
}

FlowField flow_from_tensor(const network::Tensor<float>& t, int b) {
  if (t.c != network::kFlowChannels) throw Error(ErrorCode::ShapeMismatch, "flow tensor needs 2 channels");
  FlowField f(t.w, t.h);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x) {
      f.u[f.index(x, y)] = t.at(b, 0, y, x);
      f.v[f.index(x, y)] = t.at(b, 1, y, x);
    }
  return f;
}

Frame frame_from_tensor(const network::Tensor<float>& t, int b) {
  if (t.c != network::kFrameChannels) throw Error(ErrorCode::ShapeMismatch, "frame tensor needs 3 channels");
  Frame f(t.w, t.h);
  for (int c = 0; c < t.c; ++c)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) f.at(x, y, c) = t.at(b, c, y, x);
  return f;
}

std::vector<Prediction> NetworkModel::predict(const std::vector<const SampleTriplet*>& samples) const {
  if (samples.empty()) return {};
  const auto input = network::stack_inputs<float>(samples, config_.input_frames);
  const auto state = network::forward(params_, config_, input);
  std::vector<Prediction> out(samples.size());
  for (std::size_t b = 0; b < samples.size(); ++b) {
    if (!state.predictions.flow.empty()) out[b].flow = flow_from_tensor(state.predictions.flow.back(), static_cast<int>(b));
    if (!state.predictions.frame.empty()) {
      out[b].frame = frame_from_tensor(state.predictions.frame.back(), static_cast<int>(b));
    }
  }
  return out;
}

std::vector<Prediction> CopyLastFrameModel::predict(const std::vector<const SampleTriplet*>& samples) const {
  std::vector<Prediction> out;
  for (const auto* s : samples) out.push_back({FlowField(s->width(), s->height()), s->i2});
  return out;
}

std::vector<SampleTriplet> load_samples(const std::filesystem::path& dataset, bool attach_withheld_truth) {
  const auto manifest = datagen::load_manifest(dataset);
  std::vector<SampleTriplet> out;
  out.reserve(manifest.sample_count);
  for (std::size_t i = 0; i < manifest.sample_count; ++i) {
    auto s = datagen::load_triplet(manifest, i);
    if (attach_withheld_truth && manifest.source == Source::Real) {
      auto truth = datagen::load_ground_truth(manifest, i);
      s.f12 = std::move(truth.f12);
      s.f23 = std::move(truth.f23);
      s.occlusion12 = std::move(truth.occlusion12);
      s.occlusion23 = std::move(truth.occlusion23);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string MetricsReport::to_json() const {
  json samples = json::array();
  for (const auto& m : per_sample) {
    samples.push_back({{"epe", optional_number(m.epe)},
                       {"psnr_whole", optional_number(m.psnr_whole)},
                       {"sharpness_whole", optional_number(m.sharpness_whole)},
                       {"psnr_moving", optional_number(m.psnr_moving)},
                       {"sharpness_moving", optional_number(m.sharpness_moving)}});
  }
  return json{{"sample_count", sample_count},
              {"mean_epe", optional_number(mean_epe)},
              {"psnr_whole", optional_number(psnr_whole)},
              {"sharpness_whole", optional_number(sharpness_whole)},
              {"psnr_moving", optional_number(psnr_moving)},
              {"sharpness_moving", optional_number(sharpness_moving)},
              {"moving_sample_count", moving_sample_count},
              {"per_sample", samples}}
      .dump(2);
}

MetricsReport evaluate_flow(const Model& model, const std::vector<SampleTriplet>& samples) {
  const bool next_flow = model.mode() == network::TaskMode::NextFlowNextFrame;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!(next_flow ? samples[i].f23 : samples[i].f12)) {
      throw Error(ErrorCode::MissingGroundTruth, "sample " + std::to_string(i) + " has no flow ground truth");
    }
  }
  MetricsReport report;
  report.sample_count = samples.size();
  report.per_sample.resize(samples.size());
  std::vector<double> epes;
  for_each_chunk(samples, [&](std::size_t begin, const std::vector<const SampleTriplet*>& chunk) {
    const auto preds = model.predict(chunk);
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      if (!preds[k].flow) throw Error(ErrorCode::InvalidConfig, "model produces no flow prediction");
      const FlowField& gt = next_flow ? *chunk[k]->f23 : *chunk[k]->f12;
      const double epe = endpoint_error(*preds[k].flow, gt).mean;
      report.per_sample[begin + k].epe = epe;
      epes.push_back(epe);
    }
  });
  report.mean_epe = mean_of(epes);
  return report;
}

MetricsReport evaluate_prediction(const Model& model, const std::vector<SampleTriplet>& samples,
                                  float moving_threshold) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].f23) {
      throw Error(ErrorCode::MissingGroundTruth, "sample " + std::to_string(i) + " has no F23 for the moving mask");
    }
  }
  MetricsReport report;
  report.sample_count = samples.size();
  report.per_sample.resize(samples.size());
  std::vector<double> psnr_whole, sharp_whole, psnr_moving, sharp_moving;
  for_each_chunk(samples, [&](std::size_t begin, const std::vector<const SampleTriplet*>& chunk) {
    const auto preds = model.predict(chunk);
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      if (!preds[k].frame) throw Error(ErrorCode::InvalidConfig, "model produces no frame prediction");
      const Frame& pred = *preds[k].frame;
      const Frame& gt = chunk[k]->i3;
      auto& m = report.per_sample[begin + k];
      m.psnr_whole = psnr(pred, gt);
      m.sharpness_whole = sharpness(pred, gt);
      psnr_whole.push_back(*m.psnr_whole);
      sharp_whole.push_back(*m.sharpness_whole);
      const Mask moving = moving_region_mask(*chunk[k]->f23, moving_threshold);
      if (moving.count() > 0) {
        m.psnr_moving = psnr(pred, gt, moving);
        psnr_moving.push_back(*m.psnr_moving);
        try {
          m.sharpness_moving = sharpness(pred, gt, moving);
          sharp_moving.push_back(*m.sharpness_moving);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::EmptyMask) throw;  // moving pixels only on the border
        }
      }
    }
  });
  report.psnr_whole = mean_of(psnr_whole);
  report.sharpness_whole = mean_of(sharp_whole);
  report.psnr_moving = mean_of(psnr_moving);
  report.sharpness_moving = mean_of(sharp_moving);
  report.moving_sample_count = psnr_moving.size();
  return report;
}

}  // namespace hybridflow::evalharness
