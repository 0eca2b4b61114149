#include <algorithm>
#include <cmath>
#include <string>

#include "hybridflow/error.hpp"
#include "hybridflow/kernels.hpp"
#include "hybridflow/network.hpp"
#include "hybridflow/rng.hpp"
#include "ops.hpp"

namespace hybridflow::network {

namespace {

struct EncoderRow {
  const char* name;
  int kernel, stride, padding, base_width;
};

// Stride-2 stages are conv1..conv6; the "_1" layers refine at the same scale.
constexpr EncoderRow kEncoder[] = {
    {"conv1", 7, 2, 3, 64},   {"conv2", 5, 2, 2, 128},  {"conv3", 5, 2, 2, 256},  {"conv3_1", 3, 1, 1, 256},
    {"conv4", 3, 2, 1, 512},  {"conv4_1", 3, 1, 1, 512}, {"conv5", 3, 2, 1, 512},  {"conv5_1", 3, 1, 1, 512},
    {"conv6", 3, 2, 1, 1024}, {"conv6_1", 3, 1, 1, 1024},
};

// Number of encoder layers kept at depth L.
int encoder_layer_count(int depth) { return depth <= 2 ? 2 : 2 * depth - 2; }

// Encoder layer whose output is the feature map at level k (1 <= k <= L).
int feature_layer(int level) { return level <= 2 ? level - 1 : 2 * level - 3; }

int decoder_base_width(int stage) { return 16 << stage; }

const std::string& branch_prefix(bool flow) {
  static const std::string kFlow = "flow_", kFrame = "frame_";
  return flow ? kFlow : kFrame;
}

ops::ConvGeometry conv_geometry(const LayerSpec& spec, int in_h, int in_w) {
  return {spec.in_channels, in_h, in_w, spec.out_channels, spec.output_size(in_h), spec.output_size(in_w),
          spec.kernel_h, spec.kernel_w, spec.stride, spec.padding};
}

// Geometry of the convolution whose adjoint is the given upconv.
ops::ConvGeometry upconv_geometry(const LayerSpec& spec, int in_h, int in_w) {
  return {spec.out_channels, spec.output_size(in_h), spec.output_size(in_w), spec.in_channels, in_h, in_w,
          spec.kernel_h, spec.kernel_w, spec.stride, spec.padding};
}

template <typename T>
Tensor<T> run_conv(const LayerSpec& spec, const LayerParams<T>& p, const Tensor<T>& x) {
  const auto g = conv_geometry(spec, x.h, x.w);
  Tensor<T> y(x.n, g.out_channels, g.out_h, g.out_w);
  std::vector<T> scratch;
  for (int b = 0; b < x.n; ++b) {
    ops::conv_forward(x.data.data() + x.index(b, 0, 0, 0), p.weights.data(), p.bias.data(), g,
                      y.data.data() + y.index(b, 0, 0, 0), scratch);
  }
  if (spec.leaky) kernels::leaky_relu_forward(std::span<T>(y.data), T(kLeakySlope));
  return y;
}

template <typename T>
Tensor<T> run_upconv(const LayerSpec& spec, const LayerParams<T>& p, const Tensor<T>& x) {
  const auto g = upconv_geometry(spec, x.h, x.w);
  Tensor<T> y(x.n, g.in_channels, g.in_h, g.in_w);
  std::vector<T> scratch;
  for (int b = 0; b < x.n; ++b) {
    ops::upconv_forward(x.data.data() + x.index(b, 0, 0, 0), p.weights.data(), p.bias.data(), g,
                        y.data.data() + y.index(b, 0, 0, 0), scratch);
  }
  if (spec.leaky) kernels::leaky_relu_forward(std::span<T>(y.data), T(kLeakySlope));
  return y;
}

// dy is the gradient w.r.t. the layer's post-activation output; it is
// converted in place to the pre-activation gradient.
template <typename T>
void conv_back(const LayerSpec& spec, const LayerParams<T>& p, const Tensor<T>& x, const Tensor<T>& y,
               Tensor<T>& dy, LayerParams<T>& grad, Tensor<T>* dx) {
  if (spec.leaky) kernels::leaky_relu_backward(std::span<const T>(y.data), std::span<T>(dy.data), T(kLeakySlope));
  const auto g = conv_geometry(spec, x.h, x.w);
  std::vector<T> scratch;
  for (int b = 0; b < x.n; ++b) {
    ops::conv_backward(x.data.data() + x.index(b, 0, 0, 0), p.weights.data(), dy.data.data() + dy.index(b, 0, 0, 0),
                       g, grad.weights.data(), grad.bias.data(),
                       dx ? dx->data.data() + dx->index(b, 0, 0, 0) : nullptr, scratch);
  }
}

template <typename T>
void upconv_back(const LayerSpec& spec, const LayerParams<T>& p, const Tensor<T>& x, const Tensor<T>& y,
                 Tensor<T>& dy, LayerParams<T>& grad, Tensor<T>* dx) {
  if (spec.leaky) kernels::leaky_relu_backward(std::span<const T>(y.data), std::span<T>(dy.data), T(kLeakySlope));
  const auto g = upconv_geometry(spec, x.h, x.w);
  std::vector<T> scratch;
  for (int b = 0; b < x.n; ++b) {
    ops::upconv_backward(x.data.data() + x.index(b, 0, 0, 0), p.weights.data(),
                         dy.data.data() + dy.index(b, 0, 0, 0), g, grad.weights.data(), grad.bias.data(),
                         dx ? dx->data.data() + dx->index(b, 0, 0, 0) : nullptr, scratch);
  }
}

// Channel-wise concatenation of same-sized tensors.
template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts) {
  int channels = 0;
  for (const auto* p : parts) channels += p->c;
  const auto& first = *parts.front();
  Tensor<T> out(first.n, channels, first.h, first.w);
  for (int b = 0; b < first.n; ++b) {
    T* dst = out.data.data() + out.index(b, 0, 0, 0);
    for (const auto* p : parts) {
      const std::size_t count = static_cast<std::size_t>(p->c) * p->plane();
      std::copy_n(p->data.data() + p->index(b, 0, 0, 0), count, dst);
      dst += count;
    }
  }
  return out;
}

// Adds the channel range [offset, offset + part.c) of `whole` into `part`.
template <typename T>
void add_slice(const Tensor<T>& whole, int offset, Tensor<T>& part) {
  const std::size_t count = static_cast<std::size_t>(part.c) * part.plane();
  for (int b = 0; b < part.n; ++b) {
    const T* src = whole.data.data() + whole.index(b, offset, 0, 0);
    T* dst = part.data.data() + part.index(b, 0, 0, 0);
    for (std::size_t i = 0; i < count; ++i) dst[i] += src[i];
  }
}

template <typename T>
Tensor<T> upsample(const Tensor<T>& x) {
  Tensor<T> y(x.n, x.c, 2 * x.h, 2 * x.w);
  for (int b = 0; b < x.n; ++b) {
    ops::upsample2x_forward(x.data.data() + x.index(b, 0, 0, 0), x.c, x.h, x.w, y.data.data() + y.index(b, 0, 0, 0));
  }
  return y;
}

template <typename T>
const Tensor<T>& level_feature(const ForwardState<T>& state, int level) {
  return level == 0 ? state.input : state.encoder[feature_layer(level)];
}

template <typename T>
void run_decoder(const ParameterSet<T>& params, const std::vector<LayerSpec>& layers, int depth, bool flow,
                 ForwardState<T>& state) {
  auto& branch = flow ? state.flow : state.frame;
  auto& reported = flow ? state.predictions.flow : state.predictions.frame;
  branch.active = true;
  // Stage inputs are referenced across iterations, so no reallocation.
  branch.up.reserve(depth);
  branch.concat.reserve(depth);
  branch.raw.reserve(depth);
  const Tensor<T>* stage_input = &state.encoder.back();
  for (int s = 0; s < depth; ++s) {
    const int level = depth - 1 - s;
    const LayerSpec& up_spec = layers[2 * s];
    const LayerSpec& pred_spec = layers[2 * s + 1];
    branch.up.push_back(run_upconv(up_spec, params.at(up_spec.name), *stage_input));
    std::vector<const Tensor<T>*> parts = {&branch.up.back(), &level_feature(state, level)};
    Tensor<T> upsampled;
    if (s > 0) {
      upsampled = upsample(branch.raw.back());
      parts.push_back(&upsampled);
    }
    branch.concat.push_back(concat(parts));
    branch.raw.push_back(run_conv(pred_spec, params.at(pred_spec.name), branch.concat.back()));
    stage_input = &branch.concat.back();

    Tensor<T> out = branch.raw.back();
    if (!flow) {
      const bool final = s == depth - 1;
      for (auto& v : out.data) v = final ? std::clamp(v + T(0.5), T(0), T(1)) : v + T(0.5);
    }
    reported.push_back(std::move(out));
  }
}

}  // namespace

std::string_view to_string(TaskMode mode) {
  switch (mode) {
    case TaskMode::FlowNextFrame: return "flow+nextframe";
    case TaskMode::NextFlowNextFrame: return "nextflow+nextframe";
    case TaskMode::FlowOnly: return "flow";
    case TaskMode::NextFrameOnly: return "nextframe";
  }
  return "?";
}

TaskMode parse_task_mode(std::string_view text) {
  for (auto mode : {TaskMode::FlowNextFrame, TaskMode::NextFlowNextFrame, TaskMode::FlowOnly, TaskMode::NextFrameOnly}) {
    if (text == to_string(mode)) return mode;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown task mode '" + std::string(text) +
                                            "' (expected flow+nextframe, nextflow+nextframe, flow or nextframe)");
}

int NetworkConfig::scaled(int base_width) const {
  return std::max(kMinChannels, static_cast<int>(std::lround(base_width * alpha)));
}

void NetworkConfig::validate() const {
  if (depth < 2 || depth > 6) throw Error(ErrorCode::InvalidConfig, "depth must lie in [2, 6]");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidConfig, "alpha must lie in (0, 1]");
  if (input_frames != 2 && input_frames != 4) throw Error(ErrorCode::InvalidConfig, "input_frames must be 2 or 4");
}

int LayerSpec::output_size(int input_size) const {
  if (kind == LayerKind::Upconv) return (input_size - 1) * stride - 2 * padding + kernel_h;
  return (input_size + 2 * padding - kernel_h) / stride + 1;
}

Architecture build_layers(const NetworkConfig& config) {
  config.validate();
  Architecture arch;
  int channels = config.input_channels();
  const int count = encoder_layer_count(config.depth);
  std::vector<int> level_channels(config.depth + 1);
  level_channels[0] = config.input_channels();
  for (int i = 0; i < count; ++i) {
    const auto& row = kEncoder[i];
    LayerSpec spec{row.name, LayerKind::Conv, row.kernel, row.kernel, row.stride, row.padding,
                   channels, config.scaled(row.base_width), true};
    channels = spec.out_channels;
    arch.encoder.push_back(spec);
  }
  for (int level = 1; level <= config.depth; ++level) {
    level_channels[level] = arch.encoder[feature_layer(level)].out_channels;
  }
  for (bool flow : {true, false}) {
    if (flow ? !config.has_flow_branch() : !config.has_frame_branch()) continue;
    auto& layers = flow ? arch.flow_decoder : arch.frame_decoder;
    const int pred_channels = flow ? kFlowChannels : kFrameChannels;
    int stage_in = level_channels[config.depth];
    for (int level = config.depth - 1; level >= 0; --level) {
      const std::string suffix = std::to_string(level);
      LayerSpec up{branch_prefix(flow) + "upconv" + suffix, LayerKind::Upconv, 4, 4, 2, 1,
                   stage_in, config.scaled(decoder_base_width(level)), true};
      const bool first = level == config.depth - 1;
      const int concat_channels = up.out_channels + level_channels[level] + (first ? 0 : pred_channels);
      LayerSpec pred{branch_prefix(flow) + "predict" + suffix, LayerKind::Predictor, 3, 3, 1, 1,
                     concat_channels, pred_channels, false};
      layers.push_back(up);
      layers.push_back(pred);
      stage_in = concat_channels;
    }
  }
  return arch;
}

template <typename T>
const LayerParams<T>& ParameterSet<T>::at(std::string_view name) const {
  for (const auto& l : layers) {
    if (l.name == name) return l;
  }
  throw Error(ErrorCode::ShapeMismatch, "no parameters for layer '" + std::string(name) + "'");
}

template <typename T>
LayerParams<T>& ParameterSet<T>::at(std::string_view name) {
  return const_cast<LayerParams<T>&>(static_cast<const ParameterSet&>(*this).at(name));
}

template <typename T>
std::size_t ParameterSet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

template <typename T>
ParameterSet<T> ParameterSet<T>::zeros_like() const {
  ParameterSet out = *this;
  for (auto& l : out.layers) {
    std::fill(l.weights.begin(), l.weights.end(), T(0));
    std::fill(l.bias.begin(), l.bias.end(), T(0));
  }
  return out;
}

template <typename T>
template <typename U>
ParameterSet<U> ParameterSet<T>::cast() const {
  ParameterSet<U> out;
  for (const auto& l : layers) {
    LayerParams<U> c;
    c.name = l.name;
    c.group = l.group;
    c.weight_shape = l.weight_shape;
    c.weights.assign(l.weights.begin(), l.weights.end());
    c.bias.assign(l.bias.begin(), l.bias.end());
    out.layers.push_back(std::move(c));
  }
  return out;
}

template <typename T>
ParameterSet<T> init_parameters(const NetworkConfig& config, std::uint64_t seed) {
  const auto arch = build_layers(config);
  ParameterSet<T> params;
  auto add = [&](const LayerSpec& spec, ParamGroup group) {
    LayerParams<T> p;
    p.name = spec.name;
    p.group = group;
    if (spec.kind == LayerKind::Upconv) {
      p.weight_shape = {spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w};
    } else {
      p.weight_shape = {spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
    }
    const std::size_t count =
        static_cast<std::size_t>(spec.in_channels) * spec.out_channels * spec.kernel_h * spec.kernel_w;
    const double bound = std::sqrt(2.0 / (static_cast<double>(spec.in_channels) * spec.kernel_h * spec.kernel_w));
    Rng rng(hash_combine(seed, params.layers.size()));
    p.weights.resize(count);
    for (auto& w : p.weights) w = static_cast<T>(static_cast<float>(rng.uniform(-bound, bound)));
    p.bias.assign(spec.out_channels, T(0));
    params.layers.push_back(std::move(p));
  };
  for (const auto& s : arch.encoder) add(s, ParamGroup::Encoder);
  for (const auto& s : arch.flow_decoder) add(s, ParamGroup::FlowDecoder);
  for (const auto& s : arch.frame_decoder) add(s, ParamGroup::FrameDecoder);
  return params;
}

template <typename T>
Tensor<T> stack_inputs(const std::vector<const SampleTriplet*>& samples, int input_frames) {
  if (samples.empty()) throw Error(ErrorCode::ShapeMismatch, "stack_inputs: no samples");
  const int w = samples.front()->width(), h = samples.front()->height();
  Tensor<T> out(static_cast<int>(samples.size()), 3 * input_frames, h, w);
  for (int b = 0; b < out.n; ++b) {
    const SampleTriplet& s = *samples[b];
    std::vector<const Frame*> frames;
    if (input_frames == 4) {
      if (s.history.size() < 2) {
        throw Error(ErrorCode::ShapeMismatch, "4-frame input needs two history frames per sample");
      }
      frames.push_back(&s.history[s.history.size() - 2]);
      frames.push_back(&s.history[s.history.size() - 1]);
    }
    frames.push_back(&s.i1);
    frames.push_back(&s.i2);
    for (std::size_t f = 0; f < frames.size(); ++f) {
      const Frame& frame = *frames[f];
      if (frame.width != w || frame.height != h) throw Error(ErrorCode::ShapeMismatch, "stack_inputs: size mismatch");
      for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) out.at(b, static_cast<int>(f) * 3 + c, y, x) = static_cast<T>(frame.at(x, y, c));
        }
      }
    }
  }
  return out;
}

template <typename T>
ForwardState<T> forward(const ParameterSet<T>& params, const NetworkConfig& config, const Tensor<T>& input,
                        BranchSelection branches) {
  const auto arch = build_layers(config);
  const int divisor = 1 << config.depth;
  if (input.c != config.input_channels()) {
    throw Error(ErrorCode::ShapeMismatch, "input has " + std::to_string(input.c) + " channels, expected " +
                                              std::to_string(config.input_channels()));
  }
  if (input.h <= 0 || input.w <= 0 || input.h % divisor != 0 || input.w % divisor != 0) {
    throw Error(ErrorCode::ShapeMismatch, "input size must be a positive multiple of " + std::to_string(divisor));
  }
  ForwardState<T> state;
  state.input = input;
  for (auto& v : state.input.data) v -= T(0.5);
  state.encoder.reserve(arch.encoder.size());
  const Tensor<T>* x = &state.input;
  for (const auto& spec : arch.encoder) {
    const auto& p = params.at(spec.name);
    if (p.weights.size() != static_cast<std::size_t>(spec.out_channels) * spec.in_channels * spec.kernel_h * spec.kernel_w) {
      throw Error(ErrorCode::ShapeMismatch, "parameter shape mismatch for " + spec.name);
    }
    state.encoder.push_back(run_conv(spec, p, *x));
    x = &state.encoder.back();
  }
  if (branches.flow && config.has_flow_branch()) run_decoder(params, arch.flow_decoder, config.depth, true, state);
  if (branches.frame && config.has_frame_branch()) {
    run_decoder(params, arch.frame_decoder, config.depth, false, state);
  }
  return state;
}

template <typename T>
void backward(const ParameterSet<T>& params, const NetworkConfig& config, const ForwardState<T>& state,
              const PredictionGrads<T>& output_grads, ParameterSet<T>& grads) {
  const auto arch = build_layers(config);
  const int depth = config.depth;
  // Gradients w.r.t. the feature map at each level (level 0 = input, unused).
  std::vector<Tensor<T>> feature_grads(depth + 1);
  feature_grads[0] = Tensor<T>(state.input.n, state.input.c, state.input.h, state.input.w);
  for (int level = 1; level <= depth; ++level) {
    const auto& f = level_feature(state, level);
    feature_grads[level] = Tensor<T>(f.n, f.c, f.h, f.w);
  }
  Tensor<T>& deepest = feature_grads[depth];

  auto run_branch = [&](bool flow) {
    const auto& branch = flow ? state.flow : state.frame;
    const auto& g = flow ? output_grads.flow : output_grads.frame;
    if (!branch.active || g.empty()) return;
    if (static_cast<int>(g.size()) != depth) throw Error(ErrorCode::ShapeMismatch, "one gradient per prediction level expected");
    // Decoder gradients: predictors and upconvs, last stage first.
    std::vector<Tensor<T>> draw(g.begin(), g.end());
    if (!flow) {
      const Tensor<T>& raw = branch.raw.back();
      for (std::size_t i = 0; i < raw.data.size(); ++i) {
        const T shifted = raw.data[i] + T(0.5);
        if (!(shifted > T(0) && shifted < T(1))) draw.back().data[i] = T(0);
      }
    }
    const auto& layers = flow ? arch.flow_decoder : arch.frame_decoder;
    std::vector<Tensor<T>> dconcat;
    for (const auto& c : branch.concat) dconcat.emplace_back(c.n, c.c, c.h, c.w);
    for (int s = depth - 1; s >= 0; --s) {
      const int level = depth - 1 - s;
      const LayerSpec& up_spec = layers[2 * s];
      const LayerSpec& pred_spec = layers[2 * s + 1];
      conv_back(pred_spec, params.at(pred_spec.name), branch.concat[s], branch.raw[s], draw[s],
                grads.at(pred_spec.name), &dconcat[s]);
      const auto& up = branch.up[s];
      Tensor<T> dup(up.n, up.c, up.h, up.w);
      add_slice(dconcat[s], 0, dup);
      add_slice(dconcat[s], dup.c, feature_grads[level]);
      if (s > 0) {
        const int offset = dup.c + feature_grads[level].c;
        Tensor<T>& prev = draw[s - 1];
        Tensor<T> dupsampled(prev.n, prev.c, 2 * prev.h, 2 * prev.w);
        add_slice(dconcat[s], offset, dupsampled);
        for (int b = 0; b < prev.n; ++b) {
          ops::upsample2x_backward(dupsampled.data.data() + dupsampled.index(b, 0, 0, 0), prev.c, prev.h, prev.w,
                                   prev.data.data() + prev.index(b, 0, 0, 0));
        }
      }
      const Tensor<T>& stage_input = s == 0 ? state.encoder.back() : branch.concat[s - 1];
      Tensor<T>* dinput = s == 0 ? &deepest : &dconcat[s - 1];
      upconv_back(up_spec, params.at(up_spec.name), stage_input, up, dup, grads.at(up_spec.name), dinput);
    }
  };
  run_branch(true);
  run_branch(false);

  // Encoder, deepest layer first. The gradient arriving at layer i's output is
  // the skip gradient (if it is a level feature) plus what layer i+1 sends back.
  const int count = static_cast<int>(arch.encoder.size());
  Tensor<T> carry = feature_grads[depth];
  for (int i = count - 1; i >= 0; --i) {
    if (i != count - 1) {
      for (int level = 1; level < depth; ++level) {
        if (feature_layer(level) == i) {
          for (std::size_t k = 0; k < carry.data.size(); ++k) carry.data[k] += feature_grads[level].data[k];
        }
      }
    }
    const Tensor<T>& in = i == 0 ? state.input : state.encoder[i - 1];
    Tensor<T> din;
    if (i > 0) din = Tensor<T>(in.n, in.c, in.h, in.w);
    conv_back(arch.encoder[i], params.at(arch.encoder[i].name), in, state.encoder[i], carry,
              grads.at(arch.encoder[i].name), i > 0 ? &din : nullptr);
    carry = std::move(din);
  }
}

#define HYBRIDFLOW_INSTANTIATE_NETWORK(T)                                                                      \
  template struct ParameterSet<T>;                                                                            \
  template ParameterSet<T> init_parameters<T>(const NetworkConfig&, std::uint64_t);                           \
  template Tensor<T> stack_inputs<T>(const std::vector<const SampleTriplet*>&, int);                          \
  template ForwardState<T> forward<T>(const ParameterSet<T>&, const NetworkConfig&, const Tensor<T>&,         \
                                      BranchSelection);                                                       \
  template void backward<T>(const ParameterSet<T>&, const NetworkConfig&, const ForwardState<T>&,             \
                            const PredictionGrads<T>&, ParameterSet<T>&);

HYBRIDFLOW_INSTANTIATE_NETWORK(float)
HYBRIDFLOW_INSTANTIATE_NETWORK(double)

template ParameterSet<double> ParameterSet<float>::cast<double>() const;
template ParameterSet<float> ParameterSet<double>::cast<float>() const;
template ParameterSet<float> ParameterSet<float>::cast<float>() const;

#undef HYBRIDFLOW_INSTANTIATE_NETWORK

}  // namespace hybridflow::network
