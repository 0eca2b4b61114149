#pragma once

// Shared-encoder, dual-decoder fully convolutional network with a hand-written
// backward pass. Templated on the scalar type: float for training, double for
// gradient checking.
//
// Decoder stage k (k = L-1 .. 0) works at resolution H / 2^k:
//   up_k     = leaky(upconv_k(stage input))      stage input: deepest encoder
//                                                features for k = L-1, else concat_{k+1}
//   concat_k = [up_k, encoder features at level k, upsample2x(raw prediction_{k+1})]
//   pred_k   = predict_k(concat_k)               3x3 conv, no nonlinearity
// Level-0 "encoder features" are the normalized input frames. The last
// prediction is full resolution.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hybridflow/types.hpp"

namespace hybridflow::network {

enum class TaskMode { FlowNextFrame, NextFlowNextFrame, FlowOnly, NextFrameOnly };

std::string_view to_string(TaskMode mode);
/// Accepts "flow+nextframe", "nextflow+nextframe", "flow", "nextframe".
TaskMode parse_task_mode(std::string_view text);

inline constexpr float kLeakySlope = 0.1f;
inline constexpr int kFlowChannels = 2;
inline constexpr int kFrameChannels = 3;
inline constexpr int kMinChannels = 8;

struct NetworkConfig {
  int depth = 6;       // number of stride-2 encoder stages, L
  double alpha = 1.0;  // channel-width scale
  int input_frames = 2;
  TaskMode mode = TaskMode::FlowNextFrame;

  bool has_flow_branch() const { return mode != TaskMode::NextFrameOnly; }
  bool has_frame_branch() const { return mode != TaskMode::FlowOnly; }
  int input_channels() const { return 3 * input_frames; }
  /// max(kMinChannels, round(base * alpha)).
  int scaled(int base_width) const;
  /// Throws InvalidConfig.
  void validate() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

enum class LayerKind { Conv, Upconv, Predictor };

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int padding = 1;
  int in_channels = 0;
  int out_channels = 0;
  bool leaky = true;

  int output_size(int input_size) const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class ParamGroup { Encoder, FlowDecoder, FrameDecoder };

struct Architecture {
  std::vector<LayerSpec> encoder;
  /// Interleaved per stage: upconv_k, predict_k for k = L-1 .. 0. Empty when
  /// the branch is disabled by the task mode.
  std::vector<LayerSpec> flow_decoder;
  std::vector<LayerSpec> frame_decoder;
};

Architecture build_layers(const NetworkConfig& config);

template <typename T>
struct LayerParams {
  std::string name;
  ParamGroup group = ParamGroup::Encoder;
  /// Conv/predictor: (out, in, kh, kw). Upconv: (in, out, kh, kw).
  std::vector<int> weight_shape;
  std::vector<T> weights;
  std::vector<T> bias;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

template <typename T>
struct ParameterSet {
  std::vector<LayerParams<T>> layers;

  const LayerParams<T>& at(std::string_view name) const;
  LayerParams<T>& at(std::string_view name);
  std::size_t parameter_count() const;
  /// Same structure, all values zero.
  ParameterSet zeros_like() const;
  template <typename U>
  ParameterSet<U> cast() const;

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

template <typename T>
ParameterSet<T> init_parameters(const NetworkConfig& config, std::uint64_t seed);

/// NCHW tensor.
template <typename T>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t index(int b, int ch, int y, int x) const {
    return ((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x;
  }
  T at(int b, int ch, int y, int x) const { return data[index(b, ch, y, x)]; }
  T& at(int b, int ch, int y, int x) { return data[index(b, ch, y, x)]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Stacks frames into the network input on the [0,1] scale: history frames
/// (4-frame input only), then I1, I2.
template <typename T>
Tensor<T> stack_inputs(const std::vector<const SampleTriplet*>& samples, int input_frames);

/// Reported predictions per branch, coarsest first; the last entry is full
/// resolution. Frame predictions are shifted back by +0.5 and the final one is
/// clamped to [0,1]; flow predictions are raw.
template <typename T>
struct PredictionSet {
  std::vector<Tensor<T>> flow;
  std::vector<Tensor<T>> frame;
};

struct BranchSelection {
  bool flow = true;
  bool frame = true;
};

/// Activations kept for the backward pass.
template <typename T>
struct ForwardState {
  Tensor<T> input;                  // normalized (input - 0.5)
  std::vector<Tensor<T>> encoder;   // per encoder layer, post-activation
  struct Branch {
    bool active = false;
    std::vector<Tensor<T>> up;      // per stage, post-activation
    std::vector<Tensor<T>> concat;  // per stage
    std::vector<Tensor<T>> raw;     // per stage, predictor output
  };
  Branch flow;
  Branch frame;
  PredictionSet<T> predictions;
};

/// Runs the encoder and the selected (and configured) decoders.
/// Errors: ShapeMismatch.
template <typename T>
ForwardState<T> forward(const ParameterSet<T>& params, const NetworkConfig& config, const Tensor<T>& input,
                        BranchSelection branches = {});

/// Gradients of a scalar loss with respect to the reported predictions; an
/// empty list means the branch does not contribute.
template <typename T>
struct PredictionGrads {
  std::vector<Tensor<T>> flow;
  std::vector<Tensor<T>> frame;
};

/// Accumulates parameter gradients into `grads` (same structure as params).
/// Decoders absent from `state` or from `output_grads` receive nothing.
template <typename T>
void backward(const ParameterSet<T>& params, const NetworkConfig& config, const ForwardState<T>& state,
              const PredictionGrads<T>& output_grads, ParameterSet<T>& grads);

// ---- checkpoints -------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// A named float32 array stored alongside the parameters (e.g. optimizer moments).
struct ExtraRecord {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct Checkpoint {
  NetworkConfig config;
  std::uint64_t iteration = 0;
  ParameterSet<float> params;
  std::vector<ExtraRecord> extra;
  /// Free-form JSON text carried in the header (training state, etc.).
  std::string metadata = "{}";
};

/// Errors: IoError.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
/// Errors: IoError (missing or truncated), FormatVersionMismatch, ShapeMismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also checks the stored config against `expected`. Errors: ShapeMismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path, const NetworkConfig& expected);

std::string config_to_json(const NetworkConfig& config);
NetworkConfig config_from_json(const std::string& text);

}  // namespace hybridflow::network
