#pragma once

// Hybrid training: a periodic switch alternates minibatches between an
// unlabeled REAL source (s = 0, next-frame loss only) and a labeled SYNTHETIC
// source (s = 1, flow and next-frame losses). On s = 0 steps the flow decoder
// is neither evaluated nor updated, and its optimizer moments stay untouched.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hybridflow/network.hpp"
#include "hybridflow/types.hpp"

namespace hybridflow::training {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainSchedule {
  int n1 = 1;  // consecutive REAL iterations per period
  int n2 = 5;  // consecutive SYNTHETIC iterations per period
  double w1 = 0.2;  // flow-loss weight
  double w2 = 1.0;  // frame-loss weight
  /// Per-prediction loss weights, coarsest first. Empty means 1.0 everywhere.
  std::vector<double> level_weights;
  double base_lr = 1e-4;
  std::uint64_t lr_drop_start = 300000;
  std::uint64_t lr_drop_every = 100000;
  double lr_drop_factor = 0.5;
  AdamConfig adam;
  std::uint64_t total_iterations = 1000000;
  int batch_size = 8;
  std::uint64_t seed = 0;

  /// Throws InvalidCycles or InvalidConfig. `levels` is the number of
  /// predictions per branch (the network depth).
  void validate(int levels) const;
  /// Level weights expanded to `levels` entries.
  std::vector<double> weights_for(int levels) const;

  /// Desk-scale preset: 2,000 iterations, drops every 200 from 600, base lr 1e-3.
  static TrainSchedule desk();
};

/// Periodic source selector: 0 picks REAL, 1 picks SYNTHETIC. Over any n1+n2
/// consecutive iterations exactly n1 zeros occur. Errors: InvalidCycles.
int switch_value(std::uint64_t i, int n1, int n2);

/// Number of iterations j < i with switch_value(j) == s.
std::uint64_t count_before(std::uint64_t i, int n1, int n2, int s);

struct BatchDraw {
  Minibatch batch;
  int s = 1;
  std::vector<std::size_t> indices;  // positions in the selected source
};

/// Draws the iteration-i batch from the source chosen by the switch. Each
/// source is consumed in shuffled epochs whose permutations depend only on
/// (seed, source, epoch). Errors: EmptySource, InvalidCycles.
BatchDraw next_batch(std::uint64_t i, const std::vector<SampleTriplet>& real,
                     const std::vector<SampleTriplet>& synthetic, const TrainSchedule& schedule);

/// Indices of the `draw`-th batch taken from source s (0 REAL, 1 SYNTHETIC):
/// positions draw*batch_size .. +batch_size of the concatenated shuffled epochs.
std::vector<std::size_t> batch_indices(std::uint64_t draw, std::size_t source_size, int s,
                                       const TrainSchedule& schedule);

// ---- losses -------------------------------------------------------------------

/// Average-pools by `factor` and divides displacements by `factor`.
FlowField downscale_flow(const FlowField& flow, int factor);
/// Average-pools by `factor`.
Frame downscale_frame(const Frame& frame, int factor);

template <typename T>
struct LossValue {
  double value = 0.0;
  /// d value / d prediction, one tensor per level.
  std::vector<network::Tensor<T>> grads;
};

/// Weighted sum over levels of the mean per-pixel endpoint error, averaged
/// over the batch. Level l is compared against the target average-pooled to
/// its resolution. Errors: ShapeMismatch.
template <typename T>
LossValue<T> flow_loss(const std::vector<network::Tensor<T>>& preds, const std::vector<const FlowField*>& targets,
                       const std::vector<double>& level_weights);

/// Weighted sum over levels of the mean absolute per-pixel-per-channel
/// difference. Errors: ShapeMismatch.
template <typename T>
LossValue<T> frame_loss(const std::vector<network::Tensor<T>>& preds, const std::vector<const Frame*>& targets,
                        const std::vector<double>& level_weights);

template <typename T>
struct TotalLoss {
  double total = 0.0;
  std::optional<double> flow;   // absent when s = 0 or no flow branch
  std::optional<double> frame;  // absent when no frame branch
  network::PredictionGrads<T> grads;
};

/// w1 * flow_loss * s + w2 * frame_loss. Flow targets are F12, or F23 in
/// next-flow mode; the frame target is I3. Errors: SourceMismatch,
/// MissingGroundTruth, ShapeMismatch.
template <typename T>
TotalLoss<T> total_loss(const network::PredictionSet<T>& preds, const Minibatch& batch,
                        const TrainSchedule& schedule, int s, network::TaskMode mode);

/// Branches the forward pass must evaluate for a step with switch value s.
network::BranchSelection branches_for(int s, network::TaskMode mode);

struct LossWeights {
  double w1 = 0.2;
  double w2 = 1.0;
  double sigma_flow = 0.0;
  double sigma_frame = 0.0;
};

inline constexpr std::size_t kCalibrationSamples = 500;

/// w1 = sigma_frame / sigma_flow, w2 = 1, with pooled standard deviations of
/// all flow-target components and all I3 values. Errors: TooFewSamples
/// (unless allow_few), MissingGroundTruth, DegenerateVariance.
LossWeights calibrate_weights(const std::vector<SampleTriplet>& samples, network::TaskMode mode,
                              bool allow_few = false);

/// base_lr * factor^k, k = 0 before drop_start, else floor((i - start) / every) + 1.
double lr_at(std::uint64_t i, const TrainSchedule& schedule);

// ---- optimizer and steps -------------------------------------------------------

/// Adam moments per parameter tensor, each with its own step count so that a
/// tensor skipped on a step does not advance its bias correction.
struct OptimizerState {
  std::vector<std::vector<float>> m_weight, v_weight, m_bias, v_bias;
  std::vector<std::uint64_t> steps;

  static OptimizerState zeros_for(const network::ParameterSet<float>& params);
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

struct StepRecord {
  std::uint64_t iteration = 0;
  int s = 1;
  Source source = Source::Synthetic;
  double loss = 0.0;
  std::optional<double> loss_flow;
  std::optional<double> loss_frame;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since the start of the run

  /// One NDJSON line: iteration, s, source, loss, loss_flow (omitted when
  /// absent), loss_frame (omitted when absent), lr, time.
  std::string to_json() const;
  static StepRecord from_json(const std::string& line);
  /// Equality ignoring wall_time.
  bool same_values(const StepRecord& other) const;
};

/// One Adam update on the gradient of total_loss. Flow-decoder tensors are
/// skipped on s = 0. Errors: SourceMismatch, NonFiniteLoss.
StepRecord train_step(network::ParameterSet<float>& params, OptimizerState& optimizer,
                      const network::NetworkConfig& config, const Minibatch& batch, int s,
                      const TrainSchedule& schedule, std::uint64_t i);

struct TrainOptions {
  network::NetworkConfig network;
  TrainSchedule schedule;
  /// Checkpoint period in iterations; 0 writes only the final checkpoint.
  std::uint64_t checkpoint_every = 0;
  /// Output directory for train_log.ndjson and checkpoints; empty keeps
  /// everything in memory.
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  /// Stop after this iteration count even if the schedule runs longer
  /// (used to interrupt runs in tests).
  std::optional<std::uint64_t> stop_after;
  std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
  network::Checkpoint checkpoint;
  std::vector<StepRecord> log;  // records produced by this call
};

/// Runs iterations [start, total) where start is 0 or the resumed checkpoint's
/// iteration. Flow-only mode requires n1 = 0; next-frame-only mode runs every
/// iteration as s = 0 and falls back to the synthetic frames when no real
/// source is given. Errors: InvalidConfig, EmptySource, NonFiniteLoss, IoError.
TrainResult train(const TrainOptions& options, const std::vector<SampleTriplet>& real,
                  const std::vector<SampleTriplet>& synthetic);

/// Checkpoint of the current training state (parameters, Adam moments as
/// extra records, schedule and step counts in metadata).
network::Checkpoint make_checkpoint(const network::NetworkConfig& config, const network::ParameterSet<float>& params,
                                    const OptimizerState& optimizer, const TrainSchedule& schedule,
                                    std::uint64_t iteration);
/// Restores the Adam state from a checkpoint. Errors: ShapeMismatch.
OptimizerState optimizer_from_checkpoint(const network::Checkpoint& checkpoint);

std::string schedule_to_json(const TrainSchedule& schedule);
TrainSchedule schedule_from_json(const std::string& text);

inline constexpr const char* kLogFileName = "train_log.ndjson";
inline constexpr const char* kFinalCheckpointName = "final.ckpt";

}  // namespace hybridflow::training
