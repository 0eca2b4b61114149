#pragma once

// Desk-scale experiment protocols: flow EPE on held-out sets, next-frame
// PSNR/sharpness on the whole image and on moving regions, cycle-ratio sweeps
// and the hybrid-vs-supervised domain-shift comparison.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hybridflow/flowio.hpp"
#include "hybridflow/network.hpp"
#include "hybridflow/training.hpp"
#include "hybridflow/types.hpp"

namespace hybridflow::evalharness {

struct Prediction {
  std::optional<FlowField> flow;
  std::optional<Frame> frame;
};

/// Anything that maps a triplet's observed frames to predictions.
class Model {
 public:
  virtual ~Model() = default;
  /// Decides the flow target (F23 for next-flow models, else F12).
  virtual network::TaskMode mode() const = 0;
  virtual std::vector<Prediction> predict(const std::vector<const SampleTriplet*>& samples) const = 0;
};

/// A trained network. Full-resolution predictions only.
class NetworkModel : public Model {
 public:
  NetworkModel(network::NetworkConfig config, network::ParameterSet<float> params);
  /// Errors: IoError, FormatVersionMismatch, ShapeMismatch.
  static NetworkModel load(const std::filesystem::path& checkpoint);

  network::TaskMode mode() const override { return config_.mode; }
  const network::NetworkConfig& config() const { return config_; }
  std::vector<Prediction> predict(const std::vector<const SampleTriplet*>& samples) const override;

 private:
  network::NetworkConfig config_;
  network::ParameterSet<float> params_;
};

/// Baseline that predicts I3 = I2 and zero flow.
class CopyLastFrameModel : public Model {
 public:
  network::TaskMode mode() const override { return network::TaskMode::FlowNextFrame; }
  std::vector<Prediction> predict(const std::vector<const SampleTriplet*>& samples) const override;
};

FlowField flow_from_tensor(const network::Tensor<float>& t, int batch_index);
Frame frame_from_tensor(const network::Tensor<float>& t, int batch_index);

/// Loads every sample of a dataset. With attach_withheld_truth the flow and
/// occlusion ground truth of real-like sets is attached from the withheld
/// tree (evaluation use only). Errors: as datagen loaders.
std::vector<SampleTriplet> load_samples(const std::filesystem::path& dataset, bool attach_withheld_truth);

struct SampleMetrics {
  std::optional<double> epe;
  std::optional<double> psnr_whole;
  std::optional<double> sharpness_whole;
  /// Absent when the sample has no moving pixels.
  std::optional<double> psnr_moving;
  std::optional<double> sharpness_moving;
};

struct MetricsReport {
  std::size_t sample_count = 0;
  std::optional<double> mean_epe;
  std::optional<double> psnr_whole;
  std::optional<double> sharpness_whole;
  std::optional<double> psnr_moving;
  std::optional<double> sharpness_moving;
  std::size_t moving_sample_count = 0;  // samples contributing to the moving means
  std::vector<SampleMetrics> per_sample;

  std::string to_json() const;
};

inline constexpr std::size_t kEvalBatch = 16;

/// Mean EPE of the final flow prediction against F12 (F23 for next-flow
/// models), honoring validity masks. Errors: MissingGroundTruth.
MetricsReport evaluate_flow(const Model& model, const std::vector<SampleTriplet>& samples);

/// PSNR and sharpness of the predicted I3, on the whole image and on the
/// moving-region mask of F23. Errors: MissingGroundTruth.
MetricsReport evaluate_prediction(const Model& model, const std::vector<SampleTriplet>& samples,
                                  float moving_threshold = kDefaultMovingThreshold);

// ---- experiments ---------------------------------------------------------------

struct ExperimentConfig {
  network::NetworkConfig network;
  training::TrainSchedule schedule;
  std::filesystem::path synthetic_train;  // labeled training set
  std::filesystem::path real_train;       // real-like training set, ground truth withheld
  std::filesystem::path real_eval;        // real-like held-out set (withheld truth used for scoring)
  std::optional<std::filesystem::path> synthetic_eval;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path out_dir;
  float moving_threshold = kDefaultMovingThreshold;

  /// Desk protocol: depth 4, alpha 1/8, the desk schedule, seeds 1..3.
  static ExperimentConfig desk();
  /// Errors: InvalidConfig (missing paths, no seeds).
  void validate() const;
};

struct RunScore {
  double epe = 0.0;         // mean EPE on the real-like held-out set
  double psnr = 0.0;        // whole-image next-frame PSNR on the same set
  std::optional<double> synthetic_epe;
};

/// Trains (or reuses an identical finished run under out_dir/runs) one model
/// at cycle ratio n1:n2 and scores it on the held-out sets.
RunScore run_ratio(const ExperimentConfig& config, int n1, int n2, std::uint64_t seed);

double median(std::vector<double> values);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_stddev(const std::vector<double>& values);

struct RatioRow {
  int n1 = 0;
  int n2 = 1;
  std::string label;  // "n1:n2", "(supervised only)" appended for n1 = 0
  std::vector<double> epe;   // per seed
  std::vector<double> psnr;  // per seed
  double median_epe = 0.0;
  double median_psnr = 0.0;
};

struct SweepTable {
  std::vector<std::uint64_t> seeds;
  std::vector<RatioRow> rows;

  const RatioRow* find(int n1, int n2) const;
  /// Tab-separated: ratio, median_epe, median_psnr, then epe_seed<k> and
  /// psnr_seed<k> per seed.
  std::string to_tsv() const;
  std::string to_json() const;
};

struct TrendCheck {
  bool expectation_met = false;  // worse_row median EPE >= better_row median EPE
  bool violated = false;         // worse_row beats better_row by > pooled stddev
  double difference = 0.0;       // median(worse) - median(better)
  double pooled_stddev = 0.0;
};

/// Compares the medians of two rows; the pooled standard deviation is
/// sqrt((s_a^2 + s_b^2) / 2) over the per-seed EPEs.
TrendCheck compare_rows(const RatioRow& expected_worse, const RatioRow& expected_better);

/// One training run per (ratio, seed); writes sweep.tsv, sweep.json and
/// sweep.png under out_dir. Errors: InvalidConfig, propagated.
SweepTable ratio_sweep(const ExperimentConfig& config, const std::vector<std::pair<int, int>>& ratios);

/// Renders median EPE and PSNR per ratio as a two-panel bar chart with
/// per-seed markers.
Frame render_sweep_plot(const SweepTable& table);

struct ShiftRow {
  std::string label;
  std::vector<double> epe;  // per seed
  double median = 0.0;
};

struct DomainShiftReport {
  std::vector<std::uint64_t> seeds;
  /// baseline (real-like held-out), hybrid 1:5 (real-like held-out), and when
  /// a synthetic held-out set is configured, baseline (synthetic held-out).
  std::vector<ShiftRow> rows;

  bool hybrid_not_worse() const { return rows.size() >= 2 && rows[1].median <= rows[0].median; }
  std::string to_tsv() const;
  std::string to_json() const;
};

/// Supervised-only baseline (n1 = 0) vs hybrid 1:5 per seed; writes
/// domain_shift.tsv and domain_shift.json under out_dir.
DomainShiftReport domain_shift_experiment(const ExperimentConfig& config);

}  // namespace hybridflow::evalharness
