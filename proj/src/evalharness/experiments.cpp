#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "json.hpp"

#include "hybridflow/error.hpp"
#include "hybridflow/evalharness.hpp"
#include "hybridflow/png_io.hpp"

namespace hybridflow::evalharness {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct ExperimentData {
  std::vector<SampleTriplet> synthetic_train;
  std::vector<SampleTriplet> real_train;
  std::vector<SampleTriplet> real_eval;
  std::vector<SampleTriplet> synthetic_eval;
};

ExperimentData load_data(const ExperimentConfig& config, bool need_real_train) {
  ExperimentData d;
  d.synthetic_train = load_samples(config.synthetic_train, false);
  if (need_real_train) {
    d.real_train = load_samples(config.real_train, false);
    // Training must never see withheld ground truth.
    for (auto& s : d.real_train) s = s.without_ground_truth();
  }
  d.real_eval = load_samples(config.real_eval, true);
  if (config.synthetic_eval) d.synthetic_eval = load_samples(*config.synthetic_eval, true);
  return d;
}

fs::path run_dir(const ExperimentConfig& config, int n1, int n2, std::uint64_t seed) {
  return config.out_dir / "runs" / ("ratio_" + std::to_string(n1) + "-" + std::to_string(n2) + "_seed" +
                                    std::to_string(seed));
}

/// A finished run under `dir` whose config and schedule match, if any.
std::optional<network::Checkpoint> reusable_run(const fs::path& dir, const network::NetworkConfig& network,
                                                const training::TrainSchedule& schedule) {
  const auto path = dir / training::kFinalCheckpointName;
  if (!fs::exists(path)) return std::nullopt;
  try {
    auto ckpt = network::load_checkpoint(path);
    const auto stored = json::parse(ckpt.metadata).at("schedule").dump();
    if (ckpt.config == network && ckpt.iteration == schedule.total_iterations &&
        training::schedule_to_json(training::schedule_from_json(stored)) == training::schedule_to_json(schedule)) {
      return ckpt;
    }
  } catch (const std::exception&) {
    // Unreadable or foreign checkpoint: retrain.
  }
  return std::nullopt;
}

RunScore run_ratio(const ExperimentConfig& config, const ExperimentData& data, int n1, int n2, std::uint64_t seed) {
  training::TrainOptions options;
  options.network = config.network;
  options.schedule = config.schedule;
  options.schedule.n1 = n1;
  options.schedule.n2 = n2;
  options.schedule.seed = seed;
  options.out_dir = run_dir(config, n1, n2, seed);

  network::Checkpoint ckpt;
  if (auto existing = reusable_run(options.out_dir, options.network, options.schedule)) {
    ckpt = std::move(*existing);
  } else {
    ckpt = training::train(options, data.real_train, data.synthetic_train).checkpoint;
  }
  const NetworkModel model(ckpt.config, std::move(ckpt.params));
  RunScore score;
  score.epe = *evaluate_flow(model, data.real_eval).mean_epe;
  if (config.network.has_frame_branch()) score.psnr = *evaluate_prediction(model, data.real_eval).psnr_whole;
  if (!data.synthetic_eval.empty()) score.synthetic_epe = *evaluate_flow(model, data.synthetic_eval).mean_epe;
  return score;
}

std::string ratio_label(int n1, int n2) {
  std::string label = std::to_string(n1) + ":" + std::to_string(n2);
  if (n1 == 0) label += " (supervised only)";
  return label;
}

json seeds_json(const std::vector<std::uint64_t>& seeds) { return json(seeds); }

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()),
                                                              text.size()));
}

// ---- plotting -------------------------------------------------------------------

// 3x5 glyphs, one row per string, '#' = ink.
const std::map<char, std::array<const char*, 5>>& glyphs() {
  static const std::map<char, std::array<const char*, 5>> g{
      {'0', {"###", "#.#", "#.#", "#.#", "###"}}, {'1', {".#.", "##.", ".#.", ".#.", "###"}},
      {'2', {"###", "..#", "###", "#..", "###"}}, {'3', {"###", "..#", "###", "..#", "###"}},
      {'4', {"#.#", "#.#", "###", "..#", "..#"}}, {'5', {"###", "#..", "###", "..#", "###"}},
      {'6', {"###", "#..", "###", "#.#", "###"}}, {'7', {"###", "..#", "..#", "..#", "..#"}},
      {'8', {"###", "#.#", "###", "#.#", "###"}}, {'9', {"###", "#.#", "###", "..#", "###"}},
      {':', {"...", ".#.", "...", ".#.", "..."}}, {'.', {"...", "...", "...", "...", ".#."}},
      {'E', {"###", "#..", "###", "#..", "###"}}, {'P', {"###", "#.#", "###", "#..", "#.."}},
      {'S', {"###", "#..", "###", "..#", "###"}}, {'N', {"#.#", "###", "###", "###", "#.#"}},
      {'R', {"###", "#.#", "##.", "#.#", "#.#"}}, {' ', {"...", "...", "...", "...", "..."}},
  };
  return g;
}

class Canvas {
 public:
  Canvas(int w, int h) : frame_(w, h, 1.0f) {}

  void fill_rect(int x0, int y0, int x1, int y1, std::array<float, 3> color) {
    for (int y = std::max(0, y0); y < std::min(frame_.height, y1); ++y)
      for (int x = std::max(0, x0); x < std::min(frame_.width, x1); ++x)
        for (int c = 0; c < 3; ++c) frame_.at(x, y, c) = color[c];
  }

  void text(int x, int y, const std::string& s, int scale, std::array<float, 3> color) {
    for (char ch : s) {
      auto it = glyphs().find(ch);
      if (it != glyphs().end()) {
        for (int gy = 0; gy < 5; ++gy)
          for (int gx = 0; gx < 3; ++gx)
            if (it->second[gy][gx] == '#') {
              fill_rect(x + gx * scale, y + gy * scale, x + (gx + 1) * scale, y + (gy + 1) * scale, color);
            }
      }
      x += 4 * scale;
    }
  }

  const Frame& frame() const { return frame_; }

 private:
  Frame frame_;
};

std::string short_number(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(v >= 10.0 ? 1 : 2);
  os << v;
  return os.str();
}

void draw_panel(Canvas& canvas, int x0, int y0, int w, int h, const std::string& title,
                const std::vector<std::string>& labels, const std::vector<double>& medians,
                const std::vector<std::vector<double>>& per_seed, std::array<float, 3> bar_color) {
  const std::array<float, 3> ink{0.1f, 0.1f, 0.1f};
  canvas.text(x0, y0, title, 3, ink);
  const int plot_top = y0 + 28, plot_bottom = y0 + h - 30;
  double top = 0.0;
  for (const auto& seeds : per_seed)
    for (double v : seeds) top = std::max(top, v);
  for (double v : medians) top = std::max(top, v);
  if (!(top > 0.0)) top = 1.0;
  top *= 1.1;
  canvas.fill_rect(x0, plot_bottom, x0 + w, plot_bottom + 2, ink);
  canvas.fill_rect(x0, plot_top, x0 + 2, plot_bottom, ink);
  canvas.text(x0 + 6, plot_top, short_number(top), 2, ink);
  const int n = static_cast<int>(medians.size());
  const int slot = n > 0 ? (w - 10) / n : w;
  for (int i = 0; i < n; ++i) {
    const int cx = x0 + 10 + slot * i + slot / 2;
    const int bar_h = static_cast<int>(std::lround((plot_bottom - plot_top) * medians[i] / top));
    canvas.fill_rect(cx - slot / 4, plot_bottom - bar_h, cx + slot / 4, plot_bottom, bar_color);
    for (double v : per_seed[i]) {
      const int y = plot_bottom - static_cast<int>(std::lround((plot_bottom - plot_top) * v / top));
      canvas.fill_rect(cx - 3, y - 3, cx + 4, y + 4, ink);
    }
    const std::string label = labels[i].substr(0, labels[i].find(' '));
    canvas.text(cx - static_cast<int>(label.size()) * 4, plot_bottom + 8, label, 2, ink);
  }
}

}  // namespace

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.network.depth = 4;
  c.network.alpha = 1.0 / 8.0;
  c.network.mode = network::TaskMode::FlowNextFrame;
  c.schedule = training::TrainSchedule::desk();
  c.seeds = {1, 2, 3};
  return c;
}

void ExperimentConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, "experiment: " + what); };
  network.validate();
  schedule.validate(network.depth);
  if (seeds.empty()) bad("at least one seed is required");
  if (out_dir.empty()) bad("an output directory is required");
  for (const auto* p : {&synthetic_train, &real_train, &real_eval}) {
    if (p->empty() || !fs::exists(*p)) bad("dataset path '" + p->string() + "' does not exist");
  }
  if (synthetic_eval && !fs::exists(*synthetic_eval)) {
    bad("dataset path '" + synthetic_eval->string() + "' does not exist");
  }
}

RunScore run_ratio(const ExperimentConfig& config, int n1, int n2, std::uint64_t seed) {
  config.validate();
  return run_ratio(config, load_data(config, n1 > 0), n1, n2, seed);
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::InvalidConfig, "median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double sample_stddev(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

const RatioRow* SweepTable::find(int n1, int n2) const {
  for (const auto& r : rows)
    if (r.n1 == n1 && r.n2 == n2) return &r;
  return nullptr;
}

std::string SweepTable::to_tsv() const {
  std::ostringstream os;
  os.precision(6);
  os << "ratio\tmedian_epe\tmedian_psnr";
  for (auto s : seeds) os << "\tepe_seed" << s;
  for (auto s : seeds) os << "\tpsnr_seed" << s;
  os << '\n';
  for (const auto& r : rows) {
    os << r.label << '\t' << r.median_epe << '\t' << r.median_psnr;
    for (double v : r.epe) os << '\t' << v;
    for (double v : r.psnr) os << '\t' << v;
    os << '\n';
  }
  return os.str();
}

std::string SweepTable::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"n1", r.n1},
                         {"n2", r.n2},
                         {"label", r.label},
                         {"epe", r.epe},
                         {"psnr", r.psnr},
                         {"median_epe", r.median_epe},
                         {"median_psnr", r.median_psnr}});
  }
  return json{{"seeds", seeds_json(seeds)}, {"rows", rows_json}}.dump(2);
}

TrendCheck compare_rows(const RatioRow& worse, const RatioRow& better) {
  TrendCheck t;
  t.difference = worse.median_epe - better.median_epe;
  const double sa = sample_stddev(worse.epe), sb = sample_stddev(better.epe);
  t.pooled_stddev = std::sqrt(0.5 * (sa * sa + sb * sb));
  t.expectation_met = t.difference >= 0.0;
  t.violated = -t.difference > t.pooled_stddev;
  return t;
}

Frame render_sweep_plot(const SweepTable& table) {
  const int panel_w = 360, panel_h = 260;
  Canvas canvas(2 * panel_w + 60, panel_h + 40);
  std::vector<std::string> labels;
  std::vector<double> med_epe, med_psnr;
  std::vector<std::vector<double>> epe, psnr;
  for (const auto& r : table.rows) {
    labels.push_back(r.label);
    med_epe.push_back(r.median_epe);
    med_psnr.push_back(r.median_psnr);
    epe.push_back(r.epe);
    psnr.push_back(r.psnr);
  }
  draw_panel(canvas, 20, 20, panel_w, panel_h, "EPE", labels, med_epe, epe, {0.25f, 0.45f, 0.8f});
  draw_panel(canvas, panel_w + 40, 20, panel_w, panel_h, "PSNR", labels, med_psnr, psnr, {0.85f, 0.5f, 0.2f});
  return canvas.frame();
}

SweepTable ratio_sweep(const ExperimentConfig& config, const std::vector<std::pair<int, int>>& ratios) {
  config.validate();
  if (ratios.empty()) throw Error(ErrorCode::InvalidConfig, "ratio sweep needs at least one ratio");
  bool any_real = false;
  for (const auto& [n1, n2] : ratios) any_real |= n1 > 0;
  const ExperimentData data = load_data(config, any_real);

  SweepTable table;
  table.seeds = config.seeds;
  for (const auto& [n1, n2] : ratios) {
    RatioRow row;
    row.n1 = n1;
    row.n2 = n2;
    row.label = ratio_label(n1, n2);
    for (auto seed : config.seeds) {
      const RunScore score = run_ratio(config, data, n1, n2, seed);
      row.epe.push_back(score.epe);
      row.psnr.push_back(score.psnr);
    }
    row.median_epe = median(row.epe);
    row.median_psnr = median(row.psnr);
    table.rows.push_back(std::move(row));
  }
  fs::create_directories(config.out_dir);
  write_text(config.out_dir / "sweep.tsv", table.to_tsv());
  write_text(config.out_dir / "sweep.json", table.to_json());
  write_frame_png(config.out_dir / "sweep.png", render_sweep_plot(table));
  return table;
}

std::string DomainShiftReport::to_tsv() const {
  std::ostringstream os;
  os.precision(6);
  os << "model";
  for (auto s : seeds) os << "\tepe_seed" << s;
  os << "\tmedian\n";
  for (const auto& r : rows) {
    os << r.label;
    for (double v : r.epe) os << '\t' << v;
    os << '\t' << r.median << '\n';
  }
  return os.str();
}

std::string DomainShiftReport::to_json() const {
  json rows_json = json::array();
  for (const auto& r : rows) rows_json.push_back({{"label", r.label}, {"epe", r.epe}, {"median", r.median}});
  return json{{"seeds", seeds_json(seeds)}, {"rows", rows_json}, {"hybrid_not_worse", hybrid_not_worse()}}.dump(2);
}

DomainShiftReport domain_shift_experiment(const ExperimentConfig& config) {
  config.validate();
  const ExperimentData data = load_data(config, true);
  DomainShiftReport report;
  report.seeds = config.seeds;
  ShiftRow baseline{"baseline 0:1 (real-like held-out)", {}, 0.0};
  ShiftRow hybrid{"hybrid 1:5 (real-like held-out)", {}, 0.0};
  ShiftRow synthetic{"baseline 0:1 (synthetic held-out)", {}, 0.0};
  for (auto seed : config.seeds) {
    const RunScore b = run_ratio(config, data, 0, 1, seed);
    const RunScore h = run_ratio(config, data, 1, 5, seed);
    baseline.epe.push_back(b.epe);
    hybrid.epe.push_back(h.epe);
    if (b.synthetic_epe) synthetic.epe.push_back(*b.synthetic_epe);
  }
  baseline.median = median(baseline.epe);
  hybrid.median = median(hybrid.epe);
  report.rows = {baseline, hybrid};
  if (!synthetic.epe.empty()) {
    synthetic.median = median(synthetic.epe);
    report.rows.push_back(synthetic);
  }
  fs::create_directories(config.out_dir);
  write_text(config.out_dir / "domain_shift.tsv", report.to_tsv());
  write_text(config.out_dir / "domain_shift.json", report.to_json());
  return report;
}

}  // namespace hybridflow::evalharness
