#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>

#include "CLI11.hpp"
#include "json.hpp"

#include "hybridflow/cli.hpp"
#include "hybridflow/datagen.hpp"
#include "hybridflow/error.hpp"
#include "hybridflow/evalharness.hpp"
#include "hybridflow/flowio.hpp"
#include "hybridflow/training.hpp"
#include "settings.hpp"

namespace hybridflow::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using network::NetworkConfig;
using network::TaskMode;
using training::TrainSchedule;

/// Library validation failures during argument checking are usage errors.
template <typename Fn>
auto checked(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

int as_int(const std::string& name, std::int64_t v) {
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw UsageError("--" + name + ": value out of range");
  }
  return static_cast<int>(v);
}

fs::path existing_path(const Settings& s, const std::string& name) {
  const fs::path p = s.required(name);
  if (!fs::exists(p)) throw UsageError("--" + name + ": '" + p.string() + "' does not exist");
  return p;
}

std::optional<fs::path> optional_existing(const Settings& s, const std::string& name) {
  if (!s.has(name)) return std::nullopt;
  return existing_path(s, name);
}

/// Relative output paths land under --out when it is given.
fs::path under_out(const Settings& s, const fs::path& p) {
  const auto base = s.raw("out");
  if (!base || base->empty() || p.is_absolute()) return p;
  return fs::path(*base) / p;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + p.string() + "'");
}

std::string number_or_na(const std::optional<double>& v) {
  if (!v) return "n/a";
  std::ostringstream s;
  s << std::setprecision(6) << std::fixed << *v;
  return s.str();
}

enum class Preset { Full, Desk };

Preset preset(const Settings& s, const std::string& fallback) {
  const auto p = s.text("preset", fallback);
  if (p == "full") return Preset::Full;
  if (p == "desk") return Preset::Desk;
  throw UsageError("--preset: expected full or desk, got '" + p + "'");
}

TaskMode task_mode(const Settings& s, TaskMode fallback) {
  if (!s.has("mode")) return fallback;
  return checked([&] { return network::parse_task_mode(*s.raw("mode")); });
}

NetworkConfig network_from(const Settings& s, NetworkConfig c) {
  c.depth = as_int("depth", s.integer("depth", c.depth));
  c.alpha = s.real("alpha", c.alpha);
  c.input_frames = as_int("input-frames", s.integer("input-frames", c.input_frames));
  c.mode = task_mode(s, c.mode);
  checked([&] { c.validate(); });
  return c;
}

TrainSchedule schedule_from(const Settings& s, TrainSchedule t, int depth) {
  if (s.has("cycles")) std::tie(t.n1, t.n2) = parse_ratio("cycles", *s.raw("cycles"));
  t.w1 = s.real("w1", t.w1);
  t.w2 = s.real("w2", t.w2);
  if (s.has("level-weights")) {
    t.level_weights.clear();
    for (const auto& w : s.list("level-weights")) t.level_weights.push_back(parse_real("level-weights", w));
  }
  t.base_lr = s.real("base-lr", t.base_lr);
  t.lr_drop_start = s.count("lr-drop-start", t.lr_drop_start);
  t.lr_drop_every = s.count("lr-drop-every", t.lr_drop_every);
  t.lr_drop_factor = s.real("lr-drop-factor", t.lr_drop_factor);
  t.adam.beta1 = s.real("adam-beta1", t.adam.beta1);
  t.adam.beta2 = s.real("adam-beta2", t.adam.beta2);
  t.adam.epsilon = s.real("adam-epsilon", t.adam.epsilon);
  t.total_iterations = s.count("iterations", t.total_iterations);
  t.batch_size = as_int("batch-size", s.integer("batch-size", t.batch_size));
  t.seed = s.count("seed", t.seed);
  checked([&] { t.validate(depth); });
  return t;
}

// ---- gen-data ------------------------------------------------------------------

int cmd_gen_data(const Settings& s, std::ostream& out) {
  const std::string kind = s.text("kind", "synthetic");
  datagen::DatasetConfig c;
  if (kind == "real-like" || kind == "real") {
    c = datagen::DatasetConfig::real_like_defaults();
  } else if (kind != "synthetic") {
    throw UsageError("--kind: expected synthetic or real-like, got '" + kind + "'");
  }
  const auto n = parse_count("count", s.required("count"));
  if (n == 0) throw UsageError("--count must be at least 1");
  const fs::path dir = s.required("out");
  c.master_seed = s.count("seed", c.master_seed);
  c.width = as_int("width", s.integer("width", c.width));
  c.height = as_int("height", s.integer("height", c.height));
  c.depth = as_int("depth", s.integer("depth", c.depth));
  c.min_objects = as_int("min-objects", s.integer("min-objects", c.min_objects));
  c.max_objects = as_int("max-objects", s.integer("max-objects", c.max_objects));
  c.max_speed = static_cast<float>(s.real("max-speed", c.max_speed));
  c.max_background_speed = static_cast<float>(s.real("max-background-speed", c.max_background_speed));
  c.max_rotation_deg = static_cast<float>(s.real("max-rotation", c.max_rotation_deg));
  if (s.has("integer-motion")) c.integer_motion = s.flag("integer-motion");
  c.noise_amplitude = static_cast<float>(s.real("noise", c.noise_amplitude));
  c.brightness_drift = static_cast<float>(s.real("drift", c.brightness_drift));
  c.history_frames = as_int("history-frames", s.integer("history-frames", c.history_frames));
  checked([&] { c.validate(); });

  const auto m = datagen::build_dataset(c, n, dir);
  out << "wrote " << m.sample_count << ' ' << to_string(m.source) << " triplets (" << m.width << 'x' << m.height
      << ") to " << m.root.string() << "\nconfig hash " << m.config_hash << '\n';
  return kExitOk;
}

// ---- train ---------------------------------------------------------------------

int cmd_train(const Settings& s, std::ostream& out) {
  const Preset p = preset(s, "full");
  training::TrainOptions options;
  options.network = network_from(s, p == Preset::Desk ? evalharness::ExperimentConfig::desk().network : NetworkConfig{});
  options.schedule =
      schedule_from(s, p == Preset::Desk ? TrainSchedule::desk() : TrainSchedule{}, options.network.depth);
  options.out_dir = s.required("out");
  options.checkpoint_every = s.count("checkpoint-every", 0);
  if (s.has("resume")) options.resume = existing_path(s, "resume");
  const auto log_every = s.count("log-every", 100);
  const auto synth_dir = optional_existing(s, "synthetic-data");
  const auto real_dir = optional_existing(s, "real-data");

  const TaskMode mode = options.network.mode;
  const auto& sched = options.schedule;
  if (mode == TaskMode::NextFrameOnly) {
    if (!synth_dir && !real_dir) throw UsageError("train: next-frame-only training needs --real-data or --synthetic-data");
  } else {
    if (!synth_dir) throw UsageError("train: --synthetic-data is required when the flow branch is trained");
    if (mode == TaskMode::FlowOnly && sched.n1 != 0) throw UsageError("train: flow-only mode requires --cycles 0:1");
    if (sched.n1 > 0 && !real_dir) {
      throw UsageError("train: --cycles " + std::to_string(sched.n1) + ":" + std::to_string(sched.n2) +
                       " needs --real-data (use --cycles 0:1 for supervised-only training)");
    }
  }

  std::vector<SampleTriplet> synthetic, real;
  if (synth_dir) synthetic = evalharness::load_samples(*synth_dir, false);
  if (real_dir) {
    for (const auto& t : evalharness::load_samples(*real_dir, false)) real.push_back(t.without_ground_truth());
  }
  json resolved{{"network", json::parse(network::config_to_json(options.network))},
                {"schedule", json::parse(training::schedule_to_json(sched))},
                {"synthetic_data", synth_dir ? synth_dir->string() : ""},
                {"real_data", real_dir ? real_dir->string() : ""}};
  write_text(options.out_dir / "run_config.json", resolved.dump(2) + "\n");

  options.on_step = [&](const training::StepRecord& r) {
    if (log_every == 0 || (r.iteration + 1) % log_every != 0) return;
    out << "iter " << r.iteration + 1 << ' ' << (r.s == 0 ? "real" : "synthetic") << " loss " << r.loss << " lr "
        << r.lr << std::endl;
  };
  const auto result = training::train(options, real, synthetic);
  out << "trained to iteration " << result.checkpoint.iteration << "; checkpoint "
      << (options.out_dir / training::kFinalCheckpointName).string() << '\n';
  return kExitOk;
}

// ---- eval ----------------------------------------------------------------------

int eval_model(const Settings& s, std::ostream& out, const std::string& task) {
  const fs::path data = existing_path(s, "data");
  const fs::path dir = s.text("out", ".");
  const auto threshold = s.real("moving-threshold", kDefaultMovingThreshold);
  if (threshold < 0.0) throw UsageError("--moving-threshold must be non-negative");
  if (s.has("checkpoint") == s.has("baseline")) throw UsageError("eval: give exactly one of --checkpoint or --baseline");
  if (s.has("baseline") && *s.raw("baseline") != "copy-last-frame") {
    throw UsageError("--baseline: expected copy-last-frame");
  }
  const auto ckpt = optional_existing(s, "checkpoint");

  std::unique_ptr<evalharness::Model> model;
  if (ckpt) {
    model = std::make_unique<evalharness::NetworkModel>(evalharness::NetworkModel::load(*ckpt));
  } else {
    model = std::make_unique<evalharness::CopyLastFrameModel>();
  }
  const auto samples = evalharness::load_samples(data, true);
  const auto report = task == "flow" ? evalharness::evaluate_flow(*model, samples)
                                     : evalharness::evaluate_prediction(*model, samples, static_cast<float>(threshold));
  const fs::path report_path = dir / ("eval_" + task + ".json");
  write_text(report_path, report.to_json() + "\n");
  out << "samples " << report.sample_count << '\n';
  if (task == "flow") {
    out << "mean_epe " << number_or_na(report.mean_epe) << '\n';
  } else {
    out << "psnr_whole " << number_or_na(report.psnr_whole) << "\nsharpness_whole "
        << number_or_na(report.sharpness_whole) << "\npsnr_moving " << number_or_na(report.psnr_moving)
        << "\nsharpness_moving " << number_or_na(report.sharpness_moving) << '\n';
  }
  out << "report " << report_path.string() << '\n';
  return kExitOk;
}

int eval_experiment(const Settings& s, std::ostream& out, const std::string& task) {
  auto c = evalharness::ExperimentConfig::desk();
  if (preset(s, "desk") == Preset::Full) {
    c.network = NetworkConfig{};
    c.schedule = TrainSchedule{};
  }
  c.network = network_from(s, c.network);
  c.schedule = schedule_from(s, c.schedule, c.network.depth);
  c.synthetic_train = existing_path(s, "synthetic-data");
  c.real_train = existing_path(s, "real-data");
  c.real_eval = existing_path(s, "data");
  c.synthetic_eval = optional_existing(s, "synthetic-eval");
  if (s.has("seeds")) {
    c.seeds.clear();
    for (const auto& v : s.list("seeds")) c.seeds.push_back(parse_count("seeds", v));
  }
  c.out_dir = s.text("out", ".");
  c.moving_threshold = static_cast<float>(s.real("moving-threshold", c.moving_threshold));
  std::vector<std::pair<int, int>> ratios{{0, 1}, {1, 9}, {1, 5}, {1, 1}, {4, 1}};
  if (s.has("ratios")) {
    ratios.clear();
    for (const auto& r : s.list("ratios")) ratios.push_back(parse_ratio("ratios", r));
    if (ratios.empty()) throw UsageError("--ratios: at least one ratio is required");
  }
  checked([&] { c.validate(); });

  if (task == "domain-shift") {
    const auto report = evalharness::domain_shift_experiment(c);
    out << report.to_tsv();
    out << (report.hybrid_not_worse() ? "hybrid 1:5 median EPE <= baseline median EPE\n"
                                      : "hybrid 1:5 median EPE > baseline median EPE\n");
    return kExitOk;
  }
  const auto table = evalharness::ratio_sweep(c, ratios);
  out << table.to_tsv();
  const auto* many_real = table.find(4, 1);
  const auto* few_real = table.find(1, 5);
  if (many_real && few_real) {
    const auto trend = evalharness::compare_rows(*many_real, *few_real);
    out << "4:1 vs 1:5 median EPE difference " << trend.difference << " (pooled std " << trend.pooled_stddev << "): "
        << (trend.expectation_met ? "expected trend holds"
                                  : (trend.violated ? "trend violated" : "within inter-seed spread"))
        << '\n';
    if (trend.violated) return kExitFailure;
  }
  return kExitOk;
}

int cmd_eval(const Settings& s, std::ostream& out) {
  const std::string task = s.required("task");
  if (task == "flow" || task == "frame") return eval_model(s, out, task);
  if (task == "domain-shift" || task == "sweep") return eval_experiment(s, out, task);
  throw UsageError("--task: expected flow, frame, domain-shift or sweep, got '" + task + "'");
}

// ---- predict -------------------------------------------------------------------

void write_flow(const fs::path& p, const FlowField& flow) {
  ensure_parent(p);
  if (p.extension() == ".png") {
    write_file_bytes_atomic(p, encode_png(encode_kitti_png(flow)));
  } else {
    write_flo_file(p, flow);
  }
}

int cmd_predict(const Settings& s, std::ostream& out) {
  const fs::path ckpt = existing_path(s, "checkpoint");
  const fs::path i1 = existing_path(s, "i1");
  const fs::path i2 = existing_path(s, "i2");
  std::vector<fs::path> history;
  for (const auto& h : s.list("history")) {
    if (!fs::exists(h)) throw UsageError("--history: '" + h + "' does not exist");
    history.emplace_back(h);
  }
  std::optional<fs::path> flow_out, frame_out;
  if (s.has("out-flow")) flow_out = under_out(s, s.required("out-flow"));
  if (s.has("out-frame")) frame_out = under_out(s, s.required("out-frame"));
  if (!flow_out && !frame_out) throw UsageError("predict: give --out-flow, --out-frame or both");
  if (flow_out && flow_out->extension() != ".flo" && flow_out->extension() != ".png") {
    throw UsageError("--out-flow: expected a .flo or .png path");
  }

  const auto model = evalharness::NetworkModel::load(ckpt);
  if (flow_out && !model.config().has_flow_branch()) {
    throw Error(ErrorCode::InvalidConfig, "checkpoint has no flow branch");
  }
  if (frame_out && !model.config().has_frame_branch()) {
    throw Error(ErrorCode::InvalidConfig, "checkpoint has no next-frame branch");
  }
  SampleTriplet t;
  t.source = Source::Real;
  t.i1 = read_frame_png(i1);
  t.i2 = read_frame_png(i2);
  for (const auto& h : history) t.history.push_back(read_frame_png(h));
  for (const Frame* f : {&t.i2}) {
    if (f->width != t.i1.width || f->height != t.i1.height) {
      throw Error(ErrorCode::DimensionMismatch, "input frames differ in size");
    }
  }
  t.i3 = t.i2;  // unobserved; only the inputs are read
  const auto pred = model.predict({&t});
  if (flow_out) {
    write_flow(*flow_out, *pred[0].flow);
    out << "flow " << flow_out->string() << '\n';
  }
  if (frame_out) {
    ensure_parent(*frame_out);
    write_frame_png(*frame_out, *pred[0].frame);
    out << "frame " << frame_out->string() << '\n';
  }
  return kExitOk;
}

// ---- visualize -----------------------------------------------------------------

int cmd_visualize(const Settings& s, std::ostream& out) {
  const fs::path input = existing_path(s, "input");
  const auto ext = input.extension();
  if (ext != ".flo" && ext != ".png") throw UsageError("visualize: input must be a .flo or KITTI .png flow file");
  fs::path output;
  if (s.has("output")) {
    output = under_out(s, s.required("output"));
  } else {
    const fs::path dir = s.has("out") ? fs::path(*s.raw("out")) : input.parent_path();
    output = dir / (input.stem().string() + "_color.png");
  }
  std::optional<float> max_magnitude;
  if (s.has("max-magnitude")) {
    const double m = s.real("max-magnitude", 0.0);
    if (!(m > 0.0)) throw UsageError("--max-magnitude must be positive");
    max_magnitude = static_cast<float>(m);
  }

  const FlowField flow = ext == ".flo" ? read_flo_file(input) : decode_kitti_png(decode_png(read_file_bytes(input)));
  ensure_parent(output);
  write_frame_png(output, colorize_flow(flow, max_magnitude));
  out << "wrote " << output.string() << '\n';
  return kExitOk;
}

// ---- calibrate-weights ---------------------------------------------------------

int cmd_calibrate_weights(const Settings& s, std::ostream& out) {
  const fs::path data = existing_path(s, "data");
  const TaskMode mode = task_mode(s, TaskMode::FlowNextFrame);
  const bool allow_few = s.flag("allow-few");

  const auto samples = evalharness::load_samples(data, true);
  const auto w = training::calibrate_weights(samples, mode, allow_few);
  out << std::setprecision(17) << "w1 " << w.w1 << "\nw2 " << w.w2 << "\nsigma_flow " << w.sigma_flow
      << "\nsigma_frame " << w.sigma_frame << '\n';
  if (s.has("out")) {
    // Usable directly as a --config file for train.
    const fs::path p = fs::path(*s.raw("out")) / "loss_weights.json";
    write_text(p, json{{"w1", w.w1}, {"w2", w.w2}}.dump(2) + "\n");
    out << "weights " << p.string() << '\n';
  }
  return kExitOk;
}

// ---- dispatch ------------------------------------------------------------------

struct CommandDef {
  std::string name;
  std::string description;
  std::vector<std::string> options;
  int (*handler)(const Settings&, std::ostream&);
};

const std::vector<std::string> kNetworkOptions{"mode", "depth", "alpha", "input-frames"};
const std::vector<std::string> kScheduleOptions{"preset",        "w1",         "w2",           "level-weights",
                                                "base-lr",       "lr-drop-start", "lr-drop-every", "lr-drop-factor",
                                                "adam-beta1",    "adam-beta2", "adam-epsilon", "iterations",
                                                "batch-size"};

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

const std::vector<CommandDef>& commands() {
  static const std::vector<CommandDef> defs{
      {"gen-data", "Generate a synthetic or real-like dataset of frame triplets",
       {"out", "kind", "count", "seed", "width", "height", "depth", "min-objects", "max-objects", "max-speed",
        "max-background-speed", "max-rotation", "integer-motion", "noise", "drift", "history-frames"},
       cmd_gen_data},
      {"train", "Train the network with the alternating real/synthetic schedule",
       concat(concat({"out", "synthetic-data", "real-data", "resume", "cycles", "seed", "checkpoint-every", "log-every"},
                     kNetworkOptions),
              kScheduleOptions),
       cmd_train},
      {"eval",
       "Score a checkpoint (--task flow|frame) or run a desk experiment (--task domain-shift|sweep, which train "
       "their own models)",
       concat(concat({"task", "data", "out", "checkpoint", "baseline", "moving-threshold", "synthetic-data",
                      "real-data", "synthetic-eval", "seeds", "ratios"},
                     kNetworkOptions),
              kScheduleOptions),
       cmd_eval},
      {"predict", "Predict flow and/or the next frame for a pair of frames",
       {"checkpoint", "i1", "i2", "history", "out-flow", "out-frame", "out"},
       cmd_predict},
      {"visualize", "Render a flow field as a color-wheel image", {"input", "output", "max-magnitude", "out"},
       cmd_visualize},
      {"calibrate-weights", "Derive the flow-loss weight from the spread of the training targets",
       {"data", "mode", "allow-few", "out"},
       cmd_calibrate_weights},
  };
  return defs;
}

struct Bound {
  const CommandDef* def = nullptr;
  CLI::App* app = nullptr;
  std::string config;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> options;
};

constexpr const char* kFooter =
    "Every option can also be set as a key of the --config JSON file (same name, without dashes in front) or "
    "through a HYBRIDFLOW_<NAME> environment variable (upper case, dashes as underscores, e.g. "
    "HYBRIDFLOW_BATCH_SIZE). Flags win over the environment, which wins over the file.\n"
    "Exit codes: 0 success, 1 runtime failure, 2 usage error.";

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env) {
  CLI::App app{"Joint optical-flow and next-frame prediction toolkit", "hybridflow"};
  app.require_subcommand(1, 1);
  app.footer(kFooter);

  std::vector<std::unique_ptr<Bound>> bound;
  for (const auto& def : commands()) {
    auto b = std::make_unique<Bound>();
    b->def = &def;
    b->app = app.add_subcommand(def.name, def.description);
    b->app->footer(kFooter);
    b->app->add_option("--config", b->config, "JSON configuration file whose keys are option names");
    for (const auto& name : def.options) {
      const auto& spec = option_spec(name);
      CLI::Option* opt = nullptr;
      if (spec.kind == Kind::Flag) {
        opt = b->app->add_flag("--" + name, b->flags[name], spec.help);
      } else {
        static const char* kTypeNames[] = {"TEXT", "INT", "UINT", "FLOAT", ""};
        opt = b->app->add_option(spec.positional ? name : "--" + name, b->values[name], spec.help)
                  ->type_name(kTypeNames[static_cast<int>(spec.kind)]);
      }
      b->options[name] = opt;
    }
    bound.push_back(std::move(b));
  }

  std::vector<std::string> argv_store{"hybridflow"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  auto selected = [&]() -> Bound* {
    for (auto& b : bound) {
      if (b->app->parsed()) return b.get();
    }
    return nullptr;
  };

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    const Bound* b = selected();
    err << "error: " << e.what() << "\n\n" << (b ? b->app->help("hybridflow") : app.help());
    return kExitUsage;
  }

  Bound* b = selected();
  try {
    std::map<std::string, std::string> values;
    if (!b->config.empty()) {
      for (const auto& [key, value] : load_config_file(b->config)) {
        if (b->options.count(key)) values[key] = value;  // keys of other commands are ignored
      }
    }
    for (const auto& name : b->def->options) {
      if (const auto v = env(env_name(name))) values[name] = *v;
      if (b->options.at(name)->count() > 0) {
        values[name] = option_spec(name).kind == Kind::Flag ? (b->flags[name] ? "true" : "false") : b->values[name];
      }
    }
    return b->def->handler(Settings(b->def->name, std::move(values)), out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << b->app->help("hybridflow");
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace hybridflow::cli
