#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"

#include "hybridflow/error.hpp"
#include "hybridflow/kernels.hpp"
#include "hybridflow/training.hpp"

namespace hybridflow::training {

namespace {

using nlohmann::json;
using network::ParamGroup;

std::vector<const SampleTriplet*> pointers(const Minibatch& batch) {
  std::vector<const SampleTriplet*> out;
  out.reserve(batch.samples.size());
  for (const auto& s : batch.samples) out.push_back(&s);
  return out;
}

void adam_tensor(std::vector<float>& param, const std::vector<float>& grad, std::vector<float>& m,
                 std::vector<float>& v, const kernels::AdamStep<float>& step) {
  kernels::adam_update(std::span<float>(param), std::span<const float>(grad), std::span<float>(m),
                       std::span<float>(v), step);
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::uint64_t iteration) {
  return dir / ("checkpoint_" + std::to_string(iteration) + ".ckpt");
}

bool same_schedule_except_length(TrainSchedule a, TrainSchedule b) {
  a.total_iterations = b.total_iterations = 0;
  return schedule_to_json(a) == schedule_to_json(b);
}

}  // namespace

OptimizerState OptimizerState::zeros_for(const network::ParameterSet<float>& params) {
  OptimizerState s;
  for (const auto& l : params.layers) {
    s.m_weight.emplace_back(l.weights.size(), 0.0f);
    s.v_weight.emplace_back(l.weights.size(), 0.0f);
    s.m_bias.emplace_back(l.bias.size(), 0.0f);
    s.v_bias.emplace_back(l.bias.size(), 0.0f);
    s.steps.push_back(0);
  }
  return s;
}

std::string StepRecord::to_json() const {
  json j{{"iteration", iteration}, {"s", s}, {"source", std::string(hybridflow::to_string(source))}, {"loss", loss}};
  if (loss_flow) j["loss_flow"] = *loss_flow;
  if (loss_frame) j["loss_frame"] = *loss_frame;
  j["lr"] = lr;
  j["time"] = wall_time;
  return j.dump();
}

StepRecord StepRecord::from_json(const std::string& line) {
  try {
    const json j = json::parse(line);
    StepRecord r;
    r.iteration = j.at("iteration").get<std::uint64_t>();
    r.s = j.at("s").get<int>();
    const auto source = j.at("source").get<std::string>();
    if (source != "real" && source != "synthetic") throw Error(ErrorCode::CorruptFile, "unknown source " + source);
    r.source = source == "real" ? Source::Real : Source::Synthetic;
    r.loss = j.at("loss").get<double>();
    if (j.contains("loss_flow")) r.loss_flow = j["loss_flow"].get<double>();
    if (j.contains("loss_frame")) r.loss_frame = j["loss_frame"].get<double>();
    r.lr = j.at("lr").get<double>();
    r.wall_time = j.at("time").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("training log row: ") + e.what());
  }
}

bool StepRecord::same_values(const StepRecord& o) const {
  return iteration == o.iteration && s == o.s && source == o.source && loss == o.loss && loss_flow == o.loss_flow &&
         loss_frame == o.loss_frame && lr == o.lr;
}

StepRecord train_step(network::ParameterSet<float>& params, OptimizerState& optimizer,
                      const network::NetworkConfig& config, const Minibatch& batch, int s,
                      const TrainSchedule& schedule, std::uint64_t i) {
  const auto input = network::stack_inputs<float>(pointers(batch), config.input_frames);
  const auto state = network::forward(params, config, input, branches_for(s, config.mode));
  const auto loss = total_loss(state.predictions, batch, schedule, s, config.mode);

  StepRecord record;
  record.iteration = i;
  record.s = s;
  record.source = batch.source;
  record.loss = loss.total;
  record.loss_flow = loss.flow;
  record.loss_frame = loss.frame;
  record.lr = lr_at(i, schedule);
  if (!std::isfinite(loss.total)) {
    throw Error(ErrorCode::NonFiniteLoss, "training diverged: " + record.to_json());
  }

  auto grads = params.zeros_like();
  network::backward(params, config, state, loss.grads, grads);

  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    // Unlabeled batches leave the flow decoder and its moments untouched.
    if (s == 0 && layer.group == ParamGroup::FlowDecoder) continue;
    const std::uint64_t t = ++optimizer.steps[l];
    kernels::AdamStep<float> step{};
    step.lr = static_cast<float>(record.lr);
    step.beta1 = static_cast<float>(schedule.adam.beta1);
    step.beta2 = static_cast<float>(schedule.adam.beta2);
    step.epsilon = static_cast<float>(schedule.adam.epsilon);
    step.bias_correction1 = static_cast<float>(1.0 - std::pow(schedule.adam.beta1, static_cast<double>(t)));
    step.bias_correction2 = static_cast<float>(1.0 - std::pow(schedule.adam.beta2, static_cast<double>(t)));
    adam_tensor(layer.weights, grads.layers[l].weights, optimizer.m_weight[l], optimizer.v_weight[l], step);
    adam_tensor(layer.bias, grads.layers[l].bias, optimizer.m_bias[l], optimizer.v_bias[l], step);
  }
  return record;
}

network::Checkpoint make_checkpoint(const network::NetworkConfig& config, const network::ParameterSet<float>& params,
                                    const OptimizerState& optimizer, const TrainSchedule& schedule,
                                    std::uint64_t iteration) {
  network::Checkpoint ckpt;
  ckpt.config = config;
  ckpt.iteration = iteration;
  ckpt.params = params;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    const std::vector<int> bias_shape{static_cast<int>(layer.bias.size())};
    ckpt.extra.push_back({"adam.m/" + layer.name + ".weight", layer.weight_shape, optimizer.m_weight[l]});
    ckpt.extra.push_back({"adam.v/" + layer.name + ".weight", layer.weight_shape, optimizer.v_weight[l]});
    ckpt.extra.push_back({"adam.m/" + layer.name + ".bias", bias_shape, optimizer.m_bias[l]});
    ckpt.extra.push_back({"adam.v/" + layer.name + ".bias", bias_shape, optimizer.v_bias[l]});
  }
  json steps = json::object();
  for (std::size_t l = 0; l < params.layers.size(); ++l) steps[params.layers[l].name] = optimizer.steps[l];
  ckpt.metadata = json{{"schedule", json::parse(schedule_to_json(schedule))}, {"adam_steps", steps}}.dump();
  return ckpt;
}

OptimizerState optimizer_from_checkpoint(const network::Checkpoint& ckpt) {
  std::map<std::string, const network::ExtraRecord*> extra;
  for (const auto& e : ckpt.extra) extra[e.name] = &e;
  json steps;
  try {
    steps = json::parse(ckpt.metadata).at("adam_steps");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ShapeMismatch, std::string("checkpoint lacks optimizer step counts: ") + e.what());
  }
  auto take = [&](const std::string& key, std::size_t size) {
    auto it = extra.find(key);
    if (it == extra.end() || it->second->data.size() != size) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint optimizer record " + key + " is missing or mis-sized");
    }
    return it->second->data;
  };
  OptimizerState s;
  for (const auto& layer : ckpt.params.layers) {
    s.m_weight.push_back(take("adam.m/" + layer.name + ".weight", layer.weights.size()));
    s.v_weight.push_back(take("adam.v/" + layer.name + ".weight", layer.weights.size()));
    s.m_bias.push_back(take("adam.m/" + layer.name + ".bias", layer.bias.size()));
    s.v_bias.push_back(take("adam.v/" + layer.name + ".bias", layer.bias.size()));
    if (!steps.contains(layer.name)) {
      throw Error(ErrorCode::ShapeMismatch, "checkpoint lacks the optimizer step count of " + layer.name);
    }
    s.steps.push_back(steps[layer.name].get<std::uint64_t>());
  }
  return s;
}

TrainResult train(const TrainOptions& options, const std::vector<SampleTriplet>& real,
                  const std::vector<SampleTriplet>& synthetic) {
  const auto& config = options.network;
  const auto& schedule = options.schedule;
  config.validate();
  schedule.validate(config.depth);
  if (config.mode == network::TaskMode::FlowOnly && schedule.n1 != 0) {
    throw Error(ErrorCode::InvalidConfig, "flow-only training has no use for REAL batches; set n1 = 0");
  }
  const bool frame_only = config.mode == network::TaskMode::NextFrameOnly;

  // Next-frame-only training needs frames only, so synthetic triplets can
  // stand in for the real source once their ground truth is stripped.
  std::vector<SampleTriplet> frame_only_source;
  if (frame_only && real.empty()) {
    for (const auto& s : synthetic) frame_only_source.push_back(s.without_ground_truth());
  }
  const auto& real_source = frame_only && real.empty() ? frame_only_source : real;

  network::ParameterSet<float> params;
  OptimizerState optimizer;
  std::uint64_t start = 0;
  if (options.resume) {
    auto ckpt = network::load_checkpoint(*options.resume, config);
    TrainSchedule stored;
    try {
      stored = schedule_from_json(json::parse(ckpt.metadata).at("schedule").dump());
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, std::string("checkpoint lacks its training schedule: ") + e.what());
    }
    if (!same_schedule_except_length(stored, schedule)) {
      throw Error(ErrorCode::InvalidConfig, "resumed schedule differs from the checkpoint's: " +
                                                schedule_to_json(stored));
    }
    optimizer = optimizer_from_checkpoint(ckpt);
    params = std::move(ckpt.params);
    start = ckpt.iteration;
  } else {
    params = network::init_parameters<float>(config, schedule.seed);
    optimizer = OptimizerState::zeros_for(params);
  }

  std::uint64_t end = schedule.total_iterations;
  if (options.stop_after) end = std::min(end, *options.stop_after);

  std::ofstream log;
  if (!options.out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(options.out_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, options.out_dir.string() + ": " + ec.message());
    const auto log_path = options.out_dir / kLogFileName;
    // Keep only rows that precede the resume point so the log stays a single
    // consistent sequence.
    std::vector<std::string> kept;
    if (start > 0) {
      std::ifstream in(log_path);
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty() && StepRecord::from_json(line).iteration < start) kept.push_back(line);
      }
    }
    log.open(log_path, std::ios::trunc);
    if (!log) throw Error(ErrorCode::IoError, log_path.string() + ": cannot open for writing");
    for (const auto& line : kept) log << line << '\n';
    log.flush();
  }

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t i = start; i < end; ++i) {
    BatchDraw draw;
    if (frame_only) {
      draw.s = 0;
      draw.indices = batch_indices(i, real_source.size(), 0, schedule);
      draw.batch.source = Source::Real;
      for (std::size_t idx : draw.indices) draw.batch.samples.push_back(real_source[idx]);
    } else {
      draw = next_batch(i, real_source, synthetic, schedule);
    }
    StepRecord record = train_step(params, optimizer, config, draw.batch, draw.s, schedule, i);
    record.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log.is_open()) {
      log << record.to_json() << '\n';
      log.flush();
      if (!log) throw Error(ErrorCode::IoError, "failed writing the training log");
    }
    if (options.on_step) options.on_step(record);
    result.log.push_back(record);
    if (!options.out_dir.empty() && options.checkpoint_every > 0 && (i + 1) % options.checkpoint_every == 0) {
      network::save_checkpoint(make_checkpoint(config, params, optimizer, schedule, i + 1),
                               checkpoint_path(options.out_dir, i + 1));
    }
  }
  result.checkpoint = make_checkpoint(config, params, optimizer, schedule, std::max(start, end));
  if (!options.out_dir.empty()) network::save_checkpoint(result.checkpoint, options.out_dir / kFinalCheckpointName);
  return result;
}

}  // namespace hybridflow::training
