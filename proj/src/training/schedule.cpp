#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

#include "hybridflow/error.hpp"
#include "hybridflow/rng.hpp"
#include "hybridflow/training.hpp"

namespace hybridflow::training {

namespace {

using nlohmann::json;

void check_cycles(int n1, int n2) {
  if (n1 < 0 || n2 < 0 || n1 + n2 < 1) {
    throw Error(ErrorCode::InvalidCycles,
                "cycle counts must be non-negative with n1 + n2 >= 1, got " + std::to_string(n1) + ":" +
                    std::to_string(n2));
  }
}

std::vector<std::size_t> epoch_permutation(std::uint64_t seed, int s, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(hash_combine(hash_combine(seed, static_cast<std::uint64_t>(s)), epoch));
  for (std::size_t k = n; k > 1; --k) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
    std::swap(perm[k - 1], perm[j]);
  }
  return perm;
}

}  // namespace

void TrainSchedule::validate(int levels) const {
  check_cycles(n1, n2);
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, "schedule: " + what); };
  if (!(w1 >= 0.0) || !(w2 >= 0.0)) bad("loss weights must be non-negative");
  if (!level_weights.empty() && static_cast<int>(level_weights.size()) != levels) {
    bad("level_weights has " + std::to_string(level_weights.size()) + " entries, expected " +
        std::to_string(levels));
  }
  for (double w : level_weights)
    if (!(w >= 0.0)) bad("level weights must be non-negative");
  if (!(base_lr >= 0.0)) bad("base_lr must be non-negative");
  if (lr_drop_every == 0) bad("lr_drop_every must be positive");
  if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) bad("lr_drop_factor must be in (0, 1]");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    bad("Adam betas must be in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) bad("Adam epsilon must be positive");
  if (batch_size < 1) bad("batch_size must be at least 1");
}

std::vector<double> TrainSchedule::weights_for(int levels) const {
  if (level_weights.empty()) return std::vector<double>(static_cast<std::size_t>(levels), 1.0);
  if (static_cast<int>(level_weights.size()) != levels) {
    throw Error(ErrorCode::ShapeMismatch, "level_weights has " + std::to_string(level_weights.size()) +
                                              " entries for " + std::to_string(levels) + " predictions");
  }
  return level_weights;
}

TrainSchedule TrainSchedule::desk() {
  TrainSchedule s;
  s.total_iterations = 2000;
  s.lr_drop_start = 600;
  s.lr_drop_every = 200;
  s.base_lr = 1e-3;
  return s;
}

int switch_value(std::uint64_t i, int n1, int n2) {
  check_cycles(n1, n2);
  if (n1 == 0) return 1;
  const std::uint64_t period = static_cast<std::uint64_t>(n1) + static_cast<std::uint64_t>(n2);
  return static_cast<int>(std::min<std::uint64_t>(1, (i % period) / static_cast<std::uint64_t>(n1)));
}

std::uint64_t count_before(std::uint64_t i, int n1, int n2, int s) {
  check_cycles(n1, n2);
  const std::uint64_t period = static_cast<std::uint64_t>(n1) + static_cast<std::uint64_t>(n2);
  const std::uint64_t zeros = (i / period) * n1 + std::min<std::uint64_t>(i % period, n1);
  return s == 0 ? zeros : i - zeros;
}

std::vector<std::size_t> batch_indices(std::uint64_t draw, std::size_t source_size, int s,
                                       const TrainSchedule& schedule) {
  if (source_size == 0) throw Error(ErrorCode::EmptySource, std::string(s == 0 ? "real" : "synthetic") + " source is empty");
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(schedule.batch_size));
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> perm;
  for (int b = 0; b < schedule.batch_size; ++b) {
    const std::uint64_t position = draw * static_cast<std::uint64_t>(schedule.batch_size) + b;
    const std::uint64_t epoch = position / source_size;
    if (epoch != cached_epoch) {
      perm = epoch_permutation(schedule.seed, s, epoch, source_size);
      cached_epoch = epoch;
    }
    out.push_back(perm[position % source_size]);
  }
  return out;
}

BatchDraw next_batch(std::uint64_t i, const std::vector<SampleTriplet>& real,
                     const std::vector<SampleTriplet>& synthetic, const TrainSchedule& schedule) {
  BatchDraw draw;
  draw.s = switch_value(i, schedule.n1, schedule.n2);
  const auto& source = draw.s == 0 ? real : synthetic;
  draw.indices = batch_indices(count_before(i, schedule.n1, schedule.n2, draw.s), source.size(), draw.s, schedule);
  draw.batch.source = draw.s == 0 ? Source::Real : Source::Synthetic;
  draw.batch.samples.reserve(draw.indices.size());
  for (std::size_t idx : draw.indices) {
    draw.batch.samples.push_back(source[idx]);
    if (draw.batch.samples.back().source != draw.batch.source) {
      throw Error(ErrorCode::SourceMismatch, "sample " + std::to_string(idx) + " of the " +
                                                 std::string(to_string(draw.batch.source)) +
                                                 " source is tagged otherwise");
    }
  }
  return draw;
}

double lr_at(std::uint64_t i, const TrainSchedule& schedule) {
  if (i < schedule.lr_drop_start) return schedule.base_lr;
  const std::uint64_t drops = (i - schedule.lr_drop_start) / schedule.lr_drop_every + 1;
  return schedule.base_lr * std::pow(schedule.lr_drop_factor, static_cast<double>(drops));
}

std::string schedule_to_json(const TrainSchedule& s) {
  return json{{"n1", s.n1},
              {"n2", s.n2},
              {"w1", s.w1},
              {"w2", s.w2},
              {"level_weights", s.level_weights},
              {"base_lr", s.base_lr},
              {"lr_drop_start", s.lr_drop_start},
              {"lr_drop_every", s.lr_drop_every},
              {"lr_drop_factor", s.lr_drop_factor},
              {"adam", {{"beta1", s.adam.beta1}, {"beta2", s.adam.beta2}, {"epsilon", s.adam.epsilon}}},
              {"total_iterations", s.total_iterations},
              {"batch_size", s.batch_size},
              {"seed", s.seed}}
      .dump();
}

TrainSchedule schedule_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    TrainSchedule s;
    s.n1 = j.at("n1").get<int>();
    s.n2 = j.at("n2").get<int>();
    s.w1 = j.at("w1").get<double>();
    s.w2 = j.at("w2").get<double>();
    s.level_weights = j.at("level_weights").get<std::vector<double>>();
    s.base_lr = j.at("base_lr").get<double>();
    s.lr_drop_start = j.at("lr_drop_start").get<std::uint64_t>();
    s.lr_drop_every = j.at("lr_drop_every").get<std::uint64_t>();
    s.lr_drop_factor = j.at("lr_drop_factor").get<double>();
    s.adam.beta1 = j.at("adam").at("beta1").get<double>();
    s.adam.beta2 = j.at("adam").at("beta2").get<double>();
    s.adam.epsilon = j.at("adam").at("epsilon").get<double>();
    s.total_iterations = j.at("total_iterations").get<std::uint64_t>();
    s.batch_size = j.at("batch_size").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("schedule: ") + e.what());
  }
}

}  // namespace hybridflow::training
