#include "hybridflow/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "hybridflow/error.hpp"

namespace hybridflow {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::NonPositiveDims: return "NonPositiveDims";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::WrongBitDepth: return "WrongBitDepth";
    case ErrorCode::WrongChannelCount: return "WrongChannelCount";
    case ErrorCode::RangeOverflow: return "RangeOverflow";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::InvalidSpec: return "InvalidSpec";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::InvalidCycles: return "InvalidCycles";
    case ErrorCode::EmptySource: return "EmptySource";
    case ErrorCode::SourceMismatch: return "SourceMismatch";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
  }
  return "Unknown";
}

std::string_view to_string(Source source) {
  return source == Source::Synthetic ? "synthetic" : "real";
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](auto b) { return b != 0; }));
}

Mask mask_and(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) {
    throw Error(ErrorCode::DimensionMismatch, "mask_and: mask dimensions differ");
  }
  Mask out(a.width, a.height);
  for (std::size_t i = 0; i < a.bits.size(); ++i) out.bits[i] = (a.bits[i] && b.bits[i]) ? 1 : 0;
  return out;
}

FlowField FlowField::uniform(int w, int h, float du, float dv) {
  FlowField f(w, h);
  std::fill(f.u.begin(), f.u.end(), du);
  std::fill(f.v.begin(), f.v.end(), dv);
  return f;
}

void FlowField::validate() const {
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::InvariantViolation, "flow field must be at least 1x1");
  }
  const auto n = static_cast<std::size_t>(width) * height;
  if (u.size() != n || v.size() != n) {
    throw Error(ErrorCode::InvariantViolation, "flow component size does not match dimensions");
  }
  if (valid && (valid->width != width || valid->height != height || valid->bits.size() != n)) {
    throw Error(ErrorCode::InvariantViolation, "validity mask dimensions differ from flow");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (valid && !valid->bits[i]) continue;
    if (!std::isfinite(u[i]) || !std::isfinite(v[i])) {
      throw Error(ErrorCode::InvariantViolation,
                  "non-finite flow value at pixel " + std::to_string(i));
    }
  }
}

void Frame::validate() const {
  if (width < 1 || height < 1) {
    throw Error(ErrorCode::InvariantViolation, "frame must be at least 1x1");
  }
  if (data.size() != static_cast<std::size_t>(width) * height * kChannels) {
    throw Error(ErrorCode::InvariantViolation, "frame buffer size does not match dimensions");
  }
  for (float x : data) {
    if (!(x >= 0.0f && x <= 1.0f)) {
      throw Error(ErrorCode::InvariantViolation, "frame value outside [0,1]");
    }
  }
}

Frame Frame::quantized() const {
  Frame out = *this;
  for (float& x : out.data) {
    x = static_cast<float>(std::lround(std::clamp(x, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  }
  return out;
}

namespace {

void check_same_dims(const Frame& ref, const Frame& f, const char* what) {
  if (f.width != ref.width || f.height != ref.height) {
    throw Error(ErrorCode::InvariantViolation, std::string(what) + " dimensions differ from i1");
  }
}

void check_flow_dims(const Frame& ref, const FlowField& f, const char* what) {
  if (f.width != ref.width || f.height != ref.height) {
    throw Error(ErrorCode::InvariantViolation, std::string(what) + " dimensions differ from frames");
  }
  f.validate();
}

}  // namespace

void SampleTriplet::validate() const {
  i1.validate();
  i2.validate();
  i3.validate();
  check_same_dims(i1, i2, "i2");
  check_same_dims(i1, i3, "i3");
  for (const auto& h : history) check_same_dims(i1, h, "history frame");
  if (f12) check_flow_dims(i1, *f12, "f12");
  if (f23) check_flow_dims(i1, *f23, "f23");
  if (source == Source::Synthetic && !(f12 && f23)) {
    throw Error(ErrorCode::InvariantViolation, "synthetic sample requires f12 and f23");
  }
  if (source == Source::Real && (f12 || f23)) {
    throw Error(ErrorCode::InvariantViolation, "real sample must not carry flow");
  }
}

SampleTriplet SampleTriplet::without_ground_truth() const {
  SampleTriplet out;
  out.i1 = i1;
  out.i2 = i2;
  out.i3 = i3;
  out.history = history;
  out.source = Source::Real;
  return out;
}

void Minibatch::validate() const {
  if (samples.empty()) throw Error(ErrorCode::InvariantViolation, "minibatch is empty");
  for (const auto& s : samples) {
    if (s.source != source) {
      throw Error(ErrorCode::SourceMismatch, "minibatch mixes sample sources");
    }
    if (s.width() != samples.front().width() || s.height() != samples.front().height()) {
      throw Error(ErrorCode::DimensionMismatch, "minibatch samples differ in size");
    }
  }
}

}  // namespace hybridflow
