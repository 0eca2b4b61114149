#include <cmath>

#include "hybridflow/error.hpp"
#include "hybridflow/flowio.hpp"

namespace hybridflow {

namespace {

void require_mask_dims(const std::optional<Mask>& mask, int width, int height) {
  if (mask && (mask->width != width || mask->height != height)) {
    throw Error(ErrorCode::DimensionMismatch, "mask dimensions differ from image");
  }
}

double to_db(double error) {
  if (error < 1e-10) return kMetricCapDb;
  return std::min(kMetricCapDb, 10.0 * std::log10(1.0 / error));
}

}  // namespace

EndpointErrorResult endpoint_error(const FlowField& pred, const FlowField& gt, const std::optional<Mask>& mask) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw Error(ErrorCode::DimensionMismatch, "endpoint_error: flow dimensions differ");
  }
  require_mask_dims(mask, gt.width, gt.height);
  EndpointErrorResult result;
  result.per_pixel.resize(gt.u.size());
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < gt.u.size(); ++i) {
    const double du = static_cast<double>(pred.u[i]) - gt.u[i];
    const double dv = static_cast<double>(pred.v[i]) - gt.v[i];
    const double e = std::sqrt(du * du + dv * dv);
    result.per_pixel[i] = static_cast<float>(e);
    const bool selected = (!mask || mask->bits[i]) && (!gt.valid || gt.valid->bits[i]);
    if (selected) {
      sum += e;
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorCode::EmptyMask, "endpoint_error: no pixel selected");
  result.mean = sum / static_cast<double>(count);
  return result;
}

double psnr(const Frame& pred, const Frame& gt, const std::optional<Mask>& mask) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw Error(ErrorCode::DimensionMismatch, "psnr: frame dimensions differ");
  }
  require_mask_dims(mask, gt.width, gt.height);
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < gt.height; ++y) {
    for (int x = 0; x < gt.width; ++x) {
      if (mask && !mask->at(x, y)) continue;
      for (int c = 0; c < Frame::kChannels; ++c) {
        const double d = static_cast<double>(pred.at(x, y, c)) - gt.at(x, y, c);
        sum += d * d;
      }
      count += Frame::kChannels;
    }
  }
  if (count == 0) throw Error(ErrorCode::EmptyMask, "psnr: no pixel selected");
  return to_db(sum / static_cast<double>(count));
}

double sharpness(const Frame& pred, const Frame& gt, const std::optional<Mask>& mask) {
  if (pred.width != gt.width || pred.height != gt.height) {
    throw Error(ErrorCode::DimensionMismatch, "sharpness: frame dimensions differ");
  }
  if (gt.width < 2 || gt.height < 2) throw Error(ErrorCode::TooSmall, "sharpness needs at least 2x2 pixels");
  require_mask_dims(mask, gt.width, gt.height);
  auto grad = [](const Frame& f, int x, int y, int c) {
    const double center = f.at(x, y, c);
    return std::abs(static_cast<double>(f.at(x + 1, y, c)) - center) +
           std::abs(static_cast<double>(f.at(x, y + 1, c)) - center);
  };
  double sum = 0.0;
  std::size_t count = 0;
  for (int y = 0; y + 1 < gt.height; ++y) {
    for (int x = 0; x + 1 < gt.width; ++x) {
      if (mask && !mask->at(x, y)) continue;
      for (int c = 0; c < Frame::kChannels; ++c) sum += std::abs(grad(pred, x, y, c) - grad(gt, x, y, c));
      count += Frame::kChannels;
    }
  }
  if (count == 0) throw Error(ErrorCode::EmptyMask, "sharpness: no interior pixel selected");
  return to_db(sum / static_cast<double>(count));
}

Mask moving_region_mask(const FlowField& gt_flow, float threshold) {
  gt_flow.validate();
  if (!(threshold >= 0.0f)) throw Error(ErrorCode::InvariantViolation, "moving threshold must be >= 0");
  Mask mask(gt_flow.width, gt_flow.height);
  for (std::size_t i = 0; i < gt_flow.u.size(); ++i) {
    const double m = std::sqrt(static_cast<double>(gt_flow.u[i]) * gt_flow.u[i] +
                               static_cast<double>(gt_flow.v[i]) * gt_flow.v[i]);
    const bool valid = !gt_flow.valid || gt_flow.valid->bits[i];
    mask.bits[i] = (valid && m > threshold) ? 1 : 0;
  }
  return mask;
}

WarpResult warp_frame(const Frame& frame, const FlowField& flow) {
  if (frame.width != flow.width || frame.height != flow.height) {
    throw Error(ErrorCode::DimensionMismatch, "warp_frame: frame and flow dimensions differ");
  }
  WarpResult result{Frame(frame.width, frame.height, 0.0f), Mask(frame.width, frame.height)};
  const double max_x = frame.width - 1;
  const double max_y = frame.height - 1;
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const double sx = x + static_cast<double>(flow.u_at(x, y));
      const double sy = y + static_cast<double>(flow.v_at(x, y));
      if (!(sx >= 0.0 && sx <= max_x && sy >= 0.0 && sy <= max_y)) continue;
      const int x0 = std::min(static_cast<int>(std::floor(sx)), frame.width - 1);
      const int y0 = std::min(static_cast<int>(std::floor(sy)), frame.height - 1);
      const int x1 = std::min(x0 + 1, frame.width - 1);
      const int y1 = std::min(y0 + 1, frame.height - 1);
      const double fx = sx - x0;
      const double fy = sy - y0;
      for (int c = 0; c < Frame::kChannels; ++c) {
        const double top = (1.0 - fx) * frame.at(x0, y0, c) + fx * frame.at(x1, y0, c);
        const double bottom = (1.0 - fx) * frame.at(x0, y1, c) + fx * frame.at(x1, y1, c);
        result.frame.at(x, y, c) = static_cast<float>((1.0 - fy) * top + fy * bottom);
      }
      result.coverage.set(x, y, true);
    }
  }
  return result;
}

}  // namespace hybridflow
