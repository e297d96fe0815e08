#include "capnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <tuple>

#include "capnet/error.hpp"
#include "capnet/imgproc.hpp"

namespace capnet::metrics {

const char* to_string(VelocityClass c) {
  switch (c) {
    case VelocityClass::NoFlow: return "no_flow";
    case VelocityClass::Slow: return "slow";
    case VelocityClass::Normal: return "normal";
    case VelocityClass::Fast: return "fast";
    case VelocityClass::VeryFast: return "very_fast";
  }
  return "unknown";
}

void validate(const VelocityThresholds& t) {
  if (!(t.t1 > 0.0 && t.t1 < t.t2 && t.t2 < t.t3)) throw ParameterError("velocity thresholds must satisfy 0 < t1 < t2 < t3");
  if (t.t4 && !(*t.t4 > t.t3)) throw ParameterError("velocity threshold t4 must exceed t3");
}

BinaryMask capillary_mask(const Frame& frame, const Rect& box, const MaskParams& params) {
  if (box.empty() || clip(box, frame.width(), frame.height()) != box) {
    throw ParameterError("capillary_mask: box outside frame");
  }
  const Frame blurred = imgproc::gaussian_blur(crop(frame, box), params.blur_window, params.blur_sigma);
  return imgproc::adaptive_gaussian_threshold(red_dominance(blurred), params.block, params.offset);
}

Rect CapillaryRecord::detection_box() const {
  Rect out;
  bool any = false;
  for (const auto& b : boxes) {
    if (!b) continue;
    out = any ? unite(out, *b) : *b;
    any = true;
  }
  return out;
}

double total_capillary_density(std::span<const BinaryMask> masks, double frame_area) {
  if (!(frame_area > 0.0)) throw ParameterError("density: frame area must be positive");
  if (masks.empty()) return 0.0;
  BinaryMask u(masks.front().width(), masks.front().height());
  for (const auto& m : masks) {
    if (!m.same_shape(u)) throw ParameterError("density: masks differ in shape");
    for (std::size_t i = 0; i < u.size(); ++i) u.values()[i] |= m.values()[i] != 0 ? 1 : 0;
  }
  return std::clamp(static_cast<double>(count_set(u)) / frame_area, 0.0, 1.0);
}

namespace {

template <typename Pred>
double mean_union_density(std::span<const CapillaryRecord> records, int width, int height, Pred keep) {
  if (width <= 0 || height <= 0) throw ParameterError("density: frame size must be positive");
  int frames = 0;
  for (const auto& r : records) frames = std::max(frames, r.frames());
  if (frames == 0) return 0.0;
  const double area = static_cast<double>(width) * height;
  BinaryMask u(width, height);
  double acc = 0.0;
  for (int t = 0; t < frames; ++t) {
    std::fill(u.values().begin(), u.values().end(), std::uint8_t{0});
    for (const auto& r : records) {
      if (!keep(r) || t >= static_cast<int>(r.masks.size())) continue;
      const BinaryMask& m = r.masks[static_cast<std::size_t>(t)];
      for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
          if (m(x, y)) u(r.region.x + x, r.region.y + y) = 1;
    }
    acc += static_cast<double>(count_set(u)) / area;
  }
  return std::clamp(acc / frames, 0.0, 1.0);
}

}  // namespace

double total_capillary_density(std::span<const CapillaryRecord> records, int width, int height) {
  return mean_union_density(records, width, height, [](const CapillaryRecord&) { return true; });
}

double functional_capillary_density(std::span<const CapillaryRecord> records, int width, int height,
                                    double no_flow_cutoff) {
  return mean_union_density(records, width, height,
                            [&](const CapillaryRecord& r) { return r.velocity >= no_flow_cutoff; });
}

std::vector<double> hematocrit_series(const CapillaryRecord& record) {
  const long long ref = record.area_px.empty() ? 0 : *std::max_element(record.area_px.begin(), record.area_px.end());
  if (ref <= 0) throw UndefinedMetricError("hematocrit: record has no mask area in any frame");
  std::vector<double> out;
  out.reserve(record.area_px.size());
  for (long long a : record.area_px) out.push_back(std::clamp(static_cast<double>(a) / ref, 0.0, 1.0));
  return out;
}

namespace {

std::vector<double> present(const std::vector<std::optional<double>>& s) {
  std::vector<double> out;
  for (const auto& v : s)
    if (v) out.push_back(*v);
  return out;
}

}  // namespace

double velocity_vector(const CapillaryRecord& record) {
  const auto v = present(record.mean_magnitude);
  if (v.empty()) throw ParameterError("velocity: no per-frame magnitude");
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

VelocityClass classify_velocity(double v, const VelocityThresholds& t) {
  validate(t);
  if (v < t.t1) return VelocityClass::NoFlow;
  if (v < t.t2) return VelocityClass::Slow;
  if (v < t.t3) return VelocityClass::Normal;
  if (t.t4 && v >= *t.t4) return VelocityClass::VeryFast;
  return VelocityClass::Fast;
}

VelocityClass classify_velocity(const CapillaryRecord& record, const VelocityThresholds& t) {
  return classify_velocity(velocity_vector(record), t);
}

Heterogeneity heterogeneity(std::span<const double> series) {
  if (series.size() < 2) throw ParameterError("heterogeneity: at least two values required");
  double mean = 0.0;
  for (double v : series) mean += v;
  mean /= static_cast<double>(series.size());
  double var = 0.0;
  for (double v : series) var += (v - mean) * (v - mean);
  var /= static_cast<double>(series.size());
  Heterogeneity h;
  h.std = std::sqrt(var);
  if (std::fabs(mean) >= 1e-6) h.cv = h.std / mean;
  return h;
}

Heterogeneity heterogeneity(const CapillaryRecord& record) {
  const auto v = present(record.mean_magnitude);
  return heterogeneity(std::span<const double>(v));
}

namespace {

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0.0) a += two_pi;
  if (a >= two_pi) a = 0.0;
  return a;
}

}  // namespace

std::optional<double> weighted_direction(const flow::PolarFlow& flow, const BinaryMask& mask) {
  if (!flow.magnitude.same_shape(mask)) throw ParameterError("direction: flow and mask differ in shape");
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask.values()[i]) continue;
    const double m = flow.magnitude.values()[i];
    const double a = flow.angle.values()[i];
    sx += m * std::cos(a);
    sy += m * std::sin(a);
  }
  if (std::hypot(sx, sy) < 1e-12) return std::nullopt;
  return wrap_angle(std::atan2(sy, sx));
}

double flow_direction(const CapillaryRecord& record, std::span<const flow::PolarFlow> flows) {
  if (flows.size() > record.masks.size()) throw ParameterError("flow_direction: more flows than masks");
  double sx = 0.0, sy = 0.0;
  int used = 0;
  for (std::size_t t = 0; t < flows.size(); ++t) {
    if (count_set(record.masks[t]) == 0) continue;
    const auto a = weighted_direction(flows[t], record.masks[t]);
    if (!a) continue;
    sx += std::cos(*a);
    sy += std::sin(*a);
    ++used;
  }
  if (used == 0 || std::hypot(sx, sy) < 1e-12) throw UndefinedMetricError("flow_direction: no motion under the mask");
  return wrap_angle(std::atan2(sy, sx));
}

std::vector<CapillaryRecord> associate_tracks(const std::vector<std::vector<roi::RoiBox>>& per_frame,
                                              const TrackParams& params) {
  const int frames = static_cast<int>(per_frame.size());
  std::vector<CapillaryRecord> tracks;
  std::vector<int> last_seen;
  std::vector<Rect> last_box;
  for (int t = 0; t < frames; ++t) {
    const auto& dets = per_frame[static_cast<std::size_t>(t)];
    std::vector<std::tuple<double, int, int>> pairs;
    for (int k = 0; k < static_cast<int>(tracks.size()); ++k) {
      if (t - last_seen[static_cast<std::size_t>(k)] - 1 > params.gap_max) continue;
      for (int d = 0; d < static_cast<int>(dets.size()); ++d) {
        const double o = iou(last_box[static_cast<std::size_t>(k)], dets[static_cast<std::size_t>(d)].rect);
        if (o >= params.iou_min && o > 0.0) pairs.emplace_back(o, k, d);
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
      if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
      if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
      return std::get<2>(a) < std::get<2>(b);
    });
    std::vector<bool> track_used(tracks.size(), false);
    std::vector<bool> det_used(dets.size(), false);
    for (const auto& [o, k, d] : pairs) {
      if (track_used[static_cast<std::size_t>(k)] || det_used[static_cast<std::size_t>(d)]) continue;
      track_used[static_cast<std::size_t>(k)] = true;
      det_used[static_cast<std::size_t>(d)] = true;
      const Rect r = dets[static_cast<std::size_t>(d)].rect;
      tracks[static_cast<std::size_t>(k)].boxes[static_cast<std::size_t>(t)] = r;
      last_seen[static_cast<std::size_t>(k)] = t;
      last_box[static_cast<std::size_t>(k)] = r;
    }
    for (int d = 0; d < static_cast<int>(dets.size()); ++d) {
      if (det_used[static_cast<std::size_t>(d)]) continue;
      CapillaryRecord rec;
      rec.id = static_cast<int>(tracks.size());
      rec.boxes.assign(static_cast<std::size_t>(frames), std::nullopt);
      rec.boxes[static_cast<std::size_t>(t)] = dets[static_cast<std::size_t>(d)].rect;
      tracks.push_back(std::move(rec));
      last_seen.push_back(t);
      last_box.push_back(dets[static_cast<std::size_t>(d)].rect);
    }
  }
  return tracks;
}

}  // namespace capnet::metrics
