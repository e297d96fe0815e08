#include "capnet/roi.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "capnet/error.hpp"
#include "capnet/imgproc.hpp"

namespace capnet::roi {

const char* to_string(RoiSource source) {
  switch (source) {
    case RoiSource::Salience: return "salience";
    case RoiSource::Motion: return "motion";
  }
  return "unknown";
}

AreaBounds area_bounds_for_pitch(std::optional<double> pixel_pitch_um) {
  if (!pixel_pitch_um || !(*pixel_pitch_um > 0.0)) return {};
  const double dmin = 5.0 / *pixel_pitch_um;
  const double dmax = 30.0 / *pixel_pitch_um;
  return {dmin * dmin, 4.0 * dmax * dmax};
}

namespace {

bool area_ok(const Rect& r, const AreaBounds& b) {
  const auto a = static_cast<double>(r.area());
  return a >= b.min_area && a <= b.max_area;
}

std::vector<Rect> region_boxes(const BinaryMask& mask) {
  std::vector<Rect> boxes;
  for (const auto& c : find_contours(mask)) {
    if (!c.is_hole) boxes.push_back(bounding_rect(c));
  }
  return boxes;
}

template <typename T>
double mean_inside(const Grid<T>& grid, const Rect& r) {
  double acc = 0.0;
  for (int y = r.y; y < r.bottom(); ++y)
    for (int x = r.x; x < r.right(); ++x) acc += grid(x, y);
  return r.area() > 0 ? acc / static_cast<double>(r.area()) : 0.0;
}

}  // namespace

void sort_boxes(std::vector<RoiBox>& boxes) {
  std::sort(boxes.begin(), boxes.end(), [](const RoiBox& a, const RoiBox& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.rect.x != b.rect.x) return a.rect.x < b.rect.x;
    if (a.rect.y != b.rect.y) return a.rect.y < b.rect.y;
    if (a.rect.w != b.rect.w) return a.rect.w < b.rect.w;
    if (a.rect.h != b.rect.h) return a.rect.h < b.rect.h;
    return static_cast<int>(a.source) < static_cast<int>(b.source);
  });
}

std::vector<RoiBox> salience_rois(const Frame& frame, const BackgroundModel& model, const SalienceParams& params) {
  if (frame.width() != model.width() || frame.height() != model.height()) {
    throw ParameterError("salience_rois: frame does not match model dimensions");
  }
  const Plane background = model.background();
  const auto sim = imgproc::ssim(to_luma(frame), background, params.ssim_window);

  BinaryMask candidates(frame.width(), frame.height());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    candidates.values()[i] = sim.map.values()[i] < params.ssim_threshold ? 1 : 0;
  }
  candidates = imgproc::morph_open3x3(candidates);

  const int halo = params.trim_window_halo ? params.ssim_window / 2 : 0;
  std::vector<RoiBox> out;
  for (Rect r : region_boxes(candidates)) {
    if (r.w > 2 * halo && r.h > 2 * halo) r = {r.x + halo, r.y + halo, r.w - 2 * halo, r.h - 2 * halo};
    r = clip(r, frame.width(), frame.height());
    if (r.empty() || !area_ok(r, params.area)) continue;
    const double score = std::clamp(1.0 - mean_inside(sim.map, r), 0.0, 1.0);
    out.push_back({r, RoiSource::Salience, score});
  }
  sort_boxes(out);
  return out;
}

std::vector<RoiBox> motion_rois(std::span<const Frame> frames, const MotionParams& params) {
  if (frames.size() != 5) throw ParameterError("motion_rois: exactly 5 consecutive frames required");
  const int w = frames[0].width();
  const int h = frames[0].height();
  std::vector<Plane> luma;
  for (const auto& f : frames) {
    if (f.width() != w || f.height() != h) throw ParameterError("motion_rois: frames differ in size");
    luma.push_back(to_luma(f));
  }

  Plane acc(w, h);
  for (std::size_t i = 1; i < luma.size(); ++i) {
    auto a = luma[i].values();
    auto b = luma[i - 1].values();
    auto o = acc.values();
    for (std::size_t p = 0; p < o.size(); ++p) o[p] += std::fabs(a[p] - b[p]);
  }

  const double threshold = 4.0 * params.noise_floor;
  BinaryMask moving(w, h);
  for (std::size_t p = 0; p < moving.size(); ++p) moving.values()[p] = acc.values()[p] > threshold ? 1 : 0;
  moving = imgproc::morph_open3x3(moving);

  std::vector<RoiBox> out;
  for (const Rect& r : region_boxes(moving)) {
    if (!area_ok(r, params.area)) continue;
    // Four differences of unit-range frames: the accumulated value is at most 4.
    const double score = std::clamp(mean_inside(acc, r) / 4.0, 0.0, 1.0);
    out.push_back({r, RoiSource::Motion, score});
  }
  sort_boxes(out);
  return out;
}

std::vector<RoiBox> merge_rois(std::span<const RoiBox> salience, std::span<const RoiBox> motion, double iou_threshold) {
  std::vector<RoiBox> boxes(salience.begin(), salience.end());
  boxes.insert(boxes.end(), motion.begin(), motion.end());
  sort_boxes(boxes);

  while (true) {
    const std::size_t n = boxes.size();
    std::vector<int> cluster(n, -1);
    std::vector<RoiBox> merged;
    // Seeds taken in score order; each absorbs everything transitively overlapping it.
    for (std::size_t seed = 0; seed < n; ++seed) {
      if (cluster[seed] >= 0) continue;
      const int id = static_cast<int>(merged.size());
      cluster[seed] = id;
      RoiBox acc = boxes[seed];
      std::vector<std::size_t> frontier{seed};
      while (!frontier.empty()) {
        const std::size_t cur = frontier.back();
        frontier.pop_back();
        for (std::size_t j = 0; j < n; ++j) {
          if (cluster[j] >= 0) continue;
          if (iou(boxes[cur].rect, boxes[j].rect) >= iou_threshold) {
            cluster[j] = id;
            frontier.push_back(j);
            acc.rect = unite(acc.rect, boxes[j].rect);
            if (boxes[j].score > acc.score) {
              acc.score = boxes[j].score;
              acc.source = boxes[j].source;
            }
          }
        }
      }
      merged.push_back(acc);
    }
    sort_boxes(merged);
    if (merged.size() == n) return merged;
    boxes = std::move(merged);
  }
}

}  // namespace capnet::roi
