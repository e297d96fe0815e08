#pragma once

#include <optional>
#include <span>
#include <vector>

#include "capnet/background_model.hpp"
#include "capnet/image.hpp"

namespace capnet::roi {

struct Point {
  int x = 0;
  int y = 0;
  bool operator==(const Point&) const = default;
};

/// One traced border of an 8-connected foreground region.
struct Contour {
  std::vector<Point> points;
  bool is_hole = false;
  /// Index of the enclosing contour in the result list, -1 for top-level outer borders.
  int parent = -1;
  /// Nesting depth: 0 for top-level outer borders, 1 for their holes, 2 for regions inside those holes, ...
  int level = 0;
};

/// Suzuki-Abe border following. Returns every outer border and hole border in raster
/// discovery order, with parent links. Points are border pixels of the region they bound.
std::vector<Contour> find_contours(const BinaryMask& mask);

Rect bounding_rect(const Contour& contour);

enum class RoiSource { Salience, Motion };

struct RoiBox {
  Rect rect;
  RoiSource source = RoiSource::Salience;
  double score = 0.0;

  bool operator==(const RoiBox&) const = default;
};

const char* to_string(RoiSource source);

struct AreaBounds {
  double min_area = 40.0;
  double max_area = 5000.0;
};

/// Box-area bounds for capillaries 5-30 um across; the upper bound allows a 4:1 elongated loop.
AreaBounds area_bounds_for_pitch(std::optional<double> pixel_pitch_um);

struct SalienceParams {
  int ssim_window = 7;
  double ssim_threshold = 0.85;
  AreaBounds area;
  /// Trim each box by the SSIM window radius, which the windowed map spreads every edge by.
  bool trim_window_halo = true;
};

/// Candidate boxes where `frame` is structurally dissimilar from the model's background.
std::vector<RoiBox> salience_rois(const Frame& frame, const BackgroundModel& model, const SalienceParams& params = {});

struct MotionParams {
  double noise_floor = 0.02;
  AreaBounds area;
};

/// Candidate boxes from the accumulated absolute difference of exactly five consecutive frames.
std::vector<RoiBox> motion_rois(std::span<const Frame> frames, const MotionParams& params = {});

/// Fuse two proposal lists: boxes connected through IoU >= iou_threshold are replaced by
/// their union (max score, source of the best-scoring member), repeated until no pair
/// overlaps that much. Output ordered by score desc, then x, then y.
std::vector<RoiBox> merge_rois(std::span<const RoiBox> salience, std::span<const RoiBox> motion,
                               double iou_threshold = 0.3);

/// Deterministic output order used by merge_rois.
void sort_boxes(std::vector<RoiBox>& boxes);

}  // namespace capnet::roi
