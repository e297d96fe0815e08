#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace capnet {

/// Dense row-major 2-D array. The storage type behind planes, masks and maps.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }

  /// Read with clamp-to-edge addressing.
  T clamped(int x, int y) const {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return data_[index(x, y)];
  }

  std::span<T> row(int y) { return {data_.data() + static_cast<std::size_t>(y) * width_, static_cast<std::size_t>(width_)}; }
  std::span<const T> row(int y) const {
    return {data_.data() + static_cast<std::size_t>(y) * width_, static_cast<std::size_t>(width_)};
  }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  bool operator==(const Grid&) const = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Plane = Grid<float>;
using BinaryMask = Grid<std::uint8_t>;

std::size_t count_set(const BinaryMask& mask);

/// Axis-aligned pixel rectangle, half-open: [x, x+w) x [y, y+h).
struct Rect {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  long long area() const noexcept { return static_cast<long long>(std::max(w, 0)) * std::max(h, 0); }
  int right() const noexcept { return x + w; }
  int bottom() const noexcept { return y + h; }
  bool empty() const noexcept { return w <= 0 || h <= 0; }
  bool contains(int px, int py) const noexcept { return px >= x && px < right() && py >= y && py < bottom(); }

  bool operator==(const Rect&) const = default;
};

Rect intersect(const Rect& a, const Rect& b);
Rect unite(const Rect& a, const Rect& b);
double iou(const Rect& a, const Rect& b);
/// Grow by `margin` pixels on every side, then clip to a width x height frame.
Rect pad_clip(const Rect& r, int margin, int width, int height);
Rect clip(const Rect& r, int width, int height);

/// Planar image with unit-range intensities. One plane (gray) or three (R, G, B).
class Frame {
 public:
  Frame() = default;
  Frame(int width, int height, int channels, float fill = 0.f);
  explicit Frame(std::vector<Plane> planes);

  int width() const noexcept { return planes_.empty() ? 0 : planes_.front().width(); }
  int height() const noexcept { return planes_.empty() ? 0 : planes_.front().height(); }
  int channels() const noexcept { return static_cast<int>(planes_.size()); }
  bool is_gray() const noexcept { return channels() == 1; }
  bool is_rgb() const noexcept { return channels() == 3; }

  Plane& plane(int c) { return planes_.at(static_cast<std::size_t>(c)); }
  const Plane& plane(int c) const { return planes_.at(static_cast<std::size_t>(c)); }
  std::span<Plane> planes() noexcept { return planes_; }
  std::span<const Plane> planes() const noexcept { return planes_; }

  float& at(int c, int x, int y) { return planes_[static_cast<std::size_t>(c)](x, y); }
  float at(int c, int x, int y) const { return planes_[static_cast<std::size_t>(c)](x, y); }

  std::optional<double> pixel_pitch_um;

  bool operator==(const Frame&) const = default;

 private:
  std::vector<Plane> planes_;
};

using FrameSequence = std::vector<Frame>;

/// Throws ParameterError unless the frame satisfies the pipeline entry invariants:
/// 1 or 3 channels, equal plane sizes, intensities in [0,1], and (optionally) at least 16x16.
void require_valid_frame(const Frame& frame, const char* where, bool enforce_min_size = true);

/// Luma 0.299 R + 0.587 G + 0.114 B; gray frames pass through.
Plane to_luma(const Frame& frame);
Frame gray_frame(Plane plane);
/// R - (G + B)/2 clipped to [0,1]; the "red pixel" plane used for capillary masks.
Plane red_dominance(const Frame& frame);

Plane crop(const Plane& plane, const Rect& r);
Frame crop(const Frame& frame, const Rect& r);
Plane resize_bilinear(const Plane& plane, int width, int height);
Frame resize_bilinear(const Frame& frame, int width, int height);
/// Bilinear sample with clamp-to-edge addressing.
float sample_bilinear(const Plane& plane, double x, double y);

void clamp_unit(Plane& plane);

}  // namespace capnet
