#include "capnet/image.hpp"

#include <cmath>
#include <string>

#include "capnet/error.hpp"

namespace capnet {

std::size_t count_set(const BinaryMask& mask) {
  return static_cast<std::size_t>(std::count_if(mask.values().begin(), mask.values().end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

Rect intersect(const Rect& a, const Rect& b) {
  const int x0 = std::max(a.x, b.x);
  const int y0 = std::max(a.y, b.y);
  const int x1 = std::min(a.right(), b.right());
  const int y1 = std::min(a.bottom(), b.bottom());
  if (x1 <= x0 || y1 <= y0) return {x0, y0, 0, 0};
  return {x0, y0, x1 - x0, y1 - y0};
}

Rect unite(const Rect& a, const Rect& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  const int x0 = std::min(a.x, b.x);
  const int y0 = std::min(a.y, b.y);
  return {x0, y0, std::max(a.right(), b.right()) - x0, std::max(a.bottom(), b.bottom()) - y0};
}

double iou(const Rect& a, const Rect& b) {
  const long long inter = intersect(a, b).area();
  const long long uni = a.area() + b.area() - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

Rect clip(const Rect& r, int width, int height) {
  return intersect(r, Rect{0, 0, width, height});
}

Rect pad_clip(const Rect& r, int margin, int width, int height) {
  return clip(Rect{r.x - margin, r.y - margin, r.w + 2 * margin, r.h + 2 * margin}, width, height);
}

Frame::Frame(int width, int height, int channels, float fill) {
  if (channels != 1 && channels != 3) throw ParameterError("Frame: channels must be 1 or 3");
  if (width <= 0 || height <= 0) throw ParameterError("Frame: non-positive size");
  planes_.assign(static_cast<std::size_t>(channels), Plane(width, height, fill));
}

Frame::Frame(std::vector<Plane> planes) : planes_(std::move(planes)) {
  if (planes_.size() != 1 && planes_.size() != 3) throw ParameterError("Frame: channels must be 1 or 3");
  for (const auto& p : planes_) {
    if (!p.same_shape(planes_.front())) throw ParameterError("Frame: planes differ in size");
  }
}

void require_valid_frame(const Frame& frame, const char* where, bool enforce_min_size) {
  const std::string ctx(where);
  if (frame.channels() != 1 && frame.channels() != 3) throw ParameterError(ctx + ": frame must have 1 or 3 channels");
  if (enforce_min_size && (frame.width() < 16 || frame.height() < 16)) {
    throw ParameterError(ctx + ": frame smaller than 16x16");
  }
  for (const auto& p : frame.planes()) {
    if (!p.same_shape(frame.plane(0))) throw ParameterError(ctx + ": planes differ in size");
    for (float v : p.values()) {
      if (!(v >= 0.f && v <= 1.f)) throw ParameterError(ctx + ": intensity outside [0,1]");
    }
  }
}

Plane to_luma(const Frame& frame) {
  if (frame.is_gray()) return frame.plane(0);
  Plane out(frame.width(), frame.height());
  auto r = frame.plane(0).values();
  auto g = frame.plane(1).values();
  auto b = frame.plane(2).values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = std::clamp(0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i], 0.f, 1.f);
  }
  return out;
}

Frame gray_frame(Plane plane) {
  std::vector<Plane> planes;
  planes.push_back(std::move(plane));
  return Frame(std::move(planes));
}

Plane red_dominance(const Frame& frame) {
  Plane out(frame.width(), frame.height());
  if (frame.is_gray()) return out;
  auto r = frame.plane(0).values();
  auto g = frame.plane(1).values();
  auto b = frame.plane(2).values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) {
    o[i] = std::clamp(r[i] - 0.5f * (g[i] + b[i]), 0.f, 1.f);
  }
  return out;
}

Plane crop(const Plane& plane, const Rect& r) {
  if (r.empty() || r.x < 0 || r.y < 0 || r.right() > plane.width() || r.bottom() > plane.height()) {
    throw ParameterError("crop: rectangle outside image");
  }
  Plane out(r.w, r.h);
  for (int y = 0; y < r.h; ++y) {
    auto src = plane.row(r.y + y).subspan(static_cast<std::size_t>(r.x), static_cast<std::size_t>(r.w));
    std::copy(src.begin(), src.end(), out.row(y).begin());
  }
  return out;
}

Frame crop(const Frame& frame, const Rect& r) {
  std::vector<Plane> planes;
  for (const auto& p : frame.planes()) planes.push_back(crop(p, r));
  Frame out(std::move(planes));
  out.pixel_pitch_um = frame.pixel_pitch_um;
  return out;
}

float sample_bilinear(const Plane& plane, double x, double y) {
  const int w = plane.width();
  const int h = plane.height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = plane(x0, y0) * (1.0 - fx) + plane(x1, y0) * fx;
  const double bot = plane(x0, y1) * (1.0 - fx) + plane(x1, y1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

Plane resize_bilinear(const Plane& plane, int width, int height) {
  if (width <= 0 || height <= 0) throw ParameterError("resize_bilinear: non-positive size");
  Plane out(width, height);
  // Pixel-center alignment.
  const double sx = static_cast<double>(plane.width()) / width;
  const double sy = static_cast<double>(plane.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    for (int x = 0; x < width; ++x) {
      out(x, y) = sample_bilinear(plane, (x + 0.5) * sx - 0.5, fy);
    }
  }
  return out;
}

Frame resize_bilinear(const Frame& frame, int width, int height) {
  std::vector<Plane> planes;
  for (const auto& p : frame.planes()) planes.push_back(resize_bilinear(p, width, height));
  Frame out(std::move(planes));
  out.pixel_pitch_um = frame.pixel_pitch_um;
  return out;
}

void clamp_unit(Plane& plane) {
  for (float& v : plane.values()) v = std::clamp(v, 0.f, 1.f);
}

}  // namespace capnet
