#include <algorithm>
#include <vector>

#include "capnet/error.hpp"
#include "capnet/imgproc.hpp"

namespace capnet::imgproc {

namespace {

constexpr double kC1 = (0.01 * 1.0) * (0.01 * 1.0);
constexpr double kC2 = (0.03 * 1.0) * (0.03 * 1.0);

// Window mean with clamp-to-edge addressing, computed as horizontal then vertical running sums.
Grid<double> window_mean(const Grid<double>& src, int r) {
  const int w = src.width();
  const int h = src.height();
  const double norm = 1.0 / ((2 * r + 1) * (2 * r + 1));
  Grid<double> tmp(w, h);
  for (int y = 0; y < h; ++y) {
    double acc = 0.0;
    for (int k = -r; k <= r; ++k) acc += src(std::clamp(k, 0, w - 1), y);
    tmp(0, y) = acc;
    for (int x = 1; x < w; ++x) {
      acc += src(std::min(x + r, w - 1), y) - src(std::max(x - r - 1, 0), y);
      tmp(x, y) = acc;
    }
  }
  Grid<double> out(w, h);
  std::vector<double> acc(static_cast<std::size_t>(w), 0.0);
  for (int k = -r; k <= r; ++k) {
    const double* in = &tmp(0, std::clamp(k, 0, h - 1));
    for (int x = 0; x < w; ++x) acc[static_cast<std::size_t>(x)] += in[x];
  }
  for (int y = 0; y < h; ++y) {
    if (y > 0) {
      const double* add = &tmp(0, std::min(y + r, h - 1));
      const double* sub = &tmp(0, std::max(y - r - 1, 0));
      for (int x = 0; x < w; ++x) acc[static_cast<std::size_t>(x)] += add[x] - sub[x];
    }
    double* o = &out(0, y);
    for (int x = 0; x < w; ++x) o[x] = acc[static_cast<std::size_t>(x)] * norm;
  }
  return out;
}

}  // namespace

SsimResult ssim(const Plane& reference, const Plane& test, int window) {
  if (!reference.same_shape(test)) throw ParameterError("ssim: dimension mismatch");
  if (window <= 0 || window % 2 == 0) throw ParameterError("ssim: window must be a positive odd size");
  if (reference.empty()) throw ParameterError("ssim: empty image");

  const int w = reference.width();
  const int h = reference.height();
  Grid<double> x(w, h), y(w, h), xx(w, h), yy(w, h), xy(w, h);
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double a = reference.values()[i];
    const double b = test.values()[i];
    x.values()[i] = a;
    y.values()[i] = b;
    xx.values()[i] = a * a;
    yy.values()[i] = b * b;
    xy.values()[i] = a * b;
  }
  const int r = window / 2;
  const auto mx = window_mean(x, r);
  const auto my = window_mean(y, r);
  const auto mxx = window_mean(xx, r);
  const auto myy = window_mean(yy, r);
  const auto mxy = window_mean(xy, r);

  SsimResult result{0.0, Grid<double>(w, h)};
  double total = 0.0;
  for (std::size_t i = 0; i < result.map.size(); ++i) {
    const double ux = mx.values()[i];
    const double uy = my.values()[i];
    const double vx = mxx.values()[i] - ux * ux;
    const double vy = myy.values()[i] - uy * uy;
    const double cxy = mxy.values()[i] - ux * uy;
    const double s = ((2.0 * ux * uy + kC1) * (2.0 * cxy + kC2)) / ((ux * ux + uy * uy + kC1) * (vx + vy + kC2));
    result.map.values()[i] = s;
    total += s;
  }
  result.mean = total / static_cast<double>(result.map.size());
  return result;
}

SsimResult ssim(const Frame& reference, const Frame& test, int window) {
  if (reference.width() != test.width() || reference.height() != test.height()) {
    throw ParameterError("ssim: dimension mismatch");
  }
  return ssim(to_luma(reference), to_luma(test), window);
}

}  // namespace capnet::imgproc
