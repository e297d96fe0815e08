#include "capnet/flow.hpp"

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <numbers>

#include "capnet/error.hpp"
#include "capnet/imgproc.hpp"

namespace capnet::flow {

namespace {

using DGrid = Grid<double>;

// Clamp-to-edge bilinear read.
double sample(const DGrid& g, double x, double y) {
  const int w = g.width();
  const int h = g.height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(x), w - 1);
  const int y0 = std::min(static_cast<int>(y), h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = g(x0, y0) + fx * (g(x1, y0) - g(x0, y0));
  const double bot = g(x0, y1) + fx * (g(x1, y1) - g(x0, y1));
  return top + fy * (bot - top);
}

// Mean over a (2r+1)^2 box, clamp-to-edge, running sums.
DGrid box_filter(const DGrid& src, int r) {
  const int w = src.width();
  const int h = src.height();
  const double norm = 1.0 / ((2.0 * r + 1) * (2.0 * r + 1));
  DGrid tmp(w, h);
  for (int y = 0; y < h; ++y) {
    double acc = 0.0;
    for (int k = -r; k <= r; ++k) acc += src.clamped(k, y);
    for (int x = 0; x < w; ++x) {
      tmp(x, y) = acc;
      acc += src.clamped(x + r + 1, y) - src.clamped(x - r, y);
    }
  }
  DGrid out(w, h);
  for (int x = 0; x < w; ++x) {
    double acc = 0.0;
    for (int k = -r; k <= r; ++k) acc += tmp.clamped(x, k);
    for (int y = 0; y < h; ++y) {
      out(x, y) = acc * norm;
      acc += tmp.clamped(x, y + r + 1) - tmp.clamped(x, y - r);
    }
  }
  return out;
}

// Edge attenuation of the displacement constraints.
constexpr std::array<double, 5> kBorder{0.14, 0.14, 0.4472, 0.4472, 0.4472};

double border_weight(int i, int n) {
  double s = 1.0;
  if (i < 5) s *= kBorder[static_cast<std::size_t>(i)];
  if (n - 1 - i < 5) s *= kBorder[static_cast<std::size_t>(n - 1 - i)];
  return s;
}

void scale(PolyExpansion& p, double k) {
  for (DGrid* g : {&p.c, &p.b1, &p.b2, &p.a11, &p.a22, &p.a12})
    for (double& v : g->values()) v *= k;
}

struct Matrices {
  DGrid g11, g12, g22, h1, h2;
};

Matrices update_matrices(const PolyExpansion& p0, const PolyExpansion& p1, const FlowField& f) {
  const int w = p0.width();
  const int h = p0.height();
  Matrices m{DGrid(w, h), DGrid(w, h), DGrid(w, h), DGrid(w, h), DGrid(w, h)};
  for (int y = 0; y < h; ++y) {
    const double wy = border_weight(y, h);
    for (int x = 0; x < w; ++x) {
      const double dx = f.dx(x, y);
      const double dy = f.dy(x, y);
      const double sx = x + dx;
      const double sy = y + dy;
      const double a11 = 0.5 * (p0.a11(x, y) + sample(p1.a11, sx, sy));
      const double a22 = 0.5 * (p0.a22(x, y) + sample(p1.a22, sx, sy));
      const double a12 = 0.5 * (p0.a12(x, y) + sample(p1.a12, sx, sy));
      const double bx = -0.5 * (sample(p1.b1, sx, sy) - p0.b1(x, y)) + a11 * dx + a12 * dy;
      const double by = -0.5 * (sample(p1.b2, sx, sy) - p0.b2(x, y)) + a12 * dx + a22 * dy;
      const double s = wy * border_weight(x, w);
      m.g11(x, y) = s * (a11 * a11 + a12 * a12);
      m.g12(x, y) = s * (a12 * (a11 + a22));
      m.g22(x, y) = s * (a12 * a12 + a22 * a22);
      m.h1(x, y) = s * (a11 * bx + a12 * by);
      m.h2(x, y) = s * (a12 * bx + a22 * by);
    }
  }
  return m;
}

void solve(const Matrices& m, int radius, double limit, FlowField& f) {
  const DGrid g11 = box_filter(m.g11, radius);
  const DGrid g12 = box_filter(m.g12, radius);
  const DGrid g22 = box_filter(m.g22, radius);
  const DGrid h1 = box_filter(m.h1, radius);
  const DGrid h2 = box_filter(m.h2, radius);
  for (std::size_t i = 0; i < f.dx.size(); ++i) {
    const double a = g11.values()[i];
    const double b = g12.values()[i];
    const double c = g22.values()[i];
    const double u = h1.values()[i];
    const double v = h2.values()[i];
    const double idet = 1.0 / (a * c - b * b + 1e-4 * (a + c) * (a + c) + 1e-9);
    f.dx.values()[i] = std::clamp((c * u - b * v) * idet, -limit, limit);
    f.dy.values()[i] = std::clamp((a * v - b * u) * idet, -limit, limit);
  }
}

DGrid resize_grid(const DGrid& g, int w, int h) {
  DGrid out(w, h);
  const double sx = static_cast<double>(g.width()) / w;
  const double sy = static_cast<double>(g.height()) / h;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(x, y) = sample(g, (x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return out;
}

Plane pyramid_level(const Plane& src, double s) {
  if (s == 1.0) return src;
  const double sigma = (1.0 / s - 1.0) * 0.5;
  const int ks = std::max(3, static_cast<int>(std::lround(sigma * 5)) | 1);
  const Plane blurred = imgproc::gaussian_blur(src, ks, sigma);
  return resize_bilinear(blurred, static_cast<int>(std::lround(src.width() * s)),
                         static_cast<int>(std::lround(src.height() * s)));
}

}  // namespace

PolyExpansion poly_expand(const Plane& plane, int poly_n, double poly_sigma) {
  if (poly_n < 3 || poly_n % 2 == 0) throw ParameterError("poly_expand: poly_n must be odd and >= 3");
  if (!(poly_sigma > 0.0)) throw ParameterError("poly_expand: poly_sigma must be positive");
  if (plane.empty()) throw ParameterError("poly_expand: empty plane");
  const int r = poly_n / 2;
  std::vector<double> g(static_cast<std::size_t>(poly_n));
  for (int i = -r; i <= r; ++i) g[static_cast<std::size_t>(i + r)] = std::exp(-i * i / (2.0 * poly_sigma * poly_sigma));

  // Gram matrix of the basis {1, x, y, x^2, y^2, xy} under the window weights.
  Eigen::Matrix<double, 6, 6> gram = Eigen::Matrix<double, 6, 6>::Zero();
  for (int j = -r; j <= r; ++j) {
    for (int i = -r; i <= r; ++i) {
      const double wgt = g[static_cast<std::size_t>(i + r)] * g[static_cast<std::size_t>(j + r)];
      Eigen::Matrix<double, 6, 1> b;
      b << 1.0, i, j, i * i, j * j, i * j;
      gram += wgt * b * b.transpose();
    }
  }
  const Eigen::Matrix<double, 6, 6> ginv = gram.inverse();

  const int w = plane.width();
  const int h = plane.height();
  // Row pass: sums of g(i) f, g(i) i f, g(i) i^2 f along x.
  std::array<DGrid, 3> rows{DGrid(w, h), DGrid(w, h), DGrid(w, h)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double s0 = 0, s1 = 0, s2 = 0;
      for (int i = -r; i <= r; ++i) {
        const double v = g[static_cast<std::size_t>(i + r)] * plane.clamped(x + i, y);
        s0 += v;
        s1 += v * i;
        s2 += v * i * i;
      }
      rows[0](x, y) = s0;
      rows[1](x, y) = s1;
      rows[2](x, y) = s2;
    }
  }

  PolyExpansion p{DGrid(w, h), DGrid(w, h), DGrid(w, h), DGrid(w, h), DGrid(w, h), DGrid(w, h)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      Eigen::Matrix<double, 6, 1> m = Eigen::Matrix<double, 6, 1>::Zero();
      for (int j = -r; j <= r; ++j) {
        const double gj = g[static_cast<std::size_t>(j + r)];
        const int yy = std::clamp(y + j, 0, h - 1);
        const double r0 = rows[0](x, yy);
        const double r1 = rows[1](x, yy);
        const double r2 = rows[2](x, yy);
        m[0] += gj * r0;
        m[1] += gj * r1;
        m[2] += gj * j * r0;
        m[3] += gj * r2;
        m[4] += gj * j * j * r0;
        m[5] += gj * j * r1;
      }
      const Eigen::Matrix<double, 6, 1> k = ginv * m;
      p.c(x, y) = k[0];
      p.b1(x, y) = k[1];
      p.b2(x, y) = k[2];
      p.a11(x, y) = k[3];
      p.a22(x, y) = k[4];
      p.a12(x, y) = 0.5 * k[5];
    }
  }
  return p;
}

PolyExpansion poly_expand(const Frame& frame, int poly_n, double poly_sigma) {
  if (!frame.is_gray()) throw ParameterError("poly_expand: grayscale frame required");
  return poly_expand(frame.plane(0), poly_n, poly_sigma);
}

void validate(const FlowParams& p) {
  if (p.levels < 1 || p.iterations < 1 || p.window < 1 || p.min_level_size < 1) {
    throw ParameterError("flow: levels, iterations, window must be >= 1");
  }
  if (!(p.pyramid_scale > 0.0 && p.pyramid_scale < 1.0)) throw ParameterError("flow: pyramid_scale must lie in (0,1)");
  if (p.poly_n < 3 || p.poly_n % 2 == 0) throw ParameterError("flow: poly_n must be odd and >= 3");
  if (!(p.poly_sigma > 0.0)) throw ParameterError("flow: poly_sigma must be positive");
}

FlowField farneback_flow(const Plane& prev, const Plane& next, const FlowParams& params) {
  validate(params);
  if (!prev.same_shape(next)) throw ParameterError("farneback_flow: frames differ in size");
  if (prev.empty()) throw ParameterError("farneback_flow: empty frames");
  const int w = prev.width();
  const int h = prev.height();

  int levels = 1;
  for (int k = 1; k < params.levels; ++k) {
    const double s = std::pow(params.pyramid_scale, k);
    if (w * s < params.min_level_size || h * s < params.min_level_size) break;
    levels = k + 1;
  }

  const double limit = 2.0 * params.window * params.levels;
  const int radius = params.window / 2;
  FlowField f;
  for (int k = levels - 1; k >= 0; --k) {
    const double s = std::pow(params.pyramid_scale, k);
    const Plane i0 = pyramid_level(prev, s);
    const Plane i1 = pyramid_level(next, s);
    const int lw = i0.width();
    const int lh = i0.height();
    if (f.dx.empty()) {
      f = {DGrid(lw, lh), DGrid(lw, lh)};
    } else {
      f.dx = resize_grid(f.dx, lw, lh);
      f.dy = resize_grid(f.dy, lw, lh);
      for (double& v : f.dx.values()) v /= params.pyramid_scale;
      for (double& v : f.dy.values()) v /= params.pyramid_scale;
    }
    PolyExpansion p0 = poly_expand(i0, params.poly_n, params.poly_sigma);
    PolyExpansion p1 = poly_expand(i1, params.poly_n, params.poly_sigma);
    scale(p0, 255.0);
    scale(p1, 255.0);
    Matrices m = update_matrices(p0, p1, f);
    for (int it = 0; it < params.iterations; ++it) {
      solve(m, radius, limit, f);
      if (it + 1 < params.iterations) m = update_matrices(p0, p1, f);
    }
  }
  return f;
}

FlowField farneback_flow(const Frame& prev, const Frame& next, const FlowParams& params) {
  if (prev.width() != next.width() || prev.height() != next.height()) {
    throw ParameterError("farneback_flow: frames differ in size");
  }
  return farneback_flow(to_luma(prev), to_luma(next), params);
}

PolarFlow to_polar(const FlowField& flow) {
  PolarFlow p{DGrid(flow.width(), flow.height()), DGrid(flow.width(), flow.height())};
  constexpr double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < flow.dx.size(); ++i) {
    const double dx = flow.dx.values()[i];
    const double dy = flow.dy.values()[i];
    double a = std::atan2(dy, dx);
    if (a < 0.0) a += two_pi;
    if (a >= two_pi || a == 0.0) a = 0.0;
    p.magnitude.values()[i] = std::hypot(dx, dy);
    p.angle.values()[i] = a;
  }
  return p;
}

FlowField from_polar(const PolarFlow& polar) {
  FlowField f{DGrid(polar.width(), polar.height()), DGrid(polar.width(), polar.height())};
  for (std::size_t i = 0; i < f.dx.size(); ++i) {
    const double m = polar.magnitude.values()[i];
    const double a = polar.angle.values()[i];
    f.dx.values()[i] = m * std::cos(a);
    f.dy.values()[i] = m * std::sin(a);
  }
  return f;
}

std::vector<roi::Point> rasterize(const Polyline& line) {
  std::vector<roi::Point> pts;
  if (line.size() == 1) pts.push_back(line.front());
  for (std::size_t s = 1; s < line.size(); ++s) {
    int x0 = line[s - 1].x, y0 = line[s - 1].y;
    const int x1 = line[s].x, y1 = line[s].y;
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      if (pts.empty() || !(pts.back() == roi::Point{x0, y0})) pts.push_back({x0, y0});
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  return pts;
}

std::vector<std::vector<double>> probe_lines(std::span<const PolarFlow> flows, std::span<const Polyline> lines) {
  std::vector<std::vector<double>> out(lines.size());
  if (flows.empty()) return out;
  const int w = flows.front().width();
  const int h = flows.front().height();
  for (const auto& f : flows) {
    if (f.width() != w || f.height() != h) throw ParameterError("probe_lines: flows differ in size");
  }
  for (std::size_t l = 0; l < lines.size(); ++l) {
    if (lines[l].empty()) throw ParameterError("probe_lines: empty polyline");
    const auto pts = rasterize(lines[l]);
    for (const auto& p : pts) {
      if (p.x < 0 || p.y < 0 || p.x >= w || p.y >= h) throw ParameterError("probe_lines: polyline outside frame");
    }
    for (const auto& f : flows) {
      double acc = 0.0;
      for (const auto& p : pts) acc += f.magnitude(p.x, p.y);
      out[l].push_back(acc / static_cast<double>(pts.size()));
    }
  }
  return out;
}

}  // namespace capnet::flow
