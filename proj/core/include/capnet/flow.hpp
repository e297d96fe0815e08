#pragma once

#include <span>
#include <vector>

#include "capnet/image.hpp"
#include "capnet/roi.hpp"

namespace capnet::flow {

/// Per-pixel quadratic model f(p) ~ p'Ap + b'p + c in coordinates local to the pixel.
struct PolyExpansion {
  Grid<double> c;
  Grid<double> b1;   ///< x
  Grid<double> b2;   ///< y
  Grid<double> a11;  ///< x^2
  Grid<double> a22;  ///< y^2
  Grid<double> a12;  ///< off-diagonal, half the xy coefficient

  int width() const noexcept { return c.width(); }
  int height() const noexcept { return c.height(); }
};

/// Weighted least-squares fit of {1, x, y, x^2, y^2, xy} over a poly_n x poly_n window
/// with Gaussian weights (poly_sigma), clamp-to-edge borders.
PolyExpansion poly_expand(const Plane& plane, int poly_n, double poly_sigma);
PolyExpansion poly_expand(const Frame& frame, int poly_n, double poly_sigma);

struct FlowParams {
  int levels = 2;
  double pyramid_scale = 0.9;
  int window = 10;
  int iterations = 10;
  int poly_n = 5;
  double poly_sigma = 1.2;
  int min_level_size = 32;
};

void validate(const FlowParams& params);

struct FlowField {
  Grid<double> dx;
  Grid<double> dy;

  int width() const noexcept { return dx.width(); }
  int height() const noexcept { return dx.height(); }
};

/// Dense displacement prev -> next in pixels/frame. RGB inputs are reduced to luma.
FlowField farneback_flow(const Frame& prev, const Frame& next, const FlowParams& params = {});
FlowField farneback_flow(const Plane& prev, const Plane& next, const FlowParams& params = {});

struct PolarFlow {
  Grid<double> magnitude;
  Grid<double> angle;  ///< radians in [0, 2 pi), image coordinates (y down)

  int width() const noexcept { return magnitude.width(); }
  int height() const noexcept { return magnitude.height(); }
};

PolarFlow to_polar(const FlowField& flow);
FlowField from_polar(const PolarFlow& polar);

using Polyline = std::vector<roi::Point>;

/// Pixels of a polyline, Bresenham per segment, shared vertices listed once.
std::vector<roi::Point> rasterize(const Polyline& line);

/// result[line][frame] = mean magnitude over the line's pixels in that frame.
std::vector<std::vector<double>> probe_lines(std::span<const PolarFlow> flows, std::span<const Polyline> lines);

}  // namespace capnet::flow
