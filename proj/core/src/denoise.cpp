#include <algorithm>
#include <cmath>

#include "capnet/error.hpp"
#include "capnet/imgproc.hpp"

namespace capnet::imgproc {

namespace {

// D65 reference white.
constexpr double kXn = 0.95047;
constexpr double kYn = 1.0;
constexpr double kZn = 1.08883;

double srgb_to_linear(double v) { return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4); }
double linear_to_srgb(double v) { return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055; }

double lab_f(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
}
double lab_f_inv(double t) {
  constexpr double d = 6.0 / 29.0;
  return t > d ? t * t * t : 3.0 * d * d * (t - 4.0 / 29.0);
}

}  // namespace

LabPlanes rgb_to_lab(const Frame& rgb) {
  if (!rgb.is_rgb()) throw ParameterError("rgb_to_lab: expected an RGB frame");
  const int w = rgb.width();
  const int h = rgb.height();
  LabPlanes lab{Plane(w, h), Plane(w, h), Plane(w, h)};
  auto r = rgb.plane(0).values();
  auto g = rgb.plane(1).values();
  auto b = rgb.plane(2).values();
  for (std::size_t i = 0; i < r.size(); ++i) {
    const double rl = srgb_to_linear(r[i]);
    const double gl = srgb_to_linear(g[i]);
    const double bl = srgb_to_linear(b[i]);
    const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    const double fx = lab_f(x / kXn);
    const double fy = lab_f(y / kYn);
    const double fz = lab_f(z / kZn);
    lab.L.values()[i] = static_cast<float>(116.0 * fy - 16.0);
    lab.A.values()[i] = static_cast<float>(500.0 * (fx - fy));
    lab.B.values()[i] = static_cast<float>(200.0 * (fy - fz));
  }
  return lab;
}

Frame lab_to_rgb(const LabPlanes& lab) {
  const int w = lab.L.width();
  const int h = lab.L.height();
  Frame out(w, h, 3);
  auto L = lab.L.values();
  auto A = lab.A.values();
  auto B = lab.B.values();
  for (std::size_t i = 0; i < L.size(); ++i) {
    const double fy = (L[i] + 16.0) / 116.0;
    const double fx = fy + A[i] / 500.0;
    const double fz = fy - B[i] / 200.0;
    const double x = kXn * lab_f_inv(fx);
    const double y = kYn * lab_f_inv(fy);
    const double z = kZn * lab_f_inv(fz);
    const double rl = 3.2404542 * x - 1.5371385 * y - 0.4985314 * z;
    const double gl = -0.9692660 * x + 1.8760108 * y + 0.0415560 * z;
    const double bl = 0.0556434 * x - 0.2040259 * y + 1.0572252 * z;
    out.plane(0).values()[i] = static_cast<float>(std::clamp(linear_to_srgb(rl), 0.0, 1.0));
    out.plane(1).values()[i] = static_cast<float>(std::clamp(linear_to_srgb(gl), 0.0, 1.0));
    out.plane(2).values()[i] = static_cast<float>(std::clamp(linear_to_srgb(bl), 0.0, 1.0));
  }
  return out;
}

std::vector<Plane> nlm_joint(const std::vector<Plane>& planes, double h, int patch, int search) {
  if (planes.empty()) return {};
  if (patch <= 0 || patch % 2 == 0 || search <= 0 || search % 2 == 0) {
    throw ParameterError("nlm: patch and search must be positive odd sizes");
  }
  if (patch > search) throw ParameterError("nlm: patch larger than search window");
  if (!(h > 0.0)) throw ParameterError("nlm: strength h must be positive");
  for (const auto& p : planes) {
    if (!p.same_shape(planes.front())) throw ParameterError("nlm: planes differ in size");
  }

  const int w = planes.front().width();
  const int ht = planes.front().height();
  const int pr = patch / 2;
  const int sr = search / 2;
  const int pad = pr + sr;
  const int pw = w + 2 * pad;
  const int ph = ht + 2 * pad;
  const auto g = gaussian_kernel(patch, default_sigma(patch));
  const double inv_h2 = 1.0 / (h * h);
  const double inv_planes = 1.0 / static_cast<double>(planes.size());

  // Clamp-padded copies so every patch read below is in range.
  std::vector<Grid<double>> padded;
  for (const auto& p : planes) {
    Grid<double> q(pw, ph);
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) q(x, y) = p.clamped(x - pad, y - pad);
    padded.push_back(std::move(q));
  }

  // Distance image over the image extended by the patch radius.
  const int dw = w + 2 * pr;
  const int dh = ht + 2 * pr;
  Grid<double> dist(dw, dh);
  Grid<double> horiz(w, dh);
  Grid<double> weight_sum(w, ht);
  std::vector<Grid<double>> value_sum(planes.size(), Grid<double>(w, ht));

  for (int oy = -sr; oy <= sr; ++oy) {
    for (int ox = -sr; ox <= sr; ++ox) {
      for (int y = 0; y < dh; ++y) {
        const int py = y - pr + pad;
        for (int x = 0; x < dw; ++x) {
          const int px = x - pr + pad;
          double d = 0.0;
          for (const auto& q : padded) {
            const double diff = q(px, py) - q(px + ox, py + oy);
            d += diff * diff;
          }
          dist(x, y) = d * inv_planes;
        }
      }
      for (int y = 0; y < dh; ++y) {
        for (int x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int k = 0; k < patch; ++k) acc += g[static_cast<std::size_t>(k)] * dist(x + k, y);
          horiz(x, y) = acc;
        }
      }
      for (int y = 0; y < ht; ++y) {
        for (int x = 0; x < w; ++x) {
          double d2 = 0.0;
          for (int k = 0; k < patch; ++k) d2 += g[static_cast<std::size_t>(k)] * horiz(x, y + k);
          const double wgt = std::exp(-d2 * inv_h2);
          weight_sum(x, y) += wgt;
          for (std::size_t c = 0; c < planes.size(); ++c) {
            value_sum[c](x, y) += wgt * padded[c](x + pad + ox, y + pad + oy);
          }
        }
      }
    }
  }

  std::vector<Plane> out;
  for (std::size_t c = 0; c < planes.size(); ++c) {
    Plane p(w, ht);
    for (int y = 0; y < ht; ++y)
      for (int x = 0; x < w; ++x) p(x, y) = static_cast<float>(value_sum[c](x, y) / weight_sum(x, y));
    out.push_back(std::move(p));
  }
  return out;
}

Plane nlm_plane(const Plane& plane, double h, int patch, int search) {
  return std::move(nlm_joint({plane}, h, patch, search).front());
}

Frame nlm_denoise(const Frame& frame, const NlmParams& params) {
  require_valid_frame(frame, "nlm_denoise", false);
  if (frame.is_gray()) {
    Plane p = nlm_plane(frame.plane(0), params.h, params.patch, params.search);
    clamp_unit(p);
    Frame out = gray_frame(std::move(p));
    out.pixel_pitch_um = frame.pixel_pitch_um;
    return out;
  }

  LabPlanes lab = rgb_to_lab(frame);
  auto scaled = [](const Plane& p, float s) {
    Plane q = p;
    for (float& v : q.values()) v *= s;
    return q;
  };
  // L/100 and AB/100 put all three planes on a unit-like scale so one h serves both.
  const Plane l = nlm_plane(scaled(lab.L, 0.01f), params.h, params.patch, params.search);
  const auto ab = nlm_joint({scaled(lab.A, 0.01f), scaled(lab.B, 0.01f)}, params.h, params.patch, params.search);
  Frame out = lab_to_rgb(LabPlanes{scaled(l, 100.f), scaled(ab[0], 100.f), scaled(ab[1], 100.f)});
  out.pixel_pitch_um = frame.pixel_pitch_um;
  return out;
}

}  // namespace capnet::imgproc
