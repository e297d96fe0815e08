#include "capnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "capnet/error.hpp"
#include "capnet/imgproc.hpp"
#include "capnet/rng.hpp"

namespace capnet::synth {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kTexLength = 2048;
constexpr double kTexAmplitude = 0.35;
constexpr double kPlasmaShade = 0.97;

const Color kTubeColor{0.60, 0.15, 0.15};
const Color kHairColor{0.22, 0.16, 0.13};
const Color kStainColor{0.50, 0.42, 0.38};

double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
Vec2 sub(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
double norm(Vec2 a) { return std::hypot(a.x, a.y); }

double path_length(const std::vector<Vec2>& path) {
  double l = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) l += norm(sub(path[i], path[i - 1]));
  return l;
}

struct Projection {
  double dist = std::numeric_limits<double>::infinity();
  double s = 0.0;  // arc length
  double u = 0.0;  // signed offset
};

// Nearest point on the polyline; the end segments are extended so tube ends are flat.
Projection project(const std::vector<Vec2>& path, Vec2 p) {
  Projection best;
  double cum = 0.0;
  const std::size_t nseg = path.size() - 1;
  for (std::size_t i = 0; i < nseg; ++i) {
    const Vec2 a = path[i];
    const Vec2 seg = sub(path[i + 1], a);
    const double l = norm(seg);
    if (l <= 0.0) continue;
    const Vec2 d{seg.x / l, seg.y / l};
    const Vec2 ap = sub(p, a);
    const double t = dot(ap, d);
    const double lo = i == 0 ? -std::numeric_limits<double>::infinity() : 0.0;
    const double hi = i + 1 == nseg ? std::numeric_limits<double>::infinity() : l;
    const double tc = std::clamp(t, lo, hi);
    const double dist = std::hypot(ap.x - tc * d.x, ap.y - tc * d.y);
    if (dist < best.dist) best = {dist, cum + tc, cross(d, ap)};
    cum += l;
  }
  return best;
}

Rect path_bounds(const std::vector<Vec2>& path, double margin, int w, int h) {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& p : path) {
    x0 = std::min(x0, p.x);
    y0 = std::min(y0, p.y);
    x1 = std::max(x1, p.x);
    y1 = std::max(y1, p.y);
  }
  const int ix0 = static_cast<int>(std::floor(x0 - margin));
  const int iy0 = static_cast<int>(std::floor(y0 - margin));
  const int ix1 = static_cast<int>(std::ceil(x1 + margin));
  const int iy1 = static_cast<int>(std::ceil(y1 + margin));
  return clip({ix0, iy0, ix1 - ix0 + 1, iy1 - iy0 + 1}, w, h);
}

double wrap(double v, double period) {
  double r = std::fmod(v, period);
  if (r < 0.0) r += period;
  return r;
}

struct TubeGeom {
  Rect area;
  std::vector<float> s, u, cov;
  Plane tex;
  double length = 0.0;
  double width = 0.0;
  double gap = 0.0;
  double period = 0.0;
  double phase = 0.0;
  std::vector<double> offset;  // per frame
  Color color;

  // 1 inside a red-cell segment, 0 inside a plasma gap, 1 px ramps between.
  double fill_at(double s_local) const {
    if (gap <= 0.0) return 1.0;
    if (gap >= 1.0) return 0.0;
    const double phi = wrap(s_local + phase, period);
    const double seg = (1.0 - gap) * period;
    const double d = phi < seg ? std::min(phi, seg - phi) : -std::min(phi - seg, period - phi);
    return std::clamp(0.5 + d, 0.0, 1.0);
  }

  double texture_at(double s_local, double u_local) const {
    const double x = wrap(s_local + kTexLength / 2.0, kTexLength);
    const double y = u_local + tex.height() / 2.0;
    return sample_bilinear(tex, x, y);
  }
};

void blend(std::array<Plane, 3>& img, int x, int y, const Color& c, double alpha) {
  const double cc[3] = {c.r, c.g, c.b};
  for (int k = 0; k < 3; ++k) {
    float& v = img[static_cast<std::size_t>(k)](x, y);
    v = static_cast<float>(v * (1.0 - alpha) + cc[k] * alpha);
  }
}

Color jitter(const Color& c, Rng& rng, double amount) {
  return {std::clamp(c.r + rng.uniform(-amount, amount), 0.0, 1.0),
          std::clamp(c.g + rng.uniform(-amount, amount), 0.0, 1.0),
          std::clamp(c.b + rng.uniform(-amount, amount), 0.0, 1.0)};
}

// Smooth unit-variance noise field by bilinear upsampling of a coarse lattice.
Plane smooth_noise(int w, int h, int cell, Rng& rng) {
  const int gw = w / cell + 2;
  const int gh = h / cell + 2;
  Plane lattice(gw, gh);
  for (float& v : lattice.values()) v = static_cast<float>(rng.normal());
  Plane out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(x, y) = sample_bilinear(lattice, static_cast<double>(x) / cell, static_cast<double>(y) / cell);
  return out;
}

}  // namespace

void validate(const SceneSpec& spec) {
  if (spec.width < 16 || spec.height < 16) throw ParameterError("synth: frame must be at least 16x16");
  if (spec.frames < 1) throw ParameterError("synth: at least one frame");
  if (!(spec.fps > 0.0)) throw ParameterError("synth: fps must be positive");
  if (spec.noise_sigma < 0.0) throw ParameterError("synth: negative noise");
  if (spec.artifacts.hair < 0 || spec.artifacts.stains < 0) throw ParameterError("synth: negative artifact count");
  for (const auto& t : spec.tubes) {
    if (t.path.size() < 2 || path_length(t.path) <= 0.0) throw ParameterError("synth: tube path needs length");
    if (!(t.width > 0.0)) throw ParameterError("synth: tube width must be positive");
    if (t.speed < 0.0) throw ParameterError("synth: negative tube speed");
    for (double v : t.speed_pattern)
      if (v < 0.0) throw ParameterError("synth: negative tube speed");
    if (t.direction != 1 && t.direction != -1) throw ParameterError("synth: direction must be +1 or -1");
    if (!(t.gap_fraction >= 0.0 && t.gap_fraction <= 1.0)) throw ParameterError("synth: gap_fraction outside [0,1]");
    if (t.gap_period < 0.0) throw ParameterError("synth: negative gap period");
    for (const auto& p : t.path) {
      if (p.x < 0.0 || p.y < 0.0 || p.x > spec.width - 1 || p.y > spec.height - 1) {
        throw ParameterError("synth: tube outside frame");
      }
    }
  }
  for (const auto& f : spec.focus) {
    if (!(f.sigma > 0.0) || f.rect.empty()) throw ParameterError("synth: invalid focus region");
  }
}

double GroundTruth::mean_density() const {
  if (visible.empty() || width <= 0 || height <= 0) return 0.0;
  double acc = 0.0;
  for (const auto& v : visible) {
    std::size_t n = 0;
    for (auto p : v.values()) n += p != 0 ? 1 : 0;
    acc += static_cast<double>(n) / (static_cast<double>(width) * height);
  }
  return acc / static_cast<double>(visible.size());
}

struct Renderer::Impl {
  SceneSpec spec;
  GroundTruth truth;
  std::array<Plane, 3> base;
  std::vector<TubeGeom> tubes;

  explicit Impl(SceneSpec s) : spec(std::move(s)) {
    validate(spec);
    const int w = spec.width;
    const int h = spec.height;
    Rng rng(derive_seed(spec.seed, 1));

    // Skin: base colour, low-frequency texture, vignette.
    const Plane tex = smooth_noise(w, h, 12, rng);
    const Color bc = spec.background.base;
    const double cc[3] = {bc.r, bc.g, bc.b};
    const double cx = (w - 1) / 2.0;
    const double cy = (h - 1) / 2.0;
    const double rmax2 = cx * cx + cy * cy;
    for (int k = 0; k < 3; ++k) base[static_cast<std::size_t>(k)] = Plane(w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / rmax2;
        const double m = (1.0 + spec.background.texture_amplitude * tex(x, y)) * (1.0 - spec.background.vignette * r2);
        for (int k = 0; k < 3; ++k) base[static_cast<std::size_t>(k)](x, y) = static_cast<float>(cc[k] * m);
      }
    }

    truth.width = w;
    truth.height = h;
    truth.frames = spec.frames;
    truth.lumen = Grid<std::uint8_t>(w, h);
    build_tubes();
    place_artifacts(rng);
    build_truth();
  }

  void build_tubes() {
    const int w = spec.width;
    const int h = spec.height;
    for (std::size_t i = 0; i < spec.tubes.size(); ++i) {
      const TubeSpec& ts = spec.tubes[i];
      Rng rng(derive_seed(spec.seed, 100 + i));
      TubeGeom g;
      g.length = path_length(ts.path);
      g.width = ts.width;
      g.color = jitter(kTubeColor, rng, 0.04);
      g.area = path_bounds(ts.path, ts.width / 2.0 + 2.0, w, h);
      const std::size_t n = static_cast<std::size_t>(g.area.area());
      g.s.resize(n);
      g.u.resize(n);
      g.cov.resize(n);
      std::size_t idx = 0;
      for (int y = g.area.y; y < g.area.bottom(); ++y) {
        for (int x = g.area.x; x < g.area.right(); ++x, ++idx) {
          const Projection p = project(ts.path, {static_cast<double>(x), static_cast<double>(y)});
          const double cw = std::clamp(ts.width / 2.0 + 0.5 - p.dist, 0.0, 1.0);
          const double cs = std::clamp(p.s + 0.5, 0.0, 1.0) * std::clamp(g.length - p.s + 0.5, 0.0, 1.0);
          g.s[idx] = static_cast<float>(p.s);
          g.u[idx] = static_cast<float>(p.u);
          g.cov[idx] = static_cast<float>(cw * cs);
          if (cw * cs >= 0.5) truth.lumen(x, y) = static_cast<std::uint8_t>(i + 1);
        }
      }

      // Red-cell texture in tube coordinates.
      Plane t(kTexLength, static_cast<int>(std::ceil(ts.width)) + 6);
      for (float& v : t.values()) v = static_cast<float>(rng.normal());
      t = imgproc::gaussian_blur(t, 9, 1.3);
      double var = 0.0;
      for (float v : t.values()) var += static_cast<double>(v) * v;
      const double sd = std::sqrt(var / static_cast<double>(t.size()));
      for (float& v : t.values()) v = static_cast<float>(std::clamp(v / sd, -2.5, 2.5));
      g.tex = std::move(t);

      // Cumulative drift per frame.
      g.offset.resize(static_cast<std::size_t>(spec.frames));
      double cum = 0.0;
      double max_step = 0.0;
      for (int f = 0; f < spec.frames; ++f) {
        g.offset[static_cast<std::size_t>(f)] = ts.direction * cum;
        const double v = ts.speed_pattern.empty() ? ts.speed : ts.speed_pattern[static_cast<std::size_t>(f) % ts.speed_pattern.size()];
        cum += v;
        max_step = std::max(max_step, v);
      }

      g.gap = ts.gap_fraction;
      if (g.gap > 0.0 && g.gap < 1.0) {
        if (ts.gap_period > 0.0) {
          g.period = ts.gap_period;
        } else {
          // Whole periods over the video so every phase is visited equally; the red-cell
          // segment outlasts the tube so some frames show it completely filled.
          const double min_period = (g.length + 2.0 * max_step + 4.0) / (1.0 - g.gap);
          const double drift = cum;
          const double k = std::floor(drift / min_period);
          g.period = k >= 1.0 ? drift / k : min_period;
        }
        Rng prng(ts.gap_seed);
        g.phase = prng.uniform(0.0, g.period);
      }
      tubes.push_back(std::move(g));
    }
  }

  bool near_tube(int x, int y, int margin) const {
    for (const auto& t : tubes) {
      const Rect r = pad_clip(t.area, margin, spec.width, spec.height);
      if (r.contains(x, y)) return true;
    }
    return false;
  }

  void place_artifacts(Rng& rng) {
    const int w = spec.width;
    const int h = spec.height;
    for (int k = 0; k < spec.artifacts.hair; ++k) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        const double len = rng.uniform(150.0, 300.0);
        double ang = rng.uniform(25.0, 65.0) * kPi / 180.0;
        if (rng.uniform() < 0.5) ang = kPi - ang;
        if (rng.uniform() < 0.5) ang += kPi;
        std::vector<Vec2> path{{rng.uniform(0.0, w - 1.0), rng.uniform(0.0, h - 1.0)}};
        const int steps = static_cast<int>(len / 10.0);
        for (int i = 0; i < steps; ++i) {
          ang += rng.uniform(-0.06, 0.06);
          path.push_back({path.back().x + 10.0 * std::cos(ang), path.back().y + 10.0 * std::sin(ang)});
        }
        const double hw = rng.uniform(1.5, 2.5);
        bool clash = false;
        for (std::size_t i = 1; i < path.size() && !clash; ++i) {
          for (double f = 0.0; f < 1.0; f += 0.1) {
            const int px = static_cast<int>(std::lround(path[i - 1].x + f * (path[i].x - path[i - 1].x)));
            const int py = static_cast<int>(std::lround(path[i - 1].y + f * (path[i].y - path[i - 1].y)));
            if (near_tube(px, py, 12)) {
              clash = true;
              break;
            }
          }
        }
        if (clash) continue;
        const Rect area = path_bounds(path, hw + 2.0, w, h);
        if (area.empty()) continue;
        int x0 = w, y0 = h, x1 = -1, y1 = -1;
        for (int y = area.y; y < area.bottom(); ++y) {
          for (int x = area.x; x < area.right(); ++x) {
            const Projection p = project(path, {static_cast<double>(x), static_cast<double>(y)});
            const double l = path_length(path);
            const double cov = std::clamp(hw / 2.0 + 0.5 - p.dist, 0.0, 1.0) * std::clamp(p.s + 0.5, 0.0, 1.0) *
                               std::clamp(l - p.s + 0.5, 0.0, 1.0);
            if (cov <= 0.0) continue;
            blend(base, x, y, kHairColor, 0.9 * cov);
            if (cov >= 0.5) {
              x0 = std::min(x0, x);
              y0 = std::min(y0, y);
              x1 = std::max(x1, x);
              y1 = std::max(y1, y);
            }
          }
        }
        if (x1 >= x0) truth.hair_boxes.push_back({x0, y0, x1 - x0 + 1, y1 - y0 + 1});
        break;
      }
    }
    for (int k = 0; k < spec.artifacts.stains; ++k) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        const double rx = rng.uniform(5.0, 12.0);
        const double ry = rng.uniform(5.0, 12.0);
        const double rot = rng.uniform(0.0, kPi);
        const double lobes = static_cast<double>(rng.uniform_int(3, 6));
        const double lobe_phase = rng.uniform(0.0, 2.0 * kPi);
        const double alpha = rng.uniform(0.55, 0.8);
        const Color col = jitter(kStainColor, rng, 0.05);
        const double r = std::max(rx, ry) * 1.2 + 2.0;
        const double cx = rng.uniform(r, w - 1.0 - r);
        const double cy = rng.uniform(r, h - 1.0 - r);
        if (near_tube(static_cast<int>(cx), static_cast<int>(cy), static_cast<int>(r) + 10)) continue;
        const Rect area = clip({static_cast<int>(cx - r), static_cast<int>(cy - r), static_cast<int>(2 * r) + 2,
                                static_cast<int>(2 * r) + 2}, w, h);
        int x0 = w, y0 = h, x1 = -1, y1 = -1;
        for (int y = area.y; y < area.bottom(); ++y) {
          for (int x = area.x; x < area.right(); ++x) {
            const double dx = x - cx;
            const double dy = y - cy;
            const double lx = dx * std::cos(rot) + dy * std::sin(rot);
            const double ly = -dx * std::sin(rot) + dy * std::cos(rot);
            const double rho = std::hypot(lx / rx, ly / ry);
            const double edge = 1.0 + 0.15 * std::sin(lobes * std::atan2(ly, lx) + lobe_phase);
            const double a = alpha * std::clamp((edge - rho) * std::min(rx, ry) + 0.5, 0.0, 1.0);
            if (a <= 0.0) continue;
            blend(base, x, y, col, a);
            if (a >= 0.25 * alpha) {
              x0 = std::min(x0, x);
              y0 = std::min(y0, y);
              x1 = std::max(x1, x);
              y1 = std::max(y1, y);
            }
          }
        }
        if (x1 >= x0) truth.stain_boxes.push_back({x0, y0, x1 - x0 + 1, y1 - y0 + 1});
        break;
      }
    }
  }

  void build_truth() {
    const int w = spec.width;
    const int h = spec.height;
    for (std::size_t i = 0; i < spec.tubes.size(); ++i) {
      const TubeSpec& ts = spec.tubes[i];
      const TubeGeom& g = tubes[i];
      TubeTruth tt;
      tt.length = g.length;
      for (int f = 0; f + 1 < spec.frames; ++f) {
        tt.speeds.push_back(ts.speed_pattern.empty() ? ts.speed
                                                     : ts.speed_pattern[static_cast<std::size_t>(f) % ts.speed_pattern.size()]);
      }
      double acc = 0.0;
      for (double v : tt.speeds) acc += v;
      tt.mean_speed = tt.speeds.empty() ? (ts.speed_pattern.empty() ? ts.speed : ts.speed_pattern.front())
                                        : acc / static_cast<double>(tt.speeds.size());
      Vec2 d{0.0, 0.0};
      for (std::size_t k = 1; k < ts.path.size(); ++k) {
        const Vec2 seg = sub(ts.path[k], ts.path[k - 1]);
        d.x += seg.x;
        d.y += seg.y;
      }
      double ang = std::atan2(ts.direction * d.y, ts.direction * d.x);
      if (ang < 0.0) ang += 2.0 * kPi;
      tt.direction = ang;
      int x0 = w, y0 = h, x1 = -1, y1 = -1;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (truth.lumen(x, y) != i + 1) continue;
          ++tt.lumen_px;
          x0 = std::min(x0, x);
          y0 = std::min(y0, y);
          x1 = std::max(x1, x);
          y1 = std::max(y1, y);
        }
      }
      if (x1 >= x0) tt.box = {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
      truth.tubes.push_back(std::move(tt));
    }

    truth.visible.assign(static_cast<std::size_t>(spec.frames), Grid<std::uint8_t>(w, h));
    for (int f = 0; f < spec.frames; ++f) {
      auto& vis = truth.visible[static_cast<std::size_t>(f)];
      for (std::size_t i = 0; i < tubes.size(); ++i) {
        const TubeGeom& g = tubes[i];
        long long n = 0;
        std::size_t idx = 0;
        for (int y = g.area.y; y < g.area.bottom(); ++y) {
          for (int x = g.area.x; x < g.area.right(); ++x, ++idx) {
            if (truth.lumen(x, y) != i + 1) continue;
            if (g.fill_at(g.s[idx] - g.offset[static_cast<std::size_t>(f)]) >= 0.5) {
              vis(x, y) = static_cast<std::uint8_t>(i + 1);
              ++n;
            }
          }
        }
        auto& tt = truth.tubes[i];
        tt.fill.push_back(tt.lumen_px > 0 ? static_cast<double>(n) / static_cast<double>(tt.lumen_px) : 0.0);
      }
    }
  }

  Frame render(int t) const {
    if (t < 0 || t >= spec.frames) throw ParameterError("synth: frame index out of range");
    std::array<Plane, 3> img = base;
    for (const auto& g : tubes) {
      const double off = g.offset[static_cast<std::size_t>(t)];
      std::size_t idx = 0;
      for (int y = g.area.y; y < g.area.bottom(); ++y) {
        for (int x = g.area.x; x < g.area.right(); ++x, ++idx) {
          const double cov = g.cov[idx];
          if (cov <= 0.0) continue;
          const double sl = g.s[idx] - off;
          const double fill = g.fill_at(sl);
          const double m = 1.0 + kTexAmplitude * g.texture_at(sl, g.u[idx]);
          const double rbc[3] = {g.color.r * m, g.color.g * m, g.color.b * m};
          for (int k = 0; k < 3; ++k) {
            float& v = img[static_cast<std::size_t>(k)](x, y);
            const double plasma = v * kPlasmaShade;
            const double c = plasma + fill * (rbc[k] - plasma);
            v = static_cast<float>(v * (1.0 - cov) + c * cov);
          }
        }
      }
    }

    for (const auto& fr : spec.focus) {
      const Rect r = clip(fr.rect, spec.width, spec.height);
      if (r.empty()) continue;
      const int margin = static_cast<int>(std::ceil(3.0 * fr.sigma));
      const Rect outer = pad_clip(r, margin, spec.width, spec.height);
      const int window = 2 * margin + 1;
      for (auto& p : img) {
        const Plane blurred = imgproc::gaussian_blur(crop(p, outer), window, fr.sigma);
        for (int y = r.y; y < r.bottom(); ++y)
          for (int x = r.x; x < r.right(); ++x) p(x, y) = blurred(x - outer.x, y - outer.y);
      }
    }

    const double gain = 1.0 + spec.background.illumination_ramp * t;
    Rng noise(derive_seed(spec.seed, 0x10000u + static_cast<std::uint64_t>(t)));
    for (auto& p : img) {
      for (float& v : p.values()) {
        double x = v * gain;
        if (spec.noise_sigma > 0.0) x += noise.normal(0.0, spec.noise_sigma);
        v = static_cast<float>(std::clamp(x, 0.0, 1.0));
      }
    }
    Frame out(std::vector<Plane>(img.begin(), img.end()));
    out.pixel_pitch_um = spec.pixel_pitch_um;
    return out;
  }
};

Renderer::Renderer(SceneSpec spec) : impl_(std::make_unique<Impl>(std::move(spec))) {}
Renderer::~Renderer() = default;
Renderer::Renderer(Renderer&&) noexcept = default;
Renderer& Renderer::operator=(Renderer&&) noexcept = default;
const SceneSpec& Renderer::spec() const { return impl_->spec; }
const GroundTruth& Renderer::truth() const { return impl_->truth; }
Frame Renderer::frame(int t) const { return impl_->render(t); }

Video render_video(const SceneSpec& spec) {
  Renderer r(spec);
  Video v;
  v.frames.reserve(static_cast<std::size_t>(spec.frames));
  for (int t = 0; t < spec.frames; ++t) v.frames.push_back(r.frame(t));
  v.truth = r.truth();
  return v;
}

std::vector<Vec2> straight_path(Vec2 center, double length, double angle) {
  const double hx = 0.5 * length * std::cos(angle);
  const double hy = 0.5 * length * std::sin(angle);
  return {{center.x - hx, center.y - hy}, {center.x + hx, center.y + hy}};
}

SceneSpec random_scene(const SceneDistribution& dist, std::uint64_t seed) {
  if (dist.min_tubes < 0 || dist.max_tubes < dist.min_tubes) throw ParameterError("synth: invalid tube count range");
  Rng rng(derive_seed(seed, 7));
  SceneSpec s;
  s.width = dist.width;
  s.height = dist.height;
  s.frames = dist.frames;
  s.seed = derive_seed(seed, 8);
  s.noise_sigma = dist.noise_sigma;
  s.background.base = jitter(s.background.base, rng, 0.03);
  s.background.vignette = rng.uniform(0.05, 0.2);
  s.background.illumination_ramp = rng.uniform(-dist.max_illumination_ramp, dist.max_illumination_ramp);

  const int ntubes = rng.uniform_int(dist.min_tubes, dist.max_tubes);
  std::vector<Rect> taken;
  for (int i = 0; i < ntubes; ++i) {
    for (int attempt = 0; attempt < 500; ++attempt) {
      TubeSpec t;
      t.width = rng.uniform(dist.min_width, dist.max_width);
      const double len = rng.uniform(dist.min_length, dist.max_length);
      const double ang = rng.uniform(0.0, 2.0 * kPi);
      const double reach = len / 2.0 + t.width + 8.0;
      if (2.0 * reach >= std::min(s.width, s.height)) break;
      const Vec2 c{rng.uniform(reach, s.width - 1.0 - reach), rng.uniform(reach, s.height - 1.0 - reach)};
      if (rng.uniform() < 0.5) {
        const double bend = rng.uniform(-25.0, 25.0) * kPi / 180.0;
        const double a0 = ang - bend / 2.0;
        const double a1 = ang + bend / 2.0;
        const Vec2 mid = c;
        const Vec2 start{mid.x - 0.5 * len * std::cos(a0), mid.y - 0.5 * len * std::sin(a0)};
        const Vec2 end{mid.x + 0.5 * len * std::cos(a1), mid.y + 0.5 * len * std::sin(a1)};
        t.path = {start, mid, end};
      } else {
        t.path = straight_path(c, len, ang);
      }
      t.speed = rng.uniform(dist.min_speed, dist.max_speed);
      t.direction = rng.uniform() < 0.5 ? 1 : -1;
      t.gap_fraction = rng.uniform() < 0.5 ? rng.uniform(0.0, dist.max_gap_fraction) : 0.0;
      t.gap_seed = rng.next();
      const Rect box = path_bounds(t.path, t.width / 2.0 + 24.0, s.width, s.height);
      bool clash = false;
      for (const auto& r : taken) clash = clash || !intersect(r, box).empty();
      if (clash) continue;
      taken.push_back(box);
      s.tubes.push_back(std::move(t));
      break;
    }
  }
  s.artifacts.hair = rng.uniform_int(0, dist.max_hair);
  s.artifacts.stains = rng.uniform_int(0, dist.max_stains);
  if (dist.focus_fraction > 0.0) {
    const double area = dist.focus_fraction * s.width * s.height;
    const double aspect = rng.uniform(0.6, 1.6);
    const int fw = std::min(s.width, static_cast<int>(std::lround(std::sqrt(area * aspect))));
    const int fh = std::min(s.height, static_cast<int>(std::lround(area / fw)));
    const int fx = rng.uniform_int(0, s.width - fw);
    const int fy = rng.uniform_int(0, s.height - fh);
    s.focus.push_back({{fx, fy, fw, fh}, rng.uniform(1.5, 2.5)});
  }
  return s;
}

namespace {

std::optional<Rect> label_box(const Grid<std::uint8_t>& labels, std::uint8_t id) {
  int x0 = labels.width(), y0 = labels.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < labels.height(); ++y) {
    for (int x = 0; x < labels.width(); ++x) {
      if (labels(x, y) != id) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < x0) return std::nullopt;
  return Rect{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

// Mimics proposal-box variation: each side rescaled and the centre shifted a little.
Rect jitter_box(const Rect& b, Rng& rng, int w, int h, double amount) {
  const double bw = b.w * rng.uniform(1.0 - amount, 1.0 + amount);
  const double bh = b.h * rng.uniform(1.0 - amount, 1.0 + amount);
  const double cx = b.x + b.w / 2.0 + rng.uniform(-0.1, 0.1) * b.w;
  const double cy = b.y + b.h / 2.0 + rng.uniform(-0.1, 0.1) * b.h;
  Rect r{static_cast<int>(std::lround(cx - bw / 2.0)), static_cast<int>(std::lround(cy - bh / 2.0)),
         std::max(3, static_cast<int>(std::lround(bw))), std::max(3, static_cast<int>(std::lround(bh)))};
  return clip(r, w, h);
}

}  // namespace

std::vector<cnn::Patch> make_patch_dataset(const SceneDistribution& dist, int n, std::uint64_t seed) {
  if (n < 20) throw ParameterError("make_patch_dataset: n must be at least 20");
  const int want_pos = n / 2;
  const int want_neg = n - want_pos;
  std::vector<cnn::Patch> pos, neg;
  SceneDistribution small = dist;
  small.width = 192;
  small.height = 192;
  small.frames = 1;
  small.min_tubes = 1;
  small.max_tubes = 2;
  small.max_hair = std::max(1, dist.max_hair);
  small.max_stains = std::max(2, dist.max_stains);
  small.focus_fraction = 0.0;

  for (std::uint64_t k = 0; static_cast<int>(pos.size()) < want_pos || static_cast<int>(neg.size()) < want_neg; ++k) {
    Rng rng(derive_seed(seed, k));
    SceneSpec spec = random_scene(small, derive_seed(seed, 1000000 + k));
    spec.artifacts.stains = std::max(1, spec.artifacts.stains);
    if (rng.uniform() < 0.3) {
      const int fw = rng.uniform_int(spec.width / 2, spec.width);
      const int fh = rng.uniform_int(spec.height / 2, spec.height);
      spec.focus.push_back({{rng.uniform_int(0, spec.width - fw), rng.uniform_int(0, spec.height - fh), fw, fh},
                            rng.uniform(1.5, 2.5)});
    }
    spec.background.illumination_ramp = 0.0;
    const Renderer r(spec);
    Frame frame = r.frame(0);
    const double gain = rng.uniform(0.9, 1.1);
    for (auto& p : frame.planes())
      for (float& v : p.values()) v = std::clamp(v * static_cast<float>(gain), 0.f, 1.f);
    const auto& gt = r.truth();

    for (std::size_t i = 0; i < gt.tubes.size() && static_cast<int>(pos.size()) < want_pos; ++i) {
      const auto vb = label_box(gt.visible[0], static_cast<std::uint8_t>(i + 1));
      if (!vb || vb->area() < 40) continue;
      const Rect b = jitter_box(rng.uniform() < 0.5 ? *vb : gt.tubes[i].box, rng, spec.width, spec.height, 0.15);
      if (b.empty()) continue;
      auto p = cnn::extract_patch(frame, b, 0.10);
      p.label = cnn::Label::Capillary;
      pos.push_back(std::move(p));
    }

    for (int j = 0; j < 3 && static_cast<int>(neg.size()) < want_neg; ++j) {
      const double pick = rng.uniform();
      std::optional<Rect> box;
      if (pick < 0.4 && !gt.stain_boxes.empty()) {
        const Rect& s = gt.stain_boxes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(gt.stain_boxes.size()) - 1))];
        box = jitter_box(s, rng, spec.width, spec.height, 0.2);
      } else if (pick < 0.65 && !gt.hair_boxes.empty()) {
        // A piece of hair: a box centred on a hair pixel.
        const Rect& hb = gt.hair_boxes[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(gt.hair_boxes.size()) - 1))];
        for (int attempt = 0; attempt < 50 && !box; ++attempt) {
          const int x = rng.uniform_int(hb.x, hb.right() - 1);
          const int y = rng.uniform_int(hb.y, hb.bottom() - 1);
          const float luma = 0.299f * frame.at(0, x, y) + 0.587f * frame.at(1, x, y) + 0.114f * frame.at(2, x, y);
          if (luma > 0.35f) continue;
          const int bw = rng.uniform_int(16, 60);
          const int bh = rng.uniform_int(16, 60);
          box = clip({x - bw / 2, y - bh / 2, bw, bh}, spec.width, spec.height);
        }
      }
      if (!box) {
        for (int attempt = 0; attempt < 50 && !box; ++attempt) {
          const int bw = rng.uniform_int(14, 80);
          const int bh = rng.uniform_int(14, 80);
          const Rect cand{rng.uniform_int(0, spec.width - bw), rng.uniform_int(0, spec.height - bh), bw, bh};
          bool hits = false;
          for (const auto& t : gt.tubes) hits = hits || !intersect(pad_clip(t.box, 4, spec.width, spec.height), cand).empty();
          if (!hits) box = cand;
        }
      }
      if (!box || box->empty()) continue;
      bool hits_tube = false;
      for (const auto& t : gt.tubes) hits_tube = hits_tube || iou(t.box, *box) > 0.1;
      if (hits_tube) continue;
      auto p = cnn::extract_patch(frame, *box, 0.10);
      p.label = cnn::Label::NotCapillary;
      neg.push_back(std::move(p));
    }
  }

  std::vector<cnn::Patch> out;
  out.reserve(static_cast<std::size_t>(n));
  for (auto& p : pos) out.push_back(std::move(p));
  for (auto& p : neg) out.push_back(std::move(p));
  Rng shuffle_rng(derive_seed(seed, 0xabcdef));
  shuffle_rng.shuffle(out);
  return out;
}

}  // namespace capnet::synth
