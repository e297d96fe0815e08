#include "capnet/imgproc.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "capnet/error.hpp"

namespace capnet::imgproc {

namespace {

void require_odd(int size, const char* what) {
  if (size <= 0 || size % 2 == 0) throw ParameterError(std::string(what) + " must be a positive odd size");
}

template <typename Fn>
Frame map_planes(const Frame& frame, Fn&& fn) {
  std::vector<Plane> planes;
  planes.reserve(static_cast<std::size_t>(frame.channels()));
  for (const auto& p : frame.planes()) planes.push_back(fn(p));
  Frame out(std::move(planes));
  out.pixel_pitch_um = frame.pixel_pitch_um;
  return out;
}

// Horizontal then vertical pass; the intermediate stays in double.
Plane separable_filter(const Plane& src, const std::vector<double>& kx, const std::vector<double>& ky) {
  const int w = src.width();
  const int h = src.height();
  const int rx = static_cast<int>(kx.size() / 2);
  const int ry = static_cast<int>(ky.size() / 2);
  Grid<double> tmp(w, h);
  std::vector<double> pad(static_cast<std::size_t>(w + 2 * rx));
  for (int y = 0; y < h; ++y) {
    auto in = src.row(y);
    for (int x = -rx; x < w + rx; ++x) pad[static_cast<std::size_t>(x + rx)] = in[static_cast<std::size_t>(std::clamp(x, 0, w - 1))];
    double* o = &tmp(0, y);
    std::fill(o, o + w, 0.0);
    for (int k = 0; k <= 2 * rx; ++k) {
      const double c = kx[static_cast<std::size_t>(k)];
      const double* p = pad.data() + k;
      for (int x = 0; x < w; ++x) o[x] += c * p[x];
    }
  }
  Plane out(w, h);
  std::vector<double> acc(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int k = -ry; k <= ry; ++k) {
      const double c = ky[static_cast<std::size_t>(k + ry)];
      auto in = tmp.row(std::clamp(y + k, 0, h - 1));
      for (int x = 0; x < w; ++x) acc[static_cast<std::size_t>(x)] += c * in[static_cast<std::size_t>(x)];
    }
    auto o = out.row(y);
    for (int x = 0; x < w; ++x) o[static_cast<std::size_t>(x)] = static_cast<float>(acc[static_cast<std::size_t>(x)]);
  }
  return out;
}

}  // namespace

namespace {

using Comparators = std::vector<std::pair<int, int>>;

// Batcher odd-even merge sort on n (a power of two) inputs, pruned to the comparators
// that can influence output `target` when inputs >= `used` hold +infinity.
Comparators median_network(int used, int n, int target) {
  Comparators all;
  for (int p = 1; p < n; p <<= 1)
    for (int k = p; k >= 1; k >>= 1)
      for (int j = k % p; j + k < n; j += 2 * k)
        for (int i = 0; i < std::min(k, n - j - k); ++i)
          if ((i + j) / (2 * p) == (i + j + k) / (2 * p)) all.emplace_back(i + j, i + j + k);

  std::vector<bool> inf(static_cast<std::size_t>(n));
  for (int i = used; i < n; ++i) inf[static_cast<std::size_t>(i)] = true;
  Comparators live;
  for (const auto& [a, b] : all) {
    if (inf[static_cast<std::size_t>(b)]) continue;  // max is already in place
    if (inf[static_cast<std::size_t>(a)]) {
      inf[static_cast<std::size_t>(a)] = false;
      inf[static_cast<std::size_t>(b)] = true;
    }
    live.emplace_back(a, b);
  }

  std::vector<bool> needed(static_cast<std::size_t>(n));
  needed[static_cast<std::size_t>(target)] = true;
  Comparators pruned;
  for (auto it = live.rbegin(); it != live.rend(); ++it) {
    if (!needed[static_cast<std::size_t>(it->first)] && !needed[static_cast<std::size_t>(it->second)]) continue;
    needed[static_cast<std::size_t>(it->first)] = true;
    needed[static_cast<std::size_t>(it->second)] = true;
    pruned.push_back(*it);
  }
  std::reverse(pruned.begin(), pruned.end());
  return pruned;
}

const Comparators& cached_network(int kernel) {
  static const std::array<Comparators, 4> nets{median_network(1, 1, 0), median_network(9, 16, 4),
                                               median_network(25, 32, 12), median_network(49, 64, 24)};
  return nets[static_cast<std::size_t>(kernel / 2)];
}

}  // namespace

Plane median_blur(const Plane& plane, int kernel) {
  require_odd(kernel, "median_blur kernel");
  if (kernel > std::min(plane.width(), plane.height())) throw ParameterError("median_blur: kernel larger than image");
  const int r = kernel / 2;
  const int w = plane.width();
  const int h = plane.height();
  const int n = kernel * kernel;
  Plane out(w, h);

  if (kernel <= 7) {
    // Column blocks through a sorting network: one min/max pair per comparator, vectorized over x.
    constexpr int B = 64;
    const auto& net = cached_network(kernel);
    std::vector<float> pad(static_cast<std::size_t>(kernel) * (w + 2 * r));
    alignas(64) float buf[49][B];
    for (int y = 0; y < h; ++y) {
      for (int dy = 0; dy < kernel; ++dy) {
        auto in = plane.row(std::clamp(y + dy - r, 0, h - 1));
        float* dst = pad.data() + static_cast<std::size_t>(dy) * (w + 2 * r);
        for (int x = -r; x < w + r; ++x) dst[x + r] = in[static_cast<std::size_t>(std::clamp(x, 0, w - 1))];
      }
      auto o = out.row(y);
      for (int x0 = 0; x0 < w; x0 += B) {
        const int len = std::min(B, w - x0);
        for (int dy = 0; dy < kernel; ++dy) {
          const float* src = pad.data() + static_cast<std::size_t>(dy) * (w + 2 * r) + x0;
          for (int dx = 0; dx < kernel; ++dx) {
            float* dst = buf[dy * kernel + dx];
            std::copy(src + dx, src + dx + len, dst);
            std::fill(dst + len, dst + B, 0.0f);
          }
        }
        for (const auto& [ia, ib] : net) {
          float* __restrict pa = buf[ia];
          float* __restrict pb = buf[ib];
          for (int x = 0; x < B; ++x) {
            const float lo = std::min(pa[x], pb[x]);
            const float hi = std::max(pa[x], pb[x]);
            pa[x] = lo;
            pb[x] = hi;
          }
        }
        std::copy(buf[n / 2], buf[n / 2] + len, o.begin() + x0);
      }
    }
    return out;
  }

  std::vector<float> window(static_cast<std::size_t>(n));
  const auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      std::size_t k = 0;
      for (int dy = -r; dy <= r; ++dy) {
        auto in = plane.row(std::clamp(y + dy, 0, h - 1));
        for (int dx = -r; dx <= r; ++dx) window[k++] = in[static_cast<std::size_t>(std::clamp(x + dx, 0, w - 1))];
      }
      std::nth_element(window.begin(), mid, window.end());
      out(x, y) = *mid;
    }
  }
  return out;
}

Frame median_blur(const Frame& frame, int kernel) {
  return map_planes(frame, [kernel](const Plane& p) { return median_blur(p, kernel); });
}

double default_sigma(int window) { return 0.3 * ((window - 1) * 0.5 - 1.0) + 0.8; }

std::vector<double> gaussian_kernel(int window, double sigma) {
  require_odd(window, "Gaussian window");
  if (!(sigma > 0.0)) throw ParameterError("Gaussian sigma must be positive");
  const int r = window / 2;
  std::vector<double> k(static_cast<std::size_t>(window));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

Plane gaussian_blur(const Plane& plane, int window, std::optional<double> sigma) {
  const auto k = gaussian_kernel(window, sigma.value_or(default_sigma(window)));
  return separable_filter(plane, k, k);
}

Frame gaussian_blur(const Frame& frame, int window, std::optional<double> sigma) {
  const auto k = gaussian_kernel(window, sigma.value_or(default_sigma(window)));
  return map_planes(frame, [&k](const Plane& p) {
    Plane out = separable_filter(p, k, k);
    clamp_unit(out);
    return out;
  });
}

Plane box_mean(const Plane& plane, int radius) {
  if (radius < 0) throw ParameterError("box_mean: negative radius");
  const std::vector<double> k(static_cast<std::size_t>(2 * radius + 1), 1.0 / (2 * radius + 1));
  return separable_filter(plane, k, k);
}

Frame enhance_contrast(const Frame& frame, double cutoff_fraction, ContrastMode mode) {
  if (!(cutoff_fraction >= 0.0 && cutoff_fraction < 0.5)) {
    throw ParameterError("enhance_contrast: cutoff_fraction must lie in [0, 0.5)");
  }
  const double lo_frac = mode == ContrastMode::DarkTail ? cutoff_fraction : cutoff_fraction / 2.0;
  const double hi_frac = mode == ContrastMode::DarkTail ? 0.0 : cutoff_fraction / 2.0;

  return map_planes(frame, [&](const Plane& p) {
    std::array<std::size_t, 256> hist{};
    for (float v : p.values()) ++hist[static_cast<std::size_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f))];
    const double n = static_cast<double>(p.size());

    int low = 0;
    std::size_t cum = 0;
    for (int b = 0; b < 256; ++b) {
      cum += hist[static_cast<std::size_t>(b)];
      if (static_cast<double>(cum) > lo_frac * n) {
        low = b;
        break;
      }
    }
    int high = 255;
    cum = 0;
    for (int b = 255; b >= 0; --b) {
      cum += hist[static_cast<std::size_t>(b)];
      if (static_cast<double>(cum) > hi_frac * n) {
        high = b;
        break;
      }
    }
    if (high <= low) return p;

    const float lo = static_cast<float>(low) / 255.f;
    const float scale = 255.f / static_cast<float>(high - low);
    Plane out(p.width(), p.height());
    auto in = p.values();
    auto o = out.values();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp((in[i] - lo) * scale, 0.f, 1.f);
    return out;
  });
}

BinaryMask adaptive_gaussian_threshold(const Plane& plane, int block, double offset) {
  require_odd(block, "adaptive threshold block");
  const Plane local = gaussian_blur(plane, block);
  BinaryMask mask(plane.width(), plane.height());
  auto in = plane.values();
  auto mean = local.values();
  auto m = mask.values();
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = static_cast<double>(in[i]) > static_cast<double>(mean[i]) + offset ? 1 : 0;
  }
  return mask;
}

namespace {

// Out-of-image neighbours are ignored (equivalent to replicating the edge pixel).
template <bool Erode>
BinaryMask morph3x3(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  BinaryMask out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      bool v = Erode;
      for (int dy = -1; dy <= 1 && v == Erode; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          if ((mask(xx, yy) != 0) != Erode) {
            v = !Erode;
            break;
          }
        }
      }
      out(x, y) = v ? 1 : 0;
    }
  }
  return out;
}

}  // namespace

BinaryMask erode3x3(const BinaryMask& mask) { return morph3x3<true>(mask); }
BinaryMask dilate3x3(const BinaryMask& mask) { return morph3x3<false>(mask); }
BinaryMask morph_open3x3(const BinaryMask& mask) { return dilate3x3(erode3x3(mask)); }
BinaryMask morph_close3x3(const BinaryMask& mask) { return erode3x3(dilate3x3(mask)); }

}  // namespace capnet::imgproc
