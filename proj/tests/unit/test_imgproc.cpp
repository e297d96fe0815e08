#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "capnet/error.hpp"
#include "capnet/imgproc.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace capnet;
using namespace capnet::imgproc;
using test::brute_conv;
using test::brute_median;
using test::brute_ssim;

namespace {

double plane_variance(const Plane& p) {
  double m = 0;
  for (float v : p.values()) m += v;
  m /= static_cast<double>(p.size());
  double s = 0;
  for (float v : p.values()) s += (v - m) * (v - m);
  return s / static_cast<double>(p.size());
}

}  // namespace

TEST(MedianBlur, ConstantFrameUnchanged) {
  Frame f(20, 18, 3, 0.5f);
  EXPECT_EQ(median_blur(f, 5), f);
}

TEST(MedianBlur, RemovesImpulse) {
  Plane p(16, 16, 0.f);
  p(8, 8) = 1.f;
  const Plane out = median_blur(p, 5);
  for (float v : out.values()) EXPECT_EQ(v, 0.f);
}

TEST(MedianBlur, CheckerboardMatchesWindowSort) {
  Plane p(17, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 17; ++x) p(x, y) = (x + y) % 2 ? 1.f : 0.f;
  const Plane out = median_blur(p, 3);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 17; ++x) EXPECT_EQ(out(x, y), brute_median(p, x, y, 3));
}

TEST(MedianBlur, RandomPlanesMatchOracleAllKernels) {
  for (int k : {1, 3, 5, 7, 9}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      const Plane p = test::random_plane(32 + static_cast<int>(s), 32, 100 * k + s);
      const Plane out = median_blur(p, k);
      for (int y = 0; y < p.height(); ++y)
        for (int x = 0; x < p.width(); ++x) ASSERT_EQ(out(x, y), brute_median(p, x, y, k)) << k << " " << x << "," << y;
    }
  }
}

TEST(MedianBlur, WideRowsUseEveryBlock) {
  const Plane p = test::random_plane(200, 20, 9);
  const Plane out = median_blur(p, 5);
  for (int y = 0; y < p.height(); ++y)
    for (int x = 0; x < p.width(); ++x) ASSERT_EQ(out(x, y), brute_median(p, x, y, 5));
}

TEST(MedianBlur, PerChannel) {
  const Frame f = test::random_rgb(24, 20, 4);
  const Frame out = median_blur(f, 3);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(out.plane(c), median_blur(f.plane(c), 3));
}

TEST(MedianBlur, RejectsBadKernel) {
  Plane p(16, 16);
  EXPECT_THROW(median_blur(p, 4), ParameterError);
  EXPECT_THROW(median_blur(p, 17), ParameterError);
  EXPECT_THROW(median_blur(p, 0), ParameterError);
}

TEST(GaussianBlur, ConstantFrameUnchanged) {
  Frame f(20, 20, 1, 0.3f);
  const Frame out = gaussian_blur(f, 7);
  for (float v : out.plane(0).values()) EXPECT_NEAR(v, 0.3f, 1e-6);
}

TEST(GaussianBlur, ImpulseSumsToOne) {
  Plane p(64, 64, 0.f);
  p(32, 32) = 1.f;
  const Plane out = gaussian_blur(p, 31);
  double s = 0;
  for (float v : out.values()) s += v;
  EXPECT_NEAR(s, 1.0, 1e-6);
}

TEST(GaussianBlur, MatchesDirectConvolution) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Plane p = test::random_plane(32, 32, s);
    for (int win : {3, 7, 31}) {
      const auto k = gaussian_kernel(win, default_sigma(win));
      const Plane out = gaussian_blur(p, win);
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) ASSERT_NEAR(out(x, y), brute_conv(p, x, y, k), 1e-6);
    }
  }
}

TEST(GaussianBlur, DefaultSigmaHeuristic) {
  EXPECT_NEAR(default_sigma(31), 0.3 * (15 - 1) + 0.8, 1e-12);
  EXPECT_NEAR(default_sigma(5), 1.1, 1e-12);
}

TEST(GaussianBlur, RejectsBadParameters) {
  Plane p(16, 16);
  EXPECT_THROW(gaussian_blur(p, 5, 0.0), ParameterError);
  EXPECT_THROW(gaussian_blur(p, 5, -1.0), ParameterError);
  EXPECT_THROW(gaussian_blur(p, 6), ParameterError);
}

TEST(BoxMean, MatchesBruteForce) {
  const Plane p = test::random_plane(21, 19, 3);
  const Plane out = box_mean(p, 2);
  const std::vector<double> k(5, 0.2);
  for (int y = 0; y < 19; ++y)
    for (int x = 0; x < 21; ++x) EXPECT_NEAR(out(x, y), brute_conv(p, x, y, k), 1e-6);
}

TEST(EnhanceContrast, FullRangeUnchangedAtZeroCutoff) {
  Plane p(256, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 256; ++x) p(x, y) = static_cast<float>(x) / 255.f;
  const Frame out = enhance_contrast(gray_frame(p), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(out.plane(0).values()[i], p.values()[i], 1.0 / 255);
}

TEST(EnhanceContrast, NarrowRangeStretched) {
  Rng rng(5);
  Plane p(64, 64);
  for (auto& v : p.values()) v = static_cast<float>(rng.uniform(0.4, 0.6));
  for (auto mode : {ContrastMode::DarkTail, ContrastMode::Symmetric}) {
    const Plane out = enhance_contrast(gray_frame(p), 0.10, mode).plane(0);
    const auto [mn, mx] = std::minmax_element(out.values().begin(), out.values().end());
    EXPECT_LE(*mn, 0.01f);
    EXPECT_GE(*mx, 0.99f);
  }
}

TEST(EnhanceContrast, ConstantUnchanged) {
  Frame f(16, 16, 3, 0.42f);
  EXPECT_EQ(enhance_contrast(f, 0.1), f);
}

TEST(EnhanceContrast, PreservesOrdering) {
  const Plane p = test::random_plane(40, 40, 8);
  for (auto mode : {ContrastMode::DarkTail, ContrastMode::Symmetric}) {
    const Plane out = enhance_contrast(gray_frame(p), 0.2, mode).plane(0);
    for (std::size_t i = 1; i < p.size(); ++i) {
      if (p.values()[i] < p.values()[i - 1]) {
        EXPECT_LE(out.values()[i], out.values()[i - 1]);
      }
      if (p.values()[i] > p.values()[i - 1]) {
        EXPECT_GE(out.values()[i], out.values()[i - 1]);
      }
    }
  }
}

TEST(EnhanceContrast, DarkTailOnlyTrimsLowEnd) {
  Plane p(100, 1);
  for (int x = 0; x < 100; ++x) p(x, 0) = static_cast<float>(x) / 99.f * 0.5f;
  const Plane out = enhance_contrast(Frame({p}), 0.2, ContrastMode::DarkTail).plane(0);
  EXPECT_EQ(out(10, 0), 0.f);
  EXPECT_NEAR(out(99, 0), 1.f, 0.01);  // histogram bins are 1/255 wide
  EXPECT_GT(out(50, 0), 0.f);
}

TEST(EnhanceContrast, RejectsBadCutoff) {
  Frame f(16, 16, 1, 0.5f);
  EXPECT_THROW(enhance_contrast(f, 0.5), ParameterError);
  EXPECT_THROW(enhance_contrast(f, -0.1), ParameterError);
}

TEST(Lab, RoundTrip) {
  const Frame f = test::random_rgb(32, 32, 11);
  const Frame back = lab_to_rgb(rgb_to_lab(f));
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < f.plane(c).size(); ++i) ASSERT_NEAR(back.plane(c).values()[i], f.plane(c).values()[i], 0.01);
}

TEST(Lab, KnownValues) {
  Frame white(16, 16, 3, 1.f);
  const auto lab = rgb_to_lab(white);
  EXPECT_NEAR(lab.L(0, 0), 100.0, 0.01);
  EXPECT_NEAR(lab.A(0, 0), 0.0, 0.01);
  EXPECT_NEAR(lab.B(0, 0), 0.0, 0.01);
  Frame red(16, 16, 3, 0.f);
  for (auto& v : red.plane(0).values()) v = 1.f;
  const auto r = rgb_to_lab(red);
  EXPECT_NEAR(r.L(0, 0), 53.24, 0.05);
  EXPECT_NEAR(r.A(0, 0), 80.09, 0.1);
  EXPECT_NEAR(r.B(0, 0), 67.20, 0.1);
}

TEST(Nlm, ConstantUnchanged) {
  Frame f(20, 20, 3);
  for (int c = 0; c < 3; ++c)
    for (auto& v : f.plane(c).values()) v = 0.2f + 0.3f * c;
  const Frame out = nlm_denoise(f, {0.08, 3, 7});
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < f.plane(c).size(); ++i) EXPECT_NEAR(out.plane(c).values()[i], f.plane(c).values()[i], 1e-3);
}

TEST(Nlm, ReducesNoiseVariance) {
  Rng rng(2);
  Frame f(32, 32, 3);
  for (int c = 0; c < 3; ++c)
    for (auto& v : f.plane(c).values()) v = static_cast<float>(std::clamp(0.5 + rng.normal(0, 0.05), 0.0, 1.0));
  const Frame out = nlm_denoise(f, {0.08, 5, 11});
  for (int c = 0; c < 3; ++c) EXPECT_LT(plane_variance(out.plane(c)), plane_variance(f.plane(c)));
}

TEST(Nlm, TinyStrengthReturnsInput) {
  const Frame f = test::random_rgb(20, 20, 6);
  const Frame out = nlm_denoise(f, {1e-4, 3, 7});
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < f.plane(c).size(); ++i) EXPECT_NEAR(out.plane(c).values()[i], f.plane(c).values()[i], 1e-3);
}

TEST(Nlm, PlaneMatchesBruteForce) {
  const Plane p = test::random_plane(32, 32, 21);
  const int patch = 3, search = 5;
  const double h = 0.3;
  const auto g = gaussian_kernel(patch, default_sigma(patch));
  const Plane out = nlm_plane(p, h, patch, search);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      double ws = 0, vs = 0;
      for (int oy = -2; oy <= 2; ++oy)
        for (int ox = -2; ox <= 2; ++ox) {
          double d = 0;
          for (int ky = -1; ky <= 1; ++ky)
            for (int kx = -1; kx <= 1; ++kx) {
              const double diff = p.clamped(x + kx, y + ky) - p.clamped(x + ox + kx, y + oy + ky);
              d += g[static_cast<std::size_t>(ky + 1)] * g[static_cast<std::size_t>(kx + 1)] * diff * diff;
            }
          const double wgt = std::exp(-d / (h * h));
          ws += wgt;
          vs += wgt * p.clamped(x + ox, y + oy);
        }
      ASSERT_NEAR(out(x, y), vs / ws, 1e-6);
    }
}

TEST(Nlm, RejectsPatchLargerThanSearch) {
  Frame f(16, 16, 3, 0.5f);
  EXPECT_THROW(nlm_denoise(f, {0.08, 9, 7}), ParameterError);
}

TEST(Ssim, IdenticalIsOne) {
  const Plane p = test::random_plane(32, 32, 1);
  EXPECT_EQ(ssim(p, p).mean, 1.0);
}

TEST(Ssim, InvertedCheckerboardLow) {
  Plane p(32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) p(x, y) = ((x / 4 + y / 4) % 2) ? 0.9f : 0.1f;
  Plane q = p;
  for (auto& v : q.values()) v = 1.f - v;
  EXPECT_LT(ssim(p, q).mean, 0.3);
}

TEST(Ssim, TinyNoiseHigh) {
  const Plane p = test::texture(48, 48, 3);
  Rng rng(4);
  Plane q = p;
  for (auto& v : q.values()) v = static_cast<float>(v + rng.normal(0, 0.001));
  EXPECT_GT(ssim(p, q).mean, 0.99);
}

TEST(Ssim, MatchesBruteForceAndIsSymmetric) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Plane a = test::random_plane(32, 32, 2 * s), b = test::random_plane(32, 32, 2 * s + 1);
    const auto r = ssim(a, b, 7);
    const auto r2 = ssim(b, a, 7);
    EXPECT_NEAR(r.mean, r2.mean, 1e-9);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) ASSERT_NEAR(r.map(x, y), brute_ssim(a, b, x, y, 7), 1e-6);
  }
}

TEST(Ssim, RgbComparedOnLuma) {
  const Frame a = test::random_rgb(20, 20, 3), b = test::random_rgb(20, 20, 9);
  EXPECT_NEAR(ssim(a, b).mean, ssim(to_luma(a), to_luma(b)).mean, 1e-12);
}

TEST(Ssim, RejectsMismatch) {
  EXPECT_THROW(ssim(Plane(16, 16), Plane(16, 17)), ParameterError);
  EXPECT_THROW(ssim(Plane(16, 16), Plane(16, 16), 4), ParameterError);
}

TEST(AdaptiveThreshold, ConstantIsEmpty) {
  Plane p(40, 40, 0.6f);
  EXPECT_EQ(count_set(adaptive_gaussian_threshold(p, 31, 0.02)), 0u);
}

TEST(AdaptiveThreshold, BrightDiskArea) {
  Plane p(96, 96, 0.1f);
  const double r = 8;
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x)
      if ((x - 48) * (x - 48) + (y - 48) * (y - 48) <= r * r) p(x, y) = 0.8f;
  const auto m = adaptive_gaussian_threshold(p, 31, 0.02);
  const double analytic = 3.141592653589793 * r * r;
  EXPECT_NEAR(static_cast<double>(count_set(m)), analytic, 0.1 * analytic);
}

TEST(AdaptiveThreshold, StripeUnderIlluminationRamp) {
  Plane p(128, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 128; ++x) p(x, y) = static_cast<float>(0.1 + 0.6 * x / 127.0 + ((y >= 28 && y < 36) ? 0.15 : 0.0));
  const auto m = adaptive_gaussian_threshold(p, 31, 0.02);
  int inside = 0, outside = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 128; ++x) (y >= 28 && y < 36 ? inside : outside) += m(x, y);
  EXPECT_GT(inside, 0.9 * 8 * 128);
  EXPECT_LT(outside, 0.02 * 56 * 128);
  // A single global threshold cannot separate the stripe from the bright end of the ramp.
  const float global = 0.5f;
  int wrong = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 128; ++x) wrong += (p(x, y) > global) != (y >= 28 && y < 36);
  EXPECT_GT(wrong, 1000);
}

TEST(AdaptiveThreshold, RejectsEvenBlock) { EXPECT_THROW(adaptive_gaussian_threshold(Plane(20, 20), 30), ParameterError); }

TEST(Morphology, OpenRemovesSpeckleKeepsBlock) {
  BinaryMask m(20, 20);
  m(2, 2) = 1;
  for (int y = 8; y < 14; ++y)
    for (int x = 8; x < 14; ++x) m(x, y) = 1;
  const auto o = morph_open3x3(m);
  EXPECT_EQ(o(2, 2), 0);
  EXPECT_EQ(count_set(o), 36u);
}

TEST(Purity, RepeatedCallsBitIdentical) {
  const Frame f = test::random_rgb(32, 32, 12);
  EXPECT_EQ(median_blur(f, 5), median_blur(f, 5));
  EXPECT_EQ(gaussian_blur(f, 7), gaussian_blur(f, 7));
  EXPECT_EQ(enhance_contrast(f), enhance_contrast(f));
  EXPECT_EQ(ssim(f, f).map, ssim(f, f).map);
}
