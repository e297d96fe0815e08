#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "capnet/error.hpp"
#include "capnet/synth.hpp"
#include "testutil.hpp"

using namespace capnet;
using namespace capnet::synth;

namespace {

SceneSpec horizontal_tube(double speed, double gap = 0.0) {
  SceneSpec spec;
  spec.width = 160;
  spec.height = 80;
  spec.frames = 8;
  spec.noise_sigma = 0.0;
  TubeSpec t;
  t.path = straight_path({80, 40}, 120, 0.0);
  t.speed = speed;
  t.gap_fraction = gap;
  t.gap_seed = 3;
  spec.tubes = {t};
  return spec;
}

std::vector<double> centre_row(const Frame& f, int y, int x0, int x1) {
  const Plane l = to_luma(f);
  std::vector<double> out;
  for (int x = x0; x < x1; ++x) out.push_back(l(x, y));
  return out;
}

// Integer lag in [-5, 5] maximizing the normalized correlation of b[x] with a[x - lag].
int best_lag(const std::vector<double>& a, const std::vector<double>& b) {
  int best = 0;
  double best_r = -2.0;
  const int n = static_cast<int>(a.size());
  for (int lag = -5; lag <= 5; ++lag) {
    std::vector<double> xa, xb;
    for (int x = 5; x < n - 5; ++x) {
      xa.push_back(a[static_cast<std::size_t>(x - lag)]);
      xb.push_back(b[static_cast<std::size_t>(x)]);
    }
    const double r = test::pearson(xa, xb);
    if (r > best_r) {
      best_r = r;
      best = lag;
    }
  }
  return best;
}

}  // namespace

TEST(Render, ZeroTubes) {
  SceneSpec spec;
  spec.width = 64;
  spec.height = 48;
  spec.frames = 3;
  const auto v = render_video(spec);
  ASSERT_EQ(v.frames.size(), 3u);
  EXPECT_TRUE(v.truth.tubes.empty());
  EXPECT_EQ(count_set(v.truth.lumen), 0u);
  EXPECT_EQ(v.truth.mean_density(), 0.0);
  for (const auto& f : v.frames) {
    EXPECT_EQ(f.width(), 64);
    EXPECT_EQ(f.channels(), 3);
  }
}

TEST(Render, StaticTubeIsStatic) {
  const auto v = render_video(horizontal_tube(0.0, 0.3));
  for (std::size_t t = 1; t < v.frames.size(); ++t)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 80; ++y)
        for (int x = 0; x < 160; ++x)
          if (v.truth.lumen(x, y)) {
            ASSERT_EQ(v.frames[t].plane(c)(x, y), v.frames[0].plane(c)(x, y));
          }
  for (double s : v.truth.tubes[0].speeds) EXPECT_EQ(s, 0.0);
}

TEST(Render, TextureLagMatchesSpeed) {
  for (double speed : {1.0, 2.0, 3.0}) {
    const auto v = render_video(horizontal_tube(speed));
    for (std::size_t t = 0; t + 1 < v.frames.size(); ++t) {
      const auto a = centre_row(v.frames[t], 40, 35, 125);
      const auto b = centre_row(v.frames[t + 1], 40, 35, 125);
      EXPECT_EQ(best_lag(a, b), static_cast<int>(speed)) << "speed " << speed << " frame " << t;
    }
  }
}

TEST(Render, ReverseDirectionFlipsLag) {
  auto spec = horizontal_tube(2.0);
  spec.tubes[0].direction = -1;
  const auto v = render_video(spec);
  EXPECT_EQ(best_lag(centre_row(v.frames[0], 40, 35, 125), centre_row(v.frames[1], 40, 35, 125)), -2);
  EXPECT_NEAR(v.truth.tubes[0].direction, std::numbers::pi, 1e-9);
}

TEST(Render, RedDominanceInsideLumen) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SceneDistribution d;
    d.width = 320;
    d.height = 240;
    d.frames = 3;
    const auto v = render_video(random_scene(d, seed));
    for (std::size_t t = 0; t < v.frames.size(); ++t) {
      const Plane rd = red_dominance(v.frames[t]);
      double in = 0, out = 0;
      long long n_in = 0, n_out = 0;
      for (int y = 0; y < rd.height(); ++y)
        for (int x = 0; x < rd.width(); ++x) {
          if (v.truth.visible[t](x, y)) {
            in += rd(x, y);
            ++n_in;
          } else if (!v.truth.lumen(x, y)) {
            out += rd(x, y);
            ++n_out;
          }
        }
      if (n_in == 0) continue;
      EXPECT_GE(in / n_in - out / n_out, 0.2) << "seed " << seed;
    }
  }
}

TEST(Render, Deterministic) {
  SceneDistribution d;
  d.width = 200;
  d.height = 150;
  d.frames = 4;
  const auto a = render_video(random_scene(d, 9));
  const auto b = render_video(random_scene(d, 9));
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t t = 0; t < a.frames.size(); ++t) EXPECT_TRUE(a.frames[t] == b.frames[t]);
  EXPECT_EQ(a.truth.lumen, b.truth.lumen);
  const auto c = render_video(random_scene(d, 10));
  EXPECT_FALSE(a.frames[0] == c.frames[0]);
}

TEST(Render, RendererMatchesBatch) {
  SceneDistribution d;
  d.width = 200;
  d.height = 150;
  d.frames = 5;
  const auto spec = random_scene(d, 4);
  const auto v = render_video(spec);
  const Renderer r(spec);
  for (int t : {4, 0, 2}) EXPECT_TRUE(r.frame(t) == v.frames[static_cast<std::size_t>(t)]);
  EXPECT_THROW(r.frame(5), ParameterError);
}

TEST(Render, FillTracksGaps) {
  auto v = render_video(horizontal_tube(1.0, 0.0));
  for (double f : v.truth.tubes[0].fill) EXPECT_DOUBLE_EQ(f, 1.0);
  auto spec = horizontal_tube(1.0, 0.4);
  spec.tubes[0].gap_period = 40.0;
  v = render_video(spec);
  for (double f : v.truth.tubes[0].fill) EXPECT_NEAR(f, 0.6, 0.05);
}

TEST(Render, SpecValidation) {
  auto spec = horizontal_tube(1.0);
  spec.tubes[0].speed = -1.0;
  EXPECT_THROW(render_video(spec), ParameterError);
  spec = horizontal_tube(1.0);
  spec.tubes[0].gap_fraction = 1.5;
  EXPECT_THROW(render_video(spec), ParameterError);
  spec = horizontal_tube(1.0);
  spec.tubes[0].path = straight_path({150, 40}, 120, 0.0);
  EXPECT_THROW(render_video(spec), ParameterError);
  spec = horizontal_tube(1.0);
  spec.frames = 0;
  EXPECT_THROW(render_video(spec), ParameterError);
}

TEST(RandomScene, RespectsDistribution) {
  SceneDistribution d;
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto spec = random_scene(d, s);
    EXPECT_GE(static_cast<int>(spec.tubes.size()), d.min_tubes);
    EXPECT_LE(static_cast<int>(spec.tubes.size()), d.max_tubes);
    EXPECT_EQ(spec.width, 640);
    EXPECT_EQ(spec.frames, 60);
    EXPECT_NO_THROW(validate(spec));
    for (const auto& t : spec.tubes) {
      EXPECT_GE(t.speed, d.min_speed);
      EXPECT_LE(t.speed, d.max_speed);
      EXPECT_LE(t.gap_fraction, d.max_gap_fraction);
    }
  }
}

TEST(PatchDataset, BalancedAndDeterministic) {
  SceneDistribution d;
  const auto a = make_patch_dataset(d, 100, 5);
  ASSERT_EQ(a.size(), 100u);
  int pos = 0;
  for (const auto& p : a) {
    ASSERT_TRUE(p.label);
    EXPECT_NO_THROW(cnn::require_valid_patch(p));
    pos += *p.label == cnn::Label::Capillary;
  }
  EXPECT_EQ(pos, 50);
  EXPECT_EQ(a, make_patch_dataset(d, 100, 5));
  EXPECT_NE(a, make_patch_dataset(d, 100, 6));
  EXPECT_THROW(make_patch_dataset(d, 19, 5), ParameterError);
}
