#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "capnet/error.hpp"
#include "capnet/metrics.hpp"
#include "capnet/pipeline.hpp"
#include "capnet/synth.hpp"
#include "testutil.hpp"

using namespace capnet;
using namespace capnet::metrics;

namespace {

synth::SceneSpec single_tube_scene(double gap, double speed, int frames = 20) {
  synth::SceneSpec spec;
  spec.width = 160;
  spec.height = 120;
  spec.frames = frames;
  synth::TubeSpec t;
  t.path = synth::straight_path({80, 60}, 90, 0.2);
  t.speed = speed;
  t.gap_fraction = gap;
  t.gap_seed = 7;
  t.gap_period = gap > 0 ? 90.0 : 0.0;  // one gap per tube length; the 31-px blur merges short gaps
  spec.tubes = {t};
  return spec;
}

BinaryMask lumen_crop(const synth::Video& v, const Rect& r) {
  BinaryMask m(r.w, r.h);
  for (int y = 0; y < r.h; ++y)
    for (int x = 0; x < r.w; ++x) m(x, y) = v.truth.lumen(r.x + x, r.y + y) ? 1 : 0;
  return m;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  long long i = 0, u = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    i += a.values()[k] && b.values()[k];
    u += a.values()[k] || b.values()[k];
  }
  return u ? static_cast<double>(i) / u : 1.0;
}

CapillaryRecord record_with(Rect region, std::vector<BinaryMask> masks, double velocity) {
  CapillaryRecord r;
  r.region = region;
  r.boxes.assign(masks.size(), region);
  r.masks = std::move(masks);
  r.velocity = velocity;
  return r;
}

flow::PolarFlow uniform_flow(int w, int h, double dx, double dy) {
  flow::FlowField f{Grid<double>(w, h, dx), Grid<double>(w, h, dy)};
  return flow::to_polar(f);
}

}  // namespace

TEST(Mask, UniformGrayIsEmpty) {
  Frame f({Plane(64, 48, 0.5f), Plane(64, 48, 0.5f), Plane(64, 48, 0.5f)});
  EXPECT_EQ(count_set(capillary_mask(f, {4, 4, 40, 30})), 0u);
}

TEST(Mask, RedTubeMatchesRenderedLumen) {
  const auto v = synth::render_video(single_tube_scene(0.0, 1.0));
  const Rect box = pad_clip(v.truth.tubes[0].box, 8, 160, 120);
  const BinaryMask truth = lumen_crop(v, box);
  for (int t : {0, 10, 19}) EXPECT_GE(mask_iou(capillary_mask(v.frames[static_cast<std::size_t>(t)], box), truth), 0.6);
}

TEST(Mask, PlasmaGapsShrinkArea) {
  const auto full = synth::render_video(single_tube_scene(0.0, 1.0));
  const auto gappy = synth::render_video(single_tube_scene(0.4, 1.0));
  const Rect box = pad_clip(full.truth.tubes[0].box, 8, 160, 120);
  double a_full = 0, a_gap = 0;
  for (int t = 0; t < 20; ++t) {
    a_full += static_cast<double>(count_set(capillary_mask(full.frames[static_cast<std::size_t>(t)], box)));
    a_gap += static_cast<double>(count_set(capillary_mask(gappy.frames[static_cast<std::size_t>(t)], box)));
  }
  EXPECT_NEAR(a_gap / a_full, 0.6, 0.1);
}

TEST(Mask, BoxOutsideFrame) {
  Frame f({Plane(32, 32), Plane(32, 32), Plane(32, 32)});
  EXPECT_THROW(capillary_mask(f, {20, 20, 20, 20}), ParameterError);
}

TEST(Density, MaskUnion) {
  EXPECT_EQ(total_capillary_density(std::vector<BinaryMask>{}, 10000.0), 0.0);
  BinaryMask m(100, 100);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) m(x, y) = 1;
  EXPECT_DOUBLE_EQ(total_capillary_density(std::vector<BinaryMask>{m}, 10000.0), 0.01);

  for (std::uint64_t s = 0; s < 20; ++s) {
    std::vector<BinaryMask> masks{test::random_mask(40, 30, 0.2, s), test::random_mask(40, 30, 0.3, s + 100)};
    std::set<std::size_t> u;
    for (const auto& mk : masks)
      for (std::size_t i = 0; i < mk.size(); ++i)
        if (mk.values()[i]) u.insert(i);
    EXPECT_DOUBLE_EQ(total_capillary_density(masks, 1200.0), static_cast<double>(u.size()) / 1200.0);
  }
}

TEST(Density, RecordsAndFunctional) {
  BinaryMask full(10, 10, 1);
  std::vector<CapillaryRecord> recs{record_with({0, 0, 10, 10}, {full, full}, 1.0),
                                    record_with({5, 5, 10, 10}, {full, BinaryMask(10, 10)}, 0.1)};
  // Frame 0: union 175 px, frame 1: 100 px, in a 40x40 frame.
  EXPECT_NEAR(total_capillary_density(recs, 40, 40), (175.0 + 100.0) / 2 / 1600, 1e-12);
  EXPECT_NEAR(functional_capillary_density(recs, 40, 40, 0.5), 100.0 / 1600, 1e-12);
  EXPECT_EQ(functional_capillary_density(recs, 40, 40, 5.0), 0.0);
  EXPECT_EQ(functional_capillary_density(recs, 40, 40, 0.0), total_capillary_density(recs, 40, 40));
  EXPECT_EQ(total_capillary_density(std::vector<CapillaryRecord>{}, 40, 40), 0.0);
}

TEST(Density, FunctionalNeverExceedsTotal) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<CapillaryRecord> recs;
    for (int k = 0; k < 4; ++k) {
      const Rect r{static_cast<int>(rng.uniform_int(0, 20)), static_cast<int>(rng.uniform_int(0, 20)), 12, 12};
      recs.push_back(record_with(r, {test::random_mask(12, 12, 0.5, static_cast<std::uint64_t>(rng.uniform_int(0, 1000)))}, rng.uniform(0, 2)));
    }
    const double total = total_capillary_density(recs, 32, 32);
    const double fn = functional_capillary_density(recs, 32, 32, 0.5);
    EXPECT_GE(total, 0.0);
    EXPECT_LE(total, 1.0);
    EXPECT_LE(fn, total);
  }
}

TEST(Density, StalledTubeExcludedFromFunctional) {
  synth::SceneSpec spec;
  spec.width = 200;
  spec.height = 150;
  spec.frames = 24;
  for (auto [cx, speed] : {std::pair{50.0, 1.5}, std::pair{100.0, 1.5}, std::pair{150.0, 0.0}}) {
    synth::TubeSpec t;
    t.path = synth::straight_path({cx, 75}, 80, std::numbers::pi / 2);
    t.speed = speed;
    t.gap_fraction = 0.4;
    t.gap_seed = static_cast<std::uint64_t>(cx);
    spec.tubes.push_back(t);
  }
  const auto v = synth::render_video(spec);
  const auto a = pipeline::analyze(v.frames, cnn::zero_model(), pipeline::PipelineConfig{});

  std::vector<CapillaryRecord> flowing;
  bool stalled_found = false;
  for (const auto& r : a.records) {
    const Rect b = r.detection_box();
    const int cx = b.x + b.w / 2;
    if (std::abs(cx - 150) < 15) {
      stalled_found = true;
      EXPECT_EQ(r.velocity_class, VelocityClass::NoFlow);
    } else {
      EXPECT_GE(r.velocity, 0.5);
      flowing.push_back(r);
    }
  }
  EXPECT_TRUE(stalled_found);
  EXPECT_EQ(flowing.size(), 2u);
  EXPECT_NEAR(a.report.functional_capillary_density, total_capillary_density(flowing, 200, 150), 1e-12);
  EXPECT_LT(a.report.functional_capillary_density, a.report.total_capillary_density);
}

TEST(Hematocrit, SeriesDefinition) {
  CapillaryRecord r;
  r.area_px = {100, 50, 0, 80};
  const auto s = hematocrit_series(r);
  ASSERT_EQ(s.size(), 4u);
  EXPECT_DOUBLE_EQ(s[0], 1.0);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  EXPECT_DOUBLE_EQ(s[2], 0.0);
  EXPECT_DOUBLE_EQ(s[3], 0.8);
  r.area_px = {0, 0};
  EXPECT_THROW(hematocrit_series(r), UndefinedMetricError);
}

TEST(Hematocrit, FullTubeNearOne) {
  const auto v = synth::render_video(single_tube_scene(0.0, 1.0));
  const Rect box = pad_clip(v.truth.tubes[0].box, 8, 160, 120);
  CapillaryRecord r;
  for (const auto& f : v.frames) r.area_px.push_back(static_cast<long long>(count_set(capillary_mask(f, box))));
  for (double h : hematocrit_series(r)) EXPECT_GT(h, 0.9);
}

TEST(Velocity, ClassBoundaries) {
  EXPECT_EQ(classify_velocity(0.3), VelocityClass::NoFlow);
  EXPECT_EQ(classify_velocity(0.7), VelocityClass::Slow);
  EXPECT_EQ(classify_velocity(0.9), VelocityClass::Normal);
  EXPECT_EQ(classify_velocity(1.5), VelocityClass::Fast);
  EXPECT_EQ(classify_velocity(0.5), VelocityClass::Slow);
  EXPECT_EQ(classify_velocity(0.8), VelocityClass::Normal);
  EXPECT_EQ(classify_velocity(1.2), VelocityClass::Fast);
  VelocityThresholds t;
  t.t4 = 2.0;
  EXPECT_EQ(classify_velocity(1.9, t), VelocityClass::Fast);
  EXPECT_EQ(classify_velocity(2.0, t), VelocityClass::VeryFast);
}

TEST(Velocity, Monotone) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(0, 3), b = rng.uniform(0, 3);
    if (a <= b) {
      EXPECT_LE(static_cast<int>(classify_velocity(a)), static_cast<int>(classify_velocity(b)));
    }
  }
}

TEST(Velocity, ThresholdValidation) {
  EXPECT_THROW(classify_velocity(1.0, {0.8, 0.5, 1.2, std::nullopt}), ParameterError);
  EXPECT_THROW(classify_velocity(1.0, {0.0, 0.5, 1.2, std::nullopt}), ParameterError);
  EXPECT_THROW(classify_velocity(1.0, {0.5, 0.8, 1.2, 1.0}), ParameterError);
}

TEST(Velocity, RecordVectorSkipsAbsentFrames) {
  CapillaryRecord r;
  r.mean_magnitude = {0.4, std::nullopt, 1.0, std::nullopt};
  EXPECT_DOUBLE_EQ(velocity_vector(r), 0.7);
  EXPECT_EQ(classify_velocity(r), VelocityClass::Slow);
  r.mean_magnitude = {std::nullopt};
  EXPECT_THROW(velocity_vector(r), ParameterError);
}

TEST(Heterogeneity, Analytic) {
  const std::vector<double> c{0.8, 0.8, 0.8};
  auto h = heterogeneity(std::span<const double>(c));
  EXPECT_NEAR(h.std, 0.0, 1e-12);
  ASSERT_TRUE(h.cv);
  EXPECT_NEAR(*h.cv, 0.0, 1e-12);
  const std::vector<double> two{0.5, 1.5};
  h = heterogeneity(std::span<const double>(two));
  EXPECT_DOUBLE_EQ(h.std, 0.5);
  EXPECT_DOUBLE_EQ(*h.cv, 0.5);
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_FALSE(heterogeneity(std::span<const double>(zero)).cv);
  const std::vector<double> one{1.0};
  EXPECT_THROW(heterogeneity(std::span<const double>(one)), ParameterError);
}

TEST(Direction, UniformFields) {
  const BinaryMask m(8, 8, 1);
  EXPECT_NEAR(*weighted_direction(uniform_flow(8, 8, 1.0, 0.0), m), 0.0, 0.01);
  EXPECT_NEAR(*weighted_direction(uniform_flow(8, 8, 0.0, 1.0), m), std::numbers::pi / 2, 0.01);
  EXPECT_NEAR(*weighted_direction(uniform_flow(8, 8, -1.0, -1.0), m), 1.25 * std::numbers::pi, 0.01);
  EXPECT_FALSE(weighted_direction(uniform_flow(8, 8, 0.0, 0.0), m));
}

TEST(Direction, RecordAverageAndErrors) {
  CapillaryRecord r;
  r.masks = {BinaryMask(8, 8, 1), BinaryMask(8, 8, 1), BinaryMask(8, 8)};
  std::vector<flow::PolarFlow> flows{uniform_flow(8, 8, 1.0, 0.0), uniform_flow(8, 8, 0.0, 1.0)};
  EXPECT_NEAR(flow_direction(r, flows), std::numbers::pi / 4, 1e-9);
  // Wrap-around: just below and above zero average to zero.
  flows = {uniform_flow(8, 8, 1.0, -0.1), uniform_flow(8, 8, 1.0, 0.1)};
  const double d = flow_direction(r, flows);
  EXPECT_LT(std::min(d, 2 * std::numbers::pi - d), 1e-9);
  flows = {uniform_flow(8, 8, 0.0, 0.0), uniform_flow(8, 8, 0.0, 0.0)};
  EXPECT_THROW(flow_direction(r, flows), UndefinedMetricError);
}

TEST(Tracks, StaticAndDisjoint) {
  const roi::RoiBox a{{10, 10, 20, 20}, roi::RoiSource::Salience, 1.0};
  const roi::RoiBox b{{60, 10, 20, 20}, roi::RoiSource::Salience, 1.0};
  std::vector<std::vector<roi::RoiBox>> frames(10, {a});
  auto tracks = associate_tracks(frames);
  ASSERT_EQ(tracks.size(), 1u);
  for (const auto& box : tracks[0].boxes) EXPECT_TRUE(box.has_value());
  frames.assign(10, {a, b});
  tracks = associate_tracks(frames);
  ASSERT_EQ(tracks.size(), 2u);
  EXPECT_EQ(tracks[0].detection_box(), a.rect);
  EXPECT_EQ(tracks[1].detection_box(), b.rect);
}

TEST(Tracks, GapTolerance) {
  const roi::RoiBox a{{10, 10, 20, 20}, roi::RoiSource::Motion, 1.0};
  for (int gap : {2, 5, 6}) {
    std::vector<std::vector<roi::RoiBox>> frames(3, {a});
    for (int k = 0; k < gap; ++k) frames.push_back({});
    for (int k = 0; k < 3; ++k) frames.push_back({a});
    EXPECT_EQ(associate_tracks(frames).size(), gap <= 5 ? 1u : 2u) << gap;
  }
}

// Well-separated drifting objects with random presence: identity is known, so the expected
// partition is each object's presence run split wherever it vanishes for more than gap_max frames.
TEST(Tracks, RandomPresenceOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const int n_obj = static_cast<int>(rng.uniform_int(1, 5));
    const int frames = 30;
    std::vector<std::vector<roi::RoiBox>> per_frame(frames);
    std::vector<std::vector<int>> seen(static_cast<std::size_t>(n_obj));
    for (int o = 0; o < n_obj; ++o) {
      const double p = rng.uniform(0.3, 1.0);
      for (int t = 0; t < frames; ++t) {
        if (rng.uniform() >= p) continue;
        const Rect r{100 * o + (t % 3), 20 + (t % 2), 30, 30};
        per_frame[static_cast<std::size_t>(t)].push_back({r, roi::RoiSource::Salience, 1.0});
        seen[static_cast<std::size_t>(o)].push_back(t);
      }
    }
    std::multiset<std::vector<int>> expected;
    for (const auto& s : seen) {
      std::vector<int> run;
      for (int t : s) {
        if (!run.empty() && t - run.back() - 1 > 5) {
          expected.insert(run);
          run.clear();
        }
        run.push_back(t);
      }
      if (!run.empty()) expected.insert(run);
    }
    std::multiset<std::vector<int>> got;
    for (const auto& tr : associate_tracks(per_frame)) {
      std::vector<int> run;
      for (int t = 0; t < frames; ++t)
        if (tr.boxes[static_cast<std::size_t>(t)]) run.push_back(t);
      got.insert(run);
    }
    ASSERT_EQ(got, expected) << "trial " << trial;
  }
}
