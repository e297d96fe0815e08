#include <benchmark/benchmark.h>

#include <memory>
#include <vector>

#include "capnet/classifier.hpp"
#include "capnet/flow.hpp"
#include "capnet/imgproc.hpp"
#include "capnet/metrics.hpp"
#include "capnet/pipeline.hpp"
#include "capnet/synth.hpp"

using namespace capnet;

namespace {

const synth::Renderer& scene(int w, int h) {
  static std::vector<std::unique_ptr<synth::Renderer>> cache;
  for (const auto& r : cache)
    if (r->spec().width == w && r->spec().height == h) return *r;
  synth::SceneDistribution d;
  d.width = w;
  d.height = h;
  d.frames = 30;
  cache.push_back(std::make_unique<synth::Renderer>(synth::random_scene(d, 1)));
  return *cache.back();
}

Plane luma_at(int w, int h) { return to_luma(scene(w, h).frame(0)); }

}  // namespace

static void BM_MedianBlur5(benchmark::State& st) {
  const Plane p = luma_at(640, 480);
  for (auto _ : st) benchmark::DoNotOptimize(imgproc::median_blur(p, 5));
}
BENCHMARK(BM_MedianBlur5)->Unit(benchmark::kMillisecond);

static void BM_GaussianBlur31(benchmark::State& st) {
  const Plane p = luma_at(640, 480);
  for (auto _ : st) benchmark::DoNotOptimize(imgproc::gaussian_blur(p, 31));
}
BENCHMARK(BM_GaussianBlur31)->Unit(benchmark::kMillisecond);

static void BM_Ssim(benchmark::State& st) {
  const Plane a = luma_at(640, 480);
  const Plane b = to_luma(scene(640, 480).frame(5));
  for (auto _ : st) benchmark::DoNotOptimize(imgproc::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Unit(benchmark::kMillisecond);

static void BM_CnnForward(benchmark::State& st) {
  const auto model = cnn::init_model(1);
  const auto patch = cnn::extract_patch(scene(640, 480).frame(0), {100, 100, 60, 40});
  for (auto _ : st) benchmark::DoNotOptimize(cnn::forward_fast(model, patch));
}
BENCHMARK(BM_CnnForward)->Unit(benchmark::kMicrosecond);

static void BM_FarnebackCrop(benchmark::State& st) {
  const auto& r = scene(640, 480);
  const Rect box{200, 200, 120, 60};
  const Plane a = to_luma(crop(r.frame(0), box));
  const Plane b = to_luma(crop(r.frame(1), box));
  for (auto _ : st) benchmark::DoNotOptimize(flow::farneback_flow(a, b));
}
BENCHMARK(BM_FarnebackCrop)->Unit(benchmark::kMillisecond);

static void BM_CapillaryMask(benchmark::State& st) {
  const Frame f = scene(640, 480).frame(0);
  for (auto _ : st) benchmark::DoNotOptimize(metrics::capillary_mask(f, {200, 200, 120, 60}));
}
BENCHMARK(BM_CapillaryMask)->Unit(benchmark::kMillisecond);

// Detection stages per frame, untrained weights (cost does not depend on them).
static void BM_DetectorFrame(benchmark::State& st) {
  const int w = static_cast<int>(st.range(0)), h = static_cast<int>(st.range(1));
  const auto& r = scene(w, h);
  std::vector<Frame> frames;
  for (int t = 0; t < 10; ++t) frames.push_back(r.frame(t));
  const pipeline::PipelineConfig cfg;
  const auto model = cnn::init_model(1);
  pipeline::Detector det(cfg, model, w, h);
  std::size_t i = 0;
  for (auto _ : st) benchmark::DoNotOptimize(det.push(frames[i++ % frames.size()]));
  st.counters["fps"] = benchmark::Counter(static_cast<double>(st.iterations()), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_DetectorFrame)->Args({640, 480})->Args({1920, 1080})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
