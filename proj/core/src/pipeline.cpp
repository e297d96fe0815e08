#include "capnet/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "capnet/error.hpp"

namespace capnet::pipeline {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

template <typename Fn>
void parallel_for(int n, int threads, Fn fn) {
  threads = std::clamp(threads, 1, std::max(1, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

roi::AreaBounds area_bounds(const PipelineConfig& cfg, const roi::AreaBounds& fallback) {
  return cfg.pixel_pitch_um ? roi::area_bounds_for_pitch(cfg.pixel_pitch_um) : fallback;
}

// Tracks that cover the same capillary are folded into the one seen in more frames.
std::vector<metrics::CapillaryRecord> consolidate(std::vector<metrics::CapillaryRecord> tracks, double iou_min) {
  auto detected = [](const metrics::CapillaryRecord& r) {
    return std::count_if(r.boxes.begin(), r.boxes.end(), [](const auto& b) { return b.has_value(); });
  };
  std::stable_sort(tracks.begin(), tracks.end(),
                   [&](const auto& a, const auto& b) { return detected(a) > detected(b); });
  std::vector<metrics::CapillaryRecord> kept;
  for (auto& t : tracks) {
    const Rect tb = t.detection_box();
    metrics::CapillaryRecord* host = nullptr;
    for (auto& k : kept) {
      const Rect kb = k.detection_box();
      const double inter = static_cast<double>(intersect(tb, kb).area());
      const double smaller = static_cast<double>(std::min(tb.area(), kb.area()));
      if (iou(tb, kb) >= iou_min || (smaller > 0 && inter / smaller >= 0.5)) {
        host = &k;
        break;
      }
    }
    if (!host) {
      kept.push_back(std::move(t));
      continue;
    }
    for (std::size_t f = 0; f < t.boxes.size(); ++f) {
      if (!t.boxes[f]) continue;
      host->boxes[f] = host->boxes[f] ? unite(*host->boxes[f], *t.boxes[f]) : *t.boxes[f];
    }
  }
  // Stable ids in order of first appearance, then position.
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    auto first = [](const metrics::CapillaryRecord& r) {
      for (std::size_t f = 0; f < r.boxes.size(); ++f)
        if (r.boxes[f]) return static_cast<int>(f);
      return static_cast<int>(r.boxes.size());
    };
    const int fa = first(a), fb = first(b);
    if (fa != fb) return fa < fb;
    const Rect ra = a.detection_box(), rb = b.detection_box();
    if (ra.x != rb.x) return ra.x < rb.x;
    return ra.y < rb.y;
  });
  for (std::size_t i = 0; i < kept.size(); ++i) kept[i].id = static_cast<int>(i);
  return kept;
}

// Masks, flow and per-capillary metrics for one track.
void measure(metrics::CapillaryRecord& rec, const FrameSequence& frames, const PipelineConfig& cfg,
             double& mask_seconds, double& flow_seconds, double& metric_seconds) {
  const int n = static_cast<int>(frames.size());
  const int w = frames.front().width();
  const int h = frames.front().height();
  rec.region = pad_clip(rec.detection_box(), cfg.mask_margin, w, h);

  auto t0 = Clock::now();
  rec.masks.clear();
  rec.area_px.clear();
  for (const auto& f : frames) {
    rec.masks.push_back(metrics::capillary_mask(f, rec.region, cfg.mask));
    rec.area_px.push_back(static_cast<long long>(count_set(rec.masks.back())));
  }
  mask_seconds += seconds_since(t0);

  t0 = Clock::now();
  const Rect fc = pad_clip(rec.region, cfg.flow_margin, w, h);
  const int ox = rec.region.x - fc.x;
  const int oy = rec.region.y - fc.y;
  std::vector<Plane> pre;
  pre.reserve(frames.size());
  for (const auto& f : frames) pre.push_back(velocity_preprocess(crop(f, fc), cfg.velocity));
  std::vector<flow::PolarFlow> flows;
  rec.mean_magnitude.assign(static_cast<std::size_t>(n), std::nullopt);
  rec.angle.assign(static_cast<std::size_t>(n), std::nullopt);
  for (int t = 0; t + 1 < n; ++t) {
    const auto polar = flow::to_polar(flow::farneback_flow(pre[static_cast<std::size_t>(t)],
                                                           pre[static_cast<std::size_t>(t) + 1], cfg.flow));
    flow::PolarFlow sub{Grid<double>(rec.region.w, rec.region.h), Grid<double>(rec.region.w, rec.region.h)};
    for (int y = 0; y < rec.region.h; ++y) {
      for (int x = 0; x < rec.region.w; ++x) {
        sub.magnitude(x, y) = polar.magnitude(x + ox, y + oy);
        sub.angle(x, y) = polar.angle(x + ox, y + oy);
      }
    }
    const BinaryMask& m = rec.masks[static_cast<std::size_t>(t)];
    const auto count = count_set(m);
    if (count > 0) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m.size(); ++i)
        if (m.values()[i]) acc += sub.magnitude.values()[i];
      rec.mean_magnitude[static_cast<std::size_t>(t)] = acc / static_cast<double>(count);
      rec.angle[static_cast<std::size_t>(t)] = metrics::weighted_direction(sub, m);
    }
    flows.push_back(std::move(sub));
  }
  flow_seconds += seconds_since(t0);

  t0 = Clock::now();
  rec.hematocrit = metrics::hematocrit_series(rec);
  rec.velocity = metrics::velocity_vector(rec);
  rec.velocity_class = metrics::classify_velocity(rec.velocity, cfg.thresholds);
  const auto values = std::count_if(rec.mean_magnitude.begin(), rec.mean_magnitude.end(),
                                    [](const auto& v) { return v.has_value(); });
  rec.heterogeneity = values >= 2 ? metrics::heterogeneity(rec) : metrics::Heterogeneity{};
  try {
    rec.direction = metrics::flow_direction(rec, flows);
  } catch (const UndefinedMetricError&) {
    rec.direction.reset();
  }
  metric_seconds += seconds_since(t0);
}

}  // namespace

Plane velocity_preprocess(const Frame& crop_frame, const VelocityPreprocess& p) {
  Frame f = crop_frame;
  const int side = std::min(f.width(), f.height());
  if (p.median_kernel > 1 && p.median_kernel <= side) f = imgproc::median_blur(f, p.median_kernel);
  if (p.gaussian_window > 1) f = imgproc::gaussian_blur(f, p.gaussian_window);
  f = imgproc::enhance_contrast(f, p.contrast_cutoff, p.contrast_mode);
  if (p.nlm) f = imgproc::nlm_denoise(f, p.nlm_params);
  return to_luma(f);
}

Detector::Detector(const PipelineConfig& cfg, const cnn::CnnModel& model, int width, int height)
    : cfg_(cfg), model_(model), background_(width, height, cfg.gmm) {}

std::vector<cnn::Detection> Detector::push(const Frame& frame) {
  if (frame.width() != background_.width() || frame.height() != background_.height()) {
    throw ParameterError("detector: frame size changed mid-sequence");
  }
  auto t0 = Clock::now();
  const Plane pre = imgproc::median_blur(to_luma(frame), cfg_.median_kernel);
  const Plane smooth = imgproc::gaussian_blur(pre, cfg_.background_blur_window);
  timing_.preprocess += seconds_since(t0);

  t0 = Clock::now();
  background_.update(smooth);
  roi::SalienceParams sp = cfg_.salience;
  sp.area = area_bounds(cfg_, sp.area);
  Frame gray = gray_frame(pre);
  auto salient = roi::salience_rois(gray, background_, sp);
  recent_.push_back(std::move(gray));
  if (recent_.size() > 5) recent_.erase(recent_.begin());
  std::vector<roi::RoiBox> moving;
  if (recent_.size() == 5) {
    roi::MotionParams mp = cfg_.motion;
    mp.area = area_bounds(cfg_, mp.area);
    moving = roi::motion_rois(recent_, mp);
  }
  const auto merged = roi::merge_rois(salient, moving, cfg_.merge_iou);
  timing_.roi += seconds_since(t0);

  t0 = Clock::now();
  auto dets = cnn::classify_rois(model_, frame, merged, cfg_.cnn_threshold, cfg_.cnn_padding);
  timing_.cnn += seconds_since(t0);
  ++frames_seen_;
  return dets;
}

Analysis analyze(const FrameSequence& frames, const cnn::CnnModel& model, const PipelineConfig& cfg,
                 const std::string& video_id) {
  if (frames.size() < 6) throw ParameterError("analyze: at least 6 frames required");
  const int w = frames.front().width();
  const int h = frames.front().height();
  for (const auto& f : frames) {
    require_valid_frame(f, "analyze");
    if (f.width() != w || f.height() != h) throw ParameterError("analyze: frames differ in size");
  }
  metrics::validate(cfg.thresholds);
  flow::validate(cfg.flow);
  const int n = static_cast<int>(frames.size());

  Analysis out;
  Detector det(cfg, model, w, h);
  std::vector<std::vector<roi::RoiBox>> boxes;
  for (const auto& f : frames) {
    out.detections.push_back(det.push(f));
    std::vector<roi::RoiBox> b;
    for (const auto& d : out.detections.back()) b.push_back(d.box);
    boxes.push_back(std::move(b));
  }
  StageTiming timing = det.timing();

  auto t0 = Clock::now();
  const int min_frames =
      std::max(cfg.min_track_frames, static_cast<int>(std::ceil(cfg.min_track_fraction * n - 1e-9)));
  std::vector<metrics::CapillaryRecord> tracks;
  for (auto& t : metrics::associate_tracks(boxes, cfg.track)) {
    const auto seen = std::count_if(t.boxes.begin(), t.boxes.end(), [](const auto& b) { return b.has_value(); });
    if (seen >= min_frames) tracks.push_back(std::move(t));
  }
  tracks = consolidate(std::move(tracks), cfg.track.iou_min);
  timing.track += seconds_since(t0);

  std::vector<double> mask_s(tracks.size()), flow_s(tracks.size()), metric_s(tracks.size());
  std::vector<bool> keep(tracks.size(), true);
  parallel_for(static_cast<int>(tracks.size()), cfg.threads, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      measure(tracks[k], frames, cfg, mask_s[k], flow_s[k], metric_s[k]);
    } catch (const UndefinedMetricError&) {
      keep[k] = false;  // no red-cell area in any frame
    }
  });
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    timing.mask += mask_s[i];
    timing.flow += flow_s[i];
    timing.metrics += metric_s[i];
    if (keep[i]) out.records.push_back(std::move(tracks[i]));
  }
  for (std::size_t i = 0; i < out.records.size(); ++i) out.records[i].id = static_cast<int>(i);

  t0 = Clock::now();
  AnalysisReport& r = out.report;
  r.video_id = video_id;
  r.frame_count = n;
  r.width = w;
  r.height = h;
  r.fps = cfg.fps;
  r.pixel_pitch_um = cfg.pixel_pitch_um;
  r.total_capillary_density = metrics::total_capillary_density(out.records, w, h);
  r.functional_capillary_density = metrics::functional_capillary_density(out.records, w, h, cfg.thresholds.t1);
  for (const auto& rec : out.records) {
    CapillarySummary s;
    s.id = rec.id;
    s.box = rec.detection_box();
    s.first_frame = n;
    s.last_frame = -1;
    for (int f = 0; f < n; ++f) {
      if (!rec.boxes[static_cast<std::size_t>(f)]) continue;
      s.first_frame = std::min(s.first_frame, f);
      s.last_frame = std::max(s.last_frame, f);
      ++s.detected_frames;
    }
    s.velocity_class = metrics::to_string(rec.velocity_class);
    s.velocity = rec.velocity;
    s.heterogeneity_std = rec.heterogeneity.std;
    s.heterogeneity_cv = rec.heterogeneity.cv;
    double hsum = 0.0, asum = 0.0;
    for (double v : rec.hematocrit) hsum += v;
    for (long long a : rec.area_px) asum += static_cast<double>(a);
    s.mean_hematocrit = hsum / static_cast<double>(rec.hematocrit.size());
    s.mean_area_px = asum / static_cast<double>(rec.area_px.size());
    s.direction = rec.direction;
    r.capillaries.push_back(std::move(s));
  }
  timing.metrics += seconds_since(t0);

  const double per = 1.0 / n;
  r.seconds_per_frame = {timing.preprocess * per, timing.roi * per,   timing.cnn * per,    timing.mask * per,
                         timing.track * per,      timing.flow * per,  timing.metrics * per};
  return out;
}

}  // namespace capnet::pipeline
