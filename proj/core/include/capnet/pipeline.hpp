#pragma once

#include <optional>
#include <string>
#include <vector>

#include "capnet/background_model.hpp"
#include "capnet/classifier.hpp"
#include "capnet/flow.hpp"
#include "capnet/imgproc.hpp"
#include "capnet/metrics.hpp"
#include "capnet/roi.hpp"

namespace capnet::pipeline {

struct VelocityPreprocess {
  int median_kernel = 5;
  int gaussian_window = 5;
  double contrast_cutoff = 0.10;
  imgproc::ContrastMode contrast_mode = imgproc::ContrastMode::DarkTail;
  bool nlm = false;
  imgproc::NlmParams nlm_params;
};

struct PipelineConfig {
  double fps = 30.0;
  std::optional<double> pixel_pitch_um;

  int median_kernel = 5;
  int background_blur_window = 31;
  roi::GmmParams gmm;
  roi::SalienceParams salience;
  roi::MotionParams motion;
  double merge_iou = 0.3;

  double cnn_threshold = 0.5;
  double cnn_padding = 0.10;

  metrics::MaskParams mask;
  int mask_margin = 8;
  metrics::TrackParams track;
  int min_track_frames = 3;
  double min_track_fraction = 0.2;

  VelocityPreprocess velocity;
  flow::FlowParams flow;
  int flow_margin = 12;
  metrics::VelocityThresholds thresholds;

  int threads = 1;
};

struct StageTiming {
  double preprocess = 0.0;
  double roi = 0.0;
  double cnn = 0.0;
  double mask = 0.0;
  double track = 0.0;
  double flow = 0.0;
  double metrics = 0.0;
};

struct CapillarySummary {
  int id = 0;
  Rect box;  ///< bounding box of the associated detections
  int first_frame = 0;
  int last_frame = 0;
  int detected_frames = 0;
  std::string velocity_class;
  double velocity = 0.0;
  double heterogeneity_std = 0.0;
  std::optional<double> heterogeneity_cv;
  double mean_hematocrit = 0.0;
  std::optional<double> direction;
  double mean_area_px = 0.0;
};

struct AnalysisReport {
  std::string video_id;
  int frame_count = 0;
  int width = 0;
  int height = 0;
  double fps = 0.0;
  std::optional<double> pixel_pitch_um;
  double total_capillary_density = 0.0;
  double functional_capillary_density = 0.0;
  std::vector<CapillarySummary> capillaries;
  StageTiming seconds_per_frame;
};

struct Analysis {
  AnalysisReport report;
  std::vector<metrics::CapillaryRecord> records;
  std::vector<std::vector<cnn::Detection>> detections;  ///< per frame, after the CNN filter
};

/// Detection stages for one frame sequence: proposals, CNN filter. Exposed for benchmarking.
class Detector {
 public:
  Detector(const PipelineConfig& cfg, const cnn::CnnModel& model, int width, int height);

  /// Feed the next frame; returns the CNN-accepted boxes for it.
  std::vector<cnn::Detection> push(const Frame& frame);

  const StageTiming& timing() const { return timing_; }
  int frames_seen() const { return frames_seen_; }

 private:
  const PipelineConfig& cfg_;
  const cnn::CnnModel& model_;
  roi::BackgroundModel background_;
  std::vector<Frame> recent_;  // preprocessed luma, last 5
  StageTiming timing_;
  int frames_seen_ = 0;
};

/// Full analysis: detection, tracking, masks, flow, metrics. Needs at least 6 frames.
Analysis analyze(const FrameSequence& frames, const cnn::CnnModel& model, const PipelineConfig& cfg,
                 const std::string& video_id = "video");

/// Velocity-path preprocessing of one crop: median, Gaussian, contrast stretch, optional NLM; returns luma.
Plane velocity_preprocess(const Frame& crop, const VelocityPreprocess& p);

}  // namespace capnet::pipeline
