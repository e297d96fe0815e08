#pragma once

#include <optional>
#include <span>
#include <vector>

#include "capnet/flow.hpp"
#include "capnet/image.hpp"
#include "capnet/roi.hpp"

namespace capnet::metrics {

enum class VelocityClass { NoFlow = 0, Slow = 1, Normal = 2, Fast = 3, VeryFast = 4 };

const char* to_string(VelocityClass c);

struct VelocityThresholds {
  double t1 = 0.5;
  double t2 = 0.8;
  double t3 = 1.2;
  std::optional<double> t4;  ///< splits fast / very fast when set
};

void validate(const VelocityThresholds& t);

struct MaskParams {
  int blur_window = 31;
  double blur_sigma = 5.0;
  int block = 31;
  double offset = 0.0125;
};

/// Crop -> Gaussian blur -> red-dominance -> adaptive Gaussian threshold. Mask has the box's size.
BinaryMask capillary_mask(const Frame& frame, const Rect& box, const MaskParams& params = {});

struct Heterogeneity {
  double std = 0.0;
  std::optional<double> cv;  ///< absent when the mean is below 1e-6
};

/// One tracked capillary. Every per-frame series has one entry per analyzed frame.
struct CapillaryRecord {
  int id = 0;
  std::vector<std::optional<Rect>> boxes;  ///< associated detection, absent where unmatched
  Rect region;                             ///< measurement box, frame coordinates
  std::vector<BinaryMask> masks;           ///< region-sized
  std::vector<long long> area_px;
  std::vector<double> hematocrit;
  /// Mean flow magnitude over the frame's mask for the step t -> t+1; absent on the last
  /// frame and where the mask is empty.
  std::vector<std::optional<double>> mean_magnitude;
  std::vector<std::optional<double>> angle;  ///< magnitude-weighted circular mean per frame
  double velocity = 0.0;
  VelocityClass velocity_class = VelocityClass::NoFlow;
  Heterogeneity heterogeneity;
  std::optional<double> direction;

  int frames() const { return static_cast<int>(boxes.size()); }
  /// Bounding box of all associated detections.
  Rect detection_box() const;
};

/// |union of set pixels| / frame_area; all masks share one shape.
double total_capillary_density(std::span<const BinaryMask> masks, double frame_area);

/// Per-frame union density of the records' masks, averaged over frames.
double total_capillary_density(std::span<const CapillaryRecord> records, int width, int height);
/// Same, restricted to records whose time-averaged velocity reaches `no_flow_cutoff`.
double functional_capillary_density(std::span<const CapillaryRecord> records, int width, int height,
                                    double no_flow_cutoff);

/// area_px / max(area_px), clipped to [0,1]. Throws UndefinedMetricError when every mask is empty.
std::vector<double> hematocrit_series(const CapillaryRecord& record);

/// Time average of the present per-frame mean magnitudes.
double velocity_vector(const CapillaryRecord& record);

/// Half-open classes: [0,t1) no flow, [t1,t2) slow, [t2,t3) normal, [t3,inf) fast.
VelocityClass classify_velocity(double v, const VelocityThresholds& t = {});
VelocityClass classify_velocity(const CapillaryRecord& record, const VelocityThresholds& t = {});

/// Population std and cv of a series of at least two values.
Heterogeneity heterogeneity(std::span<const double> series);
Heterogeneity heterogeneity(const CapillaryRecord& record);

/// Circular mean of angles over the mask weighted by magnitude; nullopt when all weights vanish.
std::optional<double> weighted_direction(const flow::PolarFlow& flow, const BinaryMask& mask);

/// Per-frame weighted directions (flows[t] is step t -> t+1 over masks[t], region-sized),
/// averaged circularly over frames. Throws UndefinedMetricError when no flow lies under the masks.
double flow_direction(const CapillaryRecord& record, std::span<const flow::PolarFlow> flows);

struct TrackParams {
  double iou_min = 0.3;
  int gap_max = 5;
};

/// Greedy frame-to-frame IoU association. Returns records with id and boxes filled.
std::vector<CapillaryRecord> associate_tracks(const std::vector<std::vector<roi::RoiBox>>& per_frame,
                                              const TrackParams& params = {});

}  // namespace capnet::metrics
