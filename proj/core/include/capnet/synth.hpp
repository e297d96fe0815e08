#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "capnet/classifier.hpp"
#include "capnet/image.hpp"

namespace capnet::synth {

struct Color {
  double r = 0.0;
  double g = 0.0;
  double b = 0.0;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct TubeSpec {
  std::vector<Vec2> path;  ///< centerline, at least two points
  double width = 12.0;
  double speed = 1.0;               ///< px/frame along the path
  std::vector<double> speed_pattern;  ///< per-step speeds, cycled; replaces `speed` when non-empty
  int direction = 1;                ///< +1 flows from path start to end, -1 back
  double gap_fraction = 0.0;
  std::uint64_t gap_seed = 0;
  double gap_period = 0.0;  ///< 0 picks a period that the video drifts through a whole number of times
};

struct BackgroundSpec {
  Color base{0.85, 0.70, 0.62};
  double texture_amplitude = 0.02;
  double illumination_ramp = 0.0;  ///< relative brightness change per frame
  double vignette = 0.15;
};

struct ArtifactSpec {
  int hair = 0;
  int stains = 0;
};

struct FocusRegion {
  Rect rect;
  double sigma = 2.0;
};

struct SceneSpec {
  int width = 640;
  int height = 480;
  double fps = 30.0;
  int frames = 60;
  std::vector<TubeSpec> tubes;
  BackgroundSpec background;
  ArtifactSpec artifacts;
  double noise_sigma = 0.01;
  std::vector<FocusRegion> focus;
  std::uint64_t seed = 0;
  std::optional<double> pixel_pitch_um;
};

/// Throws ParameterError for a malformed spec.
void validate(const SceneSpec& spec);

struct TubeTruth {
  Rect box;  ///< lumen bounding box
  double length = 0.0;
  std::vector<double> speeds;  ///< per step t -> t+1
  double mean_speed = 0.0;
  double direction = 0.0;      ///< flow angle in [0, 2 pi), y down
  std::vector<double> fill;    ///< visible red-cell fraction of the lumen per frame
  long long lumen_px = 0;
};

struct GroundTruth {
  int width = 0;
  int height = 0;
  int frames = 0;
  std::vector<TubeTruth> tubes;
  Grid<std::uint8_t> lumen;                 ///< 0 or tube index + 1
  std::vector<Grid<std::uint8_t>> visible;  ///< per frame, lumen pixels holding red cells
  std::vector<Rect> hair_boxes;
  std::vector<Rect> stain_boxes;

  /// Union of visible tube pixels over the frame area, averaged over frames.
  double mean_density() const;
};

/// Renders frames on demand; static layers are built once.
class Renderer {
 public:
  explicit Renderer(SceneSpec spec);
  ~Renderer();
  Renderer(Renderer&&) noexcept;
  Renderer& operator=(Renderer&&) noexcept;

  const SceneSpec& spec() const;
  const GroundTruth& truth() const;
  Frame frame(int t) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct Video {
  FrameSequence frames;
  GroundTruth truth;
};

Video render_video(const SceneSpec& spec);

/// Parameters of randomly drawn scenes.
struct SceneDistribution {
  int width = 640;
  int height = 480;
  int frames = 60;
  int min_tubes = 1;
  int max_tubes = 5;
  double min_width = 10.0;
  double max_width = 14.0;
  double min_length = 40.0;
  double max_length = 70.0;
  double min_speed = 0.0;
  double max_speed = 2.0;
  double max_gap_fraction = 0.4;
  int max_hair = 2;
  int max_stains = 3;
  double focus_fraction = 0.2;
  double noise_sigma = 0.01;
  double max_illumination_ramp = 0.001;
};

SceneSpec random_scene(const SceneDistribution& dist, std::uint64_t seed);

/// Centerline of a tube placed at `center` with direction `angle` (radians, y down).
std::vector<Vec2> straight_path(Vec2 center, double length, double angle);

/// Balanced capillary / non-capillary patches cut from random scenes.
std::vector<cnn::Patch> make_patch_dataset(const SceneDistribution& dist, int n, std::uint64_t seed);

}  // namespace capnet::synth
