#pragma once

#include <cstdint>
#include <vector>

#include "capnet/image.hpp"

namespace capnet::roi {

struct GmmParams {
  int max_components = 5;
  double learning_rate = 0.01;
  /// Squared Mahalanobis distance under which a sample matches a component.
  double variance_threshold = 16.0;
  /// Cumulative weight of the components that make up the background.
  double background_ratio = 0.9;
  /// Variance given to a freshly created component: (15/255)^2.
  double variance_init = (15.0 / 255.0) * (15.0 / 255.0);
  double variance_min = 1e-4;
  double variance_max = 0.25;
  /// Weight decay per update that lets unused components die out.
  double complexity_prior = 0.05;

  bool operator==(const GmmParams&) const = default;
};

/// Per-pixel adaptive Gaussian mixture over gray intensities.
///
/// Each pixel keeps up to `max_components` components ordered by weight / sigma,
/// descending. A sample updates the nearest matching component; samples with no
/// match spawn a new component (replacing the weakest when the pixel is full).
/// Components whose weight decays below zero are dropped, so the number of
/// components per pixel adapts to the observed scene.
class BackgroundModel {
 public:
  BackgroundModel(int width, int height, GmmParams params = {});

  /// Absorb one gray frame; returns the foreground mask classified against the
  /// model state before the update.
  BinaryMask update(const Plane& frame);

  /// Weighted mean of the background components of every pixel.
  Plane background() const;

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  const GmmParams& params() const noexcept { return params_; }
  long long frames_seen() const noexcept { return frames_seen_; }

  int component_count(int x, int y) const;
  double weight(int x, int y, int k) const;
  double mean(int x, int y, int k) const;
  double variance(int x, int y, int k) const;

  bool operator==(const BackgroundModel&) const = default;

 private:
  std::size_t slot(std::size_t pixel, int k) const noexcept {
    return pixel * static_cast<std::size_t>(params_.max_components) + static_cast<std::size_t>(k);
  }

  int width_ = 0;
  int height_ = 0;
  GmmParams params_;
  long long frames_seen_ = 0;
  std::vector<std::uint8_t> count_;
  std::vector<double> weight_;
  std::vector<double> mean_;
  std::vector<double> var_;
};

/// Functional form: updates `model` in place with a gray frame and returns the foreground.
BinaryMask bg_update(BackgroundModel& model, const Frame& frame);

/// Background estimate as a gray frame. Throws StateError before the first update.
Frame bg_image(const BackgroundModel& model);

}  // namespace capnet::roi
