#pragma once

#include <optional>
#include <vector>

#include "capnet/image.hpp"

namespace capnet::imgproc {

/// Per-channel median over a kernel x kernel window, clamp-to-edge borders.
Frame median_blur(const Frame& frame, int kernel);
Plane median_blur(const Plane& plane, int kernel);

/// Conventional sigma for a Gaussian window: 0.3 * ((window - 1) * 0.5 - 1) + 0.8.
double default_sigma(int window);

/// Normalized 1-D Gaussian taps of length `window`.
std::vector<double> gaussian_kernel(int window, double sigma);

/// Separable Gaussian blur with clamp-to-edge borders. sigma defaults to default_sigma(window).
Frame gaussian_blur(const Frame& frame, int window, std::optional<double> sigma = std::nullopt);
Plane gaussian_blur(const Plane& plane, int window, std::optional<double> sigma = std::nullopt);

/// Mean over a (2*radius+1)^2 box with clamp-to-edge borders.
Plane box_mean(const Plane& plane, int radius);

enum class ContrastMode {
  DarkTail,   ///< trim `cutoff` of the cumulative mass from the dark end only
  Symmetric,  ///< trim cutoff/2 from each end
};

/// Histogram-percentile contrast stretch, per channel, 256 bins.
Frame enhance_contrast(const Frame& frame, double cutoff_fraction = 0.10,
                       ContrastMode mode = ContrastMode::DarkTail);

struct LabPlanes {
  Plane L;  ///< [0, 100]
  Plane A;  ///< roughly [-128, 127]
  Plane B;
};

/// sRGB (D65) <-> CIELAB.
LabPlanes rgb_to_lab(const Frame& rgb);
Frame lab_to_rgb(const LabPlanes& lab);

struct NlmParams {
  double h = 0.08;  ///< filtering strength in unit-intensity (L/100, AB/100) scale
  int patch = 7;
  int search = 21;
};

/// Non-local means in CIELAB: L denoised alone, A and B jointly.
/// Gray frames are denoised directly on their single plane.
Frame nlm_denoise(const Frame& frame, const NlmParams& params = {});

/// Single-plane non-local means with Gaussian-weighted patch distance; values in any range,
/// `h` in the same units as the values.
Plane nlm_plane(const Plane& plane, double h, int patch, int search);
/// Joint variant: one weight per (pixel, offset) from the summed distances of all planes.
std::vector<Plane> nlm_joint(const std::vector<Plane>& planes, double h, int patch, int search);

struct SsimResult {
  double mean = 0.0;
  Grid<double> map;
};

/// Windowed SSIM with a uniform window, C1 = (0.01 L)^2, C2 = (0.03 L)^2, L = 1.
/// RGB inputs are compared on luma.
SsimResult ssim(const Frame& reference, const Frame& test, int window = 7);
SsimResult ssim(const Plane& reference, const Plane& test, int window = 7);

/// True where value > Gaussian-weighted local mean (block x block) + offset.
BinaryMask adaptive_gaussian_threshold(const Plane& plane, int block = 31, double offset = 0.02);

BinaryMask erode3x3(const BinaryMask& mask);
BinaryMask dilate3x3(const BinaryMask& mask);
/// Erosion followed by dilation with a 3x3 square; out-of-image neighbours are ignored.
BinaryMask morph_open3x3(const BinaryMask& mask);
BinaryMask morph_close3x3(const BinaryMask& mask);

}  // namespace capnet::imgproc
