#include "capnet/background_model.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "capnet/error.hpp"

namespace capnet::roi {

namespace {
constexpr int kMaxSupported = 16;
}

BackgroundModel::BackgroundModel(int width, int height, GmmParams params)
    : width_(width), height_(height), params_(params) {
  if (width <= 0 || height <= 0) throw ParameterError("BackgroundModel: non-positive size");
  if (params.max_components < 1 || params.max_components > kMaxSupported) {
    throw ParameterError("BackgroundModel: max_components out of range");
  }
  if (!(params.learning_rate > 0.0 && params.learning_rate <= 1.0)) {
    throw ParameterError("BackgroundModel: learning_rate must lie in (0, 1]");
  }
  if (!(params.variance_min > 0.0 && params.variance_min <= params.variance_max)) {
    throw ParameterError("BackgroundModel: invalid variance bounds");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height;
  count_.assign(n, 0);
  weight_.assign(n * params.max_components, 0.0);
  mean_.assign(n * params.max_components, 0.0);
  var_.assign(n * params.max_components, 0.0);
}

int BackgroundModel::component_count(int x, int y) const {
  return count_[static_cast<std::size_t>(y) * width_ + x];
}
double BackgroundModel::weight(int x, int y, int k) const {
  return weight_[slot(static_cast<std::size_t>(y) * width_ + x, k)];
}
double BackgroundModel::mean(int x, int y, int k) const {
  return mean_[slot(static_cast<std::size_t>(y) * width_ + x, k)];
}
double BackgroundModel::variance(int x, int y, int k) const {
  return var_[slot(static_cast<std::size_t>(y) * width_ + x, k)];
}

BinaryMask BackgroundModel::update(const Plane& frame) {
  if (frame.width() != width_ || frame.height() != height_) {
    throw ParameterError("bg_update: frame does not match model dimensions");
  }
  const int kmax = params_.max_components;
  const double alpha = params_.learning_rate;
  const double decay = alpha * params_.complexity_prior;
  BinaryMask foreground(width_, height_);

  std::array<double, kMaxSupported> w{}, mu{}, var{};
  const auto values = frame.values();
  for (std::size_t p = 0; p < values.size(); ++p) {
    const double x = values[p];
    int n = count_[p];
    for (int k = 0; k < n; ++k) {
      w[static_cast<std::size_t>(k)] = weight_[slot(p, k)];
      mu[static_cast<std::size_t>(k)] = mean_[slot(p, k)];
      var[static_cast<std::size_t>(k)] = var_[slot(p, k)];
    }

    // Nearest component inside the match gate.
    int match = -1;
    double best = params_.variance_threshold;
    for (int k = 0; k < n; ++k) {
      const double d = x - mu[static_cast<std::size_t>(k)];
      const double m2 = d * d / var[static_cast<std::size_t>(k)];
      if (m2 < best) {
        best = m2;
        match = k;
      }
    }

    // Classify against the pre-update state.
    bool is_foreground = true;
    if (match >= 0) {
      double before = 0.0;
      for (int k = 0; k < match; ++k) before += w[static_cast<std::size_t>(k)];
      is_foreground = before >= params_.background_ratio;
    }
    foreground.values()[p] = is_foreground ? 1 : 0;

    if (match >= 0) {
      for (int k = 0; k < n; ++k) {
        const double own = k == match ? 1.0 : 0.0;
        w[static_cast<std::size_t>(k)] += alpha * (own - w[static_cast<std::size_t>(k)]) - decay;
      }
      const auto m = static_cast<std::size_t>(match);
      const double rho = std::min(1.0, alpha / std::max(w[m], alpha));
      const double d = x - mu[m];
      mu[m] += rho * d;
      var[m] = std::clamp(var[m] + rho * (d * d - var[m]), params_.variance_min, params_.variance_max);
    } else {
      for (int k = 0; k < n; ++k) w[static_cast<std::size_t>(k)] += alpha * (0.0 - w[static_cast<std::size_t>(k)]) - decay;
      const int target = n < kmax ? n++ : n - 1;
      w[static_cast<std::size_t>(target)] = alpha;
      mu[static_cast<std::size_t>(target)] = x;
      var[static_cast<std::size_t>(target)] =
          std::clamp(params_.variance_init, params_.variance_min, params_.variance_max);
    }

    // Drop dead components, renormalize, keep sorted by weight / sigma.
    int live = 0;
    double total = 0.0;
    for (int k = 0; k < n; ++k) {
      if (w[static_cast<std::size_t>(k)] > 0.0) {
        w[static_cast<std::size_t>(live)] = w[static_cast<std::size_t>(k)];
        mu[static_cast<std::size_t>(live)] = mu[static_cast<std::size_t>(k)];
        var[static_cast<std::size_t>(live)] = var[static_cast<std::size_t>(k)];
        total += w[static_cast<std::size_t>(live)];
        ++live;
      }
    }
    if (live == 0) {
      // Every component decayed away; restart from the current sample.
      live = 1;
      w[0] = 1.0;
      mu[0] = x;
      var[0] = std::clamp(params_.variance_init, params_.variance_min, params_.variance_max);
      total = 1.0;
    }
    for (int k = 0; k < live; ++k) w[static_cast<std::size_t>(k)] /= total;
    for (int k = 1; k < live; ++k) {
      for (int j = k; j > 0; --j) {
        const auto a = static_cast<std::size_t>(j - 1);
        const auto b = static_cast<std::size_t>(j);
        if (w[b] / std::sqrt(var[b]) > w[a] / std::sqrt(var[a])) {
          std::swap(w[a], w[b]);
          std::swap(mu[a], mu[b]);
          std::swap(var[a], var[b]);
        } else {
          break;
        }
      }
    }

    count_[p] = static_cast<std::uint8_t>(live);
    for (int k = 0; k < live; ++k) {
      weight_[slot(p, k)] = w[static_cast<std::size_t>(k)];
      mean_[slot(p, k)] = mu[static_cast<std::size_t>(k)];
      var_[slot(p, k)] = var[static_cast<std::size_t>(k)];
    }
    for (int k = live; k < kmax; ++k) {
      weight_[slot(p, k)] = 0.0;
      mean_[slot(p, k)] = 0.0;
      var_[slot(p, k)] = 0.0;
    }
  }
  ++frames_seen_;
  return foreground;
}

Plane BackgroundModel::background() const {
  if (frames_seen_ == 0) throw StateError("bg_image: background model has never been updated");
  Plane out(width_, height_);
  for (std::size_t p = 0; p < out.size(); ++p) {
    double cum = 0.0;
    double acc = 0.0;
    const int n = count_[p];
    for (int k = 0; k < n && cum < params_.background_ratio; ++k) {
      acc += weight_[slot(p, k)] * mean_[slot(p, k)];
      cum += weight_[slot(p, k)];
    }
    out.values()[p] = static_cast<float>(std::clamp(acc / cum, 0.0, 1.0));
  }
  return out;
}

BinaryMask bg_update(BackgroundModel& model, const Frame& frame) {
  if (!frame.is_gray()) throw ParameterError("bg_update: expected a gray frame");
  return model.update(frame.plane(0));
}

Frame bg_image(const BackgroundModel& model) { return gray_frame(model.background()); }

}  // namespace capnet::roi
