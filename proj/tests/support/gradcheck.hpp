#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "capnet/classifier.hpp"
#include "capnet/rng.hpp"

namespace capnet::test {

struct GradCheck {
  double worst = 0.0;  ///< largest per-tensor relative error
  int tensors = 0;
};

/// Small random network: conv widths, hidden units and input size drawn from `rng`,
/// biases randomized so every path carries gradient.
inline cnn::Network<double> random_small_net(Rng& rng) {
  cnn::Architecture a;
  const int convs = rng.uniform_int(1, 3);
  a.conv_channels.clear();
  for (int i = 0; i < convs; ++i) a.conv_channels.push_back(rng.uniform_int(1, 3));
  a.input_channels = rng.uniform_int(1, 3);
  a.input_size = (1 << convs) * rng.uniform_int(1, 2);
  if (a.input_size < 4) a.input_size *= 2;
  a.hidden_units = rng.uniform_int(0, 4);
  a.classes = 2;
  auto net = cnn::init_model(rng.next(), a).cast<double>();
  for (auto& b : net.params.biases)
    for (auto& v : b) v = rng.normal(0.0, 0.1);
  return net;
}

inline std::vector<std::vector<double>> random_inputs(Rng& rng, const cnn::Architecture& a, int n) {
  std::vector<std::vector<double>> xs;
  const auto size = static_cast<std::size_t>(a.input_channels * a.input_size * a.input_size);
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(size);
    for (auto& v : x) v = rng.uniform();
    xs.push_back(std::move(x));
  }
  return xs;
}

/// Central differences at `step` on every parameter; per weight/bias tensor the error is
/// ||analytic - numeric|| / max(||analytic|| + ||numeric||, 1e-10).
inline GradCheck check_gradients(cnn::Network<double> net, const std::vector<std::vector<double>>& xs,
                                 const std::vector<int>& ys, double step = 1e-6) {
  const auto analytic = cnn::loss_and_grads<double>(net, xs, ys).grads;
  GradCheck out;
  auto run = [&](std::vector<std::vector<double>>& params, const std::vector<std::vector<double>>& grads) {
    for (std::size_t l = 0; l < params.size(); ++l) {
      double diff = 0.0, na = 0.0, nn = 0.0;
      for (std::size_t i = 0; i < params[l].size(); ++i) {
        const double keep = params[l][i];
        params[l][i] = keep + step;
        const double up = cnn::loss_and_grads<double>(net, xs, ys).loss;
        params[l][i] = keep - step;
        const double down = cnn::loss_and_grads<double>(net, xs, ys).loss;
        params[l][i] = keep;
        const double numeric = (up - down) / (2.0 * step);
        const double a = grads[l][i];
        diff += (a - numeric) * (a - numeric);
        na += a * a;
        nn += numeric * numeric;
      }
      const double rel = std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-10);
      out.worst = std::max(out.worst, rel);
      ++out.tensors;
    }
  };
  run(net.params.weights, analytic.weights);
  run(net.params.biases, analytic.biases);
  return out;
}

}  // namespace capnet::test
