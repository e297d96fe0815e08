#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "capnet/classifier.hpp"
#include "capnet/error.hpp"
#include "capnet/rng.hpp"

namespace capnet::cnn {

namespace {

constexpr int kKernel = 3;

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
void im2col(std::span<const T> in, int channels, int size, std::vector<T>& col) {
  const int area = size * size;
  col.assign(static_cast<std::size_t>(channels) * kKernel * kKernel * area, T{0});
  for (int c = 0; c < channels; ++c) {
    const T* src = in.data() + static_cast<std::size_t>(c) * area;
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        T* dst = col.data() + (static_cast<std::size_t>(c) * kKernel * kKernel + ky * kKernel + kx) * area;
        for (int y = 0; y < size; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= size) continue;
          for (int x = 0; x < size; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= size) continue;
            dst[y * size + x] = src[sy * size + sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const std::vector<T>& col, int channels, int size, std::vector<T>& out) {
  const int area = size * size;
  out.assign(static_cast<std::size_t>(channels) * area, T{0});
  for (int c = 0; c < channels; ++c) {
    T* dst = out.data() + static_cast<std::size_t>(c) * area;
    for (int ky = 0; ky < kKernel; ++ky) {
      for (int kx = 0; kx < kKernel; ++kx) {
        const T* src = col.data() + (static_cast<std::size_t>(c) * kKernel * kKernel + ky * kKernel + kx) * area;
        for (int y = 0; y < size; ++y) {
          const int sy = y + ky - 1;
          if (sy < 0 || sy >= size) continue;
          for (int x = 0; x < size; ++x) {
            const int sx = x + kx - 1;
            if (sx < 0 || sx >= size) continue;
            dst[sy * size + sx] += src[y * size + x];
          }
        }
      }
    }
  }
}

// Fixed summation order whatever the buffer alignment: 16 interleaved partial sums.
template <typename T>
T dot(const T* a, const T* b, int n) {
  T acc[16] = {};
  int i = 0;
  for (; i + 16 <= n; i += 16)
    for (int k = 0; k < 16; ++k) acc[k] += a[i + k] * b[i + k];
  T s{0};
  for (int k = 0; k < 16; ++k) s += acc[k];
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Activations kept for the backward pass.
template <typename T>
struct ConvCache {
  int in_channels = 0;
  int out_channels = 0;
  int size = 0;             // input spatial size
  std::vector<T> col;       // im2col of the input
  std::vector<T> pre;       // conv output before ReLU, out x size x size
  std::vector<int> argmax;  // pooled index into pre, out x (size/2)^2
  std::vector<T> pooled;
};

template <typename T>
struct DenseCache {
  std::vector<T> in;
  std::vector<T> pre;
};

template <typename T>
struct Trace {
  std::vector<ConvCache<T>> convs;
  std::vector<DenseCache<T>> denses;
  std::vector<T> logits;
};

template <typename T>
void run_forward(const Network<T>& net, std::span<const T> input, Trace<T>& tr) {
  const auto& a = net.arch;
  const std::size_t expected = static_cast<std::size_t>(a.input_channels) * a.input_size * a.input_size;
  if (input.size() != expected) throw ParameterError("cnn: input tensor has the wrong size");

  const std::size_t nconv = a.conv_channels.size();
  tr.convs.resize(nconv);
  std::vector<T> current(input.begin(), input.end());
  int channels = a.input_channels;
  int size = a.input_size;
  for (std::size_t l = 0; l < nconv; ++l) {
    auto& cc = tr.convs[l];
    cc.in_channels = channels;
    cc.out_channels = a.conv_channels[l];
    cc.size = size;
    const int area = size * size;
    const int k = channels * kKernel * kKernel;
    im2col<T>(current, channels, size, cc.col);
    cc.pre.resize(static_cast<std::size_t>(cc.out_channels) * area);
    CMapRM<T> w(net.params.weights[l].data(), cc.out_channels, k);
    CMapRM<T> col(cc.col.data(), k, area);
    MapRM<T> pre(cc.pre.data(), cc.out_channels, area);
    pre.noalias() = w * col;
    for (int o = 0; o < cc.out_channels; ++o) pre.row(o).array() += net.params.biases[l][static_cast<std::size_t>(o)];

    const int half = size / 2;
    cc.pooled.assign(static_cast<std::size_t>(cc.out_channels) * half * half, T{0});
    cc.argmax.assign(cc.pooled.size(), 0);
    for (int o = 0; o < cc.out_channels; ++o) {
      const T* src = cc.pre.data() + static_cast<std::size_t>(o) * area;
      for (int y = 0; y < half; ++y) {
        for (int x = 0; x < half; ++x) {
          int best = (2 * y) * size + 2 * x;
          for (int idx : {(2 * y) * size + 2 * x + 1, (2 * y + 1) * size + 2 * x, (2 * y + 1) * size + 2 * x + 1}) {
            if (src[idx] > src[best]) best = idx;
          }
          const std::size_t out_idx = static_cast<std::size_t>(o) * half * half + y * half + x;
          // ReLU commutes with max.
          cc.pooled[out_idx] = std::max(src[best], T{0});
          cc.argmax[out_idx] = o * area + best;
        }
      }
    }
    current = cc.pooled;
    channels = cc.out_channels;
    size = half;
  }

  const std::size_t ndense = net.params.weights.size() - nconv;
  tr.denses.resize(ndense);
  for (std::size_t d = 0; d < ndense; ++d) {
    const std::size_t l = nconv + d;
    auto& dc = tr.denses[d];
    dc.in = current;
    const int n_in = static_cast<int>(dc.in.size());
    const int n_out = static_cast<int>(net.params.biases[l].size());
    dc.pre.resize(static_cast<std::size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
      const T* w = net.params.weights[l].data() + static_cast<std::size_t>(o) * n_in;
      dc.pre[static_cast<std::size_t>(o)] = dot(w, dc.in.data(), n_in) + net.params.biases[l][static_cast<std::size_t>(o)];
    }
    current = dc.pre;
    if (d + 1 < ndense) {
      for (T& v : current) v = std::max(v, T{0});
    }
  }
  tr.logits = current;
}

// Accumulates parameter gradients for one sample given dL/dlogits.
template <typename T>
void run_backward(const Network<T>& net, const Trace<T>& tr, std::vector<T> grad, ParamSet<T>& g) {
  const std::size_t nconv = tr.convs.size();
  const std::size_t ndense = tr.denses.size();
  for (std::size_t d = ndense; d-- > 0;) {
    const std::size_t l = nconv + d;
    const auto& dc = tr.denses[d];
    if (d + 1 < ndense) {
      for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(dc.pre[i] > T{0})) grad[i] = T{0};
      }
    }
    const int n_in = static_cast<int>(dc.in.size());
    const int n_out = static_cast<int>(grad.size());
    MapRM<T> gw(g.weights[l].data(), n_out, n_in);
    Eigen::Map<const Vec<T>> dy(grad.data(), n_out);
    Eigen::Map<const Vec<T>> x(dc.in.data(), n_in);
    gw.noalias() += dy * x.transpose();
    Eigen::Map<Vec<T>>(g.biases[l].data(), n_out) += dy;
    std::vector<T> dx(static_cast<std::size_t>(n_in), T{0});
    for (int o = 0; o < n_out; ++o) {
      const T* w = net.params.weights[l].data() + static_cast<std::size_t>(o) * n_in;
      const T go = grad[static_cast<std::size_t>(o)];
      for (int i = 0; i < n_in; ++i) dx[static_cast<std::size_t>(i)] += go * w[i];
    }
    grad = std::move(dx);
  }

  std::vector<T> dpre;
  std::vector<T> dcol;
  for (std::size_t l = nconv; l-- > 0;) {
    const auto& cc = tr.convs[l];
    const int area = cc.size * cc.size;
    const int k = cc.in_channels * kKernel * kKernel;
    dpre.assign(static_cast<std::size_t>(cc.out_channels) * area, T{0});
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const int idx = cc.argmax[i];
      if (cc.pre[static_cast<std::size_t>(idx)] > T{0}) dpre[static_cast<std::size_t>(idx)] += grad[i];
    }
    CMapRM<T> dz(dpre.data(), cc.out_channels, area);
    CMapRM<T> col(cc.col.data(), k, area);
    MapRM<T>(g.weights[l].data(), cc.out_channels, k).noalias() += dz * col.transpose();
    for (int o = 0; o < cc.out_channels; ++o) {
      const T* row = dpre.data() + static_cast<std::size_t>(o) * area;
      T s{0};
      for (int i = 0; i < area; ++i) s += row[i];
      g.biases[l][static_cast<std::size_t>(o)] += s;
    }
    if (l == 0) break;
    dcol.resize(static_cast<std::size_t>(k) * area);
    CMapRM<T> w(net.params.weights[l].data(), cc.out_channels, k);
    MapRM<T>(dcol.data(), k, area).noalias() = w.transpose() * dz;
    col2im<T>(dcol, cc.in_channels, cc.size, grad);
  }
}

template <typename T>
ParamSet<T> zeros_like(const ParamSet<T>& p) {
  ParamSet<T> z;
  for (const auto& w : p.weights) z.weights.emplace_back(w.size(), T{0});
  for (const auto& b : p.biases) z.biases.emplace_back(b.size(), T{0});
  return z;
}

}  // namespace

template <typename T>
std::size_t ParamSet<T>::size() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

template struct ParamSet<float>;
template struct ParamSet<double>;

void validate(const Architecture& a) {
  if (a.input_channels < 1 || a.classes < 2 || a.hidden_units < 0 || a.conv_channels.empty()) {
    throw ParameterError("cnn: invalid architecture");
  }
  const int shrink = 1 << a.conv_channels.size();
  if (a.input_size < shrink || a.input_size % shrink != 0) {
    throw ParameterError("cnn: input size must be divisible by 2^(conv layers)");
  }
  for (int c : a.conv_channels) {
    if (c < 1) throw ParameterError("cnn: invalid channel count");
  }
}

std::vector<LayerDesc> layer_descs(const Architecture& a) {
  validate(a);
  std::vector<LayerDesc> out;
  int in = a.input_channels;
  for (int c : a.conv_channels) {
    out.push_back({LayerKind::Conv, in, c, kKernel});
    in = c;
  }
  const int final_size = a.input_size >> a.conv_channels.size();
  int flat = in * final_size * final_size;
  if (a.hidden_units > 0) {
    out.push_back({LayerKind::Dense, flat, a.hidden_units, 1});
    flat = a.hidden_units;
  }
  out.push_back({LayerKind::Dense, flat, a.classes, 1});
  return out;
}

Architecture architecture_from_descs(const std::vector<LayerDesc>& descs) {
  Architecture a;
  a.conv_channels.clear();
  std::size_t i = 0;
  int prev_out = 0;
  for (; i < descs.size() && descs[i].kind == LayerKind::Conv; ++i) {
    const auto& d = descs[i];
    if (d.kernel != kKernel) throw FormatError("model: unsupported conv kernel");
    if (i == 0) {
      a.input_channels = d.in;
    } else if (d.in != prev_out) {
      throw FormatError("model: conv channel chain broken");
    }
    a.conv_channels.push_back(d.out);
    prev_out = d.out;
  }
  const std::size_t ndense = descs.size() - i;
  if (a.conv_channels.empty() || ndense < 1 || ndense > 2) throw FormatError("model: unsupported layer stack");
  for (std::size_t j = i; j < descs.size(); ++j) {
    if (descs[j].kind != LayerKind::Dense || descs[j].kernel != 1) throw FormatError("model: unsupported layer kind");
  }
  const int flat = descs[i].in;
  if (flat % prev_out != 0) throw FormatError("model: dense input does not match conv output");
  const int cells = flat / prev_out;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(cells))));
  if (side < 1 || side * side != cells) throw FormatError("model: dense input is not a square feature map");
  a.input_size = side << a.conv_channels.size();
  if (ndense == 2) {
    a.hidden_units = descs[i].out;
    if (descs[i + 1].in != a.hidden_units) throw FormatError("model: dense chain broken");
    a.classes = descs[i + 1].out;
  } else {
    a.hidden_units = 0;
    a.classes = descs[i].out;
  }
  try {
    if (layer_descs(a) != descs) throw FormatError("model: inconsistent layer descriptors");
  } catch (const ParameterError& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  return a;
}

CnnModel zero_model(const Architecture& arch) {
  CnnModel m;
  m.arch = arch;
  for (const auto& d : layer_descs(arch)) {
    m.params.weights.emplace_back(static_cast<std::size_t>(d.out) * d.in * d.kernel * d.kernel, 0.f);
    m.params.biases.emplace_back(static_cast<std::size_t>(d.out), 0.f);
  }
  return m;
}

CnnModel init_model(std::uint64_t seed, const Architecture& arch) {
  CnnModel m = zero_model(arch);
  m.rng_seed = seed;
  Rng rng(seed);
  const auto descs = layer_descs(arch);
  for (std::size_t l = 0; l < descs.size(); ++l) {
    const double fan_in = static_cast<double>(descs[l].in) * descs[l].kernel * descs[l].kernel;
    const double stddev = std::sqrt(2.0 / fan_in);
    for (float& w : m.params.weights[l]) w = static_cast<float>(rng.normal(0.0, stddev));
  }
  return m;
}

template <typename T>
std::vector<T> logits(const Network<T>& net, std::span<const T> input) {
  Trace<T> tr;
  run_forward(net, input, tr);
  return tr.logits;
}

template std::vector<float> logits(const Network<float>&, std::span<const float>);
template std::vector<double> logits(const Network<double>&, std::span<const double>);

std::vector<double> softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

template <typename T>
LossAndGrads<T> loss_and_grads(const Network<T>& net, std::span<const std::vector<T>> inputs,
                               std::span<const int> labels) {
  if (inputs.empty()) throw ParameterError("loss_and_grads: empty batch");
  if (inputs.size() != labels.size()) throw ParameterError("loss_and_grads: inputs and labels differ in length");
  LossAndGrads<T> out;
  out.grads = zeros_like(net.params);
  const double inv_n = 1.0 / static_cast<double>(inputs.size());
  Trace<T> tr;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || label >= net.arch.classes) throw ParameterError("loss_and_grads: label out of range");
    run_forward(net, std::span<const T>(inputs[i]), tr);
    std::vector<double> z(tr.logits.begin(), tr.logits.end());
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    const double log_norm = m + std::log(s);
    out.loss += (log_norm - z[static_cast<std::size_t>(label)]) * inv_n;
    if (std::max_element(z.begin(), z.end()) - z.begin() == label) ++out.correct;
    std::vector<T> dz(z.size());
    for (std::size_t c = 0; c < z.size(); ++c) {
      const double p = std::exp(z[c] - log_norm);
      dz[c] = static_cast<T>((p - (static_cast<int>(c) == label ? 1.0 : 0.0)) * inv_n);
    }
    run_backward(net, tr, std::move(dz), out.grads);
  }
  return out;
}

template LossAndGrads<float> loss_and_grads(const Network<float>&, std::span<const std::vector<float>>,
                                            std::span<const int>);
template LossAndGrads<double> loss_and_grads(const Network<double>&, std::span<const std::vector<double>>,
                                             std::span<const int>);

}  // namespace capnet::cnn
