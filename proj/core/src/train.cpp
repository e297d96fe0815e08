#include <algorithm>
#include <cmath>
#include <numeric>

#include "capnet/classifier.hpp"
#include "capnet/error.hpp"
#include "capnet/rng.hpp"

namespace capnet::cnn {

namespace {

constexpr std::size_t kPatchValues = 3u * kPatchSize * kPatchSize;

std::array<double, 2> to_probs(const std::vector<double>& z) {
  const auto p = softmax(z);
  return {p[0], p[1]};
}

template <typename T>
std::vector<T> patch_tensor(const Patch& patch) {
  require_valid_patch(patch);
  return std::vector<T>(patch.data.begin(), patch.data.end());
}

int label_of(const Patch& p) {
  if (!p.label) throw ParameterError("cnn: unlabeled patch");
  return static_cast<int>(*p.label);
}

std::vector<float> flipped(const std::vector<float>& data, bool horizontal, bool vertical) {
  std::vector<float> out(data.size());
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < kPatchSize; ++y) {
      const int sy = vertical ? kPatchSize - 1 - y : y;
      for (int x = 0; x < kPatchSize; ++x) {
        const int sx = horizontal ? kPatchSize - 1 - x : x;
        out[(static_cast<std::size_t>(c) * kPatchSize + y) * kPatchSize + x] =
            data[(static_cast<std::size_t>(c) * kPatchSize + sy) * kPatchSize + sx];
      }
    }
  }
  return out;
}

bool all_finite(const ParamSet<float>& p) {
  for (const auto& w : p.weights)
    for (float v : w)
      if (!std::isfinite(v)) return false;
  for (const auto& b : p.biases)
    for (float v : b)
      if (!std::isfinite(v)) return false;
  return true;
}

struct Adam {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long step = 0;

  // Tensors listed weights first, then biases.
  static std::vector<std::vector<float>*> tensors(ParamSet<float>& p) {
    std::vector<std::vector<float>*> out;
    for (auto& w : p.weights) out.push_back(&w);
    for (auto& b : p.biases) out.push_back(&b);
    return out;
  }

  void apply(ParamSet<float>& params, ParamSet<float>& grads, const TrainConfig& cfg) {
    auto ps = tensors(params);
    auto gs = tensors(grads);
    if (m.empty()) {
      for (auto* t : ps) {
        m.emplace_back(t->size(), 0.0);
        v.emplace_back(t->size(), 0.0);
      }
    }
    ++step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t t = 0; t < ps.size(); ++t) {
      auto& pt = *ps[t];
      const auto& gt = *gs[t];
      auto& mt = m[t];
      auto& vt = v[t];
      for (std::size_t i = 0; i < pt.size(); ++i) {
        const double g = gt[i];
        mt[i] = cfg.beta1 * mt[i] + (1.0 - cfg.beta1) * g;
        vt[i] = cfg.beta2 * vt[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = mt[i] / c1;
        const double vhat = vt[i] / c2;
        pt[i] = static_cast<float>(pt[i] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
      }
    }
  }
};

}  // namespace

void require_valid_patch(const Patch& patch) {
  if (patch.data.size() != kPatchValues) throw ParameterError("patch: expected 64x64x3 values");
  for (float v : patch.data) {
    if (!(v >= 0.f && v <= 1.f)) throw ParameterError("patch: value outside [0,1]");
  }
}

Patch patch_from_frame(const Frame& frame, std::optional<Label> label) {
  if (frame.width() != kPatchSize || frame.height() != kPatchSize) throw ParameterError("patch: frame must be 64x64");
  if (!frame.is_gray() && !frame.is_rgb()) throw ParameterError("patch: frame must have 1 or 3 channels");
  Patch p;
  p.label = label;
  p.data.reserve(kPatchValues);
  for (int c = 0; c < 3; ++c) {
    const Plane& src = frame.plane(frame.is_gray() ? 0 : c);
    p.data.insert(p.data.end(), src.values().begin(), src.values().end());
  }
  require_valid_patch(p);
  return p;
}

Frame patch_to_frame(const Patch& patch) {
  require_valid_patch(patch);
  std::vector<Plane> planes;
  for (int c = 0; c < 3; ++c) {
    Plane pl(kPatchSize, kPatchSize);
    std::copy_n(patch.data.begin() + static_cast<std::ptrdiff_t>(c) * kPatchSize * kPatchSize,
                kPatchSize * kPatchSize, pl.values().begin());
    planes.push_back(std::move(pl));
  }
  return Frame(std::move(planes));
}

Patch extract_patch(const Frame& frame, const Rect& box, double padding_fraction) {
  if (box.empty() || clip(box, frame.width(), frame.height()) != box) {
    throw ParameterError("extract_patch: box outside frame");
  }
  const int px = static_cast<int>(std::lround(padding_fraction * box.w));
  const int py = static_cast<int>(std::lround(padding_fraction * box.h));
  const Rect padded = clip({box.x - px, box.y - py, box.w + 2 * px, box.h + 2 * py}, frame.width(), frame.height());
  return patch_from_frame(resize_bilinear(crop(frame, padded), kPatchSize, kPatchSize));
}

std::array<double, 2> forward(const CnnModel& model, const Patch& patch) {
  const auto net = model.cast<double>();
  const auto x = patch_tensor<double>(patch);
  return to_probs(logits<double>(net, x));
}

std::array<double, 2> forward_fast(const CnnModel& model, const Patch& patch) {
  const auto x = patch_tensor<float>(patch);
  const auto z = logits<float>(model, x);
  return to_probs(std::vector<double>(z.begin(), z.end()));
}

LossAndGrads<double> loss_and_grads(const CnnModel& model, std::span<const Patch> batch) {
  std::vector<std::vector<double>> xs;
  std::vector<int> labels;
  for (const auto& p : batch) {
    labels.push_back(label_of(p));
    xs.push_back(patch_tensor<double>(p));
  }
  return loss_and_grads<double>(model.cast<double>(), xs, labels);
}

Evaluation evaluate(const CnnModel& model, std::span<const Patch> data) {
  if (data.empty()) throw ParameterError("evaluate: empty data");
  Evaluation ev;
  int correct = 0;
  for (const auto& p : data) {
    const int y = label_of(p);
    const auto prob = forward_fast(model, p);
    ev.loss -= std::log(std::max(prob[static_cast<std::size_t>(y)], 1e-300));
    if ((prob[1] >= prob[0] ? 1 : 0) == y) ++correct;
  }
  ev.loss /= static_cast<double>(data.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return ev;
}

std::vector<Detection> classify_rois(const CnnModel& model, const Frame& frame, std::span<const roi::RoiBox> boxes,
                                     double threshold, double padding_fraction) {
  std::vector<Detection> out;
  for (const auto& b : boxes) {
    const auto prob = forward_fast(model, extract_patch(frame, b.rect, padding_fraction));
    if (prob[1] >= threshold) out.push_back({b, prob[1]});
  }
  return out;
}

TrainResult train(CnnModel model, std::span<const Patch> data, const TrainConfig& cfg) {
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0.0)) {
    throw ParameterError("train: epochs, batch size and learning rate must be positive");
  }
  if (std::fabs(cfg.train_fraction + cfg.validation_fraction - 1.0) > 1e-9 || !(cfg.train_fraction > 0.0) ||
      !(cfg.validation_fraction > 0.0)) {
    throw ParameterError("train: split fractions must be positive and sum to 1");
  }
  if (data.size() < 20) throw TrainingError("train: at least 20 examples required");
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) {
    require_valid_patch(data[i]);
    by_class[static_cast<std::size_t>(label_of(data[i]))].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) throw TrainingError("train: data must contain both classes");

  // Stratified split so both sides see both classes.
  Rng split_rng(derive_seed(cfg.seed, 0));
  std::vector<std::size_t> train_idx;
  std::vector<Patch> val;
  for (auto& idx : by_class) {
    split_rng.shuffle(idx);
    auto n_train = static_cast<std::size_t>(std::lround(cfg.train_fraction * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    for (std::size_t k = n_train; k < idx.size(); ++k) val.push_back(data[idx[k]]);
  }
  std::sort(train_idx.begin(), train_idx.end());

  TrainResult result;
  result.model = model;
  double best_acc = -1.0;
  Adam adam;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    auto order = train_idx;
    rng.shuffle(order);
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::vector<float>> xs;
      std::vector<int> ys;
      for (std::size_t k = start; k < end; ++k) {
        const Patch& p = data[order[k]];
        if (cfg.flip_augment) {
          const auto bits = rng.next();
          xs.push_back(flipped(p.data, (bits & 1u) != 0, (bits & 2u) != 0));
        } else {
          xs.push_back(p.data);
        }
        ys.push_back(label_of(p));
      }
      auto lg = loss_and_grads<float>(model, xs, ys);
      if (!std::isfinite(lg.loss)) throw TrainingError("train: non-finite loss");
      loss_sum += lg.loss * static_cast<double>(end - start);
      correct += lg.correct;
      adam.apply(model.params, lg.grads, cfg);
      if (!all_finite(model.params)) throw TrainingError("train: non-finite parameter after update");
    }
    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(order.size());
    st.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    const auto ev = evaluate(model, val);
    st.val_loss = ev.loss;
    st.val_accuracy = ev.accuracy;
    result.history.push_back(st);
    if (ev.accuracy > best_acc) {
      best_acc = ev.accuracy;
      result.model = model;
      result.best_epoch = epoch;
    }
  }
  return result;
}

}  // namespace capnet::cnn
