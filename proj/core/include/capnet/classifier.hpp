#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capnet/image.hpp"
#include "capnet/roi.hpp"

namespace capnet::cnn {

/// Layer stack: `conv_channels.size()` blocks of [3x3 conv, stride 1, zero pad 1, ReLU,
/// 2x2 max-pool], flatten, an optional ReLU hidden dense layer, and a dense layer to
/// `classes` logits.
struct Architecture {
  int input_size = 64;
  int input_channels = 3;
  std::vector<int> conv_channels{16, 32, 64};
  int hidden_units = 64;  ///< 0 removes the hidden dense layer
  int classes = 2;

  bool operator==(const Architecture&) const = default;
};

enum class LayerKind : std::uint8_t { Conv = 1, Dense = 2 };

struct LayerDesc {
  LayerKind kind;
  int in = 0;
  int out = 0;
  int kernel = 0;  ///< 3 for conv, 1 for dense
  bool operator==(const LayerDesc&) const = default;
};

std::vector<LayerDesc> layer_descs(const Architecture& arch);
/// Inverse of layer_descs; throws FormatError when the stack is not a valid architecture.
Architecture architecture_from_descs(const std::vector<LayerDesc>& descs);
void validate(const Architecture& arch);

/// Weights and biases of every parameterized layer, in declaration order.
/// Conv weights are laid out [out][in][ky][kx], dense weights [out][in].
template <typename T>
struct ParamSet {
  std::vector<std::vector<T>> weights;
  std::vector<std::vector<T>> biases;

  std::size_t size() const;
  bool operator==(const ParamSet&) const = default;
};

template <typename T>
struct Network {
  Architecture arch;
  ParamSet<T> params;
  std::uint64_t rng_seed = 0;

  std::size_t parameter_count() const { return params.size(); }

  template <typename U>
  Network<U> cast() const {
    Network<U> out;
    out.arch = arch;
    out.rng_seed = rng_seed;
    for (const auto& w : params.weights) out.params.weights.emplace_back(w.begin(), w.end());
    for (const auto& b : params.biases) out.params.biases.emplace_back(b.begin(), b.end());
    return out;
  }

  bool operator==(const Network&) const = default;
};

/// Deployed model: parameters held at 32-bit precision (the model-file width).
using CnnModel = Network<float>;

/// He-normal fan-in scaled weights, zero biases, from a seeded generator.
CnnModel init_model(std::uint64_t seed, const Architecture& arch = {});

/// All-zero parameters (uniform output).
CnnModel zero_model(const Architecture& arch = {});

/// Raw logits for one CHW input of size input_channels x input_size x input_size.
template <typename T>
std::vector<T> logits(const Network<T>& net, std::span<const T> input);

template <typename T>
struct LossAndGrads {
  double loss = 0.0;
  int correct = 0;  ///< samples whose argmax logit is the label
  ParamSet<T> grads;
};

/// Mean softmax cross-entropy over the batch and its exact gradient by backpropagation.
template <typename T>
LossAndGrads<T> loss_and_grads(const Network<T>& net, std::span<const std::vector<T>> inputs,
                               std::span<const int> labels);

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

// ---------------------------------------------------------------------------
// Patch-level API

enum class Label : std::uint8_t { NotCapillary = 0, Capillary = 1 };

inline constexpr int kPatchSize = 64;

/// 64 x 64 x 3 unit-range tensor, CHW.
struct Patch {
  std::vector<float> data;
  std::optional<Label> label;

  bool operator==(const Patch&) const = default;
};

/// Throws ParameterError unless the patch has the fixed shape and unit-range values.
void require_valid_patch(const Patch& patch);
Patch patch_from_frame(const Frame& frame, std::optional<Label> label = std::nullopt);
Frame patch_to_frame(const Patch& patch);
/// Crop `box` grown by `padding_fraction` of its size on each side, resize bilinearly to 64x64.
Patch extract_patch(const Frame& frame, const Rect& box, double padding_fraction = 0.10);

/// Class probabilities {not_capillary, capillary}, computed in double precision.
std::array<double, 2> forward(const CnnModel& model, const Patch& patch);
/// Same, with the float inference path used by the pipeline.
std::array<double, 2> forward_fast(const CnnModel& model, const Patch& patch);

/// Double-precision loss and gradients for labelled patches.
LossAndGrads<double> loss_and_grads(const CnnModel& model, std::span<const Patch> batch);

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;
  double train_fraction = 0.7;
  double validation_fraction = 0.3;
  std::uint64_t seed = 0;
  bool flip_augment = false;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;

  bool operator==(const EpochStats&) const = default;
};

struct TrainResult {
  CnnModel model;  ///< best-validation-accuracy snapshot
  std::vector<EpochStats> history;
  int best_epoch = 0;
};

TrainResult train(CnnModel model, std::span<const Patch> data, const TrainConfig& cfg);

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};
Evaluation evaluate(const CnnModel& model, std::span<const Patch> data);

struct Detection {
  roi::RoiBox box;
  double probability = 0.0;
};

/// Keep boxes whose capillary probability reaches `threshold`.
std::vector<Detection> classify_rois(const CnnModel& model, const Frame& frame, std::span<const roi::RoiBox> boxes,
                                     double threshold = 0.5, double padding_fraction = 0.10);

// ---------------------------------------------------------------------------
// Model file: "CAPN", u16 version, u8 layer count, per layer {u8 kind, u16 in, u16 out,
// u8 kernel}, then every parameter as little-endian float32 in declaration order.

inline constexpr std::uint16_t kModelFormatVersion = 1;

std::vector<std::uint8_t> save_model(const CnnModel& model);
CnnModel load_model(std::span<const std::uint8_t> bytes);
void save_model_file(const CnnModel& model, const std::string& path);
CnnModel load_model_file(const std::string& path);

}  // namespace capnet::cnn
