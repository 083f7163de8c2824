#pragma once

#include <cstdint>
#include <vector>

#include "cilab/numcore/matrix.hpp"

namespace cil {

enum class Activation { relu };

/// MLP extractor shape: input_dim → hidden_dims... → feature_dim, each layer
/// followed by the activation. The head maps feature_dim → K classes.
struct ModelConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims{128, 128};
  std::size_t feature_dim = 64;
  Activation activation = Activation::relu;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct Layer {
  Matrix weight;  // in × out
  Matrix bias;    // 1 × out

  bool operator==(const Layer&) const = default;
};

/// Live parameters of f = g∘φ.
struct ModelParams {
  ModelConfig config;
  std::vector<Layer> extractor;
  Layer head;  // feature_dim × K

  std::size_t num_classes() const noexcept { return head.weight.cols(); }
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;

  bool operator==(const ModelParams&) const = default;
};

/// Gradient with the same layout as ModelParams.
struct ModelGrads {
  std::vector<Layer> extractor;
  Layer head;

  static ModelGrads zeros_like(const ModelParams& params);
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  /// this += scale·other
  void add_scaled(const ModelGrads& other, double scale);
};

/// Pre-activations and inputs of each extractor layer, kept for backward.
struct ForwardTrace {
  std::vector<Matrix> layer_inputs;
  std::vector<Matrix> pre_activations;
  Matrix features;
  Matrix logits;  // empty when the head was not applied
};

/// He-style fan-in uniform init (bound √(6/fan_in)), zero biases, K = 0.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

Matrix features(const ModelParams& params, const Matrix& x);
/// Throws ConfigError when the head has no classes.
Matrix logits(const ModelParams& params, const Matrix& x);

ForwardTrace forward(const ModelParams& params, const Matrix& x, bool apply_head = true);

/// Backpropagates an upstream gradient on the logits and/or directly on the
/// features. Either may be null; both contributions are summed at the
/// feature layer.
ModelGrads backward(const ModelParams& params, const ForwardTrace& trace, const Matrix* dlogits,
                    const Matrix* dfeatures);

/// Appends n_new head columns initialised like a fresh layer. Old columns
/// and biases are copied bit-for-bit.
ModelParams expand_head(const ModelParams& params, std::size_t n_new, std::uint64_t seed);

/// Frozen copy of a model (f_{t-1}). Exposes only const evaluation.
class ModelSnapshot {
 public:
  ModelSnapshot(ModelParams params, int task_index)
      : params_(std::move(params)), task_index_(task_index) {}

  const ModelParams& params() const noexcept { return params_; }
  int task_index() const noexcept { return task_index_; }

  Matrix features(const Matrix& x) const { return cil::features(params_, x); }
  Matrix logits(const Matrix& x) const { return cil::logits(params_, x); }

  bool operator==(const ModelSnapshot&) const = default;

 private:
  ModelParams params_;
  int task_index_;
};

ModelSnapshot snapshot(const ModelParams& params, int task_index);
ModelSnapshot snapshot(const ModelSnapshot& other);

}  // namespace cil
