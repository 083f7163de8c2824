#include "cilab/model/model.hpp"

#include <cmath>
#include <string>

#include "cilab/errors.hpp"
#include "cilab/numcore/ops.hpp"
#include "cilab/numcore/rng.hpp"

namespace cil {

namespace {

Matrix fan_in_uniform(std::size_t in, std::size_t out, Rng& rng) {
  Matrix w(in, out);
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  return w;
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
  for (auto h : hidden_dims) {
    if (h == 0) throw ConfigError("model: hidden layer width must be positive");
  }
  if (feature_dim < 2) throw ConfigError("model: feature_dim must be at least 2");
}

std::vector<Matrix*> ModelParams::tensors() {
  std::vector<Matrix*> out;
  for (auto& l : extractor) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::vector<const Matrix*> ModelParams::tensors() const {
  std::vector<const Matrix*> out;
  for (const auto& l : extractor) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

ModelGrads ModelGrads::zeros_like(const ModelParams& params) {
  ModelGrads g;
  for (const auto& l : params.extractor) {
    g.extractor.push_back({Matrix(l.weight.rows(), l.weight.cols()), Matrix(1, l.bias.cols())});
  }
  g.head = {Matrix(params.head.weight.rows(), params.head.weight.cols()),
            Matrix(1, params.head.bias.cols())};
  return g;
}

std::vector<Matrix*> ModelGrads::tensors() {
  std::vector<Matrix*> out;
  for (auto& l : extractor) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

std::vector<const Matrix*> ModelGrads::tensors() const {
  std::vector<const Matrix*> out;
  for (const auto& l : extractor) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

void ModelGrads::add_scaled(const ModelGrads& other, double scale) {
  auto mine = tensors();
  auto theirs = other.tensors();
  if (mine.size() != theirs.size()) throw DimensionError("ModelGrads::add_scaled: layout mismatch");
  for (std::size_t t = 0; t < mine.size(); ++t) {
    auto a = mine[t]->values();
    auto b = theirs[t]->values();
    if (a.size() != b.size()) throw DimensionError("ModelGrads::add_scaled: tensor size mismatch");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
  }
}

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = Rng::stream(seed, "init");
  ModelParams p;
  p.config = config;
  std::size_t in = config.input_dim;
  std::vector<std::size_t> widths = config.hidden_dims;
  widths.push_back(config.feature_dim);
  for (auto out : widths) {
    p.extractor.push_back({fan_in_uniform(in, out, rng), Matrix(1, out)});
    in = out;
  }
  p.head = {Matrix(config.feature_dim, 0), Matrix(1, 0)};
  return p;
}

ForwardTrace forward(const ModelParams& params, const Matrix& x, bool apply_head) {
  if (x.cols() != params.config.input_dim) {
    throw DimensionError("model input has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(params.config.input_dim));
  }
  ForwardTrace t;
  t.layer_inputs.reserve(params.extractor.size());
  t.pre_activations.reserve(params.extractor.size());
  Matrix h = x;
  for (const auto& layer : params.extractor) {
    Matrix z = affine_forward(h, layer.weight, layer.bias);
    t.layer_inputs.push_back(std::move(h));
    h = relu_forward(z);
    t.pre_activations.push_back(std::move(z));
  }
  t.features = std::move(h);
  if (apply_head) {
    if (params.num_classes() == 0) throw ConfigError("model head has no classes");
    t.logits = affine_forward(t.features, params.head.weight, params.head.bias);
  }
  return t;
}

Matrix features(const ModelParams& params, const Matrix& x) {
  return forward(params, x, false).features;
}

Matrix logits(const ModelParams& params, const Matrix& x) {
  if (params.num_classes() == 0) throw ConfigError("model head has no classes");
  return forward(params, x, true).logits;
}

ModelGrads backward(const ModelParams& params, const ForwardTrace& trace, const Matrix* dlogits,
                    const Matrix* dfeatures) {
  ModelGrads g = ModelGrads::zeros_like(params);
  Matrix dh(trace.features.rows(), trace.features.cols());
  if (dlogits != nullptr) {
    AffineGrads hg = affine_backward(*dlogits, trace.features, params.head.weight);
    g.head.weight = std::move(hg.dweight);
    g.head.bias = std::move(hg.dbias);
    dh = std::move(hg.dx);
  }
  if (dfeatures != nullptr) {
    if (dfeatures->rows() != dh.rows() || dfeatures->cols() != dh.cols()) {
      throw DimensionError("feature gradient " + dfeatures->shape() + " vs features " + dh.shape());
    }
    auto a = dh.values();
    auto b = dfeatures->values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
  for (std::size_t l = params.extractor.size(); l-- > 0;) {
    Matrix dz = relu_backward(dh, trace.pre_activations[l]);
    AffineGrads ag = affine_backward(dz, trace.layer_inputs[l], params.extractor[l].weight);
    g.extractor[l].weight = std::move(ag.dweight);
    g.extractor[l].bias = std::move(ag.dbias);
    dh = std::move(ag.dx);
  }
  return g;
}

ModelParams expand_head(const ModelParams& params, std::size_t n_new, std::uint64_t seed) {
  if (n_new == 0) throw ConfigError("expand_head: n_new must be at least 1");
  const std::size_t fdim = params.config.feature_dim;
  const std::size_t k_old = params.num_classes();
  Rng rng = Rng::stream(seed, "init", k_old + 1);
  const Matrix fresh = fan_in_uniform(fdim, n_new, rng);

  ModelParams out = params;
  out.head.weight = Matrix(fdim, k_old + n_new);
  out.head.bias = Matrix(1, k_old + n_new);
  for (std::size_t r = 0; r < fdim; ++r) {
    for (std::size_t c = 0; c < k_old; ++c) out.head.weight(r, c) = params.head.weight(r, c);
    for (std::size_t c = 0; c < n_new; ++c) out.head.weight(r, k_old + c) = fresh(r, c);
  }
  for (std::size_t c = 0; c < k_old; ++c) out.head.bias(0, c) = params.head.bias(0, c);
  return out;
}

ModelSnapshot snapshot(const ModelParams& params, int task_index) {
  return ModelSnapshot(params, task_index);
}

ModelSnapshot snapshot(const ModelSnapshot& other) { return other; }

}  // namespace cil
