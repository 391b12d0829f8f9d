#pragma once

// Separation (multi-pathway assembly with a weighted feature merge),
// reparameterization of merged Conv-BN pathways into one convolution, and
// entropy-based importance weighting of the per-source heads.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "seprep/nn.hpp"

namespace seprep {

// Builds a seprep-form model whose unit i holds source k's unit i as pathway
// k, with merge weights 1/K and the K source heads in order.
template <typename T>
ModelBundle<T> assemble(std::span<const ModelBundle<T>> sources);

// Recovers the single-pathway model formed by pathway k and head k.
template <typename T>
ModelBundle<T> extract_source(const ModelBundle<T>& model, std::size_t k);

// Weighted sum over pathways of BN(Conv(input)). Train mode normalizes each pathway with
// its own batch statistics and updates its running statistics.
template <typename T>
Tensor<T> merge_forward(SepUnit<T>& unit, const Tensor<T>& input, Mode mode, double bn_momentum = 0.1);

template <typename T>
Tensor<T> merge_forward(const SepUnit<T>& unit, const Tensor<T>& input);

// Folds the K weighted Conv-BN pathways into one kernel and bias:
//   kernel[j] = sum over pathways of (weight * gamma[j] / sigma[j]) * kernel[j]
//   bias[j]   = sum over pathways of weight * (beta[j] - mu[j] * gamma[j] / sigma[j])
template <typename T>
FusedConv<T> fuse_unit(const SepUnit<T>& unit);

template <typename T>
FusedConv<T> fuse_unit(const ConvBNPathway<T>& pathway);

// Replaces every unit by its fused convolution and keeps all heads. Rejects
// models that are already fused.
template <typename T>
ModelBundle<T> fuse_model(const ModelBundle<T>& model);

// Overrides the merge weights of every unit (length must equal K).
template <typename T>
void set_merge_weights(ModelBundle<T>& model, std::span<const T> weights);

enum class Criterion { entropy, confidence, margin };

std::string_view criterion_name(Criterion c) noexcept;
Criterion parse_criterion(std::string_view name);

// Mean uncertainty of the rows of `probs` ([N,C]); lower means more certain.
//   entropy:    E[-sum_c p_c log p_c]
//   confidence: -E[max_c p_c]
//   margin:     -E[p_(1) - p_(2)]
template <typename T>
T uncertainty(const Tensor<T>& probs, Criterion criterion);

// Per-sample scores, length N.
template <typename T>
std::vector<T> uncertainty_per_sample(const Tensor<T>& probs, Criterion criterion);

// Uncertainty of every head of `model` on `data` (eval mode).
template <typename T>
std::vector<T> model_uncertainty(const ModelBundle<T>& model, const Tensor<T>& data,
                                 Criterion criterion = Criterion::entropy);

// weight[k] = exp(-score[k]) / sum_i exp(-score[i]), evaluated after
// subtracting the smallest score.
template <typename T>
std::vector<T> softmax_weights(std::span<const T> scores);

enum class WeightMode { per_batch, per_sample, fixed };

WeightMode parse_weight_mode(std::string_view name);
std::string_view weight_mode_name(WeightMode mode) noexcept;

template <typename T>
struct PredictOptions {
  WeightMode mode = WeightMode::per_batch;
  Criterion criterion = Criterion::entropy;
  std::vector<T> fixed_weights;  // used when mode == fixed
};

template <typename T>
struct UncertaintyReport {
  std::vector<T> per_model;  // M of each head on the batch
  std::vector<T> weights;    // head weights; per_sample mode reports the batch mean
  Criterion criterion = Criterion::entropy;
};

template <typename T>
struct Prediction {
  Tensor<T> probs;  // [N,C], rows sum to 1
  UncertaintyReport<T> report;
};

// prediction = sum_k weight_k softmax(head_k(features)) with weights from softmax_weights
// over the heads' uncertainty on this batch (or on each sample alone).
template <typename T>
Prediction<T> predict(const ModelBundle<T>& model, const Tensor<T>& batch, const PredictOptions<T>& opts = {});

// Same combination rule applied to precomputed per-head logits.
template <typename T>
Prediction<T> combine_heads(std::span<const Tensor<T>> logits, const PredictOptions<T>& opts);

// Top-1 per row; ties go to the lowest class index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& m);

}  // namespace seprep
