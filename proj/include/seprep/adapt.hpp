#pragma once

// Source-free adaptation of an assembled multi-pathway model, plus the two
// comparison baselines: uniform ensembling and knowledge distillation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "seprep/nn.hpp"
#include "seprep/reparam.hpp"

namespace seprep {

struct AdaptConfig {
  std::size_t epochs = 15;
  double lr = 0.003;
  std::size_t batch_size = 64;
  double pl_weight = 0.3;              // weight of the pseudo-label cross-entropy
  double im_diversity_weight = 1.0;  // weight of the mean-prediction entropy term
  std::size_t refresh_interval = 1;  // epochs between pseudo-label refreshes
  Criterion criterion = Criterion::entropy;
  // 0 keeps the loss weights computed from the source models before
  // adaptation; n > 0 recomputes them from the current heads every n epochs.
  std::size_t weight_refresh_interval = 0;
  bool reweight = true;      // false: uniform 1/K loss weights
  bool train_heads = false;  // heads stay frozen by default
  double head_lr_multiplier = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

template <typename T>
struct AdaptResult {
  ModelBundle<T> model;
  std::vector<T> source_uncertainty;  // M of each source model on the target set
  std::vector<T> loss_weights;        // final softmax(-uncertainty) loss weights
  std::vector<double> epoch_loss;     // mean total loss per epoch
};

// Scalar value of the information-maximization loss on logits [N,C].
template <typename T>
T im_loss(const Tensor<T>& logits, T diversity_weight = T(1));

// Two-round nearest-centroid labeling under cosine distance. Round one uses
// prediction-weighted centroids; round two recomputes centroids from the
// round-one hard labels. Near-tied distances prefer the class with the larger
// predicted mass, then the lower index. Samples with all-zero features keep
// the argmax of their logits.
template <typename T>
std::vector<int> pseudo_labels(const Tensor<T>& features, const Tensor<T>& logits);

// Adapts a seprep-form model on unlabeled target images. Each head k gets
// loss = IM(logits) + pl_weight * CE(logits, pseudo_labels) on the shared
// merged features; the total weights the per-head losses by the softmax of
// their negated uncertainties.
template <typename T>
AdaptResult<T> adapt(const ModelBundle<T>& model, const Tensor<T>& target_images, const AdaptConfig& cfg);

// Single-model source-free adaptation (K = 1 assembly, unwrapped again).
template <typename T>
ModelBundle<T> adapt_single(const ModelBundle<T>& source, const Tensor<T>& target_images, const AdaptConfig& cfg);

// Uniform average of each model's class probabilities (multi-head models
// contribute their entropy-weighted prediction).
template <typename T>
Tensor<T> ensemble_baseline(std::span<const ModelBundle<T>> models, const Tensor<T>& batch);

// Maps a batch to softened class probabilities at the given temperature.
template <typename T>
using Teacher = std::function<Tensor<T>(const Tensor<T>& batch, T temperature)>;

template <typename T>
Teacher<T> ensemble_teacher(std::vector<ModelBundle<T>> models);

struct KdConfig {
  double temperature = 2.0;
  std::size_t epochs = 15;
  double lr = 0.05;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

// Trains `student` (source form) to match the teacher's softened outputs on
// the target images.
template <typename T>
ModelBundle<T> kd_distill(const Teacher<T>& teacher, ModelBundle<T> student, const Tensor<T>& target_images,
                          const KdConfig& cfg);

}  // namespace seprep
