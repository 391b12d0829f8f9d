#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "seprep/autograd.hpp"
#include "seprep/data.hpp"
#include "seprep/tensor.hpp"

namespace seprep {

// Homogeneous architecture shared by every source model: a stack of
// Conv-BN-ReLU units, global average pooling and linear classifier heads.
struct ArchDesc {
  std::size_t in_channels = 3;
  std::size_t in_size = 16;
  std::vector<std::size_t> widths{16, 32, 64};
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;
  std::size_t classes = 10;

  std::size_t feature_dim() const { return widths.back(); }
  std::size_t unit_in_channels(std::size_t unit) const { return unit == 0 ? in_channels : widths[unit - 1]; }
  Shape input_shape(std::size_t batch) const { return {batch, in_channels, in_size, in_size}; }
  void validate() const;

  friend bool operator==(const ArchDesc&, const ArchDesc&) = default;
};

// source: one pathway per unit, one head. seprep: K pathways per unit, K
// heads. fused: one convolution with bias per unit, K heads.
enum class Form { source, seprep, fused };
enum class Mode { train, eval };

std::string_view form_name(Form form) noexcept;
Form parse_form(std::string_view name);

// One Conv-BN pathway. run_sigma holds sqrt(running_var + eps), the same
// quantity the BN forward divides by and fusion folds into the kernel.
template <typename T>
struct ConvBNPathway {
  Tensor<T> kernels;  // [C2,C1,U,V]
  Tensor<T> run_mu;
  Tensor<T> run_sigma;
  Tensor<T> gamma;
  Tensor<T> beta;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return kernels.dim(0); }
  void validate() const;
};

// K pathways over the same input whose BN outputs are merged by a weighted sum.
template <typename T>
struct SepUnit {
  std::vector<ConvBNPathway<T>> pathways;
  std::vector<T> merge_weights;

  std::size_t k() const { return pathways.size(); }
  void validate() const;
};

// Reparameterized unit: a single convolution with per-channel bias.
template <typename T>
struct FusedConv {
  Tensor<T> kernels;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  void validate() const;
};

template <typename T>
using Unit = std::variant<ConvBNPathway<T>, SepUnit<T>, FusedConv<T>>;

template <typename T>
struct Head {
  Tensor<T> weight;  // [C,D]
  Tensor<T> bias;    // [C]
};

template <typename T>
struct ModelBundle {
  ArchDesc arch;
  Form form = Form::source;
  std::vector<Unit<T>> units;
  std::vector<Head<T>> heads;

  std::size_t num_heads() const { return heads.size(); }
  // Pathways per unit for source/seprep forms; heads count for fused.
  std::size_t k() const;
  // Throws ShapeError when parameters disagree with arch or form.
  void validate() const;
};

// Kaiming-uniform kernels, gamma=1, beta=0, running mu=0, sigma=1.
template <typename T>
ModelBundle<T> init_model(const ArchDesc& arch, std::uint64_t seed);

template <typename U, typename T>
ModelBundle<U> model_cast(const ModelBundle<T>& m);

template <typename T>
bool bit_identical(const ModelBundle<T>& a, const ModelBundle<T>& b);

// Eval-mode output of one unit before its ReLU.
template <typename T>
Tensor<T> unit_forward(const Unit<T>& unit, const Tensor<T>& input);

template <typename T>
struct Inference {
  Tensor<T> features;             // [N,D] pooled
  std::vector<Tensor<T>> logits;  // one [N,C] per head
};

// Eval-mode forward without graph recording. Pure; samples are independent,
// so `chunk` does not affect results.
template <typename T>
Inference<T> infer(const ModelBundle<T>& model, const Tensor<T>& batch, std::size_t chunk = 256);

// Logits of every head stacked to [heads,N,C]. Train mode uses batch
// statistics and updates the running statistics in place.
template <typename T>
Tensor<T> forward(ModelBundle<T>& model, const Tensor<T>& batch, Mode mode);

// Binds model tensors to graph leaves for one optimization step.
template <typename T>
class ParamBinding {
 public:
  ag::Var<T> bind(Tensor<T>& target, bool is_head);
  std::size_t size() const { return entries_.size(); }

  // theta -= lr * grad (heads: lr * head_multiplier). Throws
  // PreconditionError when a bound parameter received no gradient.
  void sgd_step(T lr, T head_multiplier);

 private:
  struct Entry {
    Tensor<T>* target;
    ag::Var<T> var;
    bool is_head;
  };
  std::vector<Entry> entries_;
};

struct GraphOptions {
  bool train_extractor = true;
  bool train_heads = true;
  double bn_momentum = 0.1;
};

template <typename T>
struct GraphForward {
  ag::Var<T> features;
  std::vector<ag::Var<T>> logits;
};

// Recorded forward. With `params` set, trainable tensors become leaves whose
// gradients sgd_step applies; otherwise everything is constant.
template <typename T>
GraphForward<T> forward_graph(ModelBundle<T>& model, const Tensor<T>& batch, Mode mode,
                              ParamBinding<T>* params, const GraphOptions& opts = {});

template <typename T>
void sgd_step(ParamBinding<T>& params, T lr, T head_multiplier) {
  params.sgd_step(lr, head_multiplier);
}

// Exponential running-statistics update from one batch; `var` is the biased
// batch variance over `count` values per channel.
template <typename T>
void update_running_stats(ConvBNPathway<T>& pathway, const Tensor<T>& mean, const Tensor<T>& var,
                          std::size_t count, double momentum);

// lr * 0.5 * (1 + cos(pi * step / total))
double cosine_lr(double base, std::size_t step, std::size_t total);

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 0.05;
  std::size_t batch_size = 64;
  double label_smoothing = 0.1;
  double head_lr_multiplier = 1.0;
  std::uint64_t seed = 1;       // shuffling
  std::uint64_t init_seed = 1;  // parameter initialization
};

// Trains a single-pathway model with label-smoothed cross-entropy.
template <typename T>
ModelBundle<T> train_source(const data::LabeledSet& domain, const ArchDesc& arch, const TrainConfig& cfg);

// Same loop starting from an existing source-form model.
template <typename T>
ModelBundle<T> train_supervised(ModelBundle<T> model, const data::LabeledSet& domain, const TrainConfig& cfg);

}  // namespace seprep
