#pragma once

// Metrics and experiment orchestration: accuracy, H-score, FLOPs accounting
// and the method comparison table on the synthetic multi-domain benchmark.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seprep/adapt.hpp"
#include "seprep/data.hpp"
#include "seprep/nn.hpp"
#include "seprep/reparam.hpp"

namespace seprep::bench {

// Harmonic mean 2ST/(S+T) of two percentages; 0 when both are 0. Throws
// std::invalid_argument outside [0,100].
double h_score(double source_acc, double target_acc);

// Operation counts for one sample, two operations per multiply-add:
//   convolution 2*C2*H2*W2*C1*U*V, linear 2*C*D, unfused BN 2 per element,
//   merge of K pathways 2K-1 per element, fused bias 1 per element,
//   ReLU 1 per element, global average pooling 1 per input element.
struct Flops {
  std::uint64_t extractor = 0;
  std::uint64_t heads = 0;
  std::uint64_t total = 0;

  Flops& operator+=(const Flops& o);
  friend bool operator==(const Flops&, const Flops&) = default;
};

// `input_chw` defaults to the architecture's [C,H,W]. Depends only on shapes.
template <typename T>
Flops flops_count(const ModelBundle<T>& model, const Shape& input_chw = {});

// Top-1 accuracy in percent; ties go to the lowest class index.
double accuracy(const Tensor<float>& scores, std::span<const int> labels);

// Class scores ([N,C]) for a batch of images.
using Predictor = std::function<Tensor<float>(const Tensor<float>& images)>;

template <typename T>
Predictor model_predictor(ModelBundle<T> model, PredictOptions<T> opts = {});
Predictor ensemble_predictor(std::vector<ModelBundle<float>> models);

struct NamedSet {
  std::string name;
  const data::LabeledSet* set = nullptr;
};

struct DomainAccuracy {
  std::string name;
  double accuracy = 0;
};

struct EvalReport {
  std::string method;
  std::vector<DomainAccuracy> sources;
  std::string target;
  double source_mean = 0;  // S
  double target_acc = 0;   // T
  double h = 0;            // H
  Flops flops;
  double wall_seconds = 0;
  std::string fingerprint;

  // Timing is excluded when `with_timing` is false so reports can be compared
  // byte-for-byte across runs.
  std::string to_json(bool with_timing = true) const;
  static std::string csv_header();
  std::string to_csv_row(bool with_timing = true) const;
};

// Evaluates on each source test set and the target test set. Each set is
// scored as a single batch.
EvalReport evaluate(const std::string& method, const Predictor& predictor, const Flops& flops,
                    std::span<const NamedSet> sources, const NamedSet& target);

// 16-hex-digit FNV-1a hash.
std::string fingerprint(std::string_view text);

inline const std::vector<std::string>& all_methods() {
  static const std::vector<std::string> kMethods{"source-ens", "shot-ens", "shot-ens+kd", "seprep", "seprep-unfused"};
  return kMethods;
}

struct ExperimentConfig {
  std::vector<std::string> domains{"identity", "rotate:25", "invert", "noise:0.2"};
  std::vector<std::size_t> targets{3};  // indices into domains
  std::size_t classes = 10;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 200;
  std::uint64_t seed = 0;
  std::vector<std::string> methods = all_methods();
  ArchDesc arch;
  // Every source model is fine-tuned from one shared model trained on these
  // domains (disjoint from the benchmark domains). Empty: sources start from
  // a shared random initialization instead.
  std::vector<std::string> pretrain_domains{"hue:120", "blur:1"};
  TrainConfig pretrain{10, 0.05, 64, 0.1, 1.0, 1, 1};
  TrainConfig source{10, 0.01, 64, 0.1, 1.0, 1, 1};
  AdaptConfig adapt;
  KdConfig kd;
  WeightMode weight_mode = WeightMode::per_batch;

  void validate() const;
  std::string to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(std::string_view text);
  std::string fingerprint() const;
};

using Logger = std::function<void(const std::string&)>;

// Benchmark data plus one trained source model per domain. A domain's source
// model does not depend on which domain is the target, so it is trained once.
struct SourcePool {
  std::vector<data::DomainData> domains;
  std::optional<ModelBundle<float>> pretrained;
  std::vector<ModelBundle<float>> models;
};

SourcePool prepare_sources(const ExperimentConfig& cfg, const Logger& log = {});

struct ExperimentResult {
  std::size_t target = 0;
  std::string target_name;
  std::vector<EvalReport> rows;
  double unadapted_target_acc = 0;  // assembled model before adaptation
  std::vector<float> loss_weights;  // softmax(-uncertainty) over the sources on the target
};

ExperimentResult run_experiment(const ExperimentConfig& cfg, const SourcePool& pool, std::size_t target,
                                const Logger& log = {});

const EvalReport* find_row(const ExperimentResult& result, std::string_view method);

std::string table_text(const ExperimentResult& result);
std::string results_csv(std::span<const ExperimentResult> results);
std::string results_json(std::span<const ExperimentResult> results, const ExperimentConfig& cfg);

// Adapts and evaluates the fused model once per uncertainty criterion (the
// criterion drives both the loss weights and the prediction weights).
struct AblationRow {
  Criterion criterion = Criterion::entropy;
  EvalReport report;
  std::vector<float> loss_weights;
};

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, const SourcePool& pool, std::size_t target,
                                      const Logger& log = {});
std::string ablation_text(std::span<const AblationRow> rows);
std::string ablation_csv(std::span<const AblationRow> rows);

}  // namespace seprep::bench
