#include "seprep/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "seprep/ops.hpp"
#include "seprep/rng.hpp"

namespace seprep {

void AdaptConfig::validate() const {
  if (!(lr >= 0) || !(pl_weight >= 0) || !(im_diversity_weight >= 0) || !(head_lr_multiplier >= 0)) {
    throw std::invalid_argument("adapt config weights and rates must be nonnegative");
  }
  if (batch_size < 2) throw std::invalid_argument("adapt batch size must be at least 2");
}

template <typename T>
T im_loss(const Tensor<T>& logits, T diversity_weight) {
  return ag::im_loss(ag::Var<T>::constant(logits), diversity_weight).value()[0];
}

template <typename T>
std::vector<int> pseudo_labels(const Tensor<T>& features, const Tensor<T>& logits) {
  if (features.rank() != 2 || logits.rank() != 2 || features.dim(0) != logits.dim(0)) {
    throw ShapeError("pseudo_labels: features [N,D] and logits [N,C] must agree on N");
  }
  check_finite(logits, "pseudo_labels logits");
  const std::size_t n = features.dim(0);
  const std::size_t d = features.dim(1);
  const std::size_t c = logits.dim(1);
  const Tensor<T> probs = ops::softmax(logits);
  const std::vector<int> argmax = argmax_rows(logits);

  std::vector<double> norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t q = 0; q < d; ++q) s += static_cast<double>(features[i * d + q]) * features[i * d + q];
    norm[i] = std::sqrt(s);
  }

  std::vector<double> mass(c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (norm[i] == 0) continue;
    for (std::size_t j = 0; j < c; ++j) mass[j] += probs[i * c + j];
  }

  // Cosine-similarity assignment to the given centroids; inactive classes are skipped.
  auto assign = [&](const std::vector<double>& centroids, const std::vector<bool>& active,
                    const std::vector<double>& tie_mass) {
    std::vector<double> cnorm(c, 0.0);
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0;
      for (std::size_t q = 0; q < d; ++q) s += centroids[j * d + q] * centroids[j * d + q];
      cnorm[j] = std::sqrt(s);
    }
    std::vector<int> labels(n);
    std::vector<double> sim(c);
    for (std::size_t i = 0; i < n; ++i) {
      if (norm[i] == 0) {
        labels[i] = argmax[i];
        continue;
      }
      double best = -2;
      for (std::size_t j = 0; j < c; ++j) {
        if (!active[j] || cnorm[j] == 0) {
          sim[j] = -3;
          continue;
        }
        double dot = 0;
        for (std::size_t q = 0; q < d; ++q) dot += features[i * d + q] * centroids[j * d + q];
        sim[j] = dot / (norm[i] * cnorm[j]);
        best = std::max(best, sim[j]);
      }
      if (best < -1.5) {
        labels[i] = argmax[i];
        continue;
      }
      int pick = -1;
      for (std::size_t j = 0; j < c; ++j) {
        if (sim[j] < best - 1e-9) continue;
        if (pick < 0 || tie_mass[j] > tie_mass[static_cast<std::size_t>(pick)]) pick = static_cast<int>(j);
      }
      labels[i] = pick;
    }
    return labels;
  };

  std::vector<double> centroids(c * d, 0.0);
  std::vector<bool> active(c, false);
  for (std::size_t j = 0; j < c; ++j) {
    if (mass[j] <= 0) continue;
    active[j] = true;
    for (std::size_t i = 0; i < n; ++i) {
      if (norm[i] == 0) continue;
      const double p = probs[i * c + j];
      for (std::size_t q = 0; q < d; ++q) centroids[j * d + q] += p * features[i * d + q];
    }
    for (std::size_t q = 0; q < d; ++q) centroids[j * d + q] /= mass[j];
  }
  std::vector<int> labels = assign(centroids, active, mass);

  std::vector<double> count(c, 0.0);
  std::fill(centroids.begin(), centroids.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (norm[i] == 0) continue;
    const auto j = static_cast<std::size_t>(labels[i]);
    count[j] += 1;
    for (std::size_t q = 0; q < d; ++q) centroids[j * d + q] += features[i * d + q];
  }
  for (std::size_t j = 0; j < c; ++j) {
    active[j] = count[j] > 0;
    if (active[j]) {
      for (std::size_t q = 0; q < d; ++q) centroids[j * d + q] /= count[j];
    }
  }
  // Round-one cluster sizes break round-two ties, keeping the dominant class.
  return assign(centroids, active, count);
}

namespace {

template <typename T>
std::vector<T> head_uncertainty_of_sources(const ModelBundle<T>& model, const Tensor<T>& target, Criterion criterion) {
  std::vector<T> scores;
  for (std::size_t k = 0; k < model.k(); ++k) {
    scores.push_back(model_uncertainty(extract_source(model, k), target, criterion)[0]);
  }
  return scores;
}

template <typename T>
std::vector<T> loss_weights_from(const std::vector<T>& scores, bool reweight) {
  if (!reweight) return std::vector<T>(scores.size(), T(1) / static_cast<T>(scores.size()));
  return softmax_weights<T>(scores);
}

}  // namespace

template <typename T>
AdaptResult<T> adapt(const ModelBundle<T>& model, const Tensor<T>& target_images, const AdaptConfig& cfg) {
  if (model.form == Form::fused) throw PreconditionError("model already fused");
  if (model.form != Form::seprep) throw PreconditionError("adapt expects an assembled (seprep) model");
  if (target_images.empty() || target_images.dim(0) == 0) throw PreconditionError("adapt: empty target set");
  cfg.validate();
  model.validate();

  AdaptResult<T> result;
  result.model = model;
  ModelBundle<T>& m = result.model;
  const std::size_t k = m.k();
  const std::size_t n = target_images.dim(0);

  result.source_uncertainty = head_uncertainty_of_sources(m, target_images, cfg.criterion);
  std::vector<T> weights = loss_weights_from(result.source_uncertainty, cfg.reweight);
  result.loss_weights = weights;
  if (cfg.epochs == 0) return result;

  const std::size_t bs = cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * ((n + bs - 1) / bs);
  GraphOptions gopts;
  gopts.train_heads = cfg.train_heads;
  SplitMix64 rng(cfg.seed ^ 0xADA9700DULL);
  std::vector<std::vector<int>> plabels(k);
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool use_pl = cfg.pl_weight > 0 && cfg.refresh_interval > 0;
    if (use_pl && epoch % cfg.refresh_interval == 0) {
      const Inference<T> inf = infer(m, target_images);
      for (std::size_t h = 0; h < k; ++h) plabels[h] = pseudo_labels(inf.features, inf.logits[h]);
    }
    if (cfg.weight_refresh_interval > 0 && epoch > 0 && epoch % cfg.weight_refresh_interval == 0) {
      weights = loss_weights_from(model_uncertainty(m, target_images, cfg.criterion), cfg.reweight);
    }
    for (T w : weights) {
      if (!(w >= T(0))) throw NumericError("adapt: invalid loss weight");
    }

    const auto order = permutation(n, rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t end = std::min(n, begin + bs);
      if (end - begin < 2) continue;
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor<T> x = target_images.gather0(idx);
      ParamBinding<T> params;
      auto g = forward_graph<T>(m, x, Mode::train, &params, gopts);
      std::vector<ag::Var<T>> losses;
      for (std::size_t h = 0; h < k; ++h) {
        ag::Var<T> lk = ag::im_loss<T>(g.logits[h], static_cast<T>(cfg.im_diversity_weight));
        if (use_pl) {
          std::vector<int> lab;
          lab.reserve(idx.size());
          for (std::size_t i : idx) lab.push_back(plabels[h][i]);
          lk = ag::add(lk, ag::scale(ag::cross_entropy<T>(g.logits[h], lab), static_cast<T>(cfg.pl_weight)));
        }
        losses.push_back(lk);
      }
      ag::Var<T> total = ag::weighted_sum<T>(losses, weights);
      const double value = static_cast<double>(total.value()[0]);
      if (!std::isfinite(value)) {
        throw NumericError("adapt: non-finite loss at epoch " + std::to_string(epoch));
      }
      total.backward();
      params.sgd_step(static_cast<T>(cosine_lr(cfg.lr, step, total_steps)), static_cast<T>(cfg.head_lr_multiplier));
      loss_sum += value;
      ++batches;
      ++step;
    }
    result.epoch_loss.push_back(batches ? loss_sum / static_cast<double>(batches) : 0.0);
  }
  result.loss_weights = weights;
  return result;
}

template <typename T>
ModelBundle<T> adapt_single(const ModelBundle<T>& source, const Tensor<T>& target_images, const AdaptConfig& cfg) {
  const ModelBundle<T> one[] = {source};
  return extract_source(adapt(assemble<T>(one), target_images, cfg).model, 0);
}

namespace {

template <typename T>
Tensor<T> model_probs(const ModelBundle<T>& model, const Tensor<T>& batch) {
  if (model.num_heads() == 1) return ops::softmax(infer(model, batch).logits[0]);
  return predict(model, batch).probs;
}

}  // namespace

template <typename T>
Tensor<T> ensemble_baseline(std::span<const ModelBundle<T>> models, const Tensor<T>& batch) {
  if (models.empty()) throw PreconditionError("ensemble needs K >= 1 models");
  for (const auto& m : models) {
    if (m.arch.classes != models[0].arch.classes) throw ShapeError("ensemble members disagree on class count");
  }
  Tensor<T> out;
  const T w = T(1) / static_cast<T>(models.size());
  for (std::size_t k = 0; k < models.size(); ++k) {
    const Tensor<T> p = model_probs(models[k], batch);
    if (k == 0) out = Tensor<T>(p.shape());
    ops::axpy(w, p, out);
  }
  return out;
}

template <typename T>
Teacher<T> ensemble_teacher(std::vector<ModelBundle<T>> models) {
  if (models.empty()) throw PreconditionError("teacher ensemble needs K >= 1 models");
  return [models = std::move(models)](const Tensor<T>& batch, T temperature) {
    Tensor<T> out;
    const T w = T(1) / static_cast<T>(models.size());
    for (std::size_t k = 0; k < models.size(); ++k) {
      const Inference<T> inf = infer(models[k], batch);
      for (const auto& z : inf.logits) {
        Tensor<T> zt(z.shape());
        for (std::size_t i = 0; i < z.size(); ++i) zt[i] = z[i] / temperature;
        const Tensor<T> p = ops::softmax(zt);
        if (out.empty()) out = Tensor<T>(p.shape());
        ops::axpy(w / static_cast<T>(inf.logits.size()), p, out);
      }
    }
    return out;
  };
}

template <typename T>
ModelBundle<T> kd_distill(const Teacher<T>& teacher, ModelBundle<T> student, const Tensor<T>& target_images,
                          const KdConfig& cfg) {
  if (!(cfg.temperature > 0)) throw PreconditionError("kd temperature must be positive");
  if (target_images.empty() || target_images.dim(0) == 0) throw PreconditionError("kd_distill: empty dataset");
  if (student.form != Form::source) throw PreconditionError("kd student must be a single-pathway model");
  if (cfg.epochs == 0) return student;
  const T temp = static_cast<T>(cfg.temperature);
  const Tensor<T> soft = teacher(target_images, temp);
  const std::size_t n = target_images.dim(0);
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 2);
  const std::size_t total_steps = cfg.epochs * ((n + bs - 1) / bs);
  SplitMix64 rng(cfg.seed ^ 0x0D157111ULL);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(n, rng);
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t end = std::min(n, begin + bs);
      if (end - begin < 2) continue;
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      ParamBinding<T> params;
      auto g = forward_graph<T>(student, target_images.gather0(idx), Mode::train, &params);
      auto loss = ag::kd_loss<T>(g.logits[0], soft.gather0(idx), temp);
      loss.backward();
      params.sgd_step(static_cast<T>(cosine_lr(cfg.lr, step, total_steps)), T(1));
      ++step;
    }
  }
  return student;
}

#define SEPREP_INSTANTIATE_ADAPT(T)                                                                  \
  template T im_loss(const Tensor<T>&, T);                                                           \
  template std::vector<int> pseudo_labels(const Tensor<T>&, const Tensor<T>&);                       \
  template AdaptResult<T> adapt(const ModelBundle<T>&, const Tensor<T>&, const AdaptConfig&);        \
  template ModelBundle<T> adapt_single(const ModelBundle<T>&, const Tensor<T>&, const AdaptConfig&); \
  template Tensor<T> ensemble_baseline(std::span<const ModelBundle<T>>, const Tensor<T>&);           \
  template Teacher<T> ensemble_teacher(std::vector<ModelBundle<T>>);                                 \
  template ModelBundle<T> kd_distill(const Teacher<T>&, ModelBundle<T>, const Tensor<T>&, const KdConfig&);

SEPREP_INSTANTIATE_ADAPT(float)
SEPREP_INSTANTIATE_ADAPT(double)

}  // namespace seprep
