#include "seprep/reparam.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "seprep/kernels.hpp"
#include "seprep/ops.hpp"

namespace seprep {

template <typename T>
ModelBundle<T> assemble(std::span<const ModelBundle<T>> sources) {
  if (sources.empty()) throw PreconditionError("assemble needs at least one source model (K=0)");
  const ArchDesc& arch = sources[0].arch;
  for (const auto& s : sources) {
    if (s.form != Form::source) throw PreconditionError("assemble expects single-pathway source models");
    if (!(s.arch == arch)) throw PreconditionError("assemble requires homogeneous source architectures");
    s.validate();
  }
  const std::size_t k = sources.size();
  ModelBundle<T> out;
  out.arch = arch;
  out.form = Form::seprep;
  for (std::size_t i = 0; i < arch.widths.size(); ++i) {
    SepUnit<T> unit;
    for (const auto& s : sources) unit.pathways.push_back(std::get<ConvBNPathway<T>>(s.units[i]));
    unit.merge_weights.assign(k, T(1) / static_cast<T>(k));
    out.units.emplace_back(std::move(unit));
  }
  for (const auto& s : sources) out.heads.push_back(s.heads[0]);
  return out;
}

template <typename T>
ModelBundle<T> extract_source(const ModelBundle<T>& model, std::size_t k) {
  if (model.form == Form::source) {
    if (k != 0) throw std::out_of_range("source model has a single pathway");
    return model;
  }
  if (model.form != Form::seprep) throw PreconditionError("extract_source needs an unfused model");
  if (k >= model.k()) throw std::out_of_range("pathway index out of range");
  ModelBundle<T> out;
  out.arch = model.arch;
  out.form = Form::source;
  for (const auto& u : model.units) out.units.emplace_back(std::get<SepUnit<T>>(u).pathways[k]);
  out.heads.push_back(model.heads[k]);
  return out;
}

template <typename T>
Tensor<T> merge_forward(SepUnit<T>& unit, const Tensor<T>& input, Mode mode, double bn_momentum) {
  unit.validate();
  if (mode == Mode::eval) return unit_forward<T>(Unit<T>(unit), input);
  Tensor<T> merged;
  for (std::size_t k = 0; k < unit.k(); ++k) {
    auto& p = unit.pathways[k];
    const Tensor<T> conv = ops::conv2d(input, p.kernels, p.stride, p.padding);
    const auto stats = ops::channel_stats(conv);
    Tensor<T> sigma(stats.var.shape());
    for (std::size_t j = 0; j < sigma.size(); ++j) sigma[j] = std::sqrt(stats.var[j] + static_cast<T>(ops::kBnEps));
    const Tensor<T> o = ops::batchnorm2d(conv, stats.mean, sigma, p.gamma, p.beta);
    update_running_stats(p, stats.mean, stats.var, conv.dim(0) * conv.dim(2) * conv.dim(3), bn_momentum);
    if (k == 0) merged = Tensor<T>(o.shape());
    ops::axpy(unit.merge_weights[k], o, merged);
  }
  check_finite(merged, "merge_forward");
  return merged;
}

template <typename T>
Tensor<T> merge_forward(const SepUnit<T>& unit, const Tensor<T>& input) {
  unit.validate();
  return unit_forward<T>(Unit<T>(unit), input);
}

template <typename T>
FusedConv<T> fuse_unit(const SepUnit<T>& unit) {
  unit.validate();
  const auto& first = unit.pathways[0];
  const std::size_t c2 = first.kernels.dim(0);
  const std::size_t per_filter = first.kernels.size() / c2;
  FusedConv<T> f;
  f.kernels = Tensor<T>(first.kernels.shape());
  f.bias = Tensor<T>(Shape{c2});
  f.stride = first.stride;
  f.padding = first.padding;
  for (std::size_t k = 0; k < unit.k(); ++k) {
    const auto& p = unit.pathways[k];
    const T w = unit.merge_weights[k];
    for (std::size_t j = 0; j < c2; ++j) {
      const T sigma = p.run_sigma[j];
      if (!(sigma > T(0))) throw PreconditionError("fuse_unit requires sigma > 0");
      const T fold = p.gamma[j] / sigma;
      const T s = w * fold;
      const T* src = p.kernels.ptr() + j * per_filter;
      T* dst = f.kernels.ptr() + j * per_filter;
      for (std::size_t q = 0; q < per_filter; ++q) dst[q] = dst[q] + s * src[q];
      f.bias[j] = f.bias[j] + w * (p.beta[j] - p.run_mu[j] * fold);
    }
  }
  check_finite(f.kernels, "fuse_unit kernels");
  check_finite(f.bias, "fuse_unit bias");
  return f;
}

template <typename T>
FusedConv<T> fuse_unit(const ConvBNPathway<T>& pathway) {
  SepUnit<T> single;
  single.pathways.push_back(pathway);
  single.merge_weights.push_back(T(1));
  return fuse_unit(single);
}

template <typename T>
ModelBundle<T> fuse_model(const ModelBundle<T>& model) {
  if (model.form == Form::fused) throw PreconditionError("model already fused");
  model.validate();
  ModelBundle<T> out;
  out.arch = model.arch;
  out.form = Form::fused;
  for (const auto& unit : model.units) {
    if (const auto* s = std::get_if<SepUnit<T>>(&unit)) {
      out.units.emplace_back(fuse_unit(*s));
    } else {
      out.units.emplace_back(fuse_unit(std::get<ConvBNPathway<T>>(unit)));
    }
  }
  out.heads = model.heads;
  return out;
}

template <typename T>
void set_merge_weights(ModelBundle<T>& model, std::span<const T> weights) {
  if (model.form != Form::seprep) throw PreconditionError("merge weights exist only on seprep models");
  if (weights.size() != model.k()) throw ShapeError("need one merge weight per pathway");
  for (auto& u : model.units) std::get<SepUnit<T>>(u).merge_weights.assign(weights.begin(), weights.end());
}

std::string_view criterion_name(Criterion c) noexcept {
  switch (c) {
    case Criterion::entropy:
      return "entropy";
    case Criterion::confidence:
      return "confidence";
    case Criterion::margin:
      return "margin";
  }
  return "unknown";
}

Criterion parse_criterion(std::string_view name) {
  if (name == "entropy") return Criterion::entropy;
  if (name == "confidence") return Criterion::confidence;
  if (name == "margin") return Criterion::margin;
  throw std::invalid_argument("unknown uncertainty criterion: " + std::string(name));
}

WeightMode parse_weight_mode(std::string_view name) {
  if (name == "per_batch" || name == "per-batch") return WeightMode::per_batch;
  if (name == "per_sample" || name == "per-sample") return WeightMode::per_sample;
  if (name == "fixed") return WeightMode::fixed;
  throw std::invalid_argument("unknown weight mode: " + std::string(name));
}

std::string_view weight_mode_name(WeightMode mode) noexcept {
  switch (mode) {
    case WeightMode::per_batch:
      return "per-batch";
    case WeightMode::per_sample:
      return "per-sample";
    case WeightMode::fixed:
      return "fixed";
  }
  return "unknown";
}

template <typename T>
std::vector<T> uncertainty_per_sample(const Tensor<T>& probs, Criterion criterion) {
  if (probs.rank() != 2) throw ShapeError("uncertainty expects probabilities [N,C]");
  const std::size_t n = probs.dim(0);
  const std::size_t c = probs.dim(1);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* p = probs.ptr() + i * c;
    switch (criterion) {
      case Criterion::entropy: {
        T h = 0;
        for (std::size_t j = 0; j < c; ++j) {
          if (p[j] > T(0)) h -= p[j] * std::log(p[j]);
        }
        out[i] = h;
        break;
      }
      case Criterion::confidence:
        out[i] = -*std::max_element(p, p + c);
        break;
      case Criterion::margin: {
        T first = p[0];
        T second = -1;
        for (std::size_t j = 1; j < c; ++j) {
          if (p[j] > first) {
            second = first;
            first = p[j];
          } else if (p[j] > second) {
            second = p[j];
          }
        }
        out[i] = -(first - second);
        break;
      }
    }
  }
  return out;
}

template <typename T>
T uncertainty(const Tensor<T>& probs, Criterion criterion) {
  const std::vector<T> per = uncertainty_per_sample(probs, criterion);
  if (per.empty()) throw PreconditionError("uncertainty of an empty batch");
  T s = 0;
  for (T v : per) s += v;
  return s / static_cast<T>(per.size());
}

template <typename T>
std::vector<T> model_uncertainty(const ModelBundle<T>& model, const Tensor<T>& data, Criterion criterion) {
  if (data.empty() || data.dim(0) == 0) throw PreconditionError("model_uncertainty: empty data");
  const Inference<T> inf = infer(model, data);
  std::vector<T> out;
  for (const auto& z : inf.logits) out.push_back(uncertainty(ops::softmax(z), criterion));
  return out;
}

template <typename T>
std::vector<T> softmax_weights(std::span<const T> scores) {
  if (scores.empty()) throw PreconditionError("softmax_weights needs K >= 1 scores");
  for (T s : scores) {
    if (!std::isfinite(s)) throw NumericError("softmax_weights: non-finite score");
  }
  const T lo = *std::min_element(scores.begin(), scores.end());
  std::vector<T> w(scores.size());
  T total = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    w[k] = std::exp(-(scores[k] - lo));
    total += w[k];
  }
  for (T& v : w) v /= total;
  return w;
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& m) {
  if (m.rank() != 2) throw ShapeError("argmax_rows expects a matrix");
  const std::size_t c = m.dim(1);
  std::vector<int> out(m.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T* row = m.ptr() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
Prediction<T> combine_heads(std::span<const Tensor<T>> logits, const PredictOptions<T>& opts) {
  if (logits.empty()) throw PreconditionError("combine_heads needs at least one head");
  const std::size_t k = logits.size();
  const Shape shape = logits[0].shape();
  if (shape.size() != 2 || shape[0] == 0) throw PreconditionError("predict: empty batch");
  std::vector<Tensor<T>> probs;
  for (const auto& z : logits) {
    if (z.shape() != shape) throw ShapeError("heads disagree on output shape");
    probs.push_back(ops::softmax(z));
  }
  const std::size_t n = shape[0];
  const std::size_t c = shape[1];

  Prediction<T> out;
  out.probs = Tensor<T>(shape);
  out.report.criterion = opts.criterion;
  for (const auto& p : probs) out.report.per_model.push_back(uncertainty(p, opts.criterion));

  auto accumulate_rows = [&](std::size_t begin, std::size_t end, std::span<const T> head_weights) {
    for (std::size_t h = 0; h < k; ++h) {
      kernels::active<T>().axpy((end - begin) * c, head_weights[h], probs[h].ptr() + begin * c,
                                out.probs.ptr() + begin * c);
    }
  };

  switch (opts.mode) {
    case WeightMode::per_batch: {
      out.report.weights = softmax_weights<T>(out.report.per_model);
      accumulate_rows(0, n, out.report.weights);
      break;
    }
    case WeightMode::fixed: {
      if (opts.fixed_weights.size() != k) throw ShapeError("fixed weights needs one weight per head");
      T total = 0;
      for (T a : opts.fixed_weights) {
        if (!(a >= T(0)) || !std::isfinite(a)) throw PreconditionError("fixed weights must be nonnegative");
        total += a;
      }
      if (!(total > T(0))) throw PreconditionError("fixed weights must not be all zero");
      for (T a : opts.fixed_weights) out.report.weights.push_back(a / total);
      accumulate_rows(0, n, out.report.weights);
      break;
    }
    case WeightMode::per_sample: {
      std::vector<std::vector<T>> per(k);
      for (std::size_t h = 0; h < k; ++h) per[h] = uncertainty_per_sample(probs[h], opts.criterion);
      out.report.weights.assign(k, T(0));
      std::vector<T> scores(k);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t h = 0; h < k; ++h) scores[h] = per[h][i];
        const std::vector<T> row_weights = softmax_weights<T>(scores);
        accumulate_rows(i, i + 1, row_weights);
        for (std::size_t h = 0; h < k; ++h) out.report.weights[h] += row_weights[h];
      }
      for (T& w : out.report.weights) w /= static_cast<T>(n);
      break;
    }
  }
  return out;
}

template <typename T>
Prediction<T> predict(const ModelBundle<T>& model, const Tensor<T>& batch, const PredictOptions<T>& opts) {
  if (batch.empty() || batch.dim(0) == 0) throw PreconditionError("predict: empty batch");
  const Inference<T> inf = infer(model, batch);
  return combine_heads<T>(inf.logits, opts);
}

#define SEPREP_INSTANTIATE_REPARAM(T)                                                               \
  template ModelBundle<T> assemble(std::span<const ModelBundle<T>>);                                \
  template ModelBundle<T> extract_source(const ModelBundle<T>&, std::size_t);                       \
  template Tensor<T> merge_forward(SepUnit<T>&, const Tensor<T>&, Mode, double);                    \
  template Tensor<T> merge_forward(const SepUnit<T>&, const Tensor<T>&);                            \
  template FusedConv<T> fuse_unit(const SepUnit<T>&);                                               \
  template FusedConv<T> fuse_unit(const ConvBNPathway<T>&);                                         \
  template ModelBundle<T> fuse_model(const ModelBundle<T>&);                                        \
  template void set_merge_weights(ModelBundle<T>&, std::span<const T>);                             \
  template T uncertainty(const Tensor<T>&, Criterion);                                              \
  template std::vector<T> uncertainty_per_sample(const Tensor<T>&, Criterion);                      \
  template std::vector<T> model_uncertainty(const ModelBundle<T>&, const Tensor<T>&, Criterion);    \
  template std::vector<T> softmax_weights(std::span<const T>);                                      \
  template std::vector<int> argmax_rows(const Tensor<T>&);                                          \
  template Prediction<T> combine_heads(std::span<const Tensor<T>>, const PredictOptions<T>&);       \
  template Prediction<T> predict(const ModelBundle<T>&, const Tensor<T>&, const PredictOptions<T>&);

SEPREP_INSTANTIATE_REPARAM(float)
SEPREP_INSTANTIATE_REPARAM(double)

}  // namespace seprep
