#include "seprep/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "seprep/ops.hpp"
#include "seprep/rng.hpp"

namespace seprep {

void ArchDesc::validate() const {
  if (in_channels == 0 || in_size == 0 || widths.empty() || kernel == 0 || stride == 0 || classes < 2) {
    throw ShapeError("invalid architecture descriptor");
  }
  for (std::size_t w : widths) {
    if (w == 0) throw ShapeError("architecture widths must be positive");
  }
}

std::string_view form_name(Form form) noexcept {
  switch (form) {
    case Form::source:
      return "source";
    case Form::seprep:
      return "seprep";
    case Form::fused:
      return "fused";
  }
  return "unknown";
}

Form parse_form(std::string_view name) {
  if (name == "source") return Form::source;
  if (name == "seprep") return Form::seprep;
  if (name == "fused") return Form::fused;
  throw std::invalid_argument("unknown model form: " + std::string(name));
}

namespace {

template <typename T>
void require_vec(const Tensor<T>& t, std::size_t n, const char* what) {
  if (t.rank() != 1 || t.dim(0) != n) {
    throw ShapeError(std::string(what) + " must have length " + std::to_string(n) + ", got " +
                     shape_str(t.shape()));
  }
}

}  // namespace

template <typename T>
void ConvBNPathway<T>::validate() const {
  if (kernels.rank() != 4) throw ShapeError("pathway kernels must be [C2,C1,U,V]");
  const std::size_t c2 = kernels.dim(0);
  require_vec(run_mu, c2, "run_mu");
  require_vec(run_sigma, c2, "run_sigma");
  require_vec(gamma, c2, "gamma");
  require_vec(beta, c2, "beta");
  for (std::size_t j = 0; j < c2; ++j) {
    if (!(run_sigma[j] > T(0))) throw PreconditionError("pathway run_sigma must be positive");
  }
  if (stride == 0) throw ShapeError("pathway stride must be positive");
}

template <typename T>
void SepUnit<T>::validate() const {
  if (pathways.empty()) throw ShapeError("SepUnit needs at least one pathway");
  if (merge_weights.size() != pathways.size()) throw ShapeError("SepUnit needs one merge weight per pathway");
  for (const auto& p : pathways) {
    p.validate();
    if (p.kernels.shape() != pathways[0].kernels.shape() || p.stride != pathways[0].stride ||
        p.padding != pathways[0].padding) {
      throw ShapeError("SepUnit pathways must be shape-identical");
    }
  }
  for (T w : merge_weights) {
    if (!std::isfinite(w)) throw NumericError("merge weight is not finite");
  }
}

template <typename T>
void FusedConv<T>::validate() const {
  if (kernels.rank() != 4) throw ShapeError("fused kernels must be [C2,C1,U,V]");
  require_vec(bias, kernels.dim(0), "fused bias");
  if (stride == 0) throw ShapeError("fused stride must be positive");
}

template <typename T>
std::size_t ModelBundle<T>::k() const {
  if (form == Form::fused) return heads.size();
  if (units.empty()) return 0;
  if (const auto* s = std::get_if<SepUnit<T>>(&units[0])) return s->k();
  return 1;
}

template <typename T>
void ModelBundle<T>::validate() const {
  arch.validate();
  if (units.size() != arch.widths.size()) throw ShapeError("unit count does not match architecture");
  if (heads.empty()) throw ShapeError("model has no classifier head");
  const std::size_t kk = k();
  for (std::size_t i = 0; i < units.size(); ++i) {
    const Shape expect{arch.widths[i], arch.unit_in_channels(i), arch.kernel, arch.kernel};
    const Tensor<T>* kern = nullptr;
    std::size_t stride = 0;
    std::size_t padding = 0;
    std::visit(
        [&](const auto& u) {
          using U = std::decay_t<decltype(u)>;
          u.validate();
          if constexpr (std::is_same_v<U, ConvBNPathway<T>>) {
            if (form != Form::source) throw ShapeError("plain pathway unit in a non-source model");
            kern = &u.kernels;
            stride = u.stride;
            padding = u.padding;
          } else if constexpr (std::is_same_v<U, SepUnit<T>>) {
            if (form != Form::seprep) throw ShapeError("SepUnit in a non-seprep model");
            if (u.k() != kk) throw ShapeError("SepUnits disagree on pathway count");
            kern = &u.pathways[0].kernels;
            stride = u.pathways[0].stride;
            padding = u.pathways[0].padding;
          } else {
            if (form != Form::fused) throw ShapeError("fused unit in a non-fused model");
            kern = &u.kernels;
            stride = u.stride;
            padding = u.padding;
          }
        },
        units[i]);
    if (kern->shape() != expect || stride != arch.stride || padding != arch.padding) {
      throw ShapeError("unit " + std::to_string(i) + " does not match architecture: kernels " +
                       shape_str(kern->shape()) + ", expected " + shape_str(expect));
    }
  }
  if (form == Form::source && heads.size() != 1) throw ShapeError("source model must have one head");
  if (form == Form::seprep && heads.size() != kk) throw ShapeError("seprep model needs one head per pathway");
  for (const auto& h : heads) {
    if (h.weight.shape() != Shape{arch.classes, arch.feature_dim()}) throw ShapeError("head weight shape mismatch");
    require_vec(h.bias, arch.classes, "head bias");
  }
}

template <typename T>
ModelBundle<T> init_model(const ArchDesc& arch, std::uint64_t seed) {
  arch.validate();
  SplitMix64 rng(seed);
  ModelBundle<T> m;
  m.arch = arch;
  m.form = Form::source;
  for (std::size_t i = 0; i < arch.widths.size(); ++i) {
    const std::size_t c1 = arch.unit_in_channels(i);
    const std::size_t c2 = arch.widths[i];
    ConvBNPathway<T> p;
    p.kernels = Tensor<T>(Shape{c2, c1, arch.kernel, arch.kernel});
    const double bound = std::sqrt(6.0 / static_cast<double>(c1 * arch.kernel * arch.kernel));
    for (auto& v : p.kernels.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    p.run_mu = Tensor<T>(Shape{c2}, T(0));
    p.run_sigma = Tensor<T>(Shape{c2}, T(1));
    p.gamma = Tensor<T>(Shape{c2}, T(1));
    p.beta = Tensor<T>(Shape{c2}, T(0));
    p.stride = arch.stride;
    p.padding = arch.padding;
    m.units.emplace_back(std::move(p));
  }
  Head<T> h;
  h.weight = Tensor<T>(Shape{arch.classes, arch.feature_dim()});
  const double bound = 1.0 / std::sqrt(static_cast<double>(arch.feature_dim()));
  for (auto& v : h.weight.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  h.bias = Tensor<T>(Shape{arch.classes}, T(0));
  m.heads.push_back(std::move(h));
  return m;
}

template <typename U, typename T>
ModelBundle<U> model_cast(const ModelBundle<T>& m) {
  auto cast_path = [](const ConvBNPathway<T>& p) {
    ConvBNPathway<U> q;
    q.kernels = tensor_cast<U>(p.kernels);
    q.run_mu = tensor_cast<U>(p.run_mu);
    q.run_sigma = tensor_cast<U>(p.run_sigma);
    q.gamma = tensor_cast<U>(p.gamma);
    q.beta = tensor_cast<U>(p.beta);
    q.stride = p.stride;
    q.padding = p.padding;
    return q;
  };
  ModelBundle<U> out;
  out.arch = m.arch;
  out.form = m.form;
  for (const auto& unit : m.units) {
    std::visit(
        [&](const auto& u) {
          using V = std::decay_t<decltype(u)>;
          if constexpr (std::is_same_v<V, ConvBNPathway<T>>) {
            out.units.emplace_back(cast_path(u));
          } else if constexpr (std::is_same_v<V, SepUnit<T>>) {
            SepUnit<U> s;
            for (const auto& p : u.pathways) s.pathways.push_back(cast_path(p));
            for (T w : u.merge_weights) s.merge_weights.push_back(static_cast<U>(w));
            out.units.emplace_back(std::move(s));
          } else {
            FusedConv<U> f;
            f.kernels = tensor_cast<U>(u.kernels);
            f.bias = tensor_cast<U>(u.bias);
            f.stride = u.stride;
            f.padding = u.padding;
            out.units.emplace_back(std::move(f));
          }
        },
        unit);
  }
  for (const auto& h : m.heads) out.heads.push_back({tensor_cast<U>(h.weight), tensor_cast<U>(h.bias)});
  return out;
}

namespace {

template <typename T>
bool same_path(const ConvBNPathway<T>& a, const ConvBNPathway<T>& b) {
  return bit_identical(a.kernels, b.kernels) && bit_identical(a.run_mu, b.run_mu) &&
         bit_identical(a.run_sigma, b.run_sigma) && bit_identical(a.gamma, b.gamma) &&
         bit_identical(a.beta, b.beta) && a.stride == b.stride && a.padding == b.padding;
}

}  // namespace

template <typename T>
bool bit_identical(const ModelBundle<T>& a, const ModelBundle<T>& b) {
  if (!(a.arch == b.arch) || a.form != b.form || a.units.size() != b.units.size() ||
      a.heads.size() != b.heads.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.units.size(); ++i) {
    if (a.units[i].index() != b.units[i].index()) return false;
    bool same = std::visit(
        [&](const auto& ua) {
          using V = std::decay_t<decltype(ua)>;
          const auto& ub = std::get<V>(b.units[i]);
          if constexpr (std::is_same_v<V, ConvBNPathway<T>>) {
            return same_path(ua, ub);
          } else if constexpr (std::is_same_v<V, SepUnit<T>>) {
            if (ua.k() != ub.k()) return false;
            if (std::memcmp(ua.merge_weights.data(), ub.merge_weights.data(), ua.k() * sizeof(T)) != 0) return false;
            for (std::size_t k = 0; k < ua.k(); ++k) {
              if (!same_path(ua.pathways[k], ub.pathways[k])) return false;
            }
            return true;
          } else {
            return bit_identical(ua.kernels, ub.kernels) && bit_identical(ua.bias, ub.bias) &&
                   ua.stride == ub.stride && ua.padding == ub.padding;
          }
        },
        a.units[i]);
    if (!same) return false;
  }
  for (std::size_t h = 0; h < a.heads.size(); ++h) {
    if (!bit_identical(a.heads[h].weight, b.heads[h].weight) || !bit_identical(a.heads[h].bias, b.heads[h].bias)) {
      return false;
    }
  }
  return true;
}

template <typename T>
Tensor<T> unit_forward(const Unit<T>& unit, const Tensor<T>& input) {
  return std::visit(
      [&](const auto& u) -> Tensor<T> {
        using V = std::decay_t<decltype(u)>;
        if constexpr (std::is_same_v<V, ConvBNPathway<T>>) {
          return ops::batchnorm2d(ops::conv2d(input, u.kernels, u.stride, u.padding), u.run_mu, u.run_sigma,
                                  u.gamma, u.beta);
        } else if constexpr (std::is_same_v<V, SepUnit<T>>) {
          Tensor<T> merged;
          for (std::size_t k = 0; k < u.k(); ++k) {
            const auto& p = u.pathways[k];
            Tensor<T> o = ops::batchnorm2d(ops::conv2d(input, p.kernels, p.stride, p.padding), p.run_mu,
                                           p.run_sigma, p.gamma, p.beta);
            if (k == 0) merged = Tensor<T>(o.shape());
            ops::axpy(u.merge_weights[k], o, merged);
          }
          check_finite(merged, "merge");
          return merged;
        } else {
          return ops::add_channel_bias(ops::conv2d(input, u.kernels, u.stride, u.padding), u.bias);
        }
      },
      unit);
}

template <typename T>
Inference<T> infer(const ModelBundle<T>& model, const Tensor<T>& batch, std::size_t chunk) {
  if (batch.rank() != 4 || batch.shape() != model.arch.input_shape(batch.dim(0))) {
    throw ShapeError("input batch " + shape_str(batch.shape()) + " does not match architecture");
  }
  const std::size_t n = batch.dim(0);
  const std::size_t d = model.arch.feature_dim();
  const std::size_t c = model.arch.classes;
  Inference<T> out;
  out.features = Tensor<T>(Shape{n, d});
  for (std::size_t h = 0; h < model.heads.size(); ++h) out.logits.emplace_back(Shape{n, c});
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    Tensor<T> x = (begin == 0 && end == n) ? batch : batch.slice0(begin, end);
    for (const auto& unit : model.units) x = ops::relu(unit_forward(unit, x));
    const Tensor<T> feat = ops::global_avg_pool(x);
    std::copy(feat.data().begin(), feat.data().end(), out.features.ptr() + begin * d);
    for (std::size_t h = 0; h < model.heads.size(); ++h) {
      const Tensor<T> z = ops::linear(feat, model.heads[h].weight, model.heads[h].bias);
      std::copy(z.data().begin(), z.data().end(), out.logits[h].ptr() + begin * c);
    }
  }
  return out;
}

template <typename T>
ag::Var<T> ParamBinding<T>::bind(Tensor<T>& target, bool is_head) {
  ag::Var<T> v = ag::Var<T>::leaf(target, true);
  entries_.push_back({&target, v, is_head});
  return v;
}

template <typename T>
void ParamBinding<T>::sgd_step(T lr, T head_multiplier) {
  for (auto& e : entries_) {
    if (!e.var.has_grad()) throw PreconditionError("sgd_step: parameter has no gradient (run backward first)");
  }
  for (auto& e : entries_) {
    const T step = e.is_head ? lr * head_multiplier : lr;
    ops::axpy(-step, e.var.grad(), *e.target);
    check_finite(*e.target, "sgd_step");
  }
}

template <typename T>
void update_running_stats(ConvBNPathway<T>& p, const Tensor<T>& mean, const Tensor<T>& var, std::size_t count,
                          double momentum) {
  const T m = static_cast<T>(momentum);
  const T eps = static_cast<T>(ops::kBnEps);
  const T unbias = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
  for (std::size_t j = 0; j < mean.size(); ++j) {
    p.run_mu[j] = (T(1) - m) * p.run_mu[j] + m * mean[j];
    const T old_var = std::max(p.run_sigma[j] * p.run_sigma[j] - eps, T(0));
    const T new_var = (T(1) - m) * old_var + m * var[j] * unbias;
    p.run_sigma[j] = std::sqrt(new_var + eps);
  }
}

namespace {

template <typename T>
ag::Var<T> param(Tensor<T>& t, bool trainable, bool is_head, ParamBinding<T>* params) {
  if (params != nullptr && trainable) return params->bind(t, is_head);
  return ag::Var<T>::constant(t);
}

template <typename T>
ag::Var<T> pathway_graph(ConvBNPathway<T>& p, const ag::Var<T>& x, Mode mode, ParamBinding<T>* params,
                         const GraphOptions& opts) {
  const bool tr = opts.train_extractor;
  ag::Var<T> conv = ag::conv2d(x, param(p.kernels, tr, false, params), p.stride, p.padding);
  ag::Var<T> g = param(p.gamma, tr, false, params);
  ag::Var<T> b = param(p.beta, tr, false, params);
  if (mode == Mode::eval) return ag::batchnorm_eval(conv, p.run_mu, p.run_sigma, g, b);
  auto bn = ag::batchnorm_train(conv, g, b);
  const Shape& s = conv.value().shape();
  update_running_stats(p, bn.mean, bn.var, s[0] * s[2] * s[3], opts.bn_momentum);
  return bn.out;
}

}  // namespace

template <typename T>
GraphForward<T> forward_graph(ModelBundle<T>& model, const Tensor<T>& batch, Mode mode, ParamBinding<T>* params,
                              const GraphOptions& opts) {
  if (batch.rank() != 4 || batch.shape() != model.arch.input_shape(batch.dim(0))) {
    throw ShapeError("input batch " + shape_str(batch.shape()) + " does not match architecture");
  }
  ag::Var<T> x = ag::Var<T>::constant(batch);
  for (auto& unit : model.units) {
    ag::Var<T> pre = std::visit(
        [&](auto& u) -> ag::Var<T> {
          using V = std::decay_t<decltype(u)>;
          if constexpr (std::is_same_v<V, ConvBNPathway<T>>) {
            return pathway_graph(u, x, mode, params, opts);
          } else if constexpr (std::is_same_v<V, SepUnit<T>>) {
            std::vector<ag::Var<T>> outs;
            for (auto& p : u.pathways) outs.push_back(pathway_graph(p, x, mode, params, opts));
            ag::Var<T> merged = ag::weighted_sum<T>(outs, u.merge_weights);
            check_finite(merged.value(), "merge");
            return merged;
          } else {
            const bool tr = opts.train_extractor;
            return ag::channel_bias(ag::conv2d(x, param(u.kernels, tr, false, params), u.stride, u.padding),
                                    param(u.bias, tr, false, params));
          }
        },
        unit);
    x = ag::relu(pre);
  }
  GraphForward<T> out;
  out.features = ag::global_avg_pool(x);
  for (auto& h : model.heads) {
    out.logits.push_back(ag::linear(out.features, param(h.weight, opts.train_heads, true, params),
                                    param(h.bias, opts.train_heads, true, params)));
  }
  return out;
}

template <typename T>
Tensor<T> forward(ModelBundle<T>& model, const Tensor<T>& batch, Mode mode) {
  std::vector<Tensor<T>> logits;
  if (mode == Mode::eval) {
    logits = infer(model, batch).logits;
  } else {
    for (auto& z : forward_graph<T>(model, batch, mode, nullptr).logits) logits.push_back(z.value());
  }
  const std::size_t per = logits[0].size();
  Tensor<T> out(Shape{logits.size(), batch.dim(0), model.arch.classes});
  for (std::size_t h = 0; h < logits.size(); ++h) std::copy_n(logits[h].ptr(), per, out.ptr() + h * per);
  return out;
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  return base * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total)));
}

template <typename T>
ModelBundle<T> train_supervised(ModelBundle<T> model, const data::LabeledSet& domain, const TrainConfig& cfg) {
  if (domain.size() == 0) throw PreconditionError("train_source: empty dataset");
  if (model.form != Form::source) throw PreconditionError("supervised training expects a source-form model");
  domain.validate(model.arch.classes);
  if (cfg.epochs == 0) return model;
  const Tensor<T> images = tensor_cast<T>(domain.images);
  const std::size_t n = domain.size();
  const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 2);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const std::size_t total = steps_per_epoch * cfg.epochs;
  SplitMix64 rng(cfg.seed ^ 0x5EED5EEDULL);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = permutation(n, rng);
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t end = std::min(n, begin + bs);
      if (end - begin < 2) continue;
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor<T> x = images.gather0(idx);
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(domain.labels[i]);
      ParamBinding<T> params;
      auto g = forward_graph<T>(model, x, Mode::train, &params);
      auto loss = ag::cross_entropy<T>(g.logits[0], labels, static_cast<T>(cfg.label_smoothing));
      loss.backward();
      params.sgd_step(static_cast<T>(cosine_lr(cfg.lr, step, total)), static_cast<T>(cfg.head_lr_multiplier));
      ++step;
    }
  }
  return model;
}

template <typename T>
ModelBundle<T> train_source(const data::LabeledSet& domain, const ArchDesc& arch, const TrainConfig& cfg) {
  if (domain.size() == 0) throw PreconditionError("train_source: empty dataset");
  return train_supervised(init_model<T>(arch, cfg.init_seed), domain, cfg);
}

#define SEPREP_INSTANTIATE_NN(T)                                                                      \
  template struct ConvBNPathway<T>;                                                                   \
  template struct SepUnit<T>;                                                                         \
  template struct FusedConv<T>;                                                                       \
  template struct ModelBundle<T>;                                                                     \
  template class ParamBinding<T>;                                                                     \
  template void update_running_stats(ConvBNPathway<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, double); \
  template ModelBundle<T> init_model<T>(const ArchDesc&, std::uint64_t);                              \
  template bool bit_identical(const ModelBundle<T>&, const ModelBundle<T>&);                          \
  template Tensor<T> unit_forward(const Unit<T>&, const Tensor<T>&);                                  \
  template Inference<T> infer(const ModelBundle<T>&, const Tensor<T>&, std::size_t);                  \
  template Tensor<T> forward(ModelBundle<T>&, const Tensor<T>&, Mode);                                \
  template GraphForward<T> forward_graph(ModelBundle<T>&, const Tensor<T>&, Mode, ParamBinding<T>*,   \
                                         const GraphOptions&);                                        \
  template ModelBundle<T> train_supervised(ModelBundle<T>, const data::LabeledSet&, const TrainConfig&); \
  template ModelBundle<T> train_source<T>(const data::LabeledSet&, const ArchDesc&, const TrainConfig&);

SEPREP_INSTANTIATE_NN(float)
SEPREP_INSTANTIATE_NN(double)

template ModelBundle<double> model_cast<double, float>(const ModelBundle<float>&);
template ModelBundle<float> model_cast<float, double>(const ModelBundle<double>&);
template ModelBundle<float> model_cast<float, float>(const ModelBundle<float>&);
template ModelBundle<double> model_cast<double, double>(const ModelBundle<double>&);

}  // namespace seprep
