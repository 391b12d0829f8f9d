#include "seprep/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "seprep/kernels.hpp"

namespace seprep::ag {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_var(Tensor<T> value, std::vector<NodePtr<T>> parents, std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const NodePtr<T>& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

template <typename T>
void accumulate(const NodePtr<T>& node, const Tensor<T>& g) {
  if (!node->requires_grad) return;
  Tensor<T>& buf = node->grad_buffer();
  if (buf.shape() != g.shape()) throw ShapeError("gradient shape mismatch during backward");
  kernels::active<T>().axpy(g.size(), T(1), g.ptr(), buf.ptr());
}

template <typename T>
Tensor<T> scalar_tensor(T v) {
  return Tensor<T>::scalar(v);
}

}  // namespace

template <typename T>
void Var<T>::backward() const {
  if (!node_) throw PreconditionError("backward on an undefined Var");
  if (node_->value.size() != 1) throw ShapeError("backward root must be a scalar");

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& kernels, std::size_t stride, std::size_t padding) {
  Tensor<T> out = ops::conv2d(input.value(), kernels.value(), stride, padding);
  NodePtr<T> x = input.node();
  NodePtr<T> w = kernels.node();
  return make_var<T>(std::move(out), {x, w}, [x, w, stride, padding](Node<T>& self) {
    auto g = ops::conv2d_backward(x->value, w->value, self.grad, stride, padding, x->requires_grad);
    if (x->requires_grad) accumulate(x, g.input);
    accumulate(w, g.kernels);
  });
}

template <typename T>
Var<T> batchnorm_eval(const Var<T>& input, const Tensor<T>& mu, const Tensor<T>& sigma, const Var<T>& gamma,
                      const Var<T>& beta) {
  Tensor<T> out = ops::batchnorm2d(input.value(), mu, sigma, gamma.value(), beta.value());
  NodePtr<T> x = input.node();
  NodePtr<T> g = gamma.node();
  NodePtr<T> b = beta.node();
  return make_var<T>(std::move(out), {x, g, b}, [x, g, b, mu, sigma](Node<T>& self) {
    const Tensor<T>& dy = self.grad;
    const std::size_t n = dy.dim(0);
    const std::size_t c = dy.dim(1);
    const std::size_t plane = dy.dim(2) * dy.dim(3);
    Tensor<T> dx(dy.shape());
    Tensor<T> dgamma(Shape{c});
    Tensor<T> dbeta(Shape{c});
    for (std::size_t j = 0; j < c; ++j) {
      const T s = g->value[j] / sigma[j];
      T sdy = 0;
      T sdyx = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * c + j) * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          const T d = dy[off + q];
          sdy += d;
          sdyx += d * (x->value[off + q] - mu[j]) / sigma[j];
          dx[off + q] = d * s;
        }
      }
      dgamma[j] = sdyx;
      dbeta[j] = sdy;
    }
    accumulate(x, dx);
    accumulate(g, dgamma);
    accumulate(b, dbeta);
  });
}

template <typename T>
BatchNormTrain<T> batchnorm_train(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta) {
  const Tensor<T>& xv = input.value();
  ops::ChannelStats<T> stats = ops::channel_stats(xv);
  const std::size_t c = xv.dim(1);
  Tensor<T> sigma(Shape{c});
  for (std::size_t j = 0; j < c; ++j) sigma[j] = std::sqrt(stats.var[j] + static_cast<T>(ops::kBnEps));
  Tensor<T> out = ops::batchnorm2d(xv, stats.mean, sigma, gamma.value(), beta.value());

  NodePtr<T> x = input.node();
  NodePtr<T> g = gamma.node();
  NodePtr<T> b = beta.node();
  Tensor<T> mean = stats.mean;
  Var<T> result = make_var<T>(std::move(out), {x, g, b}, [x, g, b, mean, sigma](Node<T>& self) {
    const Tensor<T>& dy = self.grad;
    const std::size_t n = dy.dim(0);
    const std::size_t ch = dy.dim(1);
    const std::size_t plane = dy.dim(2) * dy.dim(3);
    const T count = static_cast<T>(n * plane);
    Tensor<T> dx(dy.shape());
    Tensor<T> dgamma(Shape{ch});
    Tensor<T> dbeta(Shape{ch});
    for (std::size_t j = 0; j < ch; ++j) {
      T sdy = 0;
      T sdyx = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * ch + j) * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          const T xhat = (x->value[off + q] - mean[j]) / sigma[j];
          sdy += dy[off + q];
          sdyx += dy[off + q] * xhat;
        }
      }
      dgamma[j] = sdyx;
      dbeta[j] = sdy;
      const T s = g->value[j] / sigma[j];
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t off = (i * ch + j) * plane;
        for (std::size_t q = 0; q < plane; ++q) {
          const T xhat = (x->value[off + q] - mean[j]) / sigma[j];
          dx[off + q] = s * (dy[off + q] - sdy / count - xhat * sdyx / count);
        }
      }
    }
    accumulate(x, dx);
    accumulate(g, dgamma);
    accumulate(b, dbeta);
  });
  return {std::move(result), std::move(stats.mean), std::move(stats.var)};
}

template <typename T>
Var<T> channel_bias(const Var<T>& input, const Var<T>& bias) {
  Tensor<T> out = ops::add_channel_bias(input.value(), bias.value());
  NodePtr<T> x = input.node();
  NodePtr<T> b = bias.node();
  return make_var<T>(std::move(out), {x, b}, [x, b](Node<T>& self) {
    const Tensor<T>& dy = self.grad;
    const std::size_t c = dy.dim(1);
    const std::size_t plane = dy.dim(2) * dy.dim(3);
    Tensor<T> db(Shape{c});
    for (std::size_t i = 0; i < dy.dim(0); ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const T* p = dy.ptr() + (i * c + j) * plane;
        for (std::size_t q = 0; q < plane; ++q) db[j] += p[q];
      }
    }
    accumulate(x, dy);
    accumulate(b, db);
  });
}

template <typename T>
Var<T> relu(const Var<T>& input) {
  NodePtr<T> x = input.node();
  return make_var<T>(ops::relu(input.value()), {x},
                     [x](Node<T>& self) { accumulate(x, ops::relu_backward(x->value, self.grad)); });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& input) {
  NodePtr<T> x = input.node();
  return make_var<T>(ops::global_avg_pool(input.value()), {x}, [x](Node<T>& self) {
    const Shape& s = x->value.shape();
    const std::size_t plane = s[2] * s[3];
    Tensor<T> dx(s);
    for (std::size_t i = 0; i < s[0] * s[1]; ++i) {
      const T g = self.grad[i] / static_cast<T>(plane);
      std::fill_n(dx.ptr() + i * plane, plane, g);
    }
    accumulate(x, dx);
  });
}

template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  NodePtr<T> x = input.node();
  NodePtr<T> w = weight.node();
  NodePtr<T> b = bias.node();
  return make_var<T>(ops::linear(input.value(), weight.value(), bias.value()), {x, w, b},
                     [x, w, b](Node<T>& self) {
                       const auto& k = kernels::active<T>();
                       const Tensor<T>& dy = self.grad;
                       const std::size_t n = dy.dim(0);
                       const std::size_t m = dy.dim(1);
                       const std::size_t d = x->value.dim(1);
                       if (x->requires_grad) {
                         Tensor<T> dx(Shape{n, d});
                         k.gemm(n, d, m, dy.ptr(), m, w->value.ptr(), d, dx.ptr(), d, false);
                         accumulate(x, dx);
                       }
                       if (w->requires_grad) {
                         const Tensor<T> dy_t = ops::transpose2d(dy);
                         Tensor<T> dw(Shape{m, d});
                         k.gemm(m, d, n, dy_t.ptr(), n, x->value.ptr(), d, dw.ptr(), d, false);
                         accumulate(w, dw);
                       }
                       Tensor<T> db(Shape{m});
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < m; ++j) db[j] += dy[i * m + j];
                       }
                       accumulate(b, db);
                     });
}

template <typename T>
Var<T> log_softmax(const Var<T>& logits) {
  NodePtr<T> z = logits.node();
  Tensor<T> out = ops::log_softmax(logits.value());
  return make_var<T>(out, {z}, [z, out](Node<T>& self) {
    const std::size_t n = out.dim(0);
    const std::size_t c = out.dim(1);
    Tensor<T> dz(out.shape());
    for (std::size_t i = 0; i < n; ++i) {
      T s = 0;
      for (std::size_t j = 0; j < c; ++j) s += self.grad[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        dz[i * c + j] = self.grad[i * c + j] - std::exp(out[i * c + j]) * s;
      }
    }
    accumulate(z, dz);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.value().shape() != b.value().shape()) throw ShapeError("add shape mismatch");
  Tensor<T> out = a.value();
  ops::axpy(T(1), b.value(), out);
  NodePtr<T> pa = a.node();
  NodePtr<T> pb = b.node();
  return make_var<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    accumulate(pa, self.grad);
    accumulate(pb, self.grad);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.value().shape() != b.value().shape()) throw ShapeError("mul shape mismatch");
  Tensor<T> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  NodePtr<T> pa = a.node();
  NodePtr<T> pb = b.node();
  return make_var<T>(std::move(out), {pa, pb}, [pa, pb](Node<T>& self) {
    Tensor<T> da(self.grad.shape());
    Tensor<T> db(self.grad.shape());
    for (std::size_t i = 0; i < da.size(); ++i) {
      da[i] = self.grad[i] * pb->value[i];
      db[i] = self.grad[i] * pa->value[i];
    }
    accumulate(pa, da);
    accumulate(pb, db);
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  NodePtr<T> pa = a.node();
  return make_var<T>(std::move(out), {pa}, [pa, factor](Node<T>& self) {
    Tensor<T> da(self.grad.shape());
    for (std::size_t i = 0; i < da.size(); ++i) da[i] = self.grad[i] * factor;
    accumulate(pa, da);
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  NodePtr<T> pa = a.node();
  return make_var<T>(scalar_tensor(s), {pa}, [pa](Node<T>& self) {
    accumulate(pa, Tensor<T>(pa->value.shape(), self.grad[0]));
  });
}

template <typename T>
Var<T> weighted_sum(std::span<const Var<T>> terms, std::span<const T> weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw ShapeError("weighted_sum needs one weight per term");
  }
  Tensor<T> out(terms[0].value().shape());
  std::vector<NodePtr<T>> parents;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    ops::axpy(weights[k], terms[k].value(), out);
    parents.push_back(terms[k].node());
  }
  std::vector<T> w(weights.begin(), weights.end());
  std::vector<NodePtr<T>> captured = parents;
  return make_var<T>(std::move(out), std::move(parents), [captured, w](Node<T>& self) {
    for (std::size_t k = 0; k < captured.size(); ++k) {
      if (!captured[k]->requires_grad) continue;
      Tensor<T> g(self.grad.shape());
      ops::axpy(w[k], self.grad, g);
      accumulate(captured[k], g);
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels, T label_smoothing) {
  const Tensor<T>& z = logits.value();
  if (z.rank() != 2 || z.dim(0) != labels.size()) throw ShapeError("cross_entropy label count mismatch");
  const std::size_t n = z.dim(0);
  const std::size_t c = z.dim(1);
  const Tensor<T> logp = ops::log_softmax(z);
  const T off = label_smoothing / static_cast<T>(c);
  const T on = T(1) - label_smoothing + off;
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) throw ShapeError("label out of range");
    T row = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const T q = j == static_cast<std::size_t>(labels[i]) ? on : off;
      row -= q * logp[i * c + j];
    }
    total += row;
  }
  const T loss = total / static_cast<T>(n);
  check_finite(std::span<const T>(&loss, 1), "cross_entropy");
  NodePtr<T> pz = logits.node();
  std::vector<int> lab(labels.begin(), labels.end());
  return make_var<T>(scalar_tensor(loss), {pz}, [pz, logp, lab, on, off](Node<T>& self) {
    const std::size_t rows = logp.dim(0);
    const std::size_t cols = logp.dim(1);
    const T g = self.grad[0] / static_cast<T>(rows);
    Tensor<T> dz(logp.shape());
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const T q = j == static_cast<std::size_t>(lab[i]) ? on : off;
        dz[i * cols + j] = g * (std::exp(logp[i * cols + j]) - q);
      }
    }
    accumulate(pz, dz);
  });
}

template <typename T>
Var<T> im_loss(const Var<T>& logits, T diversity_weight) {
  const Tensor<T>& z = logits.value();
  if (z.rank() != 2) throw ShapeError("im_loss expects [N,C]");
  check_finite(z, "im_loss input");
  const std::size_t n = z.dim(0);
  const std::size_t c = z.dim(1);
  const Tensor<T> logp = ops::log_softmax(z);
  Tensor<T> p(logp.shape());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logp[i]);

  std::vector<T> ent(n, T(0));
  T mean_ent = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) ent[i] -= p[i * c + j] * logp[i * c + j];
    mean_ent += ent[i];
  }
  mean_ent /= static_cast<T>(n);

  std::vector<T> pbar(c, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) pbar[j] += p[i * c + j];
  }
  T ent_bar = 0;
  for (std::size_t j = 0; j < c; ++j) {
    pbar[j] /= static_cast<T>(n);
    if (pbar[j] > T(0)) ent_bar -= pbar[j] * std::log(pbar[j]);
  }
  const T loss = mean_ent - diversity_weight * ent_bar;
  check_finite(std::span<const T>(&loss, 1), "im_loss");

  NodePtr<T> pz = logits.node();
  return make_var<T>(scalar_tensor(loss), {pz}, [pz, p, logp, ent, pbar, diversity_weight](Node<T>& self) {
    const std::size_t rows = p.dim(0);
    const std::size_t cols = p.dim(1);
    const T g = self.grad[0];
    const T inv_n = T(1) / static_cast<T>(rows);
    // d(ent_bar)/d(p_ij) = -(log pbar_j + 1) / N
    std::vector<T> dbar(cols);
    for (std::size_t j = 0; j < cols; ++j) {
      dbar[j] = pbar[j] > T(0) ? -(std::log(pbar[j]) + T(1)) * inv_n : T(0);
    }
    Tensor<T> dz(p.shape());
    for (std::size_t i = 0; i < rows; ++i) {
      T inner = 0;
      for (std::size_t j = 0; j < cols; ++j) inner += dbar[j] * p[i * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        const T pij = p[i * cols + j];
        const T d_ent = -pij * (logp[i * cols + j] + ent[i]) * inv_n;
        const T d_bar = pij * (dbar[j] - inner);
        dz[i * cols + j] = g * (d_ent - diversity_weight * d_bar);
      }
    }
    accumulate(pz, dz);
  });
}

template <typename T>
Var<T> kd_loss(const Var<T>& student_logits, const Tensor<T>& teacher_probs, T temperature) {
  if (!(temperature > T(0))) throw PreconditionError("kd temperature must be positive");
  const Tensor<T>& z = student_logits.value();
  if (z.shape() != teacher_probs.shape() || z.rank() != 2) throw ShapeError("kd_loss shape mismatch");
  const std::size_t n = z.dim(0);
  const std::size_t c = z.dim(1);
  Tensor<T> zt(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) zt[i] = z[i] / temperature;
  const Tensor<T> logs = ops::log_softmax(zt);
  T total = 0;
  for (std::size_t i = 0; i < n * c; ++i) {
    const T q = teacher_probs[i];
    if (q > T(0)) total += q * (std::log(q) - logs[i]);
  }
  const T loss = temperature * temperature * total / static_cast<T>(n);
  check_finite(std::span<const T>(&loss, 1), "kd_loss");
  NodePtr<T> pz = student_logits.node();
  return make_var<T>(scalar_tensor(loss), {pz}, [pz, logs, teacher_probs, temperature](Node<T>& self) {
    const T rows = static_cast<T>(logs.dim(0));
    const T g = self.grad[0] * temperature / rows;
    Tensor<T> dz(logs.shape());
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = g * (std::exp(logs[i]) - teacher_probs[i]);
    accumulate(pz, dz);
  });
}

double grad_check(const std::function<Var<double>(const Var<double>&)>& f, const Tensor<double>& x,
                  double step) {
  if (!(step >= 1e-7 && step <= 1e-4)) throw PreconditionError("grad_check step must lie in [1e-7, 1e-4]");
  Var<double> leaf = Var<double>::leaf(x, true);
  Var<double> out = f(leaf);
  check_finite(out.value(), "grad_check objective");
  out.backward();
  const Tensor<double> analytic = leaf.has_grad() ? leaf.grad() : Tensor<double>(x.shape());

  double worst = 0;
  Tensor<double> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = f(Var<double>::constant(probe)).value()[0];
    probe[i] = orig - step;
    const double fm = f(Var<double>::constant(probe)).value()[0];
    probe[i] = orig;
    const double numeric = (fp - fm) / (2 * step);
    if (!std::isfinite(numeric)) throw NumericError("grad_check produced a non-finite difference");
    const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

#define SEPREP_INSTANTIATE_AG(T)                                                                      \
  template class Var<T>;                                                                              \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, std::size_t, std::size_t);                     \
  template Var<T> batchnorm_eval(const Var<T>&, const Tensor<T>&, const Tensor<T>&, const Var<T>&,    \
                                 const Var<T>&);                                                      \
  template BatchNormTrain<T> batchnorm_train(const Var<T>&, const Var<T>&, const Var<T>&);            \
  template Var<T> channel_bias(const Var<T>&, const Var<T>&);                                         \
  template Var<T> relu(const Var<T>&);                                                                \
  template Var<T> global_avg_pool(const Var<T>&);                                                     \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                \
  template Var<T> log_softmax(const Var<T>&);                                                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                  \
  template Var<T> scale(const Var<T>&, T);                                                            \
  template Var<T> sum(const Var<T>&);                                                                 \
  template Var<T> weighted_sum(std::span<const Var<T>>, std::span<const T>);                          \
  template Var<T> cross_entropy(const Var<T>&, std::span<const int>, T);                              \
  template Var<T> im_loss(const Var<T>&, T);                                                          \
  template Var<T> kd_loss(const Var<T>&, const Tensor<T>&, T);

SEPREP_INSTANTIATE_AG(float)
SEPREP_INSTANTIATE_AG(double)

}  // namespace seprep::ag
