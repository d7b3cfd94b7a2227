#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "transcp/kernels.hpp"
#include "transcp/rng.hpp"
#include "transcp/tensor.hpp"

// Reverse-mode autodiff over dynamically built graphs. Nodes are created per
// forward pass and discarded afterwards; parameters enter as leaves. Gradients
// accumulate with +=, so diamond patterns and repeated inputs are handled.

namespace transcp {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;

  Tensor<T>& ensure_grad() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return leaf(std::move(value), false);
}

template <typename T>
Var<T> scalar_const(T v) {
  return constant(Tensor<T>::from_vector({1}, {v}));
}

namespace detail {

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> bw) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) n->backward_fn = std::move(bw);
  return n;
}

template <typename T>
bool wants(const Var<T>& p) {
  return p->requires_grad;
}

}  // namespace detail

// ---- elementwise arithmetic ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  TCP_CHECK(a->value.same_shape(b->value), "add: shape mismatch ",
            shape_str(a->value.shape()), " vs ", shape_str(b->value.shape()));
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (auto& p : n.parents) {
      if (!detail::wants(p)) continue;
      Tensor<T>& g = p->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  TCP_CHECK(a->value.same_shape(b->value), "sub: shape mismatch ",
            shape_str(a->value.shape()), " vs ", shape_str(b->value.shape()));
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (detail::wants(n.parents[0])) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (detail::wants(n.parents[1])) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  TCP_CHECK(a->value.same_shape(b->value), "mul: shape mismatch ",
            shape_str(a->value.shape()), " vs ", shape_str(b->value.shape()));
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (detail::wants(n.parents[0])) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      const Tensor<T>& bv = n.parents[1]->value;
      for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (detail::wants(n.parents[1])) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      const Tensor<T>& av = n.parents[0]->value;
      for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> divide(const Var<T>& a, const Var<T>& b) {
  TCP_CHECK(a->value.same_shape(b->value), "div: shape mismatch");
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] /= b->value[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const Tensor<T>& av = n.parents[0]->value;
    const Tensor<T>& bv = n.parents[1]->value;
    if (detail::wants(n.parents[0])) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / bv[i];
    }
    if (detail::wants(n.parents[1])) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i)
        g[i] -= n.grad[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return detail::make_op<T>(std::move(out), {a}, [c](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * c;
  });
}

template <typename T>
Var<T> min_op(const Var<T>& a, const Var<T>& b) {
  TCP_CHECK(a->value.same_shape(b->value), "min: shape mismatch");
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.numel(); ++i)
    out[i] = std::min(out[i], b->value[i]);
  // Subgradient goes to the first argument on ties.
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const Tensor<T>& av = n.parents[0]->value;
    const Tensor<T>& bv = n.parents[1]->value;
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      Var<T>& to = av[i] <= bv[i] ? n.parents[0] : n.parents[1];
      if (detail::wants(to)) to->ensure_grad()[i] += n.grad[i];
    }
  });
}

template <typename T>
Var<T> max_op(const Var<T>& a, const Var<T>& b) {
  TCP_CHECK(a->value.same_shape(b->value), "max: shape mismatch");
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.numel(); ++i)
    out[i] = std::max(out[i], b->value[i]);
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const Tensor<T>& av = n.parents[0]->value;
    const Tensor<T>& bv = n.parents[1]->value;
    for (size_t i = 0; i < n.grad.numel(); ++i) {
      Var<T>& to = av[i] >= bv[i] ? n.parents[0] : n.parents[1];
      if (detail::wants(to)) to->ensure_grad()[i] += n.grad[i];
    }
  });
}

// ---- activations ----

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], T(0));
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    const Tensor<T>& x = n.parents[0]->value;
    for (size_t i = 0; i < g.numel(); ++i)
      if (x[i] > T(0)) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> tanh_op(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] * (T(1) - n.value[i] * n.value[i]);
  });
}

template <typename T>
Var<T> sigmoid_op(const Var<T>& a) {
  Tensor<T> out = a->value;
  for (size_t i = 0; i < out.numel(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-out[i]));
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.numel(); ++i)
      g[i] += n.grad[i] * n.value[i] * (T(1) - n.value[i]);
  });
}

// ---- matrix products (row-major; backed by the shared kernels) ----

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  size_t m = a->value.size(0), k = a->value.size(1);
  TCP_CHECK(b->value.size(0) == k, "matmul: inner dims ", k, " vs ",
            b->value.size(0));
  size_t n = b->value.size(1);
  Tensor<T> out({m, n});
  kernels::matmul(a->value.data(), b->value.data(), out.data(), m, k, n);
  return detail::make_op<T>(std::move(out), {a, b}, [m, k, n](Node<T>& n_) {
    if (detail::wants(n_.parents[0])) {
      Tensor<T> ga({m, k});
      kernels::matmul_nt(n_.grad.data(), n_.parents[1]->value.data(),
                         ga.data(), m, n, k);
      Tensor<T>& g = n_.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] += ga[i];
    }
    if (detail::wants(n_.parents[1])) {
      Tensor<T> gb({k, n});
      kernels::matmul_tn(n_.parents[0]->value.data(), n_.grad.data(),
                         gb.data(), k, m, n);
      Tensor<T>& g = n_.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] += gb[i];
    }
  });
}

// out = a^T * b for a of shape {k,m}.
template <typename T>
Var<T> matmul_tn(const Var<T>& a, const Var<T>& b) {
  size_t k = a->value.size(0), m = a->value.size(1);
  TCP_CHECK(b->value.size(0) == k, "matmul_tn: inner dims ", k, " vs ",
            b->value.size(0));
  size_t n = b->value.size(1);
  Tensor<T> out({m, n});
  kernels::matmul_tn(a->value.data(), b->value.data(), out.data(), m, k, n);
  return detail::make_op<T>(std::move(out), {a, b}, [m, k, n](Node<T>& n_) {
    if (detail::wants(n_.parents[0])) {
      Tensor<T> ga({k, m});  // ga = b * g^T
      kernels::matmul_nt(n_.parents[1]->value.data(), n_.grad.data(),
                         ga.data(), k, n, m);
      Tensor<T>& g = n_.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] += ga[i];
    }
    if (detail::wants(n_.parents[1])) {
      Tensor<T> gb({k, n});  // gb = a * g
      kernels::matmul(n_.parents[0]->value.data(), n_.grad.data(), gb.data(),
                      k, m, n);
      Tensor<T>& g = n_.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] += gb[i];
    }
  });
}

// out = a * b^T for b of shape {n,k}.
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  size_t m = a->value.size(0), k = a->value.size(1);
  TCP_CHECK(b->value.size(1) == k, "matmul_nt: inner dims ", k, " vs ",
            b->value.size(1));
  size_t n = b->value.size(0);
  Tensor<T> out({m, n});
  kernels::matmul_nt(a->value.data(), b->value.data(), out.data(), m, k, n);
  return detail::make_op<T>(std::move(out), {a, b}, [m, k, n](Node<T>& n_) {
    if (detail::wants(n_.parents[0])) {
      Tensor<T> ga({m, k});  // ga = g * b
      kernels::matmul(n_.grad.data(), n_.parents[1]->value.data(), ga.data(),
                      m, n, k);
      Tensor<T>& g = n_.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] += ga[i];
    }
    if (detail::wants(n_.parents[1])) {
      Tensor<T> gb({n, k});  // gb = g^T * a
      kernels::matmul_tn(n_.grad.data(), n_.parents[0]->value.data(),
                         gb.data(), n, m, k);
      Tensor<T>& g = n_.parents[1]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] += gb[i];
    }
  });
}

// ---- shape plumbing ----

template <typename T>
Var<T> reshape_op(const Var<T>& a, std::vector<size_t> shape) {
  Tensor<T> out = a->value.reshaped(shape);
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> row_slice(const Var<T>& a, size_t r0, size_t rows) {
  size_t R = a->value.size(0), N = a->value.size(1);
  TCP_CHECK(r0 + rows <= R, "row_slice: [", r0, ",", r0 + rows,
            ") out of range for ", R, " rows");
  Tensor<T> out({rows, N});
  std::copy_n(a->value.data() + r0 * N, rows * N, out.data());
  return detail::make_op<T>(std::move(out), {a}, [r0, rows, N](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < rows * N; ++i) g[r0 * N + i] += n.grad[i];
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  TCP_CHECK(!parts.empty(), "concat_rows: empty input");
  size_t N = parts[0]->value.size(1), R = 0;
  for (const auto& p : parts) {
    TCP_CHECK(p->value.size(1) == N, "concat_rows: column count mismatch");
    R += p->value.size(0);
  }
  Tensor<T> out({R, N});
  size_t r = 0;
  for (const auto& p : parts) {
    std::copy_n(p->value.data(), p->value.numel(), out.data() + r * N);
    r += p->value.size(0);
  }
  return detail::make_op<T>(Tensor<T>(out), parts, [N](Node<T>& n) {
    size_t r = 0;
    for (auto& p : n.parents) {
      size_t rows = p->value.size(0);
      if (detail::wants(p)) {
        Tensor<T>& g = p->ensure_grad();
        for (size_t i = 0; i < rows * N; ++i) g[i] += n.grad[r * N + i];
      }
      r += rows;
    }
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  TCP_CHECK(!parts.empty(), "concat_cols: empty input");
  size_t C = parts[0]->value.size(0), N = 0;
  for (const auto& p : parts) {
    TCP_CHECK(p->value.size(0) == C, "concat_cols: row count mismatch");
    N += p->value.size(1);
  }
  Tensor<T> out({C, N});
  size_t off = 0;
  for (const auto& p : parts) {
    size_t n = p->value.size(1);
    for (size_t c = 0; c < C; ++c)
      std::copy_n(p->value.data() + c * n, n, out.data() + c * N + off);
    off += n;
  }
  return detail::make_op<T>(std::move(out), parts, [C, N](Node<T>& nd) {
    size_t off = 0;
    for (auto& p : nd.parents) {
      size_t n = p->value.size(1);
      if (detail::wants(p)) {
        Tensor<T>& g = p->ensure_grad();
        for (size_t c = 0; c < C; ++c)
          for (size_t j = 0; j < n; ++j)
            g[c * n + j] += nd.grad[c * N + off + j];
      }
      off += n;
    }
  });
}

// Column j of a {C,N} tensor as a {C,1} vector.
template <typename T>
Var<T> col(const Var<T>& a, size_t j) {
  size_t C = a->value.size(0), N = a->value.size(1);
  TCP_CHECK(j < N, "col: index ", j, " out of range ", N);
  Tensor<T> out({C, 1});
  for (size_t c = 0; c < C; ++c) out[c] = a->value[c * N + j];
  return detail::make_op<T>(std::move(out), {a}, [j, C, N](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t c = 0; c < C; ++c) g[c * N + j] += n.grad[c];
  });
}

template <typename T>
Var<T> element(const Var<T>& a, size_t i) {
  TCP_CHECK(i < a->value.numel(), "element: index out of range");
  Tensor<T> out = Tensor<T>::from_vector({1}, {a->value[i]});
  return detail::make_op<T>(std::move(out), {a}, [i](Node<T>& n) {
    n.parents[0]->ensure_grad()[i] += n.grad[0];
  });
}

// ---- broadcasts and reductions ----

template <typename T>
Var<T> add_col_bias(const Var<T>& x, const Var<T>& b) {
  size_t C = x->value.size(0), N = x->value.size(1);
  TCP_CHECK(b->value.numel() == C, "add_col_bias: bias size ",
            b->value.numel(), " vs rows ", C);
  Tensor<T> out = x->value;
  for (size_t c = 0; c < C; ++c)
    for (size_t j = 0; j < N; ++j) out[c * N + j] += b->value[c];
  return detail::make_op<T>(std::move(out), {x, b}, [C, N](Node<T>& n) {
    if (detail::wants(n.parents[0])) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (detail::wants(n.parents[1])) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (size_t c = 0; c < C; ++c) {
        T acc = T(0);
        for (size_t j = 0; j < N; ++j) acc += n.grad[c * N + j];
        g[c] += acc;
      }
    }
  });
}

// y[c,j] = x[c,j] * s[j] with s of shape {1,N} (or any tensor with N
// elements). Used for coefficient reweighting and word-weight reweighting.
template <typename T>
Var<T> scale_columns(const Var<T>& x, const Var<T>& s) {
  size_t C = x->value.size(0), N = x->value.size(1);
  TCP_CHECK(s->value.numel() == N, "scale_columns: got ", s->value.numel(),
            " scales for ", N, " columns");
  Tensor<T> out = x->value;
  for (size_t c = 0; c < C; ++c)
    for (size_t j = 0; j < N; ++j) out[c * N + j] *= s->value[j];
  return detail::make_op<T>(std::move(out), {x, s}, [C, N](Node<T>& n) {
    const Tensor<T>& xv = n.parents[0]->value;
    const Tensor<T>& sv = n.parents[1]->value;
    if (detail::wants(n.parents[0])) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (size_t c = 0; c < C; ++c)
        for (size_t j = 0; j < N; ++j) g[c * N + j] += n.grad[c * N + j] * sv[j];
    }
    if (detail::wants(n.parents[1])) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (size_t j = 0; j < N; ++j) {
        T acc = T(0);
        for (size_t c = 0; c < C; ++c) acc += n.grad[c * N + j] * xv[c * N + j];
        g[j] += acc;
      }
    }
  });
}

// y[c,j] = x[c,j] * v[c] with v of shape {C,1}.
template <typename T>
Var<T> mul_bcast_col(const Var<T>& x, const Var<T>& v) {
  size_t C = x->value.size(0), N = x->value.size(1);
  TCP_CHECK(v->value.numel() == C, "mul_bcast_col: vector size ",
            v->value.numel(), " vs rows ", C);
  Tensor<T> out = x->value;
  for (size_t c = 0; c < C; ++c)
    for (size_t j = 0; j < N; ++j) out[c * N + j] *= v->value[c];
  return detail::make_op<T>(std::move(out), {x, v}, [C, N](Node<T>& n) {
    const Tensor<T>& xv = n.parents[0]->value;
    const Tensor<T>& vv = n.parents[1]->value;
    if (detail::wants(n.parents[0])) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (size_t c = 0; c < C; ++c)
        for (size_t j = 0; j < N; ++j) g[c * N + j] += n.grad[c * N + j] * vv[c];
    }
    if (detail::wants(n.parents[1])) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (size_t c = 0; c < C; ++c) {
        T acc = T(0);
        for (size_t j = 0; j < N; ++j) acc += n.grad[c * N + j] * xv[c * N + j];
        g[c] += acc;
      }
    }
  });
}

template <typename T>
Var<T> sum_cols(const Var<T>& x) {
  size_t C = x->value.size(0), N = x->value.size(1);
  Tensor<T> out({C, 1});
  for (size_t c = 0; c < C; ++c) {
    T acc = T(0);
    for (size_t j = 0; j < N; ++j) acc += x->value[c * N + j];
    out[c] = acc;
  }
  return detail::make_op<T>(std::move(out), {x}, [C, N](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t c = 0; c < C; ++c)
      for (size_t j = 0; j < N; ++j) g[c * N + j] += n.grad[c];
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  T acc = T(0);
  for (size_t i = 0; i < x->value.numel(); ++i) acc += x->value[i];
  Tensor<T> out = Tensor<T>::from_vector({1}, {acc});
  return detail::make_op<T>(std::move(out), {x}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
  });
}

// Scalar probe: sum_i x[i] * w[i] for a fixed weight tensor.
template <typename T>
Var<T> dot_with_const(const Var<T>& x, const Tensor<T>& w) {
  TCP_CHECK(x->value.numel() == w.numel(), "dot_with_const: size mismatch");
  T acc = T(0);
  for (size_t i = 0; i < w.numel(); ++i) acc += x->value[i] * w[i];
  Tensor<T> out = Tensor<T>::from_vector({1}, {acc});
  return detail::make_op<T>(std::move(out), {x}, [w](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0] * w[i];
  });
}

// Per-column dot product of two {C,N} tensors -> {1,N}.
template <typename T>
Var<T> dot_cols(const Var<T>& a, const Var<T>& b) {
  TCP_CHECK(a->value.same_shape(b->value), "dot_cols: shape mismatch");
  size_t C = a->value.size(0), N = a->value.size(1);
  Tensor<T> out({1, N});
  for (size_t j = 0; j < N; ++j) {
    T acc = T(0);
    for (size_t c = 0; c < C; ++c) acc += a->value[c * N + j] * b->value[c * N + j];
    out[j] = acc;
  }
  return detail::make_op<T>(std::move(out), {a, b}, [C, N](Node<T>& n) {
    const Tensor<T>& av = n.parents[0]->value;
    const Tensor<T>& bv = n.parents[1]->value;
    if (detail::wants(n.parents[0])) {
      Tensor<T>& g = n.parents[0]->ensure_grad();
      for (size_t c = 0; c < C; ++c)
        for (size_t j = 0; j < N; ++j) g[c * N + j] += n.grad[j] * bv[c * N + j];
    }
    if (detail::wants(n.parents[1])) {
      Tensor<T>& g = n.parents[1]->ensure_grad();
      for (size_t c = 0; c < C; ++c)
        for (size_t j = 0; j < N; ++j) g[c * N + j] += n.grad[j] * av[c * N + j];
    }
  });
}

template <typename T>
Var<T> l2_normalize_cols(const Var<T>& x, T eps = T(1e-12)) {
  size_t C = x->value.size(0), N = x->value.size(1);
  Tensor<T> out = x->value;
  std::vector<T> norms(N);
  for (size_t j = 0; j < N; ++j) {
    T acc = T(0);
    for (size_t c = 0; c < C; ++c) acc += out[c * N + j] * out[c * N + j];
    norms[j] = std::sqrt(acc) + eps;
    for (size_t c = 0; c < C; ++c) out[c * N + j] /= norms[j];
  }
  return detail::make_op<T>(std::move(out), {x}, [C, N, norms](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t j = 0; j < N; ++j) {
      T ydotg = T(0);
      for (size_t c = 0; c < C; ++c) ydotg += n.value[c * N + j] * n.grad[c * N + j];
      for (size_t c = 0; c < C; ++c)
        g[c * N + j] +=
            (n.grad[c * N + j] - n.value[c * N + j] * ydotg) / norms[j];
    }
  });
}

// ---- softmax / layer norm ----

// Row-wise softmax over allowed key columns. `allowed` may be empty (all
// columns participate) or hold one flag per column.
template <typename T>
Var<T> masked_softmax_rows(const Var<T>& x, const std::vector<uint8_t>& allowed) {
  size_t R = x->value.size(0), K = x->value.size(1);
  TCP_CHECK(allowed.empty() || allowed.size() == K,
            "masked_softmax_rows: mask length ", allowed.size(), " vs ", K,
            " columns");
  size_t n_allowed = allowed.empty() ? K : 0;
  for (uint8_t a : allowed) n_allowed += a ? 1 : 0;
  TCP_CHECK(n_allowed > 0, "masked_softmax_rows: all positions masked out");
  Tensor<T> out({R, K});
  for (size_t r = 0; r < R; ++r) {
    const T* xr = x->value.data() + r * K;
    T* yr = out.data() + r * K;
    T m = -std::numeric_limits<T>::infinity();
    for (size_t j = 0; j < K; ++j)
      if (allowed.empty() || allowed[j]) m = std::max(m, xr[j]);
    T z = T(0);
    for (size_t j = 0; j < K; ++j) {
      if (allowed.empty() || allowed[j]) {
        yr[j] = std::exp(xr[j] - m);
        z += yr[j];
      } else {
        yr[j] = T(0);
      }
    }
    for (size_t j = 0; j < K; ++j) yr[j] /= z;
  }
  return detail::make_op<T>(std::move(out), {x}, [R, K](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t r = 0; r < R; ++r) {
      const T* y = n.value.data() + r * K;
      const T* gy = n.grad.data() + r * K;
      T dot = T(0);
      for (size_t j = 0; j < K; ++j) dot += y[j] * gy[j];
      for (size_t j = 0; j < K; ++j) g[r * K + j] += y[j] * (gy[j] - dot);
    }
  });
}

// Normalizes each column of a {C,N} tensor over its C entries.
template <typename T>
Var<T> layer_norm_cols(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       T eps = T(1e-5)) {
  size_t C = x->value.size(0), N = x->value.size(1);
  TCP_CHECK(gamma->value.numel() == C && beta->value.numel() == C,
            "layer_norm_cols: affine size mismatch");
  Tensor<T> out({C, N});
  std::vector<T> inv_std(N), mean(N);
  for (size_t j = 0; j < N; ++j) {
    T mu = T(0);
    for (size_t c = 0; c < C; ++c) mu += x->value[c * N + j];
    mu /= T(C);
    T var = T(0);
    for (size_t c = 0; c < C; ++c) {
      T d = x->value[c * N + j] - mu;
      var += d * d;
    }
    var /= T(C);
    mean[j] = mu;
    inv_std[j] = T(1) / std::sqrt(var + eps);
    for (size_t c = 0; c < C; ++c) {
      T xhat = (x->value[c * N + j] - mu) * inv_std[j];
      out[c * N + j] = gamma->value[c] * xhat + beta->value[c];
    }
  }
  return detail::make_op<T>(
      std::move(out), {x, gamma, beta}, [C, N, inv_std, mean](Node<T>& n) {
        const Tensor<T>& xv = n.parents[0]->value;
        const Tensor<T>& gv = n.parents[1]->value;
        for (size_t j = 0; j < N; ++j) {
          // Recompute xhat column and the two reduction terms.
          T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
          for (size_t c = 0; c < C; ++c) {
            T xhat = (xv[c * N + j] - mean[j]) * inv_std[j];
            T dxhat = n.grad[c * N + j] * gv[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
          }
          if (detail::wants(n.parents[0])) {
            Tensor<T>& g = n.parents[0]->ensure_grad();
            for (size_t c = 0; c < C; ++c) {
              T xhat = (xv[c * N + j] - mean[j]) * inv_std[j];
              T dxhat = n.grad[c * N + j] * gv[c];
              g[c * N + j] += inv_std[j] * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / T(C));
            }
          }
        }
        if (detail::wants(n.parents[1])) {
          Tensor<T>& g = n.parents[1]->ensure_grad();
          for (size_t c = 0; c < C; ++c) {
            T acc = T(0);
            for (size_t j = 0; j < N; ++j) {
              T xhat = (xv[c * N + j] - mean[j]) * inv_std[j];
              acc += n.grad[c * N + j] * xhat;
            }
            g[c] += acc;
          }
        }
        if (detail::wants(n.parents[2])) {
          Tensor<T>& g = n.parents[2]->ensure_grad();
          for (size_t c = 0; c < C; ++c) {
            T acc = T(0);
            for (size_t j = 0; j < N; ++j) acc += n.grad[c * N + j];
            g[c] += acc;
          }
        }
      });
}

// ---- task-specific fused ops ----

// Gaussian discrimination coefficients: coeff = alpha * exp(-(1-s)^2 / (2 d^2))
// with d = exp(log_delta). s has shape {1,N}; alpha and log_delta are scalars.
template <typename T>
Var<T> gauss_coeff(const Var<T>& s, const Var<T>& alpha, const Var<T>& log_delta) {
  TCP_CHECK(alpha->value.numel() == 1 && log_delta->value.numel() == 1,
            "gauss_coeff: alpha/log_delta must be scalars");
  size_t N = s->value.numel();
  T a = alpha->value[0];
  T d = std::exp(log_delta->value[0]);
  Tensor<T> out({1, N});
  std::vector<T> eterm(N);
  for (size_t j = 0; j < N; ++j) {
    T one_minus = T(1) - s->value[j];
    eterm[j] = std::exp(-(one_minus * one_minus) / (T(2) * d * d));
    out[j] = a * eterm[j];
  }
  return detail::make_op<T>(
      std::move(out), {s, alpha, log_delta}, [N, a, d, eterm](Node<T>& n) {
        const Tensor<T>& sv = n.parents[0]->value;
        if (detail::wants(n.parents[0])) {
          Tensor<T>& g = n.parents[0]->ensure_grad();
          for (size_t j = 0; j < N; ++j)
            g[j] += n.grad[j] * a * eterm[j] * (T(1) - sv[j]) / (d * d);
        }
        if (detail::wants(n.parents[1])) {
          T acc = T(0);
          for (size_t j = 0; j < N; ++j) acc += n.grad[j] * eterm[j];
          n.parents[1]->ensure_grad()[0] += acc;
        }
        if (detail::wants(n.parents[2])) {
          T acc = T(0);
          for (size_t j = 0; j < N; ++j) {
            T one_minus = T(1) - sv[j];
            acc += n.grad[j] * a * eterm[j] * (one_minus * one_minus) / (d * d);
          }
          n.parents[2]->ensure_grad()[0] += acc;
        }
      });
}

// Straight-through quantization: the forward value is the supplied quantized
// tensor; the backward pass treats the op as identity on the input features.
template <typename T>
Var<T> straight_through(const Var<T>& features, Tensor<T> quantized) {
  TCP_CHECK(features->value.same_shape(quantized),
            "straight_through: quantized shape mismatch");
  return detail::make_op<T>(std::move(quantized), {features}, [](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

// ---- convolution ----

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, size_t stride,
              size_t pad) {
  size_t ci = x->value.size(0), h = x->value.size(1), wd = x->value.size(2);
  size_t co = w->value.size(0), ks = w->value.size(2);
  TCP_CHECK(w->value.size(1) == ci, "conv2d: weight expects ",
            w->value.size(1), " input channels, image has ", ci);
  size_t ho = (h + 2 * pad - ks) / stride + 1;
  size_t wo = (wd + 2 * pad - ks) / stride + 1;
  Tensor<T> out({co, ho, wo});
  kernels::conv2d_forward(x->value.data(), w->value.data(),
                          b ? b->value.data() : nullptr, out.data(), ci, h, wd,
                          co, ks, stride, pad, ho, wo);
  std::vector<Var<T>> parents = {x, w};
  if (b) parents.push_back(b);
  return detail::make_op<T>(
      std::move(out), std::move(parents),
      [ci, h, wd, co, ks, stride, pad, ho, wo](Node<T>& n) {
        const Tensor<T>& xv = n.parents[0]->value;
        const Tensor<T>& wv = n.parents[1]->value;
        if (detail::wants(n.parents[0])) {
          Tensor<T> gx({ci, h, wd});
          kernels::conv2d_grad_input(n.grad.data(), wv.data(), gx.data(), ci,
                                     h, wd, co, ks, stride, pad, ho, wo);
          Tensor<T>& g = n.parents[0]->ensure_grad();
          for (size_t i = 0; i < g.numel(); ++i) g[i] += gx[i];
        }
        bool want_w = detail::wants(n.parents[1]);
        bool want_b = n.parents.size() > 2 && detail::wants(n.parents[2]);
        if (want_w || want_b) {
          Tensor<T> gw({co, ci, ks, ks});
          Tensor<T> gb({co});
          kernels::conv2d_grad_weight(n.grad.data(), xv.data(), gw.data(),
                                      gb.data(), ci, h, wd, co, ks, stride,
                                      pad, ho, wo);
          if (want_w) {
            Tensor<T>& g = n.parents[1]->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] += gw[i];
          }
          if (want_b) {
            Tensor<T>& g = n.parents[2]->ensure_grad();
            for (size_t i = 0; i < g.numel(); ++i) g[i] += gb[i];
          }
        }
      });
}

// Token embedding lookup: table {V,C}, ids of length L -> {C,L} whose column
// j is table row ids[j].
template <typename T>
Var<T> embedding_cols(const Var<T>& table, const std::vector<int>& ids) {
  size_t V = table->value.size(0), C = table->value.size(1);
  size_t L = ids.size();
  for (int id : ids)
    TCP_CHECK(id >= 0 && size_t(id) < V, "embedding: token id ", id,
              " outside vocabulary of size ", V);
  Tensor<T> out({C, L});
  for (size_t j = 0; j < L; ++j)
    for (size_t c = 0; c < C; ++c)
      out[c * L + j] = table->value[size_t(ids[j]) * C + c];
  return detail::make_op<T>(std::move(out), {table}, [ids, C, L](Node<T>& n) {
    Tensor<T>& g = n.parents[0]->ensure_grad();
    for (size_t j = 0; j < L; ++j)
      for (size_t c = 0; c < C; ++c)
        g[size_t(ids[j]) * C + c] += n.grad[c * L + j];
  });
}

// ---- dropout ----

// Inverted dropout; a no-op unless training and p > 0. The mask is drawn from
// the caller's RNG so runs replay deterministically.
template <typename T>
Var<T> dropout(const Var<T>& x, T p, bool training, Rng* rng) {
  if (!training || p <= T(0)) return x;
  TCP_CHECK(rng != nullptr, "dropout: RNG required in training mode");
  TCP_CHECK(p < T(1), "dropout: p must be < 1");
  size_t n = x->value.numel();
  std::vector<T> mask(n);
  T keep = T(1) - p;
  for (size_t i = 0; i < n; ++i)
    mask[i] = rng->uniform() < double(keep) ? T(1) / keep : T(0);
  Tensor<T> out = x->value;
  for (size_t i = 0; i < n; ++i) out[i] *= mask[i];
  return detail::make_op<T>(std::move(out), {x}, [mask](Node<T>& n_) {
    Tensor<T>& g = n_.parents[0]->ensure_grad();
    for (size_t i = 0; i < g.numel(); ++i) g[i] += n_.grad[i] * mask[i];
  });
}

// ---- backward driver ----

template <typename T>
std::vector<Node<T>*> topo_order(const Var<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents before children
}

template <typename T>
void backward(const Var<T>& root, const Tensor<T>* seed = nullptr) {
  TCP_CHECK(root->requires_grad,
            "backward: root does not depend on any differentiable input");
  if (seed) {
    TCP_CHECK(seed->same_shape(root->value), "backward: seed shape mismatch");
    root->ensure_grad();
    for (size_t i = 0; i < seed->numel(); ++i) root->grad[i] += (*seed)[i];
  } else {
    TCP_CHECK(root->value.numel() == 1,
              "backward: non-scalar root needs an explicit seed");
    root->ensure_grad()[0] += T(1);
  }
  auto order = topo_order(root);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

}  // namespace transcp
