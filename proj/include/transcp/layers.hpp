#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "transcp/autodiff.hpp"
#include "transcp/params.hpp"

namespace transcp {

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore<T>& ps, Rng& rng, const std::string& prefix, size_t in,
         size_t out, ParamGroup g, bool bias = true)
      : in_(in), out_(out) {
    w_ = ps.add(prefix + ".weight",
                xavier_uniform<T>(rng, {out, in}, in, out), g);
    if (bias) b_ = ps.add(prefix + ".bias", Tensor<T>({out}), g);
  }

  // x {in,N} -> {out,N}
  Var<T> forward(Workspace<T>& ws, const Var<T>& x) const {
    Var<T> y = matmul(ws.param(w_), x);
    if (b_ >= 0) y = add_col_bias(y, ws.param(b_));
    return y;
  }

  size_t in_dim() const { return in_; }
  size_t out_dim() const { return out_; }

 private:
  int w_ = -1, b_ = -1;
  size_t in_ = 0, out_ = 0;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore<T>& ps, const std::string& prefix, size_t dim,
            ParamGroup g) {
    gamma_ = ps.add(prefix + ".gamma", Tensor<T>({dim}, T(1)), g);
    beta_ = ps.add(prefix + ".beta", Tensor<T>({dim}), g);
  }

  Var<T> forward(Workspace<T>& ws, const Var<T>& x) const {
    return layer_norm_cols(x, ws.param(gamma_), ws.param(beta_));
  }

 private:
  int gamma_ = -1, beta_ = -1;
};

// Multi-head self-attention over a {C,N} sequence. Positional tensors, when
// given, are added to queries and keys only; values stay position-free so a
// zero-layer stack passes token content through untouched.
template <typename T>
class SelfAttention {
 public:
  SelfAttention() = default;
  SelfAttention(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
                size_t dim, size_t heads, ParamGroup g)
      : dim_(dim), heads_(heads) {
    TCP_CHECK(dim % heads == 0, prefix, ": dim ", dim,
              " not divisible by heads ", heads);
    q_ = Linear<T>(ps, rng, prefix + ".q", dim, dim, g);
    k_ = Linear<T>(ps, rng, prefix + ".k", dim, dim, g);
    v_ = Linear<T>(ps, rng, prefix + ".v", dim, dim, g);
    o_ = Linear<T>(ps, rng, prefix + ".o", dim, dim, g);
  }

  Var<T> forward(Workspace<T>& ws, const Var<T>& x, const Tensor<T>* pos,
                 const std::vector<uint8_t>& key_mask) const {
    Var<T> qk_src = pos ? add(x, constant(*pos)) : x;
    Var<T> q = q_.forward(ws, qk_src);
    Var<T> k = k_.forward(ws, qk_src);
    Var<T> v = v_.forward(ws, x);
    size_t dh = dim_ / heads_;
    T inv_sqrt = T(1) / std::sqrt(T(dh));
    std::vector<Var<T>> outs;
    outs.reserve(heads_);
    for (size_t h = 0; h < heads_; ++h) {
      Var<T> qh = row_slice(q, h * dh, dh);
      Var<T> kh = row_slice(k, h * dh, dh);
      Var<T> vh = row_slice(v, h * dh, dh);
      Var<T> scores = scale(matmul_tn(qh, kh), inv_sqrt);  // {Nq,Nk}
      Var<T> probs = masked_softmax_rows(scores, key_mask);
      outs.push_back(matmul_nt(vh, probs));  // {dh,Nq}
    }
    return o_.forward(ws, concat_rows(outs));
  }

 private:
  Linear<T> q_, k_, v_, o_;
  size_t dim_ = 0, heads_ = 0;
};

// Post-norm transformer encoder layer: x -> LN(x + Attn) -> LN(h + FFN).
template <typename T>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
                   size_t dim, size_t heads, size_t ffn_dim, T dropout_p,
                   ParamGroup g)
      : attn_(ps, rng, prefix + ".attn", dim, heads, g),
        ln1_(ps, prefix + ".ln1", dim, g),
        ln2_(ps, prefix + ".ln2", dim, g),
        ffn1_(ps, rng, prefix + ".ffn1", dim, ffn_dim, g),
        ffn2_(ps, rng, prefix + ".ffn2", ffn_dim, dim, g),
        dropout_p_(dropout_p) {}

  Var<T> forward(Workspace<T>& ws, const Var<T>& x, const Tensor<T>* pos,
                 const std::vector<uint8_t>& key_mask) const {
    Var<T> a = attn_.forward(ws, x, pos, key_mask);
    a = dropout(a, dropout_p_, ws.training, ws.rng);
    Var<T> h = ln1_.forward(ws, add(x, a));
    Var<T> f = ffn2_.forward(ws, relu(ffn1_.forward(ws, h)));
    f = dropout(f, dropout_p_, ws.training, ws.rng);
    return ln2_.forward(ws, add(h, f));
  }

  T dropout_p() const { return dropout_p_; }

 private:
  SelfAttention<T> attn_;
  LayerNorm<T> ln1_, ln2_;
  Linear<T> ffn1_, ffn2_;
  T dropout_p_ = T(0);
};

template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
              size_t in_ch, size_t out_ch, size_t ksize, size_t stride,
              size_t pad, ParamGroup g)
      : stride_(stride), pad_(pad) {
    size_t fan_in = in_ch * ksize * ksize, fan_out = out_ch * ksize * ksize;
    w_ = ps.add(prefix + ".weight",
                xavier_uniform<T>(rng, {out_ch, in_ch, ksize, ksize}, fan_in,
                                  fan_out),
                g);
    b_ = ps.add(prefix + ".bias", Tensor<T>({out_ch}), g);
  }

  Var<T> forward(Workspace<T>& ws, const Var<T>& x) const {
    return conv2d(x, ws.param(w_), ws.param(b_), stride_, pad_);
  }

 private:
  int w_ = -1, b_ = -1;
  size_t stride_ = 1, pad_ = 0;
};

template <typename T>
class Embedding {
 public:
  Embedding() = default;
  Embedding(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
            size_t vocab, size_t dim, ParamGroup g)
      : vocab_(vocab) {
    table_ = ps.add(prefix + ".table",
                    xavier_uniform<T>(rng, {vocab, dim}, vocab, dim), g);
  }

  Var<T> forward(Workspace<T>& ws, const std::vector<int>& ids) const {
    return embedding_cols(ws.param(table_), ids);
  }

  size_t vocab() const { return vocab_; }
  int param_id() const { return table_; }

 private:
  int table_ = -1;
  size_t vocab_ = 0;
};

// Three affine layers with two rectifier activations between them.
template <typename T>
class Mlp3 {
 public:
  Mlp3() = default;
  Mlp3(ParamStore<T>& ps, Rng& rng, const std::string& prefix, size_t in,
       size_t hidden, size_t out, ParamGroup g)
      : l1_(ps, rng, prefix + ".l1", in, hidden, g),
        l2_(ps, rng, prefix + ".l2", hidden, hidden, g),
        l3_(ps, rng, prefix + ".l3", hidden, out, g) {}

  Var<T> forward(Workspace<T>& ws, const Var<T>& x) const {
    return l3_.forward(ws, relu(l2_.forward(ws, relu(l1_.forward(ws, x)))));
  }

 private:
  Linear<T> l1_, l2_, l3_;
};

// ---- fixed sinusoidal position tables ----

template <typename T>
Tensor<T> sinusoidal_1d(size_t dim, size_t length) {
  Tensor<T> pe({dim, length});
  for (size_t pos = 0; pos < length; ++pos) {
    for (size_t i = 0; i < dim / 2; ++i) {
      double freq = std::pow(10000.0, -2.0 * double(i) / double(dim));
      pe.at(2 * i, pos) = T(std::sin(double(pos) * freq));
      pe.at(2 * i + 1, pos) = T(std::cos(double(pos) * freq));
    }
  }
  return pe;
}

// Half the channels encode the row index, half the column index; cells are
// laid out row-major as row * grid_w + col.
template <typename T>
Tensor<T> sinusoidal_2d(size_t dim, size_t grid_h, size_t grid_w) {
  TCP_CHECK(dim % 2 == 0, "sinusoidal_2d: channel dim must be even");
  size_t half = dim / 2;
  Tensor<T> row_pe = sinusoidal_1d<T>(half, grid_h);
  Tensor<T> col_pe = sinusoidal_1d<T>(half, grid_w);
  Tensor<T> pe({dim, grid_h * grid_w});
  for (size_t r = 0; r < grid_h; ++r) {
    for (size_t c = 0; c < grid_w; ++c) {
      size_t cell = r * grid_w + c;
      for (size_t i = 0; i < half; ++i) {
        pe.at(i, cell) = row_pe.at(i, r);
        pe.at(half + i, cell) = col_pe.at(i, c);
      }
    }
  }
  return pe;
}

}  // namespace transcp
