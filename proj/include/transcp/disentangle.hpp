#pragma once

#include <string>
#include <vector>

#include "transcp/encoders.hpp"

namespace transcp {

// Cross-modal attention of Eq-3 form: visual cells query the language tokens.
// Single head; square projections preserve the channel dimension.
template <typename T>
class CrossModalAttention {
 public:
  CrossModalAttention() = default;
  CrossModalAttention(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
                      size_t dim)
      : dim_(dim),
        wq_(ps, rng, prefix + ".wq", dim, dim, ParamGroup::main, false),
        wk_(ps, rng, prefix + ".wk", dim, dim, ParamGroup::main, false),
        wv_(ps, rng, prefix + ".wv", dim, dim, ParamGroup::main, false) {}

  // Returns one aggregated semantic vector per spatial cell. Softmax runs
  // over the unmasked language tokens only, scaled by 1/sqrt(dim_K).
  FeatureGrid<T> attend(Workspace<T>& ws, const FeatureGrid<T>& visual,
                        const TokenFeatures<T>& language) const {
    TCP_CHECK(visual.channel_dim() == language.channel_dim(),
              "attend_semantics: channel mismatch ", visual.channel_dim(),
              " vs ", language.channel_dim());
    TCP_CHECK(language.unmasked() > 0,
              "attend_semantics: query has no unmasked tokens");
    Var<T> q = wq_.forward(ws, visual.values);    // {C,HW}
    Var<T> k = wk_.forward(ws, language.values);  // {C,L}
    Var<T> v = wv_.forward(ws, language.values);
    T inv_sqrt = T(1) / std::sqrt(T(dim_));
    Var<T> scores = scale(matmul_tn(q, k), inv_sqrt);  // {HW,L}
    Var<T> probs = masked_softmax_rows(scores, language.mask);
    Var<T> semantics = matmul_nt(v, probs);  // {C,HW}
    return FeatureGrid<T>{semantics, visual.grid_h, visual.grid_w};
  }

  size_t key_dim() const { return dim_; }

 private:
  size_t dim_ = 0;
  Linear<T> wq_, wk_, wv_;
};

// Gaussian discrimination field: a shared projection maps both feature sets
// into one metric space, cosine similarity feeds a Gaussian bump with
// learnable height (alpha) and width (delta, stored in log space so it stays
// positive during training).
template <typename T>
class DiscriminationField {
 public:
  DiscriminationField() = default;
  DiscriminationField(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
                      size_t dim, double alpha_init = 1.0,
                      double delta_init = 0.5) {
    TCP_CHECK(delta_init > 0, "discrimination field: delta must be positive");
    proj_ = Linear<T>(ps, rng, prefix + ".proj", dim, dim, ParamGroup::main,
                      false);
    alpha_ = ps.add(prefix + ".alpha",
                    Tensor<T>::from_vector({1}, {T(alpha_init)}),
                    ParamGroup::main);
    log_delta_ = ps.add(prefix + ".log_delta",
                        Tensor<T>::from_vector({1}, {T(std::log(delta_init))}),
                        ParamGroup::main);
  }

  // Per-cell similarity: shared projection, L2 normalization, dot product.
  Var<T> similarity(Workspace<T>& ws, const FeatureGrid<T>& visual,
                    const FeatureGrid<T>& semantics) const {
    TCP_CHECK(visual.cells() == semantics.cells() &&
                  visual.channel_dim() == semantics.channel_dim(),
              "discrimination: grids not aligned: ",
              shape_str(visual.values->value.shape()), " vs ",
              shape_str(semantics.values->value.shape()));
    Var<T> pv = l2_normalize_cols(proj_.forward(ws, visual.values));
    Var<T> some = l2_normalize_cols(proj_.forward(ws, semantics.values));
    return dot_cols(pv, some);  // {1,HW}, entries in [-1,1]
  }

  Var<T> coefficients(Workspace<T>& ws, const FeatureGrid<T>& visual,
                      const FeatureGrid<T>& semantics) const {
    return coefficients_from(ws, similarity(ws, visual, semantics));
  }

  Var<T> coefficients_from(Workspace<T>& ws, const Var<T>& similarity) const {
    check_delta();
    return gauss_coeff(similarity, ws.param(alpha_), ws.param(log_delta_));
  }

  double alpha(const ParamStore<T>& ps) const {
    return double(ps.value(alpha_)[0]);
  }
  double delta(const ParamStore<T>& ps) const {
    return std::exp(double(ps.value(log_delta_)[0]));
  }

  // Direct delta override used by diagnostics; rejects the singular value.
  void set_delta(ParamStore<T>& ps, double delta) {
    TCP_CHECK(delta != 0.0, "discrimination field: delta = 0 is singular");
    TCP_CHECK(delta > 0.0, "discrimination field: delta must be positive");
    ps.value(log_delta_)[0] = T(std::log(delta));
    delta_zeroed_ = false;
  }

  int alpha_id() const { return alpha_; }
  int log_delta_id() const { return log_delta_; }

 private:
  void check_delta() const {
    TCP_CHECK(!delta_zeroed_, "discrimination field: delta = 0 is singular");
  }

  Linear<T> proj_;
  int alpha_ = -1, log_delta_ = -1;
  bool delta_zeroed_ = false;
};

// Per-cell reweighting of visual features by their discrimination
// coefficients (scalar broadcast over channels).
template <typename T>
FeatureGrid<T> reweight_visual(const FeatureGrid<T>& visual,
                               const Var<T>& coeffs) {
  TCP_CHECK(coeffs->value.numel() == visual.cells(),
            "reweight_visual: expected ", visual.cells(),
            " coefficients, got ", coeffs->value.numel());
  return FeatureGrid<T>{scale_columns(visual.values, coeffs), visual.grid_h,
                        visual.grid_w};
}

// Language adapter + phrase attention. The Bi-GRU runs over unmasked tokens
// (backward direction over the reversed sequence); each direction produces
// half the channels. The scorer is a single affine map to one logit per
// token; softmax over unmasked positions yields the word weights.
template <typename T>
class PhraseAttention {
 public:
  PhraseAttention() = default;
  PhraseAttention(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
                  size_t dim)
      : dim_(dim) {
    TCP_CHECK(dim % 2 == 0,
              "phrase attention: channel dim must be even to split between "
              "GRU directions, got ",
              dim);
    size_t h = dim / 2;
    for (int d = 0; d < 2; ++d) {
      std::string p = prefix + (d == 0 ? ".fwd" : ".bwd");
      auto& g = gru_[d];
      g.wr = ps.add(p + ".wr", xavier_uniform<T>(rng, {h, dim}, dim, h),
                    ParamGroup::main);
      g.wz = ps.add(p + ".wz", xavier_uniform<T>(rng, {h, dim}, dim, h),
                    ParamGroup::main);
      g.wn = ps.add(p + ".wn", xavier_uniform<T>(rng, {h, dim}, dim, h),
                    ParamGroup::main);
      g.ur = ps.add(p + ".ur", xavier_uniform<T>(rng, {h, h}, h, h),
                    ParamGroup::main);
      g.uz = ps.add(p + ".uz", xavier_uniform<T>(rng, {h, h}, h, h),
                    ParamGroup::main);
      g.un = ps.add(p + ".un", xavier_uniform<T>(rng, {h, h}, h, h),
                    ParamGroup::main);
      g.br = ps.add(p + ".br", Tensor<T>({h}), ParamGroup::main);
      g.bz = ps.add(p + ".bz", Tensor<T>({h}), ParamGroup::main);
      g.bn = ps.add(p + ".bn", Tensor<T>({h}), ParamGroup::main);
    }
    scorer_ = Linear<T>(ps, rng, prefix + ".score", dim, 1, ParamGroup::main);
  }

  // Bidirectional adaptation; masked positions come back as zero vectors.
  TokenFeatures<T> adapt(Workspace<T>& ws,
                         const TokenFeatures<T>& language) const {
    size_t L = language.length();
    TCP_CHECK(language.channel_dim() == dim_, "adapt_language: expected ",
              dim_, " channels, got ", language.channel_dim());
    std::vector<size_t> active;
    for (size_t j = 0; j < L; ++j)
      if (language.mask[j]) active.push_back(j);

    std::vector<Var<T>> fwd(L), bwd(L);
    run_direction(ws, language.values, active, gru_[0], fwd);
    std::vector<size_t> reversed(active.rbegin(), active.rend());
    run_direction(ws, language.values, reversed, gru_[1], bwd);

    Var<T> zero_col = constant(Tensor<T>({dim_, 1}));
    std::vector<Var<T>> cols(L);
    for (size_t j = 0; j < L; ++j) {
      if (language.mask[j])
        cols[j] = concat_rows<T>({fwd[j], bwd[j]});
      else
        cols[j] = zero_col;
    }
    return TokenFeatures<T>{concat_cols(cols), language.mask};
  }

  // Word weights and the reweighted features.
  std::pair<TokenFeatures<T>, Var<T>> attend(
      Workspace<T>& ws, const TokenFeatures<T>& adapted) const {
    TCP_CHECK(adapted.unmasked() > 0, "phrase_attend: all tokens masked");
    Var<T> scores = scorer_.forward(ws, adapted.values);  // {1,L}
    Var<T> phi = masked_softmax_rows(scores, adapted.mask);
    TokenFeatures<T> weighted{scale_columns(adapted.values, phi),
                              adapted.mask};
    return {weighted, phi};
  }

 private:
  struct GruParams {
    int wr = -1, wz = -1, wn = -1;
    int ur = -1, uz = -1, un = -1;
    int br = -1, bz = -1, bn = -1;
  };

  // One GRU direction over the given position order; writes the hidden state
  // at each visited position.
  void run_direction(Workspace<T>& ws, const Var<T>& seq,
                     const std::vector<size_t>& order, const GruParams& g,
                     std::vector<Var<T>>& out) const {
    size_t h = dim_ / 2;
    Var<T> state = constant(Tensor<T>({h, 1}));
    Tensor<T> ones({h, 1}, T(1));
    for (size_t j : order) {
      Var<T> x = col(seq, j);
      Var<T> r = sigmoid_op(add_col_bias(
          add(matmul(ws.param(g.wr), x), matmul(ws.param(g.ur), state)),
          ws.param(g.br)));
      Var<T> z = sigmoid_op(add_col_bias(
          add(matmul(ws.param(g.wz), x), matmul(ws.param(g.uz), state)),
          ws.param(g.bz)));
      Var<T> n = tanh_op(add_col_bias(
          add(matmul(ws.param(g.wn), x),
              matmul(ws.param(g.un), mul(r, state))),
          ws.param(g.bn)));
      state = add(mul(sub(constant(Tensor<T>(ones)), z), state), mul(z, n));
      out[j] = state;
    }
  }

  size_t dim_ = 0;
  GruParams gru_[2];
  Linear<T> scorer_;
};

// The full context disentangling stage: both branches plus their parameters.
template <typename T>
class ContextDisentangler {
 public:
  ContextDisentangler() = default;
  ContextDisentangler(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg)
      : attention(ps, rng, "disentangle.xattn", size_t(cfg.channels)),
        field(ps, rng, "disentangle.field", size_t(cfg.channels)),
        phrase(ps, rng, "disentangle.phrase", size_t(cfg.channels)) {}

  FeatureGrid<T> attend_semantics(Workspace<T>& ws,
                                  const FeatureGrid<T>& visual,
                                  const TokenFeatures<T>& language) const {
    return attention.attend(ws, visual, language);
  }

  Var<T> discrimination_coefficients(Workspace<T>& ws,
                                     const FeatureGrid<T>& visual,
                                     const FeatureGrid<T>& semantics) const {
    return field.coefficients(ws, visual, semantics);
  }

  TokenFeatures<T> adapt_language(Workspace<T>& ws,
                                  const TokenFeatures<T>& language) const {
    return phrase.adapt(ws, language);
  }

  std::pair<TokenFeatures<T>, Var<T>> phrase_attend(
      Workspace<T>& ws, const TokenFeatures<T>& adapted) const {
    return phrase.attend(ws, adapted);
  }

  CrossModalAttention<T> attention;
  DiscriminationField<T> field;
  PhraseAttention<T> phrase;
};

}  // namespace transcp
