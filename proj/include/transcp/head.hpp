#pragma once

#include <vector>

#include "transcp/bbox.hpp"
#include "transcp/encoders.hpp"

namespace transcp {

// Differentiable box: four scalar graph nodes in normalized (x,y,w,h) form.
template <typename T>
struct BoxVar {
  Var<T> x, y, w, h;

  BBox to_bbox() const {
    return BBox(double(x->value[0]), double(y->value[0]), double(w->value[0]),
                double(h->value[0]));
  }
};

// Fusion and box regression: a learnable regression token is prepended to the
// fused sequence, a dropout-free transformer encoder mixes it with the cells,
// and a 3-layer MLP reads the box off the token's output state.
template <typename T>
class GroundingHead {
 public:
  GroundingHead() = default;
  GroundingHead(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg)
      : channels_(size_t(cfg.channels)),
        pos2d_(sinusoidal_2d<T>(size_t(cfg.channels), size_t(cfg.grid()),
                                size_t(cfg.grid()))),
        pos1d_(sinusoidal_1d<T>(size_t(cfg.channels),
                                size_t(cfg.max_query_len))),
        mlp_(ps, rng, "head.mlp", size_t(cfg.channels), size_t(cfg.channels),
             4, ParamGroup::main) {
    reg_token_ = ps.add(
        "head.reg_token",
        normal_init<T>(rng, {size_t(cfg.channels), 1},
                       1.0 / std::sqrt(double(cfg.channels))),
        ParamGroup::main);
    // Learned position vector for the regression token; starts at zero so a
    // zero-layer stack reduces to MLP(reg_token).
    reg_pos_ = ps.add("head.reg_pos", Tensor<T>({size_t(cfg.channels), 1}),
                      ParamGroup::main);
    // Regression encoder layers run with dropout probability exactly 0; the
    // box head must be deterministic in training mode too.
    for (int l = 0; l < cfg.regression_layers; ++l) {
      layers_.emplace_back(ps, rng, "head.layer" + std::to_string(l),
                           size_t(cfg.channels), size_t(cfg.heads),
                           size_t(cfg.ffn_dim), T(0), ParamGroup::main);
      TCP_CHECK(layers_.back().dropout_p() == T(0),
                "regression encoder dropout must be zero");
    }
  }

  // Eq-13 style fusion: the word-weighted language features pool to a single
  // gate vector, squashed and broadcast against the squashed visual columns.
  // Every output entry lies in (-1,1).
  FeatureGrid<T> hadamard_fuse(Workspace<T>& ws,
                               const FeatureGrid<T>& quantized,
                               const TokenFeatures<T>& language,
                               const Var<T>& phi) const {
    (void)ws;
    TCP_CHECK(quantized.channel_dim() == language.channel_dim(),
              "hadamard_fuse: channel mismatch ", quantized.channel_dim(),
              " vs ", language.channel_dim());
    TCP_CHECK(phi->value.numel() == language.length(),
              "hadamard_fuse: phi length ", phi->value.numel(), " vs ",
              language.length(), " tokens");
    Var<T> gate = sum_cols(scale_columns(language.values, phi));  // {C,1}
    Var<T> fused = mul_bcast_col(tanh_op(quantized.values), tanh_op(gate));
    return FeatureGrid<T>{fused, quantized.grid_h, quantized.grid_w};
  }

  // Fused-sequence path: [REG] ++ cells (sinusoidal positions attached).
  BoxVar<T> regress_box(Workspace<T>& ws, const FeatureGrid<T>& fused) const {
    TCP_CHECK(fused.values->value.all_finite(),
              "regress_box: non-finite values in the fused features");
    TCP_CHECK(fused.channel_dim() == channels_, "regress_box: expected ",
              channels_, " channels, got ", fused.channel_dim());
    Var<T> reg = add(ws.param(reg_token_), ws.param(reg_pos_));
    Var<T> cells = add(fused.values, constant(Tensor<T>(pos2d_)));
    Var<T> seq = concat_cols<T>({reg, cells});
    for (const auto& layer : layers_) seq = layer.forward(ws, seq, nullptr, {});
    return read_box(ws, col(seq, 0));
  }

  // Joint-token alternative: the visual and language tokens are concatenated
  // behind the regression token instead of being fused; padded language keys
  // are masked out of the attention.
  BoxVar<T> regress_joint(Workspace<T>& ws, const FeatureGrid<T>& visual,
                          const TokenFeatures<T>& language) const {
    TCP_CHECK(visual.values->value.all_finite() &&
                  language.values->value.all_finite(),
              "regress_joint: non-finite input features");
    Var<T> reg = add(ws.param(reg_token_), ws.param(reg_pos_));
    Var<T> vis = add(visual.values, constant(Tensor<T>(pos2d_)));
    Var<T> lang = add(language.values, constant(Tensor<T>(pos1d_)));
    Var<T> seq = concat_cols<T>({reg, vis, lang});
    std::vector<uint8_t> key_mask(1 + visual.cells() + language.length(), 1);
    for (size_t j = 0; j < language.length(); ++j)
      key_mask[1 + visual.cells() + j] = language.mask[j];
    for (const auto& layer : layers_)
      seq = layer.forward(ws, seq, nullptr, key_mask);
    return read_box(ws, col(seq, 0));
  }

  size_t num_layers() const { return layers_.size(); }
  int reg_token_id() const { return reg_token_; }
  Tensor<T>& positional_table() { return pos2d_; }

 private:
  // MLP -> sigmoid onto [0,1]^4, then extents clamped so the box stays inside
  // the unit square.
  BoxVar<T> read_box(Workspace<T>& ws, const Var<T>& reg_out) const {
    Var<T> raw = sigmoid_op(mlp_.forward(ws, reg_out));  // {4,1}
    BoxVar<T> box;
    box.x = element(raw, 0);
    box.y = element(raw, 1);
    Var<T> one = scalar_const<T>(T(1));
    box.w = min_op(element(raw, 2), sub(one, box.x));
    box.h = min_op(element(raw, 3), sub(one, box.y));
    return box;
  }

  size_t channels_ = 0;
  int reg_token_ = -1, reg_pos_ = -1;
  Tensor<T> pos2d_, pos1d_;
  std::vector<TransformerLayer<T>> layers_;
  Mlp3<T> mlp_;
};

}  // namespace transcp
