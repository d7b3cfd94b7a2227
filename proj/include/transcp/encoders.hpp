#pragma once

#include <vector>

#include "transcp/config.hpp"
#include "transcp/layers.hpp"

namespace transcp {

// Channel-major spatial feature map: values are {C, H*W} with cells laid out
// row-major.
template <typename T>
struct FeatureGrid {
  Var<T> values;
  size_t grid_h = 0, grid_w = 0;

  size_t channel_dim() const { return values->value.size(0); }
  size_t cells() const { return values->value.size(1); }
};

// Per-token feature sequence: values are {C, L} with a validity mask.
template <typename T>
struct TokenFeatures {
  Var<T> values;
  std::vector<uint8_t> mask;

  size_t channel_dim() const { return values->value.size(0); }
  size_t length() const { return values->value.size(1); }
  size_t unmasked() const {
    size_t n = 0;
    for (uint8_t m : mask) n += m;
    return n;
  }
};

// Vision branch: a small strided convolutional stack for local features
// followed by transformer encoder layers for global context. Positional
// encodings are injected into queries and keys at every layer.
template <typename T>
class VisualEncoder {
 public:
  VisualEncoder() = default;
  VisualEncoder(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg)
      : canvas_(size_t(cfg.canvas)),
        grid_(size_t(cfg.grid())),
        conv1_(ps, rng, "visual.conv1", 3, size_t(cfg.conv_mid_channels), 5, 4,
               2, ParamGroup::encoder),
        conv2_(ps, rng, "visual.conv2", size_t(cfg.conv_mid_channels),
               size_t(cfg.channels), 3, 2, 1, ParamGroup::encoder),
        pos2d_(sinusoidal_2d<T>(size_t(cfg.channels), grid_, grid_)) {
    for (int l = 0; l < cfg.visual_layers; ++l)
      layers_.emplace_back(ps, rng, "visual.layer" + std::to_string(l),
                           size_t(cfg.channels), size_t(cfg.heads),
                           size_t(cfg.ffn_dim), T(cfg.encoder_dropout),
                           ParamGroup::encoder);
  }

  FeatureGrid<T> encode_image(Workspace<T>& ws, const Tensor<T>& image) const {
    TCP_CHECK(image.ndim() == 3 && image.size(0) == 3 &&
                  image.size(1) == canvas_ && image.size(2) == canvas_,
              "encode_image: expected image of shape (3,", canvas_, ",",
              canvas_, "), got ", shape_str(image.shape()));
    Var<T> x = constant(image);
    x = relu(conv1_.forward(ws, x));
    x = relu(conv2_.forward(ws, x));
    size_t C = x->value.size(0);
    Var<T> seq = reshape_op(x, {C, grid_ * grid_});
    for (const auto& layer : layers_)
      seq = layer.forward(ws, seq, &pos2d_, {});
    return FeatureGrid<T>{seq, grid_, grid_};
  }

  // Test hook: the fixed positional table (mutable on purpose so perturbation
  // tests can probe sensitivity).
  Tensor<T>& positional_table() { return pos2d_; }

  size_t grid() const { return grid_; }

 private:
  size_t canvas_ = 0, grid_ = 0;
  Conv2dLayer<T> conv1_, conv2_;
  std::vector<TransformerLayer<T>> layers_;
  Tensor<T> pos2d_;
};

// Language branch: token embedding plus transformer encoder layers over the
// fixed-length padded sequence. Attention never attends to padded keys.
template <typename T>
class LanguageEncoder {
 public:
  LanguageEncoder() = default;
  LanguageEncoder(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg)
      : max_len_(size_t(cfg.max_query_len)),
        embed_(ps, rng, "language.embed", size_t(cfg.vocab_size),
               size_t(cfg.channels), ParamGroup::encoder),
        pos1d_(sinusoidal_1d<T>(size_t(cfg.channels), max_len_)) {
    for (int l = 0; l < cfg.language_layers; ++l)
      layers_.emplace_back(ps, rng, "language.layer" + std::to_string(l),
                           size_t(cfg.channels), size_t(cfg.heads),
                           size_t(cfg.ffn_dim), T(cfg.encoder_dropout),
                           ParamGroup::encoder);
  }

  TokenFeatures<T> encode_query(Workspace<T>& ws, const std::vector<int>& ids,
                                const std::vector<uint8_t>& mask) const {
    TCP_CHECK(ids.size() == max_len_ && mask.size() == max_len_,
              "encode_query: expected ", max_len_, " tokens, got ", ids.size(),
              " ids and ", mask.size(), " mask entries");
    Var<T> seq = embed_.forward(ws, ids);
    for (const auto& layer : layers_)
      seq = layer.forward(ws, seq, &pos1d_, mask);
    return TokenFeatures<T>{seq, mask};
  }

  Tensor<T>& positional_table() { return pos1d_; }
  const Embedding<T>& embedding() const { return embed_; }

 private:
  size_t max_len_ = 0;
  Embedding<T> embed_;
  std::vector<TransformerLayer<T>> layers_;
  Tensor<T> pos1d_;
};

}  // namespace transcp
