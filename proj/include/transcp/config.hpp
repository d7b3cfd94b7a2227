#pragma once

#include <string>

#include "transcp/common.hpp"
#include "transcp/scenes.hpp"

namespace transcp {

// Architecture knobs. Channel width is shared between both branches; the
// fusion and regression stages require it.
struct ModelConfig {
  int channels = 64;
  int heads = 4;
  int ffn_dim = 128;
  int conv_mid_channels = 32;
  int visual_layers = 2;
  int language_layers = 2;
  int regression_layers = 2;
  double encoder_dropout = 0.1;  // branch encoders only; regression stage is 0
  int canvas = scenes::kCanvas;
  int stride = 8;
  int max_query_len = scenes::kMaxQueryLen;
  int vocab_size = scenes::vocab_size();
  int bank_size = 64;
  double bank_momentum = 0.9;
  // Ablation switches: Hadamard fusion, language disentangling, visual
  // disentangling, prototype quantization.
  bool use_hadamard = true;
  bool use_ld = true;
  bool use_vd = true;
  bool use_pt = true;

  int grid() const {
    TCP_CHECK(canvas % stride == 0, "canvas ", canvas,
              " not divisible by stride ", stride);
    return canvas / stride;
  }
  int cells() const { return grid() * grid(); }

  void validate() const {
    TCP_CHECK(channels > 0 && channels % 2 == 0, "channels must be even, got ",
              channels);
    TCP_CHECK(channels % heads == 0, "channels ", channels,
              " not divisible by heads ", heads);
    (void)grid();
  }
};

struct LossConfig {
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;

  void validate() const {
    TCP_CHECK(lambda_l1 > 0 && lambda_giou > 0,
              "loss weights must be positive");
  }
};

// Full run configuration: dataset sizes, optimizer, schedule, ablations.
struct RunConfig {
  uint64_t seed = 0;
  ModelConfig model;
  LossConfig loss;

  // Dataset sizes per split.
  int train_samples = 2048;
  int val_samples = 512;
  int test_samples = 512;
  int openvocab_samples = 512;
  int batch_size = 32;

  // Optimizer and schedule, proportional to the reference recipe: the
  // two-branch encoders train 10x slower than the rest, the learning rate
  // decays by 10x at 60% of the epochs, and the visual encoder stays frozen
  // for the first 10% of the epochs.
  int epochs = 16;
  double lr_main = 1e-4;
  double lr_encoder = 1e-5;
  double lr_decay_factor = 10.0;
  double weight_decay = 1e-4;
  double grad_clip = 1.0;

  int decay_epoch() const { return int(0.6 * epochs); }
  int freeze_epochs() const { return (epochs + 9) / 10; }

  void validate() const {
    model.validate();
    loss.validate();
    TCP_CHECK(train_samples > 0 && val_samples > 0 && batch_size > 0 &&
                  epochs > 0,
              "run config: sizes must be positive");
  }
};

}  // namespace transcp
