#pragma once

#include <vector>

#include "transcp/disentangle.hpp"
#include "transcp/losses.hpp"
#include "transcp/prototype.hpp"

namespace transcp {

// The full grounding pipeline: two-branch encoding, context disentangling,
// prototype quantization, fusion, and box regression. Ablation flags route
// around individual stages: disabled visual disentangling forces unit
// coefficients, disabled language disentangling forces uniform word weights
// with the recurrent adapter bypassed, disabled quantization feeds the raw
// disentangled features forward, and disabled Hadamard fusion switches to the
// joint-token encoder.
template <typename T>
class TransCPModel {
 public:
  explicit TransCPModel(const ModelConfig& cfg, uint64_t param_seed = 0)
      : cfg_(cfg) {
    cfg_.validate();
    Rng rng(Rng::derive(param_seed, "params"));
    visual = VisualEncoder<T>(store_, rng, cfg_);
    language = LanguageEncoder<T>(store_, rng, cfg_);
    disentangler = ContextDisentangler<T>(store_, rng, cfg_);
    head = GroundingHead<T>(store_, rng, cfg_);
    bank = PrototypeBank<T>(size_t(cfg_.bank_size), size_t(cfg_.channels),
                            T(cfg_.bank_momentum));
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }

  struct Stage1 {
    FeatureGrid<T> visual_raw;       // F'_v
    TokenFeatures<T> tokens_raw;     // F_l
    FeatureGrid<T> visual_weighted;  // coefficient-reweighted features
    TokenFeatures<T> adapted;        // recurrent-adapted language features
    Var<T> coeffs;                   // {1,HW}
    Var<T> phi;                      // {1,L}
  };

  Stage1 encode_and_disentangle(Workspace<T>& ws, const Tensor<T>& image,
                                const std::vector<int>& tokens,
                                const std::vector<uint8_t>& mask) const {
    Stage1 s;
    s.visual_raw = visual.encode_image(ws, image);
    s.tokens_raw = language.encode_query(ws, tokens, mask);

    if (cfg_.use_vd) {
      FeatureGrid<T> sem =
          disentangler.attend_semantics(ws, s.visual_raw, s.tokens_raw);
      s.coeffs =
          disentangler.discrimination_coefficients(ws, s.visual_raw, sem);
      s.visual_weighted = reweight_visual(s.visual_raw, s.coeffs);
    } else {
      s.coeffs = constant(Tensor<T>({1, s.visual_raw.cells()}, T(1)));
      s.visual_weighted = s.visual_raw;
    }

    if (cfg_.use_ld) {
      s.adapted = disentangler.adapt_language(ws, s.tokens_raw);
      auto [weighted, phi] = disentangler.phrase_attend(ws, s.adapted);
      (void)weighted;
      s.phi = phi;
    } else {
      s.adapted = s.tokens_raw;
      size_t L = s.tokens_raw.length();
      size_t n = s.tokens_raw.unmasked();
      TCP_CHECK(n > 0, "forward: query has no unmasked tokens");
      Tensor<T> uniform({1, L});
      for (size_t j = 0; j < L; ++j)
        uniform[j] = mask[j] ? T(1) / T(n) : T(0);
      s.phi = constant(std::move(uniform));
    }
    return s;
  }

  struct Output {
    BoxVar<T> box;
    Var<T> loss;                     // set when ground truth is provided
    Var<T> coeffs;                   // discrimination coefficients
    Var<T> phi;                      // word weights
    Tensor<T> disentangled_visual;   // value of the pre-quantization features
    std::vector<int> assignment;     // prototype index per cell (if quantized)
  };

  Output forward(Workspace<T>& ws, const Tensor<T>& image,
                 const std::vector<int>& tokens,
                 const std::vector<uint8_t>& mask, const BBox* gt = nullptr,
                 const LossConfig* lcfg = nullptr) const {
    Stage1 s = encode_and_disentangle(ws, image, tokens, mask);

    Output out;
    out.coeffs = s.coeffs;
    out.phi = s.phi;
    out.disentangled_visual = s.visual_weighted.values->value;

    FeatureGrid<T> quantized = s.visual_weighted;
    if (cfg_.use_pt) {
      AssignmentResult<T> res = bank.assign(s.visual_weighted.values->value);
      out.assignment = res.indices;
      quantized =
          FeatureGrid<T>{bank.quantize(s.visual_weighted.values, res),
                         s.visual_weighted.grid_h, s.visual_weighted.grid_w};
    }

    if (cfg_.use_hadamard) {
      FeatureGrid<T> fused =
          head.hadamard_fuse(ws, quantized, s.adapted, s.phi);
      out.box = head.regress_box(ws, fused);
    } else {
      TokenFeatures<T> weighted{scale_columns(s.adapted.values, s.phi),
                                s.adapted.mask};
      out.box = head.regress_joint(ws, quantized, weighted);
    }

    if (gt) {
      static const LossConfig default_loss;
      out.loss = total_loss_g(out.box, *gt, lcfg ? *lcfg : default_loss);
    }
    return out;
  }

  ModelConfig cfg_;
  ParamStore<T> store_;

  VisualEncoder<T> visual;
  LanguageEncoder<T> language;
  ContextDisentangler<T> disentangler;
  GroundingHead<T> head;
  PrototypeBank<T> bank;
};

}  // namespace transcp
