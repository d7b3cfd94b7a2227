#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "transcp/head.hpp"
#include "transcp/losses.hpp"

using namespace transcp;
using testutil::close_rel;
using testutil::random_tensor;

namespace {

ModelConfig head_cfg(int layers = 2) {
  ModelConfig cfg;
  cfg.channels = 16;
  cfg.heads = 2;
  cfg.ffn_dim = 32;
  cfg.canvas = 32;  // 4x4 grid
  cfg.regression_layers = layers;
  return cfg;
}

template <typename T>
FeatureGrid<T> make_grid(Tensor<T> values, size_t gh, size_t gw) {
  return FeatureGrid<T>{leaf(std::move(values), false), gh, gw};
}

template <typename T>
TokenFeatures<T> make_tokens(Tensor<T> values, std::vector<uint8_t> mask) {
  return TokenFeatures<T>{leaf(std::move(values), false), std::move(mask)};
}

}  // namespace

TEST_CASE("hadamard_fuse: zero gate zeroes everything") {
  ParamStore<double> ps;
  Rng rng(1);
  GroundingHead<double> head(ps, rng, head_cfg());
  Workspace<double> ws(ps);
  auto vis = make_grid(random_tensor(rng, {16, 16}), 4, 4);
  auto lang = make_tokens(Tensor<double>({16, 12}), std::vector<uint8_t>(12, 1));
  auto phi = leaf(Tensor<double>({1, 12}, 1.0 / 12), false);
  auto fused = head.hadamard_fuse(ws, vis, lang, phi);
  for (size_t i = 0; i < fused.values->value.numel(); ++i)
    CHECK(fused.values->value[i] == 0.0);
}

TEST_CASE("hadamard_fuse: scalar oracle value tanh(0.5)*tanh(0.5)") {
  // Single token with weight one and channel value 0.5 against a cell holding
  // 0.5: the fused entry equals tanh(0.5)^2 by direct evaluation.
  ParamStore<double> ps;
  Rng rng(2);
  GroundingHead<double> head(ps, rng, head_cfg());
  Workspace<double> ws(ps);
  Tensor<double> vis_v({16, 1}, 0.5);
  Tensor<double> lang_v({16, 1}, 0.5);
  auto fused = head.hadamard_fuse(ws, make_grid(vis_v, 1, 1),
                                  make_tokens(lang_v, {1}),
                                  leaf(Tensor<double>({1, 1}, 1.0), false));
  double want = std::tanh(0.5) * std::tanh(0.5);
  CHECK(want == doctest::Approx(0.2135523).epsilon(1e-5));
  for (size_t c = 0; c < 16; ++c)
    CHECK(std::abs(fused.values->value[c] - want) < 1e-5);
}

TEST_CASE("hadamard_fuse: outputs stay strictly inside (-1,1)") {
  ParamStore<double> ps;
  Rng rng(3);
  GroundingHead<double> head(ps, rng, head_cfg());
  Workspace<double> ws(ps);
  auto vis = make_grid(random_tensor(rng, {16, 16}, -8, 8), 4, 4);
  auto lang = make_tokens(random_tensor(rng, {16, 12}, -8, 8),
                          std::vector<uint8_t>(12, 1));
  Tensor<double> phiv = random_tensor(rng, {1, 12}, 0.0, 1.0);
  auto fused = head.hadamard_fuse(ws, vis, lang, leaf(phiv, false));
  for (size_t i = 0; i < fused.values->value.numel(); ++i)
    CHECK(std::abs(fused.values->value[i]) < 1.0);
}

TEST_CASE("hadamard_fuse: channel mismatch is rejected") {
  ParamStore<double> ps;
  Rng rng(4);
  GroundingHead<double> head(ps, rng, head_cfg());
  Workspace<double> ws(ps);
  auto vis = make_grid(random_tensor(rng, {16, 4}), 2, 2);
  auto lang = make_tokens(random_tensor(rng, {8, 3}), {1, 1, 1});
  CHECK_THROWS_WITH_AS(
      head.hadamard_fuse(ws, vis, lang, leaf(Tensor<double>({1, 3}), false)),
      doctest::Contains("channel mismatch"), Error);
}

TEST_CASE("regress_box: output always satisfies the box invariants") {
  ParamStore<float> ps;
  Rng rng(5);
  GroundingHead<float> head(ps, rng, head_cfg());
  Workspace<float> ws(ps);
  for (int trial = 0; trial < 1000; ++trial) {
    auto fused =
        make_grid(random_tensor(rng, {16, 16}, -3, 3).cast<float>(), 4, 4);
    BBox b = head.regress_box(ws, fused).to_bbox();  // validates on build
    CHECK(b.x >= 0);
    CHECK(b.y >= 0);
    CHECK(b.w > 0);
    CHECK(b.h > 0);
    CHECK(b.x + b.w <= 1 + BBox::kSlack);
    CHECK(b.y + b.h <= 1 + BBox::kSlack);
  }
}

TEST_CASE("regress_box: deterministic in eval and training mode") {
  ParamStore<float> ps;
  Rng rng(6);
  GroundingHead<float> head(ps, rng, head_cfg());
  auto fused = make_grid(random_tensor(rng, {16, 16}).cast<float>(), 4, 4);
  Workspace<float> ws_eval(ps);
  auto a = head.regress_box(ws_eval, fused);
  Workspace<float> ws_eval2(ps);
  auto b = head.regress_box(ws_eval2, fused);
  Rng drng(7);
  Workspace<float> ws_train(ps, true, &drng);
  auto c = head.regress_box(ws_train, fused);
  for (auto [va, vb, vc] :
       {std::tuple{a.x, b.x, c.x}, std::tuple{a.y, b.y, c.y},
        std::tuple{a.w, b.w, c.w}, std::tuple{a.h, b.h, c.h}}) {
    CHECK(va->value[0] == vb->value[0]);
    CHECK(va->value[0] == vc->value[0]);
  }
}

TEST_CASE("regress_box with zero layers ignores the image entirely") {
  ParamStore<double> ps;
  Rng rng(8);
  GroundingHead<double> head(ps, rng, head_cfg(0));
  Workspace<double> ws(ps);
  auto f1 = make_grid(random_tensor(rng, {16, 16}), 4, 4);
  auto f2 = make_grid(random_tensor(rng, {16, 16}), 4, 4);
  auto b1 = head.regress_box(ws, f1);
  Workspace<double> ws2(ps);
  auto b2 = head.regress_box(ws2, f2);
  CHECK(b1.x->value[0] == b2.x->value[0]);
  CHECK(b1.y->value[0] == b2.y->value[0]);
  CHECK(b1.w->value[0] == b2.w->value[0]);
  CHECK(b1.h->value[0] == b2.h->value[0]);

  // And the value equals MLP(reg_token) directly (reg_pos starts at zero).
  Workspace<double> ws3(ps);
  Mlp3<double>* mlp = nullptr;  // reconstruct via the same params
  (void)mlp;
  Var<double> reg = ws3.param(ps.find("head.reg_token"));
  auto lin = [&](const std::string& p, Var<double> x) {
    Var<double> y = matmul(ws3.param(ps.find("head.mlp." + p + ".weight")), x);
    return add_col_bias(y, ws3.param(ps.find("head.mlp." + p + ".bias")));
  };
  Var<double> out = sigmoid_op(lin("l3", relu(lin("l2", relu(lin("l1", reg))))));
  CHECK(b1.x->value[0] == out->value[0]);
  CHECK(b1.y->value[0] == out->value[1]);
}

TEST_CASE("regress_box rejects non-finite inputs before the encoder") {
  ParamStore<float> ps;
  Rng rng(9);
  GroundingHead<float> head(ps, rng, head_cfg());
  Workspace<float> ws(ps);
  Tensor<float> bad({16, 16});
  bad[7] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(head.regress_box(ws, make_grid(bad, 4, 4)),
                       doctest::Contains("non-finite"), Error);
}

TEST_CASE("permuting fused columns together with their positions preserves "
          "the box") {
  ParamStore<double> ps;
  Rng rng(10);
  GroundingHead<double> head(ps, rng, head_cfg());
  Tensor<double> fused = random_tensor(rng, {16, 16});
  Workspace<double> ws(ps);
  auto base = head.regress_box(ws, make_grid(fused, 4, 4));

  // Swap two cells in both the features and the positional table.
  Tensor<double> swapped = fused;
  Tensor<double>& pos = head.positional_table();
  Tensor<double> pos_orig = pos;
  for (size_t c = 0; c < 16; ++c) {
    std::swap(swapped.at(c, 3), swapped.at(c, 11));
    std::swap(pos.at(c, 3), pos.at(c, 11));
  }
  Workspace<double> ws2(ps);
  auto perm = head.regress_box(ws2, make_grid(swapped, 4, 4));
  pos = pos_orig;
  CHECK(close_rel(base.x->value[0], perm.x->value[0], 1e-9));
  CHECK(close_rel(base.y->value[0], perm.y->value[0], 1e-9));
  CHECK(close_rel(base.w->value[0], perm.w->value[0], 1e-9));
  CHECK(close_rel(base.h->value[0], perm.h->value[0], 1e-9));
}

TEST_CASE("joint-token path: valid box, padded keys fully ignored") {
  ParamStore<float> ps;
  Rng rng(11);
  GroundingHead<float> head(ps, rng, head_cfg());
  auto vis = make_grid(random_tensor(rng, {16, 16}).cast<float>(), 4, 4);
  std::vector<uint8_t> mask(12, 0);
  for (int j = 0; j < 5; ++j) mask[size_t(j)] = 1;
  Tensor<float> lang_v = random_tensor(rng, {16, 12}).cast<float>();
  Workspace<float> ws(ps);
  auto a = head.regress_joint(ws, vis, make_tokens(lang_v, mask));
  a.to_bbox();
  Tensor<float> tampered = lang_v;
  for (size_t c = 0; c < 16; ++c)
    for (size_t j = 5; j < 12; ++j) tampered.at(c, j) = 99.0f;
  Workspace<float> ws2(ps);
  auto b = head.regress_joint(ws2, vis, make_tokens(tampered, mask));
  CHECK(a.x->value[0] == b.x->value[0]);
  CHECK(a.y->value[0] == b.y->value[0]);
  CHECK(a.w->value[0] == b.w->value[0]);
  CHECK(a.h->value[0] == b.h->value[0]);
}

TEST_CASE("gradient flows through the regression token (vs finite diff)") {
  ParamStore<double> ps;
  Rng rng(12);
  GroundingHead<double> head(ps, rng, head_cfg(1));
  Tensor<double> fused_v = random_tensor(rng, {16, 16});
  BBox gt(0.2, 0.3, 0.4, 0.35);
  LossConfig lcfg;

  auto eval = [&](bool grads) {
    Workspace<double> ws(ps);
    ws.grads = grads;
    auto box = head.regress_box(ws, make_grid(fused_v, 4, 4));
    return std::make_pair(total_loss_g(box, gt, lcfg), std::move(ws));
  };
  auto [loss, ws] = eval(true);
  backward(loss);
  int id = head.reg_token_id();
  Tensor<double> grad = ws.grad_of(id);
  Tensor<double>& theta = ps.value(id);
  int nonzero = 0;
  for (size_t e = 0; e < theta.numel(); ++e) {
    double x0 = theta[e], h = 1e-6;
    theta[e] = x0 + h;
    double fp = eval(false).first->value[0];
    theta[e] = x0 - h;
    double fm = eval(false).first->value[0];
    theta[e] = x0;
    double fd = (fp - fm) / (2 * h);
    CHECK(close_rel(fd, grad[e], 1e-3, 1e-9));
    if (std::abs(grad[e]) > 1e-12) ++nonzero;
  }
  CHECK(nonzero > 0);
}
