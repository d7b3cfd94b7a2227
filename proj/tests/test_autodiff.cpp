#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "transcp/autodiff.hpp"

using namespace transcp;
using testutil::check_gradients;
using testutil::random_tensor;

namespace {

Tensor<double> probe_weights(Rng& rng, const std::vector<size_t>& shape) {
  Tensor<double> w(shape);
  for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform(0.2, 1.0);
  return w;
}

void expect_ok(const testutil::GradCheckResult& r) {
  INFO("input ", r.bad_input, " elem ", r.bad_elem, " analytic ", r.analytic,
       " numeric ", r.numeric, " rel ", r.worst_rel);
  CHECK(r.ok);
}

}  // namespace

TEST_CASE("elementwise op gradients") {
  Rng rng(11);
  auto a = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {3, 4});
  // Keep min/max inputs separated so the subgradient is unambiguous.
  for (size_t i = 0; i < b.numel(); ++i)
    if (std::abs(a[i] - b[i]) < 0.05) b[i] += 0.2;
  Tensor<double> w = probe_weights(rng, {3, 4});

  auto mk = [&](auto op) {
    return [op, w](const std::vector<Var<double>>& in) {
      return dot_with_const(op(in[0], in[1]), w);
    };
  };
  expect_ok(check_gradients({a, b}, mk([](auto x, auto y) { return add(x, y); })));
  expect_ok(check_gradients({a, b}, mk([](auto x, auto y) { return sub(x, y); })));
  expect_ok(check_gradients({a, b}, mk([](auto x, auto y) { return mul(x, y); })));
  expect_ok(check_gradients({a, b}, mk([](auto x, auto y) { return min_op(x, y); })));
  expect_ok(check_gradients({a, b}, mk([](auto x, auto y) { return max_op(x, y); })));

  auto bpos = b;
  for (size_t i = 0; i < bpos.numel(); ++i)
    bpos[i] = std::abs(bpos[i]) + 0.5;
  expect_ok(check_gradients(
      {a, bpos}, mk([](auto x, auto y) { return divide(x, y); })));
}

TEST_CASE("unary op gradients") {
  Rng rng(12);
  auto a = random_tensor(rng, {4, 3});
  // Move inputs off the ReLU kink.
  for (size_t i = 0; i < a.numel(); ++i)
    if (std::abs(a[i]) < 0.05) a[i] += 0.1;
  Tensor<double> w = probe_weights(rng, {4, 3});
  auto mk = [&](auto op) {
    return [op, w](const std::vector<Var<double>>& in) {
      return dot_with_const(op(in[0]), w);
    };
  };
  expect_ok(check_gradients({a}, mk([](auto x) { return relu(x); })));
  expect_ok(check_gradients({a}, mk([](auto x) { return tanh_op(x); })));
  expect_ok(check_gradients({a}, mk([](auto x) { return sigmoid_op(x); })));
  expect_ok(check_gradients({a}, mk([](auto x) { return scale(x, 2.5); })));
  expect_ok(check_gradients({a}, mk([](auto x) {
    return reshape_op(x, {12});
  })));
  expect_ok(check_gradients({a}, mk([](auto x) {
    return l2_normalize_cols(x);
  })));
}

TEST_CASE("matmul family gradients") {
  Rng rng(13);
  auto a = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {4, 5});
  Tensor<double> w = probe_weights(rng, {3, 5});
  expect_ok(check_gradients({a, b}, [&](const std::vector<Var<double>>& in) {
    return dot_with_const(matmul(in[0], in[1]), w);
  }));
  auto at = random_tensor(rng, {4, 3});
  expect_ok(check_gradients({at, b}, [&](const std::vector<Var<double>>& in) {
    return dot_with_const(matmul_tn(in[0], in[1]), w);
  }));
  auto bt = random_tensor(rng, {5, 4});
  expect_ok(check_gradients({a, bt}, [&](const std::vector<Var<double>>& in) {
    return dot_with_const(matmul_nt(in[0], in[1]), w);
  }));
}

TEST_CASE("slicing and concatenation gradients") {
  Rng rng(14);
  auto a = random_tensor(rng, {4, 5});
  auto b = random_tensor(rng, {2, 5});
  auto c = random_tensor(rng, {4, 3});
  {
    Tensor<double> w = probe_weights(rng, {2, 5});
    expect_ok(check_gradients({a}, [&](const std::vector<Var<double>>& in) {
      return dot_with_const(row_slice(in[0], 1, 2), w);
    }));
  }
  {
    Tensor<double> w = probe_weights(rng, {6, 5});
    expect_ok(check_gradients({a, b}, [&](const std::vector<Var<double>>& in) {
      return dot_with_const(concat_rows<double>({in[0], in[1]}), w);
    }));
  }
  {
    Tensor<double> w = probe_weights(rng, {4, 8});
    expect_ok(check_gradients({a, c}, [&](const std::vector<Var<double>>& in) {
      return dot_with_const(concat_cols<double>({in[0], in[1]}), w);
    }));
  }
  {
    Tensor<double> w = probe_weights(rng, {4, 1});
    expect_ok(check_gradients({a}, [&](const std::vector<Var<double>>& in) {
      return dot_with_const(col(in[0], 2), w);
    }));
  }
  expect_ok(check_gradients({a}, [&](const std::vector<Var<double>>& in) {
    return element(in[0], 7);
  }));
}

TEST_CASE("broadcast and reduction gradients") {
  Rng rng(15);
  auto x = random_tensor(rng, {4, 5});
  auto bias = random_tensor(rng, {4});
  auto s = random_tensor(rng, {1, 5});
  auto v = random_tensor(rng, {4, 1});
  auto y = random_tensor(rng, {4, 5});
  Tensor<double> w = probe_weights(rng, {4, 5});
  expect_ok(check_gradients({x, bias}, [&](const std::vector<Var<double>>& in) {
    return dot_with_const(add_col_bias(in[0], in[1]), w);
  }));
  expect_ok(check_gradients({x, s}, [&](const std::vector<Var<double>>& in) {
    return dot_with_const(scale_columns(in[0], in[1]), w);
  }));
  expect_ok(check_gradients({x, v}, [&](const std::vector<Var<double>>& in) {
    return dot_with_const(mul_bcast_col(in[0], in[1]), w);
  }));
  {
    Tensor<double> wc = probe_weights(rng, {4, 1});
    expect_ok(check_gradients({x}, [&](const std::vector<Var<double>>& in) {
      return dot_with_const(sum_cols(in[0]), wc);
    }));
  }
  expect_ok(check_gradients({x}, [&](const std::vector<Var<double>>& in) {
    return sum_all(in[0]);
  }));
  {
    Tensor<double> wr = probe_weights(rng, {1, 5});
    expect_ok(check_gradients({x, y}, [&](const std::vector<Var<double>>& in) {
      return dot_with_const(dot_cols(in[0], in[1]), wr);
    }));
  }
}

TEST_CASE("softmax and layer norm gradients") {
  Rng rng(16);
  auto x = random_tensor(rng, {3, 6});
  Tensor<double> w = probe_weights(rng, {3, 6});
  std::vector<uint8_t> mask = {1, 1, 0, 1, 0, 1};
  expect_ok(check_gradients({x}, [&](const std::vector<Var<double>>& in) {
    return dot_with_const(masked_softmax_rows(in[0], mask), w);
  }));
  expect_ok(check_gradients({x}, [&](const std::vector<Var<double>>& in) {
    return dot_with_const(masked_softmax_rows(in[0], {}), w);
  }));
  auto gamma = random_tensor(rng, {3}, 0.5, 1.5);
  auto beta = random_tensor(rng, {3});
  expect_ok(check_gradients(
      {x, gamma, beta},
      [&](const std::vector<Var<double>>& in) {
        return dot_with_const(layer_norm_cols(in[0], in[1], in[2]), w);
      },
      1e-4));
}

TEST_CASE("masked softmax zeroes masked columns and rejects empty masks") {
  auto x = leaf(Tensor<double>::from_vector({1, 3}, {1.0, 5.0, 2.0}), false);
  auto y = masked_softmax_rows(x, {1, 0, 1});
  CHECK(y->value[1] == 0.0);
  CHECK(y->value[0] + y->value[2] == doctest::Approx(1.0));
  CHECK_THROWS_WITH_AS(masked_softmax_rows(x, {0, 0, 0}),
                       doctest::Contains("masked"), Error);
}

TEST_CASE("gauss_coeff gradients and values") {
  Rng rng(17);
  auto s = random_tensor(rng, {1, 5}, -0.9, 0.9);
  auto alpha = Tensor<double>::from_vector({1}, {1.3});
  auto logd = Tensor<double>::from_vector({1}, {std::log(0.5)});
  Tensor<double> w = probe_weights(rng, {1, 5});
  expect_ok(check_gradients({s, alpha, logd},
                            [&](const std::vector<Var<double>>& in) {
                              return dot_with_const(
                                  gauss_coeff(in[0], in[1], in[2]), w);
                            }));
}

TEST_CASE("straight_through is identity for gradients, quantized in value") {
  Rng rng(18);
  auto x = random_tensor(rng, {3, 4});
  Tensor<double> q = random_tensor(rng, {3, 4});
  auto xa = leaf(x, true);
  auto out = straight_through(xa, q);
  CHECK(bitwise_equal(out->value, q));
  backward(sum_all(out));
  for (size_t i = 0; i < x.numel(); ++i) CHECK(xa->grad[i] == 1.0);
}

TEST_CASE("conv2d gradients") {
  Rng rng(19);
  auto x = random_tensor(rng, {2, 5, 5});
  auto w = random_tensor(rng, {3, 2, 3, 3});
  auto b = random_tensor(rng, {3});
  Tensor<double> probe = probe_weights(rng, {3, 3, 3});
  expect_ok(check_gradients(
      {x, w, b},
      [&](const std::vector<Var<double>>& in) {
        return dot_with_const(conv2d(in[0], in[1], in[2], 2, 1), probe);
      },
      1e-4));
}

TEST_CASE("embedding gradients scatter into the right rows") {
  Rng rng(20);
  auto table = random_tensor(rng, {5, 3});
  std::vector<int> ids = {4, 0, 4};
  Tensor<double> w = probe_weights(rng, {3, 3});
  expect_ok(check_gradients({table}, [&](const std::vector<Var<double>>& in) {
    return dot_with_const(embedding_cols(in[0], ids), w);
  }));
  auto t = leaf(table, true);
  backward(sum_all(embedding_cols(t, ids)));
  // Row 4 used twice, row 0 once, others untouched.
  CHECK(t->grad[4 * 3] == 2.0);
  CHECK(t->grad[0] == 1.0);
  CHECK(t->grad[1 * 3] == 0.0);
  CHECK_THROWS_AS(embedding_cols(t, {5}), Error);
}

TEST_CASE("dropout: off by default, deterministic with a fixed rng") {
  Rng rng(21);
  auto x = leaf(random_tensor(rng, {4, 4}), true);
  CHECK(dropout(x, 0.5, false, nullptr) == x);  // eval mode is a no-op
  CHECK(dropout(x, 0.0, true, nullptr) == x);
  Rng d1(99), d2(99);
  auto y1 = dropout(x, 0.5, true, &d1);
  auto y2 = dropout(x, 0.5, true, &d2);
  CHECK(bitwise_equal(y1->value, y2->value));
  // Scaled values are either 0 or x/keep.
  for (size_t i = 0; i < y1->value.numel(); ++i) {
    bool zero = y1->value[i] == 0.0;
    bool scaled = y1->value[i] == doctest::Approx(x->value[i] * 2.0);
    CHECK((zero || scaled));
  }
}

TEST_CASE("backward on diamond graphs accumulates") {
  auto x = leaf(Tensor<double>::from_vector({1}, {3.0}), true);
  auto y = mul(x, x);  // x^2, same node twice
  auto z = add(y, x);  // x^2 + x
  backward(z);
  CHECK(x->grad[0] == doctest::Approx(7.0));  // 2x + 1
  CHECK_THROWS_AS(backward(leaf(Tensor<double>({1}), false)), Error);
}
