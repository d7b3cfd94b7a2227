#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "transcp/kernels.hpp"
#include "transcp/tensor.hpp"

using namespace transcp;
using testutil::random_tensor;

TEST_CASE("tensor basics") {
  Tensor<float> t({2, 3}, 1.5f);
  CHECK(t.numel() == 6);
  CHECK(t.at(1, 2) == 1.5f);
  t.at(0, 1) = 2.0f;
  Tensor<float> u = t;  // deep copy
  u.at(0, 1) = 9.0f;
  CHECK(t.at(0, 1) == 2.0f);
  CHECK_THROWS_AS(t.reshaped({4}), Error);
  Tensor<float> r = t.reshaped({3, 2});
  CHECK(r.shape() == std::vector<size_t>{3, 2});
  CHECK(bitwise_equal(t, t.reshaped({2, 3})));
  CHECK(t.all_finite());
  t[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK(!t.all_finite());
}

TEST_CASE("rng determinism and ranges") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(7);
  for (int i = 0; i < 1000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(r.randint(10) < 10);
  }
  // Normal should roughly center at zero.
  double acc = 0;
  for (int i = 0; i < 10000; ++i) acc += r.normal();
  CHECK(std::abs(acc / 10000) < 0.05);
}

namespace {

// Naive triple-loop oracle, independent of the kernel loop ordering.
template <typename T>
std::vector<T> naive_matmul(const std::vector<T>& a, const std::vector<T>& b,
                            size_t m, size_t k, size_t n) {
  std::vector<T> c(m * n, T(0));
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j)
      for (size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST_CASE("matmul kernels agree with oracle and with serial reference") {
  Rng rng(1);
  for (auto [m, k, n] : std::vector<std::array<size_t, 3>>{
           {1, 1, 1}, {3, 4, 5}, {64, 64, 144}, {17, 31, 9}}) {
    std::vector<double> A(m * k), B(k * n);
    for (auto& v : A) v = rng.uniform(-1, 1);
    for (auto& v : B) v = rng.uniform(-1, 1);
    std::vector<double> C_par(m * n), C_ser(m * n);
    kernels::matmul(A.data(), B.data(), C_par.data(), m, k, n);
    kernels::serial::matmul(A.data(), B.data(), C_ser.data(), m, k, n);
    CHECK(C_par == C_ser);  // bitwise: same per-row accumulation order
    auto ref = naive_matmul(A, B, m, k, n);
    for (size_t i = 0; i < C_par.size(); ++i)
      CHECK(C_par[i] == doctest::Approx(ref[i]).epsilon(1e-12));

    // Transposed variants against the plain kernel on transposed inputs.
    std::vector<double> At(k * m), Bt(n * k);
    for (size_t i = 0; i < m; ++i)
      for (size_t p = 0; p < k; ++p) At[p * m + i] = A[i * k + p];
    for (size_t p = 0; p < k; ++p)
      for (size_t j = 0; j < n; ++j) Bt[j * k + p] = B[p * n + j];
    std::vector<double> C_tn(m * n), C_nt(m * n), C_tn_s(m * n), C_nt_s(m * n);
    kernels::matmul_tn(At.data(), B.data(), C_tn.data(), m, k, n);
    kernels::matmul_nt(A.data(), Bt.data(), C_nt.data(), m, k, n);
    kernels::serial::matmul_tn(At.data(), B.data(), C_tn_s.data(), m, k, n);
    kernels::serial::matmul_nt(A.data(), Bt.data(), C_nt_s.data(), m, k, n);
    CHECK(C_tn == C_tn_s);
    CHECK(C_nt == C_nt_s);
    for (size_t i = 0; i < C_par.size(); ++i) {
      CHECK(C_tn[i] == doctest::Approx(ref[i]).epsilon(1e-12));
      CHECK(C_nt[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

namespace {

template <typename T>
void naive_conv(const std::vector<T>& in, const std::vector<T>& w,
                const std::vector<T>& b, std::vector<T>& out, size_t ci,
                size_t h, size_t wd, size_t co, size_t ks, size_t stride,
                size_t pad, size_t ho, size_t wo) {
  for (size_t oc = 0; oc < co; ++oc)
    for (size_t oy = 0; oy < ho; ++oy)
      for (size_t ox = 0; ox < wo; ++ox) {
        T acc = b[oc];
        for (size_t ic = 0; ic < ci; ++ic)
          for (size_t ky = 0; ky < ks; ++ky)
            for (size_t kx = 0; kx < ks; ++kx) {
              long iy = long(oy * stride + ky) - long(pad);
              long ix = long(ox * stride + kx) - long(pad);
              if (iy < 0 || iy >= long(h) || ix < 0 || ix >= long(wd)) continue;
              acc += in[(ic * h + size_t(iy)) * wd + size_t(ix)] *
                     w[((oc * ci + ic) * ks + ky) * ks + kx];
            }
        out[(oc * ho + oy) * wo + ox] = acc;
      }
}

}  // namespace

TEST_CASE("conv2d kernel matches oracle; parallel equals serial") {
  Rng rng(2);
  size_t ci = 3, h = 9, wd = 9, co = 4, ks = 3, stride = 2, pad = 1;
  size_t ho = (h + 2 * pad - ks) / stride + 1;
  size_t wo = (wd + 2 * pad - ks) / stride + 1;
  std::vector<double> in(ci * h * wd), w(co * ci * ks * ks), b(co);
  for (auto& v : in) v = rng.uniform(-1, 1);
  for (auto& v : w) v = rng.uniform(-1, 1);
  for (auto& v : b) v = rng.uniform(-1, 1);
  std::vector<double> out_p(co * ho * wo), out_s(co * ho * wo),
      out_ref(co * ho * wo);
  kernels::conv2d_forward(in.data(), w.data(), b.data(), out_p.data(), ci, h,
                          wd, co, ks, stride, pad, ho, wo);
  kernels::serial::conv2d_forward(in.data(), w.data(), b.data(), out_s.data(),
                                  ci, h, wd, co, ks, stride, pad, ho, wo);
  naive_conv(in, w, b, out_ref, ci, h, wd, co, ks, stride, pad, ho, wo);
  CHECK(out_p == out_s);
  for (size_t i = 0; i < out_p.size(); ++i)
    CHECK(out_p[i] == doctest::Approx(out_ref[i]).epsilon(1e-12));

  // Gradient kernels: parallel vs serial bitwise.
  std::vector<double> gout(co * ho * wo);
  for (auto& v : gout) v = rng.uniform(-1, 1);
  std::vector<double> gin_p(ci * h * wd), gin_s(ci * h * wd);
  kernels::conv2d_grad_input(gout.data(), w.data(), gin_p.data(), ci, h, wd,
                             co, ks, stride, pad, ho, wo);
  kernels::serial::conv2d_grad_input(gout.data(), w.data(), gin_s.data(), ci,
                                     h, wd, co, ks, stride, pad, ho, wo);
  CHECK(gin_p == gin_s);
  std::vector<double> gw_p(w.size()), gw_s(w.size()), gb_p(co), gb_s(co);
  kernels::conv2d_grad_weight(gout.data(), in.data(), gw_p.data(), gb_p.data(),
                              ci, h, wd, co, ks, stride, pad, ho, wo);
  kernels::serial::conv2d_grad_weight(gout.data(), in.data(), gw_s.data(),
                                      gb_s.data(), ci, h, wd, co, ks, stride,
                                      pad, ho, wo);
  CHECK(gw_p == gw_s);
  CHECK(gb_p == gb_s);
}

TEST_CASE("nearest_prototype matches brute force; parallel equals serial") {
  Rng rng(3);
  size_t C = 4, N = 16, k = 8;
  std::vector<float> f(C * N), protos(k * C);
  for (auto& v : f) v = float(rng.uniform(-1, 1));
  for (auto& v : protos) v = float(rng.uniform(-1, 1));
  std::vector<int> idx_p(N), idx_s(N);
  std::vector<float> d_p(N), d_s(N);
  kernels::nearest_prototype(f.data(), protos.data(), C, N, k, idx_p.data(),
                             d_p.data());
  kernels::serial::nearest_prototype(f.data(), protos.data(), C, N, k,
                                     idx_s.data(), d_s.data());
  CHECK(idx_p == idx_s);
  CHECK(d_p == d_s);
  for (size_t cell = 0; cell < N; ++cell) {
    int best = -1;
    double bd = 1e30;
    for (size_t p = 0; p < k; ++p) {
      double d2 = 0;
      for (size_t c = 0; c < C; ++c) {
        double d = double(f[c * N + cell]) - double(protos[p * C + c]);
        d2 += d * d;
      }
      if (d2 < bd) {
        bd = d2;
        best = int(p);
      }
    }
    CHECK(idx_p[cell] == best);
  }
}
