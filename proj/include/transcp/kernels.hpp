#pragma once

#include <cmath>
#include <cstddef>

#include "transcp/common.hpp"

// Dense compute kernels. The parallel versions split only the outer loop over
// independent output elements, so every output is accumulated in the same
// order as the serial reference and the two are bitwise identical. The
// serial:: namespace is the reference implementation used by the tests and
// the bench_kernels tool.

namespace transcp::kernels {

namespace serial {

// C[m,n] = A[m,k] * B[k,n], row-major.
template <typename T>
void matmul(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    T* ci = C + i * n;
    for (size_t j = 0; j < n; ++j) ci[j] = T(0);
    const T* ai = A + i * k;
    for (size_t p = 0; p < k; ++p) {
      T a = ai[p];
      const T* bp = B + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += a * bp[j];
    }
  }
}

// C[m,n] = A^T * B where A is [k,m].
template <typename T>
void matmul_tn(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    T* ci = C + i * n;
    for (size_t j = 0; j < n; ++j) ci[j] = T(0);
    for (size_t p = 0; p < k; ++p) {
      T a = A[p * m + i];
      const T* bp = B + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += a * bp[j];
    }
  }
}

// C[m,n] = A * B^T where B is [n,k].
template <typename T>
void matmul_nt(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const T* ai = A + i * k;
    T* ci = C + i * n;
    for (size_t j = 0; j < n; ++j) {
      const T* bj = B + j * k;
      T acc = T(0);
      for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

// out[co,ho,wo] over input [ci,h,w] with square kernel, stride and padding.
template <typename T>
void conv2d_forward(const T* in, const T* w, const T* bias, T* out, size_t ci,
                    size_t h, size_t wd, size_t co, size_t ks, size_t stride,
                    size_t pad, size_t ho, size_t wo) {
  for (size_t oc = 0; oc < co; ++oc) {
    for (size_t oy = 0; oy < ho; ++oy) {
      for (size_t ox = 0; ox < wo; ++ox) {
        T acc = bias ? bias[oc] : T(0);
        for (size_t ic = 0; ic < ci; ++ic) {
          const T* inc = in + ic * h * wd;
          const T* wc = w + ((oc * ci + ic) * ks) * ks;
          for (size_t ky = 0; ky < ks; ++ky) {
            long iy = long(oy * stride + ky) - long(pad);
            if (iy < 0 || iy >= long(h)) continue;
            for (size_t kx = 0; kx < ks; ++kx) {
              long ix = long(ox * stride + kx) - long(pad);
              if (ix < 0 || ix >= long(wd)) continue;
              acc += inc[size_t(iy) * wd + size_t(ix)] * wc[ky * ks + kx];
            }
          }
        }
        out[(oc * ho + oy) * wo + ox] = acc;
      }
    }
  }
}

template <typename T>
void conv2d_grad_input(const T* gout, const T* w, T* gin, size_t ci, size_t h,
                       size_t wd, size_t co, size_t ks, size_t stride,
                       size_t pad, size_t ho, size_t wo) {
  for (size_t ic = 0; ic < ci; ++ic) {
    T* gic = gin + ic * h * wd;
    for (size_t i = 0; i < h * wd; ++i) gic[i] = T(0);
    for (size_t oc = 0; oc < co; ++oc) {
      const T* goc = gout + oc * ho * wo;
      const T* wc = w + ((oc * ci + ic) * ks) * ks;
      for (size_t oy = 0; oy < ho; ++oy) {
        for (size_t ox = 0; ox < wo; ++ox) {
          T g = goc[oy * wo + ox];
          for (size_t ky = 0; ky < ks; ++ky) {
            long iy = long(oy * stride + ky) - long(pad);
            if (iy < 0 || iy >= long(h)) continue;
            for (size_t kx = 0; kx < ks; ++kx) {
              long ix = long(ox * stride + kx) - long(pad);
              if (ix < 0 || ix >= long(wd)) continue;
              gic[size_t(iy) * wd + size_t(ix)] += g * wc[ky * ks + kx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_grad_weight(const T* gout, const T* in, T* gw, T* gbias, size_t ci,
                        size_t h, size_t wd, size_t co, size_t ks,
                        size_t stride, size_t pad, size_t ho, size_t wo) {
  for (size_t oc = 0; oc < co; ++oc) {
    const T* goc = gout + oc * ho * wo;
    if (gbias) {
      T acc = T(0);
      for (size_t i = 0; i < ho * wo; ++i) acc += goc[i];
      gbias[oc] = acc;
    }
    for (size_t ic = 0; ic < ci; ++ic) {
      const T* inc = in + ic * h * wd;
      T* gwc = gw + ((oc * ci + ic) * ks) * ks;
      for (size_t ky = 0; ky < ks; ++ky) {
        for (size_t kx = 0; kx < ks; ++kx) {
          T acc = T(0);
          for (size_t oy = 0; oy < ho; ++oy) {
            long iy = long(oy * stride + ky) - long(pad);
            if (iy < 0 || iy >= long(h)) continue;
            for (size_t ox = 0; ox < wo; ++ox) {
              long ix = long(ox * stride + kx) - long(pad);
              if (ix < 0 || ix >= long(wd)) continue;
              acc += goc[oy * wo + ox] * inc[size_t(iy) * wd + size_t(ix)];
            }
          }
          gwc[ky * ks + kx] = acc;
        }
      }
    }
  }
}

// Nearest prototype per column of a channel-major feature block.
// features: [C,N] (cell vectors are columns), prototypes: [k,C] (rows).
// Ties resolve to the lowest prototype index.
template <typename T>
void nearest_prototype(const T* features, const T* prototypes, size_t C,
                       size_t N, size_t k, int* indices, T* distances) {
  for (size_t cell = 0; cell < N; ++cell) {
    int best = 0;
    T best_d2 = T(0);
    for (size_t p = 0; p < k; ++p) {
      T d2 = T(0);
      const T* pr = prototypes + p * C;
      for (size_t c = 0; c < C; ++c) {
        T d = features[c * N + cell] - pr[c];
        d2 += d * d;
      }
      if (p == 0 || d2 < best_d2) {
        best_d2 = d2;
        best = int(p);
      }
    }
    indices[cell] = best;
    if (distances) distances[cell] = std::sqrt(best_d2);
  }
}

}  // namespace serial

template <typename T>
void matmul(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
#pragma omp parallel for schedule(static) if (m > 1 && m * k * n >= 16384)
  for (long ii = 0; ii < long(m); ++ii) {
    size_t i = size_t(ii);
    T* ci = C + i * n;
    for (size_t j = 0; j < n; ++j) ci[j] = T(0);
    const T* ai = A + i * k;
    for (size_t p = 0; p < k; ++p) {
      T a = ai[p];
      const T* bp = B + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += a * bp[j];
    }
  }
}

template <typename T>
void matmul_tn(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
#pragma omp parallel for schedule(static) if (m > 1 && m * k * n >= 16384)
  for (long ii = 0; ii < long(m); ++ii) {
    size_t i = size_t(ii);
    T* ci = C + i * n;
    for (size_t j = 0; j < n; ++j) ci[j] = T(0);
    for (size_t p = 0; p < k; ++p) {
      T a = A[p * m + i];
      const T* bp = B + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += a * bp[j];
    }
  }
}

template <typename T>
void matmul_nt(const T* A, const T* B, T* C, size_t m, size_t k, size_t n) {
#pragma omp parallel for schedule(static) if (m > 1 && m * k * n >= 16384)
  for (long ii = 0; ii < long(m); ++ii) {
    size_t i = size_t(ii);
    const T* ai = A + i * k;
    T* ci = C + i * n;
    for (size_t j = 0; j < n; ++j) {
      const T* bj = B + j * k;
      T acc = T(0);
      for (size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] = acc;
    }
  }
}

template <typename T>
void conv2d_forward(const T* in, const T* w, const T* bias, T* out, size_t ci,
                    size_t h, size_t wd, size_t co, size_t ks, size_t stride,
                    size_t pad, size_t ho, size_t wo) {
#pragma omp parallel for schedule(static) if (co > 1)
  for (long occ = 0; occ < long(co); ++occ) {
    size_t oc = size_t(occ);
    serial::conv2d_forward(in, w + oc * ci * ks * ks,
                           bias ? bias + oc : nullptr, out + oc * ho * wo, ci,
                           h, wd, 1, ks, stride, pad, ho, wo);
  }
}

template <typename T>
void conv2d_grad_input(const T* gout, const T* w, T* gin, size_t ci, size_t h,
                       size_t wd, size_t co, size_t ks, size_t stride,
                       size_t pad, size_t ho, size_t wo) {
#pragma omp parallel for schedule(static) if (ci > 1)
  for (long icc = 0; icc < long(ci); ++icc) {
    size_t ic = size_t(icc);
    T* gic = gin + ic * h * wd;
    for (size_t i = 0; i < h * wd; ++i) gic[i] = T(0);
    for (size_t oc = 0; oc < co; ++oc) {
      const T* goc = gout + oc * ho * wo;
      const T* wc = w + ((oc * ci + ic) * ks) * ks;
      for (size_t oy = 0; oy < ho; ++oy) {
        for (size_t ox = 0; ox < wo; ++ox) {
          T g = goc[oy * wo + ox];
          for (size_t ky = 0; ky < ks; ++ky) {
            long iy = long(oy * stride + ky) - long(pad);
            if (iy < 0 || iy >= long(h)) continue;
            for (size_t kx = 0; kx < ks; ++kx) {
              long ix = long(ox * stride + kx) - long(pad);
              if (ix < 0 || ix >= long(wd)) continue;
              gic[size_t(iy) * wd + size_t(ix)] += g * wc[ky * ks + kx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_grad_weight(const T* gout, const T* in, T* gw, T* gbias, size_t ci,
                        size_t h, size_t wd, size_t co, size_t ks,
                        size_t stride, size_t pad, size_t ho, size_t wo) {
#pragma omp parallel for schedule(static) if (co > 1)
  for (long occ = 0; occ < long(co); ++occ) {
    size_t oc = size_t(occ);
    serial::conv2d_grad_weight(gout + oc * ho * wo, in,
                               gw + oc * ci * ks * ks,
                               gbias ? gbias + oc : nullptr, ci, h, wd, 1, ks,
                               stride, pad, ho, wo);
  }
}

template <typename T>
void nearest_prototype(const T* features, const T* prototypes, size_t C,
                       size_t N, size_t k, int* indices, T* distances) {
#pragma omp parallel for schedule(static) if (N > 1 && N * k * C >= 16384)
  for (long cc = 0; cc < long(N); ++cc) {
    size_t cell = size_t(cc);
    int best = 0;
    T best_d2 = T(0);
    for (size_t p = 0; p < k; ++p) {
      T d2 = T(0);
      const T* pr = prototypes + p * C;
      for (size_t c = 0; c < C; ++c) {
        T d = features[c * N + cell] - pr[c];
        d2 += d * d;
      }
      if (p == 0 || d2 < best_d2) {
        best_d2 = d2;
        best = int(p);
      }
    }
    indices[cell] = best;
    if (distances) distances[cell] = std::sqrt(best_d2);
  }
}

}  // namespace transcp::kernels
