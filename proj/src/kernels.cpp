// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

namespace semask::kernels {

namespace {

int threads_from_env() {
  if (const char* env = std::getenv("SEMASK_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1, omp_get_max_threads());
}

std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{threads_from_env()};
  return cap;
}

}  // namespace

int max_threads() { return thread_cap().load(std::memory_order_relaxed); }

void set_max_threads(int n) { thread_cap().store(std::max(1, n), std::memory_order_relaxed); }

// ---------------------------------------------------------------------------
// reference

namespace reference {

template <typename T>
void gemm(const GemmShape& s, const BatchStrides& bs, const T* a, const T* b, T* c,
          bool accumulate) {
  for (Index bi = 0; bi < bs.batch; ++bi) {
    const T* ab = a + bi * bs.a;
    const T* bb = b + bi * bs.b;
    T* cb = c + bi * bs.c;
    for (Index i = 0; i < s.m; ++i) {
      for (Index j = 0; j < s.n; ++j) {
        T acc = accumulate ? cb[i * s.n + j] : T(0);
        for (Index p = 0; p < s.k; ++p) {
          const T av = s.trans_a ? ab[p * s.m + i] : ab[i * s.k + p];
          const T bv = s.trans_b ? bb[j * s.k + p] : bb[p * s.n + j];
          acc += av * bv;
        }
        cb[i * s.n + j] = acc;
      }
    }
  }
}

template <typename T>
void softmax_rows(const T* x, T* y, Index rows, Index cols) {
  for (Index r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T* yr = y + r * cols;
    T mx = xr[0];
    for (Index c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    T sum = 0;
    for (Index c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    const T inv = T(1) / sum;
    for (Index c = 0; c < cols; ++c) yr[c] *= inv;
  }
}

template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, Index rows, Index cols) {
  for (Index r = 0; r < rows; ++r) {
    const T* yr = y + r * cols;
    const T* gr = dy + r * cols;
    T dot = 0;
    for (Index c = 0; c < cols; ++c) dot += gr[c] * yr[c];
    for (Index c = 0; c < cols; ++c) dx[r * cols + c] += yr[c] * (gr[c] - dot);
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* rstd,
                     Index rows, Index cols, T eps) {
  for (Index r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T mean = 0;
    for (Index c = 0; c < cols; ++c) mean += xr[c];
    mean /= T(cols);
    T var = 0;
    for (Index c = 0; c < cols; ++c) {
      const T d = xr[c] - mean;
      var += d * d;
    }
    var /= T(cols);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (Index c = 0; c < cols; ++c) {
      const T h = (xr[c] - mean) * rs;
      xhat[r * cols + c] = h;
      y[r * cols + c] = h * gain[c] + bias[c];
    }
  }
}

template <typename T>
void layer_norm_rows_backward(const T* dy, const T* xhat, const T* rstd, const T* gain, T* dx,
                              T* dgain, T* dbias, Index rows, Index cols) {
  if (dx) {
    for (Index r = 0; r < rows; ++r) {
      const T* gr = dy + r * cols;
      const T* hr = xhat + r * cols;
      T mean_g = 0;
      T mean_gh = 0;
      for (Index c = 0; c < cols; ++c) {
        const T g = gr[c] * gain[c];
        mean_g += g;
        mean_gh += g * hr[c];
      }
      mean_g /= T(cols);
      mean_gh /= T(cols);
      for (Index c = 0; c < cols; ++c) {
        const T g = gr[c] * gain[c];
        dx[r * cols + c] += rstd[r] * (g - mean_g - hr[c] * mean_gh);
      }
    }
  }
  for (Index c = 0; c < cols; ++c) {
    T sg = dgain ? dgain[c] : T(0);
    T sb = dbias ? dbias[c] : T(0);
    for (Index r = 0; r < rows; ++r) {
      sg += dy[r * cols + c] * xhat[r * cols + c];
      sb += dy[r * cols + c];
    }
    if (dgain) dgain[c] = sg;
    if (dbias) dbias[c] = sb;
  }
}

}  // namespace reference

// ---------------------------------------------------------------------------
// parallel

namespace parallel {

namespace {

constexpr Index kMinParallelWork = 1 << 15;

template <typename T>
void gemm_row(const GemmShape& s, const T* a, const T* bt, T* crow, Index i, bool accumulate) {
  // bt is always [k,n] here; trans_b operands were transposed up front.
  if (!accumulate) std::fill(crow, crow + s.n, T(0));
  for (Index p = 0; p < s.k; ++p) {
    const T av = s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
    const T* brow = bt + p * s.n;
    for (Index j = 0; j < s.n; ++j) crow[j] += av * brow[j];
  }
}

}  // namespace

template <typename T>
void gemm(const GemmShape& s, const BatchStrides& bs, const T* a, const T* b, T* c,
          bool accumulate) {
  if (s.m == 0 || s.n == 0) return;
  // Transposing B up front keeps the inner loop unit-stride without changing
  // the order in which each output element is accumulated.
  std::vector<T> bt_storage;
  const T* bmat = b;
  Index b_stride = bs.b;
  if (s.trans_b) {
    const Index nb = bs.b == 0 ? 1 : bs.batch;
    bt_storage.resize(static_cast<std::size_t>(nb * s.k * s.n));
    for (Index bi = 0; bi < nb; ++bi) {
      const T* src = b + bi * bs.b;
      T* dst = bt_storage.data() + bi * s.k * s.n;
      for (Index j = 0; j < s.n; ++j)
        for (Index p = 0; p < s.k; ++p) dst[p * s.n + j] = src[j * s.k + p];
    }
    bmat = bt_storage.data();
    b_stride = bs.b == 0 ? 0 : s.k * s.n;
  }
  const Index total_rows = bs.batch * s.m;
  const int nt = max_threads();
  const bool go_parallel = nt > 1 && total_rows > 1 && total_rows * s.n * s.k > kMinParallelWork;
#pragma omp parallel for schedule(static) num_threads(nt) if (go_parallel)
  for (Index r = 0; r < total_rows; ++r) {
    const Index bi = r / s.m;
    const Index i = r % s.m;
    gemm_row(s, a + bi * bs.a, bmat + bi * b_stride, c + bi * bs.c + i * s.n, i, accumulate);
  }
}

template <typename T>
void softmax_rows(const T* x, T* y, Index rows, Index cols) {
  const int nt = max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && rows * cols > kMinParallelWork)
  for (Index r = 0; r < rows; ++r) reference::softmax_rows(x + r * cols, y + r * cols, 1, cols);
}

template <typename T>
void softmax_rows_backward(const T* y, const T* dy, T* dx, Index rows, Index cols) {
  const int nt = max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && rows * cols > kMinParallelWork)
  for (Index r = 0; r < rows; ++r) {
    reference::softmax_rows_backward(y + r * cols, dy + r * cols, dx + r * cols, 1, cols);
  }
}

template <typename T>
void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* rstd,
                     Index rows, Index cols, T eps) {
  const int nt = max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && rows * cols > kMinParallelWork)
  for (Index r = 0; r < rows; ++r) {
    reference::layer_norm_rows(x + r * cols, gain, bias, y + r * cols, xhat + r * cols, rstd + r,
                               1, cols, eps);
  }
}

template <typename T>
void layer_norm_rows_backward(const T* dy, const T* xhat, const T* rstd, const T* gain, T* dx,
                              T* dgain, T* dbias, Index rows, Index cols) {
  const int nt = max_threads();
  const bool go_parallel = nt > 1 && rows * cols > kMinParallelWork;
  if (dx) {
#pragma omp parallel for schedule(static) num_threads(nt) if (go_parallel)
    for (Index r = 0; r < rows; ++r) {
      reference::layer_norm_rows_backward(dy + r * cols, xhat + r * cols, rstd + r, gain,
                                          dx + r * cols, static_cast<T*>(nullptr),
                                          static_cast<T*>(nullptr), 1, cols);
    }
  }
  if (!dgain && !dbias) return;
  // Column sums run over rows in order, matching the reference.
#pragma omp parallel for schedule(static) num_threads(nt) if (go_parallel)
  for (Index c = 0; c < cols; ++c) {
    T sg = dgain ? dgain[c] : T(0);
    T sb = dbias ? dbias[c] : T(0);
    for (Index r = 0; r < rows; ++r) {
      sg += dy[r * cols + c] * xhat[r * cols + c];
      sb += dy[r * cols + c];
    }
    if (dgain) dgain[c] = sg;
    if (dbias) dbias[c] = sb;
  }
}

}  // namespace parallel

#define SEMASK_INSTANTIATE(NS, T)                                                              \
  template void NS::gemm<T>(const GemmShape&, const BatchStrides&, const T*, const T*, T*,     \
                            bool);                                                             \
  template void NS::softmax_rows<T>(const T*, T*, Index, Index);                               \
  template void NS::softmax_rows_backward<T>(const T*, const T*, T*, Index, Index);            \
  template void NS::layer_norm_rows<T>(const T*, const T*, const T*, T*, T*, T*, Index, Index, \
                                       T);                                                     \
  template void NS::layer_norm_rows_backward<T>(const T*, const T*, const T*, const T*, T*,    \
                                                T*, T*, Index, Index);

SEMASK_INSTANTIATE(reference, float)
SEMASK_INSTANTIATE(reference, double)
SEMASK_INSTANTIATE(parallel, float)
SEMASK_INSTANTIATE(parallel, double)

#undef SEMASK_INSTANTIATE

}  // namespace semask::kernels
