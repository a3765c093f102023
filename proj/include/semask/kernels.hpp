// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

// Dense numeric kernels behind the differentiable ops.
//
// Each kernel has two implementations with the same signature:
//   reference::  plain serial loops, kept as the test oracle and benchmark
//                baseline;
//   parallel::   OpenMP kernels used by the ops.
// Both accumulate every output element in the same order, so their results
// are bit-identical for any thread count.

#pragma once

#include <cstdint>

#include "semask/tensor.hpp"

namespace semask::kernels {

/// Thread cap for the parallel kernels. Initialized from SEMASK_THREADS,
/// defaulting to the OpenMP runtime's choice.
int max_threads();
void set_max_threads(int n);

/// C[m,n] (+)= op(A) * op(B), all row-major and contiguous. With trans_a, A
/// is stored [k,m]; with trans_b, B is stored [n,k].
struct GemmShape {
  Index m = 0;
  Index n = 0;
  Index k = 0;
  bool trans_a = false;
  bool trans_b = false;
};

/// `batch` independent products; a stride of 0 broadcasts that operand.
struct BatchStrides {
  Index batch = 1;
  Index a = 0;
  Index b = 0;
  Index c = 0;
};

#define SEMASK_KERNEL_DECLS                                                                    \
  template <typename T>                                                                        \
  void gemm(const GemmShape& s, const BatchStrides& bs, const T* a, const T* b, T* c,          \
            bool accumulate);                                                                  \
  template <typename T>                                                                        \
  void softmax_rows(const T* x, T* y, Index rows, Index cols);                                 \
  /* dx (+)= y * (dy - sum(dy * y)) */                                                         \
  template <typename T>                                                                        \
  void softmax_rows_backward(const T* y, const T* dy, T* dx, Index rows, Index cols);          \
  /* y = xhat * gain + bias; xhat and rstd are saved for backward */                          \
  template <typename T>                                                                        \
  void layer_norm_rows(const T* x, const T* gain, const T* bias, T* y, T* xhat, T* rstd,       \
                       Index rows, Index cols, T eps);                                         \
  /* Each of dx, dgain, dbias may be null; non-null outputs are accumulated into. */           \
  template <typename T>                                                                        \
  void layer_norm_rows_backward(const T* dy, const T* xhat, const T* rstd, const T* gain,      \
                                T* dx, T* dgain, T* dbias, Index rows, Index cols);

namespace reference {
SEMASK_KERNEL_DECLS
}  // namespace reference

namespace parallel {
SEMASK_KERNEL_DECLS
}  // namespace parallel

#undef SEMASK_KERNEL_DECLS

/// Elementwise loop over [0, n) split across the thread cap.
template <typename F>
void parallel_for(Index n, F&& body) {
  const int nt = max_threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && n > 8192)
  for (Index i = 0; i < n; ++i) body(i);
}

}  // namespace semask::kernels
