// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "semask/kernels.hpp"

namespace semask {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<detail::TensorImpl<T>>;

template <typename T>
bool any_tracked(std::initializer_list<const Tensor<T>*> xs) {
  if (!grad_enabled()) return false;
  for (const Tensor<T>* x : xs) {
    if (x && x->defined() && x->tracked()) return true;
  }
  return false;
}

template <typename T>
Tensor<T> finish(const char* op, Shape shape, std::vector<T> data, bool tracked) {
  for (const T v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value in output");
  }
  return Tensor<T>(std::move(shape), std::move(data), tracked);
}

// Gradient buffer of an input, or null when the input is not tracked.
template <typename T>
T* grad_of(const ImplPtr<T>& p) {
  if (!p || !p->tracked) return nullptr;
  if (p->grad.empty()) p->grad.assign(p->data.size(), T(0));
  return p->grad.data();
}

template <typename T>
const T* out_grad(const ImplPtr<T>& p) {
  return p->grad.empty() ? nullptr : p->grad.data();
}

template <typename T, typename F>
void record(const char* op, F&& fn) {
  Tape<T>::current().record(op, std::forward<F>(fn));
}

Shape leading(const Shape& s, std::size_t drop) {
  return Shape(s.begin(), s.end() - static_cast<std::ptrdiff_t>(drop));
}

// Flat offset into `in` for each element of `out`, under broadcasting.
std::vector<Index> broadcast_offsets(const Shape& out, const Shape& in) {
  const std::size_t r = out.size();
  std::vector<Index> in_stride(r, 0);
  Index stride = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t ai = in.size() - 1 - k;
    const std::size_t ao = r - 1 - k;
    in_stride[ao] = in[ai] == 1 ? 0 : stride;
    stride *= in[ai];
  }
  const Index n = shape_numel(out);
  std::vector<Index> offsets(static_cast<std::size_t>(n));
  std::vector<Index> coord(r, 0);
  Index off = 0;
  for (Index i = 0; i < n; ++i) {
    offsets[static_cast<std::size_t>(i)] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      ++coord[ax];
      off += in_stride[ax];
      if (coord[ax] < out[ax]) break;
      off -= in_stride[ax] * coord[ax];
      coord[ax] = 0;
    }
  }
  return offsets;
}

enum class Binary { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, Binary kind, const char* name) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const Index n = shape_numel(out_shape);
  using Offsets = std::shared_ptr<const std::vector<Index>>;
  Offsets oa, ob;
  if (a.shape() != out_shape) oa = std::make_shared<std::vector<Index>>(broadcast_offsets(out_shape, a.shape()));
  if (b.shape() != out_shape) ob = std::make_shared<std::vector<Index>>(broadcast_offsets(out_shape, b.shape()));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  std::vector<T> out(static_cast<std::size_t>(n));
  const Index* ia = oa ? oa->data() : nullptr;
  const Index* ib = ob ? ob->data() : nullptr;
  kernels::parallel_for(n, [&](Index i) {
    const T x = pa[ia ? ia[i] : i];
    const T y = pb[ib ? ib[i] : i];
    switch (kind) {
      case Binary::kAdd: out[i] = x + y; break;
      case Binary::kSub: out[i] = x - y; break;
      case Binary::kMul: out[i] = x * y; break;
    }
  });
  const bool tracked = any_tracked({&a, &b});
  Tensor<T> result = finish(name, out_shape, std::move(out), tracked);
  if (tracked) {
    record<T>(name, [ra = result.impl(), ia_ = a.impl(), ib_ = b.impl(), oa, ob, kind, n] {
      const T* g = out_grad(ra);
      if (!g) return;
      T* ga = grad_of(ia_);
      T* gb = grad_of(ib_);
      if (ga) {
        if (oa) {
          for (Index i = 0; i < n; ++i) {
            const T gi = kind == Binary::kMul ? g[i] * ib_->data[ob ? (*ob)[i] : i] : g[i];
            ga[(*oa)[i]] += gi;
          }
        } else {
          kernels::parallel_for(n, [&](Index i) {
            ga[i] += kind == Binary::kMul ? g[i] * ib_->data[ob ? (*ob)[i] : i] : g[i];
          });
        }
      }
      if (gb) {
        const T sign = kind == Binary::kSub ? T(-1) : T(1);
        auto contrib = [&](Index i) {
          return kind == Binary::kMul ? g[i] * ia_->data[oa ? (*oa)[i] : i] : sign * g[i];
        };
        if (ob) {
          for (Index i = 0; i < n; ++i) gb[(*ob)[i]] += contrib(i);
        } else {
          kernels::parallel_for(n, [&](Index i) { gb[i] += contrib(i); });
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> matmul_impl(const Tensor<T>& a, const Tensor<T>& b, bool trans_b, const char* name) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError(std::string(name) + ": operands need rank >= 2, got a" +
                     shape_str(a.shape()) + " b" + shape_str(b.shape()));
  }
  const Index n = a.dim(-2);
  const Index k = a.dim(-1);
  const Index kb = trans_b ? b.dim(-1) : b.dim(-2);
  const Index m = trans_b ? b.dim(-2) : b.dim(-1);
  if (k != kb) {
    throw ShapeError(std::string(name) + ": inner extents differ, a" + shape_str(a.shape()) +
                     " b" + shape_str(b.shape()));
  }
  const Shape a_batch = leading(a.shape(), 2);
  const Shape b_batch = leading(b.shape(), 2);
  enum class Mode { kEqual, kBroadcastB, kBroadcastA } mode;
  if (a_batch == b_batch) {
    mode = Mode::kEqual;
  } else if (b_batch.empty()) {
    mode = Mode::kBroadcastB;
  } else if (a_batch.empty()) {
    mode = Mode::kBroadcastA;
  } else {
    throw ShapeError(std::string(name) + ": batch extents not broadcastable, a" +
                     shape_str(a.shape()) + " b" + shape_str(b.shape()));
  }
  const Shape& batch_shape = mode == Mode::kBroadcastA ? b_batch : a_batch;
  const Index batch = shape_numel(batch_shape);
  Shape out_shape = batch_shape;
  out_shape.push_back(n);
  out_shape.push_back(m);

  std::vector<T> out(static_cast<std::size_t>(batch * n * m));
  kernels::GemmShape gs{n, m, k, false, trans_b};
  kernels::BatchStrides st{batch, n * k, k * m, n * m};
  if (mode == Mode::kBroadcastB) {
    gs.m = batch * n;
    st = {1, 0, 0, 0};
  } else if (mode == Mode::kBroadcastA) {
    st.a = 0;
  }
  kernels::parallel::gemm(gs, st, a.data().data(), b.data().data(), out.data(), false);

  const bool tracked = any_tracked({&a, &b});
  Tensor<T> result = finish(name, out_shape, std::move(out), tracked);
  if (tracked) {
    record<T>(name, [ro = result.impl(), ia = a.impl(), ib = b.impl(), n, k, m, batch, mode,
                     trans_b] {
      const T* g = out_grad(ro);
      if (!g) return;
      const T* pa = ia->data.data();
      const T* pb = ib->data.data();
      if (T* ga = grad_of(ia)) {
        // dA = dC op(B)^T
        kernels::GemmShape s{n, k, m, false, !trans_b};
        if (mode == Mode::kEqual) {
          kernels::parallel::gemm(s, {batch, n * m, k * m, n * k}, g, pb, ga, true);
        } else if (mode == Mode::kBroadcastB) {
          s.m = batch * n;
          kernels::parallel::gemm(s, {1, 0, 0, 0}, g, pb, ga, true);
        } else {
          for (Index bi = 0; bi < batch; ++bi) {
            kernels::parallel::gemm(s, {1, 0, 0, 0}, g + bi * n * m, pb + bi * k * m, ga, true);
          }
        }
      }
      if (T* gb = grad_of(ib)) {
        if (!trans_b) {
          // dB[k,m] = A^T dC
          kernels::GemmShape s{k, m, n, true, false};
          if (mode == Mode::kEqual) {
            kernels::parallel::gemm(s, {batch, n * k, n * m, k * m}, pa, g, gb, true);
          } else if (mode == Mode::kBroadcastB) {
            s.k = batch * n;
            kernels::parallel::gemm(s, {1, 0, 0, 0}, pa, g, gb, true);
          } else {
            kernels::parallel::gemm(s, {batch, 0, n * m, k * m}, pa, g, gb, true);
          }
        } else {
          // dB[m,k] = dC^T A
          kernels::GemmShape s{m, k, n, true, false};
          if (mode == Mode::kEqual) {
            kernels::parallel::gemm(s, {batch, n * m, n * k, k * m}, g, pa, gb, true);
          } else if (mode == Mode::kBroadcastB) {
            s.k = batch * n;
            kernels::parallel::gemm(s, {1, 0, 0, 0}, g, pa, gb, true);
          } else {
            kernels::parallel::gemm(s, {batch, n * m, 0, k * m}, g, pa, gb, true);
          }
        }
      }
    });
  }
  return result;
}

// Resampling taps along one axis: out[o] = in[i0] + t * (in[i1] - in[i0]).
struct Taps {
  std::vector<Index> i0, i1;
  std::vector<double> t;
};

Taps bilinear_taps(Index in, Index out) {
  Taps taps;
  taps.i0.resize(static_cast<std::size_t>(out));
  taps.i1.resize(static_cast<std::size_t>(out));
  taps.t.resize(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    Index lo = static_cast<Index>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const Index hi = lo < in - 1 ? lo + 1 : lo;
    taps.i0[static_cast<std::size_t>(o)] = lo;
    taps.i1[static_cast<std::size_t>(o)] = hi;
    taps.t[static_cast<std::size_t>(o)] = hi == lo ? 0.0 : src - static_cast<double>(lo);
  }
  return taps;
}

void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeError(std::string(op) + ": expected [B,H,W,C], got " + shape_str(s));
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const Index ea = k < a.size() ? a[a.size() - 1 - k] : 1;
    const Index eb = k < b.size() ? b[b.size() - 1 - k] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    }
    out[r - 1 - k] = ea == 1 ? eb : ea;
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  return matmul_impl(a, b, false, "matmul");
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  return matmul_impl(a, b, true, "matmul_nt");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, Binary::kAdd, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, Binary::kSub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, Binary::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  const Index n = x.size();
  const T* px = x.data().data();
  std::vector<T> out(static_cast<std::size_t>(n));
  kernels::parallel_for(n, [&](Index i) { out[i] = px[i] * factor; });
  const bool tracked = any_tracked({&x});
  Tensor<T> result = finish("scale", x.shape(), std::move(out), tracked);
  if (tracked) {
    record<T>("scale", [ro = result.impl(), ix = x.impl(), factor, n] {
      const T* g = out_grad(ro);
      T* gx = grad_of(ix);
      if (!g || !gx) return;
      kernels::parallel_for(n, [&](Index i) { gx[i] += g[i] * factor; });
    });
  }
  return result;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (const T v : x.data()) acc += static_cast<double>(v);
  const bool tracked = any_tracked({&x});
  Tensor<T> result = finish("sum", Shape{1}, std::vector<T>{static_cast<T>(acc)}, tracked);
  if (tracked) {
    record<T>("sum", [ro = result.impl(), ix = x.impl()] {
      const T* g = out_grad(ro);
      T* gx = grad_of(ix);
      if (!g || !gx) return;
      for (std::size_t i = 0; i < ix->data.size(); ++i) gx[i] += g[0];
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const int r = x.rank();
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  const Shape& s = x.shape();
  Index outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < r; ++i) inner *= s[static_cast<std::size_t>(i)];
  const Index len = s[static_cast<std::size_t>(ax)];
  std::vector<T> out(x.data().size());
  const T* px = x.data().data();
  if (inner == 1) {
    kernels::parallel::softmax_rows(px, out.data(), outer, len);
  } else {
    for (Index o = 0; o < outer; ++o) {
      for (Index in = 0; in < inner; ++in) {
        const Index base = o * len * inner + in;
        T mx = px[base];
        for (Index j = 1; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
        T total = 0;
        for (Index j = 0; j < len; ++j) {
          out[base + j * inner] = std::exp(px[base + j * inner] - mx);
          total += out[base + j * inner];
        }
        const T inv = T(1) / total;
        for (Index j = 0; j < len; ++j) out[base + j * inner] *= inv;
      }
    }
  }
  const bool tracked = any_tracked({&x});
  Tensor<T> result = finish("softmax", s, std::move(out), tracked);
  if (tracked) {
    record<T>("softmax", [ro = result.impl(), ix = x.impl(), outer, inner, len] {
      const T* g = out_grad(ro);
      T* gx = grad_of(ix);
      if (!g || !gx) return;
      const T* y = ro->data.data();
      if (inner == 1) {
        kernels::parallel::softmax_rows_backward(y, g, gx, outer, len);
        return;
      }
      for (Index o = 0; o < outer; ++o) {
        for (Index in = 0; in < inner; ++in) {
          const Index base = o * len * inner + in;
          T dot = 0;
          for (Index j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (Index j = 0; j < len; ++j) {
            gx[base + j * inner] += y[base + j * inner] * (g[base + j * inner] - dot);
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const Index cols = x.dim(-1);
  if (gain.shape() != Shape{cols} || bias.shape() != Shape{cols}) {
    throw ShapeError("layer_norm: gain" + shape_str(gain.shape()) + "/bias" +
                     shape_str(bias.shape()) + " must match last axis of " + shape_str(x.shape()));
  }
  const Index rows = x.size() / std::max<Index>(cols, 1);
  std::vector<T> out(x.data().size());
  auto xhat = std::make_shared<std::vector<T>>(x.data().size());
  auto rstd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  kernels::parallel::layer_norm_rows(x.data().data(), gain.data().data(), bias.data().data(),
                                     out.data(), xhat->data(), rstd->data(), rows, cols, eps);
  const bool tracked = any_tracked({&x, &gain, &bias});
  Tensor<T> result = finish("layer_norm", x.shape(), std::move(out), tracked);
  if (tracked) {
    record<T>("layer_norm", [ro = result.impl(), ix = x.impl(), ig = gain.impl(), ib = bias.impl(),
                             xhat, rstd, rows, cols] {
      const T* g = out_grad(ro);
      if (!g) return;
      kernels::parallel::layer_norm_rows_backward(g, xhat->data(), rstd->data(), ig->data.data(),
                                                  grad_of(ix), grad_of(ig), grad_of(ib), rows,
                                                  cols);
    });
  }
  return result;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const Index n = x.size();
  const T* px = x.data().data();
  std::vector<T> out(static_cast<std::size_t>(n));
  const T inv_sqrt2 = T(0.70710678118654752440);
  kernels::parallel_for(n, [&](Index i) {
    out[i] = T(0.5) * px[i] * (T(1) + std::erf(px[i] * inv_sqrt2));
  });
  const bool tracked = any_tracked({&x});
  Tensor<T> result = finish("gelu", x.shape(), std::move(out), tracked);
  if (tracked) {
    record<T>("gelu", [ro = result.impl(), ix = x.impl(), n, inv_sqrt2] {
      const T* g = out_grad(ro);
      T* gx = grad_of(ix);
      if (!g || !gx) return;
      const T* xs = ix->data.data();
      const T inv_sqrt_2pi = T(0.39894228040143267794);
      kernels::parallel_for(n, [&](Index i) {
        const T v = xs[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        gx[i] += g[i] * (cdf + v * pdf);
      });
    });
  }
  return result;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.dim(-1) != weight.dim(0)) {
    throw ShapeError("linear: input" + shape_str(x.shape()) + " incompatible with weight" +
                     shape_str(weight.shape()));
  }
  const Index in = weight.dim(0);
  const Index out_f = weight.dim(1);
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{out_f}) {
    throw ShapeError("linear: bias" + shape_str(bias.shape()) + " does not match weight" +
                     shape_str(weight.shape()));
  }
  const Index rows = x.size() / std::max<Index>(in, 1);
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  std::vector<T> out(static_cast<std::size_t>(rows * out_f));
  kernels::parallel::gemm(kernels::GemmShape{rows, out_f, in, false, false}, {1, 0, 0, 0},
                          x.data().data(), weight.data().data(), out.data(), false);
  if (has_bias) {
    const T* pb = bias.data().data();
    kernels::parallel_for(rows, [&](Index r) {
      for (Index j = 0; j < out_f; ++j) out[r * out_f + j] += pb[j];
    });
  }
  const bool tracked = any_tracked({&x, &weight, &bias});
  Tensor<T> result = finish("linear", out_shape, std::move(out), tracked);
  if (tracked) {
    record<T>("linear", [ro = result.impl(), ix = x.impl(), iw = weight.impl(),
                         ib = has_bias ? bias.impl() : ImplPtr<T>{}, rows, in, out_f] {
      const T* g = out_grad(ro);
      if (!g) return;
      if (T* gx = grad_of(ix)) {
        kernels::parallel::gemm(kernels::GemmShape{rows, in, out_f, false, true}, {1, 0, 0, 0},
                                g, iw->data.data(), gx, true);
      }
      if (T* gw = grad_of(iw)) {
        kernels::parallel::gemm(kernels::GemmShape{in, out_f, rows, true, false}, {1, 0, 0, 0},
                                ix->data.data(), g, gw, true);
      }
      if (T* gb = grad_of(ib)) {
        for (Index r = 0; r < rows; ++r)
          for (Index j = 0; j < out_f; ++j) gb[j] += g[r * out_f + j];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> gather(const Tensor<T>& x, const IndexMap& index, Shape out_shape) {
  const Index n = shape_numel(out_shape);
  if (!index || static_cast<Index>(index->size()) != n) {
    throw ShapeError("gather: index map size does not match output shape " + shape_str(out_shape));
  }
  const Index src_n = x.size();
  const T* px = x.data().data();
  const Index* idx = index->data();
  for (Index i = 0; i < n; ++i) {
    if (idx[i] < -1 || idx[i] >= src_n) {
      throw ShapeError("gather: index " + std::to_string(idx[i]) + " out of range for source " +
                       shape_str(x.shape()));
    }
  }
  std::vector<T> out(static_cast<std::size_t>(n));
  kernels::parallel_for(n, [&](Index i) { out[i] = idx[i] >= 0 ? px[idx[i]] : T(0); });
  const bool tracked = any_tracked({&x});
  Tensor<T> result = finish("gather", std::move(out_shape), std::move(out), tracked);
  if (tracked) {
    record<T>("gather", [ro = result.impl(), ix = x.impl(), index, n] {
      const T* g = out_grad(ro);
      T* gx = grad_of(ix);
      if (!g || !gx) return;
      const Index* id = index->data();
      for (Index i = 0; i < n; ++i) {
        if (id[i] >= 0) gx[id[i]] += g[i];
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  const bool tracked = any_tracked({&x});
  Tensor<T> result(std::move(shape), std::move(out), tracked);
  if (tracked) {
    record<T>("reshape", [ro = result.impl(), ix = x.impl()] {
      const T* g = out_grad(ro);
      T* gx = grad_of(ix);
      if (!g || !gx) return;
      for (std::size_t i = 0; i < ix->data.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes) {
  const Shape& s = x.shape();
  const std::size_t r = s.size();
  std::vector<int> sorted = axes;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < r; ++i) {
    if (sorted.size() != r || sorted[i] != static_cast<int>(i)) {
      throw ShapeError("permute: invalid axis order for shape " + shape_str(s));
    }
  }
  std::vector<Index> in_stride(r, 1);
  for (std::size_t i = r - 1; i-- > 0;) in_stride[i] = in_stride[i + 1] * s[i + 1];
  Shape out_shape(r);
  std::vector<Index> stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = s[static_cast<std::size_t>(axes[i])];
    stride[i] = in_stride[static_cast<std::size_t>(axes[i])];
  }
  const Index n = x.size();
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n));
  std::vector<Index> coord(r, 0);
  Index off = 0;
  for (Index i = 0; i < n; ++i) {
    (*index)[static_cast<std::size_t>(i)] = off;
    for (std::size_t ax = r; ax-- > 0;) {
      ++coord[ax];
      off += stride[ax];
      if (coord[ax] < out_shape[ax]) break;
      off -= stride[ax] * coord[ax];
      coord[ax] = 0;
    }
  }
  return gather(x, IndexMap(index), out_shape);
}

namespace {

IndexMap spatial_window_map(const Shape& s, Index h, Index w) {
  const Index B = s[0], H = s[1], W = s[2], C = s[3];
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(B * h * w * C));
  Index o = 0;
  for (Index b = 0; b < B; ++b)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        for (Index c = 0; c < C; ++c, ++o) {
          (*index)[static_cast<std::size_t>(o)] =
              (y < H && x < W) ? ((b * H + y) * W + x) * C + c : -1;
        }
  return index;
}

}  // namespace

template <typename T>
Tensor<T> crop(const Tensor<T>& x, Index h, Index w) {
  require_rank4(x.shape(), "crop");
  if (h > x.dim(1) || w > x.dim(2) || h < 0 || w < 0) {
    throw ShapeError("crop: target " + std::to_string(h) + "x" + std::to_string(w) +
                     " exceeds " + shape_str(x.shape()));
  }
  if (h == x.dim(1) && w == x.dim(2)) return x;
  return gather(x, spatial_window_map(x.shape(), h, w), Shape{x.dim(0), h, w, x.dim(3)});
}

template <typename T>
Tensor<T> pad_spatial(const Tensor<T>& x, Index h, Index w) {
  require_rank4(x.shape(), "pad_spatial");
  if (h < x.dim(1) || w < x.dim(2)) {
    throw ShapeError("pad_spatial: target " + std::to_string(h) + "x" + std::to_string(w) +
                     " smaller than " + shape_str(x.shape()));
  }
  if (h == x.dim(1) && w == x.dim(2)) return x;
  return gather(x, spatial_window_map(x.shape(), h, w), Shape{x.dim(0), h, w, x.dim(3)});
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 Padding padding) {
  require_rank4(x.shape(), "conv2d");
  if (kernel.rank() != 4 || kernel.dim(2) != x.dim(3)) {
    throw ShapeError("conv2d: kernel" + shape_str(kernel.shape()) +
                     " channel mismatch with input" + shape_str(x.shape()));
  }
  const Index kh = kernel.dim(0), kw = kernel.dim(1), cin = kernel.dim(2), cout = kernel.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0) {
    throw ShapeError("conv2d: kernel extents must be odd, got " + shape_str(kernel.shape()));
  }
  const Tensor<T> w2 = reshape(kernel, Shape{kh * kw * cin, cout});
  if (kh == 1 && kw == 1) return linear(x, w2, bias);

  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index ph = padding == Padding::kSame ? (kh - 1) / 2 : 0;
  const Index pw = padding == Padding::kSame ? (kw - 1) / 2 : 0;
  const Index Ho = H + 2 * ph - kh + 1;
  const Index Wo = W + 2 * pw - kw + 1;
  if (Ho < 1 || Wo < 1) {
    throw ShapeError("conv2d: valid convolution of " + shape_str(x.shape()) + " with kernel " +
                     shape_str(kernel.shape()) + " is empty");
  }
  const Index patch = kh * kw * cin;
  auto index = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(B * Ho * Wo * patch));
  Index o = 0;
  for (Index b = 0; b < B; ++b)
    for (Index y = 0; y < Ho; ++y)
      for (Index xo = 0; xo < Wo; ++xo)
        for (Index dy = 0; dy < kh; ++dy)
          for (Index dx = 0; dx < kw; ++dx) {
            const Index sy = y + dy - ph;
            const Index sx = xo + dx - pw;
            const bool inside = sy >= 0 && sy < H && sx >= 0 && sx < W;
            for (Index c = 0; c < cin; ++c, ++o) {
              (*index)[static_cast<std::size_t>(o)] = inside ? ((b * H + sy) * W + sx) * cin + c : -1;
            }
          }
  const Tensor<T> cols = gather(x, IndexMap(index), Shape{B, Ho, Wo, patch});
  return linear(cols, w2, bias);
}

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, Index out_h, Index out_w) {
  require_rank4(x.shape(), "resize_bilinear");
  if (out_h < 1 || out_w < 1) {
    throw ShapeError("resize_bilinear: output extents must be >= 1, got " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const Index B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  auto ty = std::make_shared<Taps>(bilinear_taps(H, out_h));
  auto tx = std::make_shared<Taps>(bilinear_taps(W, out_w));
  const T* px = x.data().data();
  std::vector<T> out(static_cast<std::size_t>(B * out_h * out_w * C));
  kernels::parallel_for(B * out_h, [&](Index row) {
    const Index b = row / out_h, oy = row % out_h;
    const T wy = static_cast<T>(ty->t[oy]);
    const T* r0 = px + (b * H + ty->i0[oy]) * W * C;
    const T* r1 = px + (b * H + ty->i1[oy]) * W * C;
    T* dst = out.data() + row * out_w * C;
    for (Index ox = 0; ox < out_w; ++ox) {
      const T wx = static_cast<T>(tx->t[ox]);
      const Index c0 = tx->i0[ox] * C, c1 = tx->i1[ox] * C;
      for (Index c = 0; c < C; ++c) {
        const T top = r0[c0 + c] + wx * (r0[c1 + c] - r0[c0 + c]);
        const T bot = r1[c0 + c] + wx * (r1[c1 + c] - r1[c0 + c]);
        dst[ox * C + c] = top + wy * (bot - top);
      }
    }
  });
  const bool tracked = any_tracked({&x});
  Tensor<T> result = finish("resize_bilinear", Shape{B, out_h, out_w, C}, std::move(out), tracked);
  if (tracked) {
    record<T>("resize_bilinear", [ro = result.impl(), ix = x.impl(), ty, tx, B, H, W, C, out_h,
                                  out_w] {
      const T* g = out_grad(ro);
      T* gx = grad_of(ix);
      if (!g || !gx) return;
      for (Index b = 0; b < B; ++b)
        for (Index oy = 0; oy < out_h; ++oy) {
          const T wy = static_cast<T>(ty->t[oy]);
          T* r0 = gx + (b * H + ty->i0[oy]) * W * C;
          T* r1 = gx + (b * H + ty->i1[oy]) * W * C;
          const T* src = g + (b * out_h + oy) * out_w * C;
          for (Index ox = 0; ox < out_w; ++ox) {
            const T wx = static_cast<T>(tx->t[ox]);
            const Index c0 = tx->i0[ox] * C, c1 = tx->i1[ox] * C;
            for (Index c = 0; c < C; ++c) {
              const T gv = src[ox * C + c];
              const T gtop = gv * (T(1) - wy);
              const T gbot = gv * wy;
              r0[c0 + c] += gtop * (T(1) - wx);
              r0[c1 + c] += gtop * wx;
              r1[c0 + c] += gbot * (T(1) - wx);
              r1[c1 + c] += gbot * wx;
            }
          }
        }
    });
  }
  return result;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels,
                        std::int32_t ignore_label) {
  const Index K = logits.dim(-1);
  const Index rows = logits.size() / std::max<Index>(K, 1);
  if (static_cast<Index>(labels.size()) != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  const T* px = logits.data().data();
  auto probs = std::make_shared<std::vector<T>>(logits.data().size(), T(0));
  double total = 0;
  Index count = 0;
  for (Index r = 0; r < rows; ++r) {
    const std::int32_t y = labels[static_cast<std::size_t>(r)];
    if (y == ignore_label) continue;
    if (y < 0 || y >= K) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) +
                              " outside [0," + std::to_string(K) + ")");
    }
    const T* xr = px + r * K;
    T mx = xr[0];
    for (Index c = 1; c < K; ++c) mx = std::max(mx, xr[c]);
    T s = 0;
    for (Index c = 0; c < K; ++c) s += std::exp(xr[c] - mx);
    const T lse = mx + std::log(s);
    total += static_cast<double>(lse - xr[y]);
    T* pr = probs->data() + r * K;
    for (Index c = 0; c < K; ++c) pr[c] = std::exp(xr[c] - lse);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy: every position is ignored");
  const bool tracked = any_tracked({&logits});
  Tensor<T> result = finish("cross_entropy", Shape{1},
                            std::vector<T>{static_cast<T>(total / static_cast<double>(count))},
                            tracked);
  if (tracked) {
    auto lab = std::make_shared<std::vector<std::int32_t>>(labels.begin(), labels.end());
    record<T>("cross_entropy", [ro = result.impl(), il = logits.impl(), probs, lab, rows, K,
                                count, ignore_label] {
      const T* g = out_grad(ro);
      T* gx = grad_of(il);
      if (!g || !gx) return;
      const T coef = g[0] / static_cast<T>(count);
      for (Index r = 0; r < rows; ++r) {
        const std::int32_t y = (*lab)[static_cast<std::size_t>(r)];
        if (y == ignore_label) continue;
        const T* pr = probs->data() + r * K;
        for (Index c = 0; c < K; ++c) gx[r * K + c] += coef * (pr[c] - (c == y ? T(1) : T(0)));
      }
    });
  }
  return result;
}

#define SEMASK_INSTANTIATE_OPS(T)                                                               \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> softmax(const Tensor<T>&, int);                                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> gelu(const Tensor<T>&);                                                    \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Padding);     \
  template Tensor<T> resize_bilinear(const Tensor<T>&, Index, Index);                           \
  template Tensor<T> gather(const Tensor<T>&, const IndexMap&, Shape);                          \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                        \
  template Tensor<T> crop(const Tensor<T>&, Index, Index);                                      \
  template Tensor<T> pad_spatial(const Tensor<T>&, Index, Index);                               \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>, std::int32_t);

SEMASK_INSTANTIATE_OPS(float)
SEMASK_INSTANTIATE_OPS(double)

#undef SEMASK_INSTANTIATE_OPS

}  // namespace semask
