#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "specknet/common.hpp"
#include "specknet/gemm.hpp"
#include "specknet/graph.hpp"
#include "specknet/rng.hpp"
#include "specknet/tensor.hpp"

namespace specknet {

enum class Padding { same, valid };
enum class ActKind { sigmoid, relu, tanh_ };

inline const char* act_name(ActKind k) {
  switch (k) {
    case ActKind::sigmoid: return "sigmoid";
    case ActKind::relu: return "relu";
    default: return "tanh";
  }
}

inline ActKind act_from_name(const std::string& s) {
  if (s == "sigmoid") return ActKind::sigmoid;
  if (s == "relu") return ActKind::relu;
  if (s == "tanh") return ActKind::tanh_;
  throw ConfigError("unknown activation '" + s + "'");
}

// ---------------------------------------------------------------------------
// shape plumbing

template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  Tensor<T> v = g.value(x).reshaped(std::move(shape));
  const Shape back = g.value(x).shape();
  return g.make(std::move(v), {x}, [x, back](Graph<T>& gr, int self) {
    Tensor<T>& gx = gr.grad(x);
    const Tensor<T>& go = gr.grad(Var{self});
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i];
  });
}

// [B, d1, d2, ...] -> [B, d1*d2*...]
template <typename T>
Var flatten(Graph<T>& g, Var x) {
  const Shape& s = g.shape(x);
  if (s.size() < 2) throw DimensionError("flatten: need rank >= 2, got " +
                                         shape_to_string(s));
  std::size_t p = 1;
  for (std::size_t i = 1; i < s.size(); ++i) p *= s[i];
  return reshape(g, x, {s[0], p});
}

// ---------------------------------------------------------------------------
// dense algebra

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  if (A.rank() != 2 || B.rank() != 2)
    throw DimensionError("matmul: need rank-2 operands, got " +
                         shape_to_string(A.shape()) + " and " +
                         shape_to_string(B.shape()));
  if (A.dim(1) != B.dim(0))
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_to_string(A.shape()) + " vs " +
                         shape_to_string(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor<T> out({m, n});
  detail::gemm<T>(false, false, m, n, k, A.data(), B.data(), out.data());
  return g.make(std::move(out), {a, b}, [a, b, m, n, k](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    if (gr.wants_grad(a)) {
      detail::gemm<T>(false, true, m, k, n, go.data(), gr.value(b).data(),
                      gr.grad(a).data(), T(1));
    }
    if (gr.wants_grad(b)) {
      detail::gemm<T>(true, false, k, n, m, gr.value(a).data(), go.data(),
                      gr.grad(b).data(), T(1));
    }
  });
}

// x: [R x C], b: [C]; adds b to every row.
template <typename T>
Var add_rowvec(Graph<T>& g, Var x, Var b) {
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& B = g.value(b);
  if (X.rank() != 2 || B.rank() != 1 || B.dim(0) != X.dim(1))
    throw DimensionError("add_rowvec: got " + shape_to_string(X.shape()) +
                         " and " + shape_to_string(B.shape()));
  const std::size_t r = X.dim(0), c = X.dim(1);
  Tensor<T> out({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(i, j) = X(i, j) + B[j];
  return g.make(std::move(out), {x, b}, [x, b, r, c](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    if (gr.wants_grad(x)) add_into(gr.grad(x), go);
    if (gr.wants_grad(b)) {
      Tensor<T>& gb = gr.grad(b);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += go[i * c + j];
    }
  });
}

// x: [B,C,H,W] or [C,H,W], b: [C]; adds b[c] to every element of channel c.
template <typename T>
Var add_chan(Graph<T>& g, Var x, Var b) {
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& B = g.value(b);
  if ((X.rank() != 3 && X.rank() != 4) || B.rank() != 1)
    throw DimensionError("add_chan: got " + shape_to_string(X.shape()) +
                         " and " + shape_to_string(B.shape()));
  const std::size_t batch = X.rank() == 4 ? X.dim(0) : 1;
  const std::size_t c = X.rank() == 4 ? X.dim(1) : X.dim(0);
  if (B.dim(0) != c)
    throw DimensionError("add_chan: bias length " + std::to_string(B.dim(0)) +
                         " vs " + std::to_string(c) + " channels");
  const std::size_t hw = X.size() / (batch * c);
  Tensor<T> out(X.shape());
  const T* xd = X.data();
  T* od = out.data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T bias = B[ch];
      const std::size_t base = (n * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) od[base + i] = xd[base + i] + bias;
    }
  return g.make(std::move(out), {x, b},
                [x, b, batch, c, hw](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    if (gr.wants_grad(x)) add_into(gr.grad(x), go);
    if (gr.wants_grad(b)) {
      Tensor<T>& gb = gr.grad(b);
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (n * c + ch) * hw;
          T s = T(0);
          for (std::size_t i = 0; i < hw; ++i) s += go[base + i];
          gb[ch] += s;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// elementwise

namespace detail {
template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                             const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shapes differ, " +
                         shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
}
}  // namespace detail

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  detail::check_same_shape(A, B, "add");
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] + B[i];
  return g.make(std::move(out), {a, b}, [a, b](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    if (gr.wants_grad(a)) add_into(gr.grad(a), go);
    if (gr.wants_grad(b)) add_into(gr.grad(b), go);
  });
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  detail::check_same_shape(A, B, "sub");
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] - B[i];
  return g.make(std::move(out), {a, b}, [a, b](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    if (gr.wants_grad(a)) add_into(gr.grad(a), go);
    if (gr.wants_grad(b)) {
      Tensor<T>& gb = gr.grad(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  detail::check_same_shape(A, B, "mul");
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] * B[i];
  return g.make(std::move(out), {a, b}, [a, b](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    if (gr.wants_grad(a)) {
      Tensor<T>& ga = gr.grad(a);
      const Tensor<T>& bv = gr.value(b);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (gr.wants_grad(b)) {
      Tensor<T>& gb = gr.grad(b);
      const Tensor<T>& av = gr.value(a);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

template <typename T>
Var div(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  detail::check_same_shape(A, B, "div");
  Tensor<T> out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = A[i] / B[i];
  return g.make(std::move(out), {a, b}, [a, b](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    const Tensor<T>& av = gr.value(a);
    const Tensor<T>& bv = gr.value(b);
    if (gr.wants_grad(a)) {
      Tensor<T>& ga = gr.grad(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / bv[i];
    }
    if (gr.wants_grad(b)) {
      Tensor<T>& gb = gr.grad(b);
      for (std::size_t i = 0; i < go.size(); ++i)
        gb[i] -= go[i] * av[i] / (bv[i] * bv[i]);
    }
  });
}

// out = scale * x + shift, scalars fixed at build time.
template <typename T>
Var affine(Graph<T>& g, Var x, T scale, T shift) {
  const Tensor<T>& X = g.value(x);
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = scale * X[i] + shift;
  return g.make(std::move(out), {x}, [x, scale](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += scale * go[i];
  });
}

template <typename T>
Var clamp(Graph<T>& g, Var x, T lo, T hi) {
  const Tensor<T>& X = g.value(x);
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i)
    out[i] = std::min(hi, std::max(lo, X[i]));
  return g.make(std::move(out), {x}, [x, lo, hi](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    const Tensor<T>& xv = gr.value(x);
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i)
      if (xv[i] >= lo && xv[i] <= hi) gx[i] += go[i];
  });
}

template <typename T>
Var log_op(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = std::log(X[i]);
  return g.make(std::move(out), {x}, [x](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    const Tensor<T>& xv = gr.value(x);
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / xv[i];
  });
}

// log(1 - x)
template <typename T>
Var log1m(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = std::log(T(1) - X[i]);
  return g.make(std::move(out), {x}, [x](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    const Tensor<T>& xv = gr.value(x);
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i)
      gx[i] -= go[i] / (T(1) - xv[i]);
  });
}

// ---------------------------------------------------------------------------
// reductions

template <typename T>
Var mean_all(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  if (X.size() == 0) throw DimensionError("mean_all: empty tensor");
  T s = T(0);
  for (std::size_t i = 0; i < X.size(); ++i) s += X[i];
  const T inv = T(1) / T(X.size());
  return g.make(Tensor<T>::scalar(s * inv), {x},
                [x, inv](Graph<T>& gr, int self) {
    const T go = gr.grad(Var{self})[0];
    Tensor<T>& gx = gr.grad(x);
    const T v = go * inv;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += v;
  });
}

// [R x C] -> [R], mean over each row.
template <typename T>
Var row_mean(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  if (X.rank() != 2)
    throw DimensionError("row_mean: need rank 2, got " +
                         shape_to_string(X.shape()));
  const std::size_t r = X.dim(0), c = X.dim(1);
  Tensor<T> out({r});
  const T inv = T(1) / T(c);
  for (std::size_t i = 0; i < r; ++i) {
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) s += X(i, j);
    out[i] = s * inv;
  }
  return g.make(std::move(out), {x}, [x, r, c, inv](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < r; ++i) {
      const T v = go[i] * inv;
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += v;
    }
  });
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
Var activation(Graph<T>& g, Var x, ActKind kind) {
  const Tensor<T>& X = g.value(x);
  Tensor<T> out(X.shape());
  switch (kind) {
    case ActKind::sigmoid:
      for (std::size_t i = 0; i < X.size(); ++i) {
        const T v = X[i];
        if (v >= T(0)) {
          out[i] = T(1) / (T(1) + std::exp(-v));
        } else {
          const T e = std::exp(v);
          out[i] = e / (T(1) + e);
        }
      }
      break;
    case ActKind::relu:
      for (std::size_t i = 0; i < X.size(); ++i)
        out[i] = X[i] > T(0) ? X[i] : T(0);
      break;
    case ActKind::tanh_:
      for (std::size_t i = 0; i < X.size(); ++i) out[i] = std::tanh(X[i]);
      break;
  }
  return g.make(std::move(out), {x}, [x, kind](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    const Tensor<T>& y = gr.value(Var{self});
    Tensor<T>& gx = gr.grad(x);
    switch (kind) {
      case ActKind::sigmoid:
        for (std::size_t i = 0; i < go.size(); ++i)
          gx[i] += go[i] * y[i] * (T(1) - y[i]);
        break;
      case ActKind::relu: {
        const Tensor<T>& xv = gr.value(x);
        for (std::size_t i = 0; i < go.size(); ++i)
          if (xv[i] > T(0)) gx[i] += go[i];
        break;
      }
      case ActKind::tanh_:
        for (std::size_t i = 0; i < go.size(); ++i)
          gx[i] += go[i] * (T(1) - y[i] * y[i]);
        break;
    }
  });
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
  return activation(g, x, ActKind::sigmoid);
}
template <typename T>
Var relu(Graph<T>& g, Var x) {
  return activation(g, x, ActKind::relu);
}
template <typename T>
Var tanh_op(Graph<T>& g, Var x) {
  return activation(g, x, ActKind::tanh_);
}

// ---------------------------------------------------------------------------
// convolution

namespace detail {

struct ConvGeom {
  std::size_t batch, cin, h, w;   // input
  std::size_t cout, k;            // kernel
  std::size_t ho, wo;             // output
  std::size_t pad;                // leading pad (same padding, symmetric)
  std::size_t stride;
  bool batched;
};

template <typename T>
inline ConvGeom conv_geometry(const Tensor<T>& x, const Tensor<T>& kern,
                              Padding padding, std::size_t stride) {
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (x.rank() != 3 && x.rank() != 4)
    throw DimensionError("conv2d: input must be [C,H,W] or [B,C,H,W], got " +
                         shape_to_string(x.shape()));
  if (kern.rank() != 4 || kern.dim(2) != kern.dim(3))
    throw DimensionError("conv2d: kernel must be [Cout,Cin,k,k], got " +
                         shape_to_string(kern.shape()));
  ConvGeom geo;
  geo.batched = x.rank() == 4;
  geo.batch = geo.batched ? x.dim(0) : 1;
  geo.cin = geo.batched ? x.dim(1) : x.dim(0);
  geo.h = geo.batched ? x.dim(2) : x.dim(1);
  geo.w = geo.batched ? x.dim(3) : x.dim(2);
  geo.cout = kern.dim(0);
  geo.k = kern.dim(2);
  if (kern.dim(1) != geo.cin)
    throw DimensionError("conv2d: kernel expects " +
                         std::to_string(kern.dim(1)) + " input channels, got " +
                         std::to_string(geo.cin));
  geo.stride = stride;
  const std::size_t pad_total = padding == Padding::same ? geo.k - 1 : 0;
  geo.pad = pad_total / 2;
  if (geo.h + pad_total < geo.k || geo.w + pad_total < geo.k)
    throw DimensionError("conv2d: kernel " + std::to_string(geo.k) + "x" +
                         std::to_string(geo.k) +
                         " larger than padded input " + std::to_string(geo.h) +
                         "x" + std::to_string(geo.w));
  geo.ho = (geo.h + pad_total - geo.k) / stride + 1;
  geo.wo = (geo.w + pad_total - geo.k) / stride + 1;
  return geo;
}

// One sample. cols is [ho*wo rows x cin*k*k], row-major.
template <typename T>
inline void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t kk = g.k * g.k;
  for (std::size_t oh = 0; oh < g.ho; ++oh) {
    for (std::size_t ow = 0; ow < g.wo; ++ow) {
      T* row = cols + (oh * g.wo + ow) * g.cin * kk;
      for (std::size_t c = 0; c < g.cin; ++c) {
        const T* plane = x + c * g.h * g.w;
        for (std::size_t kh = 0; kh < g.k; ++kh) {
          const std::ptrdiff_t ih =
              std::ptrdiff_t(oh * g.stride + kh) - std::ptrdiff_t(g.pad);
          for (std::size_t kw = 0; kw < g.k; ++kw) {
            const std::ptrdiff_t iw =
                std::ptrdiff_t(ow * g.stride + kw) - std::ptrdiff_t(g.pad);
            T v = T(0);
            if (ih >= 0 && ih < std::ptrdiff_t(g.h) && iw >= 0 &&
                iw < std::ptrdiff_t(g.w))
              v = plane[std::size_t(ih) * g.w + std::size_t(iw)];
            row[(c * g.k + kh) * g.k + kw] = v;
          }
        }
      }
    }
  }
}

template <typename T>
inline void col2im_add(const T* cols, const ConvGeom& g, T* gx) {
  const std::size_t kk = g.k * g.k;
  for (std::size_t oh = 0; oh < g.ho; ++oh) {
    for (std::size_t ow = 0; ow < g.wo; ++ow) {
      const T* row = cols + (oh * g.wo + ow) * g.cin * kk;
      for (std::size_t c = 0; c < g.cin; ++c) {
        T* plane = gx + c * g.h * g.w;
        for (std::size_t kh = 0; kh < g.k; ++kh) {
          const std::ptrdiff_t ih =
              std::ptrdiff_t(oh * g.stride + kh) - std::ptrdiff_t(g.pad);
          if (ih < 0 || ih >= std::ptrdiff_t(g.h)) continue;
          for (std::size_t kw = 0; kw < g.k; ++kw) {
            const std::ptrdiff_t iw =
                std::ptrdiff_t(ow * g.stride + kw) - std::ptrdiff_t(g.pad);
            if (iw < 0 || iw >= std::ptrdiff_t(g.w)) continue;
            plane[std::size_t(ih) * g.w + std::size_t(iw)] +=
                row[(c * g.k + kh) * g.k + kw];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation (no kernel flip). x: [C,H,W] or [B,C,H,W];
// kernels: [Cout,Cin,k,k]. Output rank matches input rank.
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var kernels, Padding padding,
           std::size_t stride = 1) {
  const detail::ConvGeom geo =
      detail::conv_geometry(g.value(x), g.value(kernels), padding, stride);
  const std::size_t kk = geo.cin * geo.k * geo.k;
  const std::size_t hw = geo.ho * geo.wo;
  Shape out_shape = geo.batched
                        ? Shape{geo.batch, geo.cout, geo.ho, geo.wo}
                        : Shape{geo.cout, geo.ho, geo.wo};
  Tensor<T> out(std::move(out_shape));
  {
    std::vector<T> cols(hw * kk);
    const T* xd = g.value(x).data();
    const T* kd = g.value(kernels).data();
    for (std::size_t n = 0; n < geo.batch; ++n) {
      detail::im2col(xd + n * geo.cin * geo.h * geo.w, geo, cols.data());
      // out[n] (cout x hw) = kflat (cout x kk) * cols^T
      detail::gemm<T>(false, true, geo.cout, hw, kk, kd, cols.data(),
                      out.data() + n * geo.cout * hw);
    }
  }
  return g.make(std::move(out), {x, kernels},
                [x, kernels, geo, kk, hw](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    const T* xd = gr.value(x).data();
    std::vector<T> cols(hw * kk);
    const bool want_x = gr.wants_grad(x);
    const bool want_k = gr.wants_grad(kernels);
    std::vector<T> gcols(want_x ? hw * kk : 0);
    for (std::size_t n = 0; n < geo.batch; ++n) {
      const T* gout = go.data() + n * geo.cout * hw;
      detail::im2col(xd + n * geo.cin * geo.h * geo.w, geo, cols.data());
      if (want_k) {
        // gk (cout x kk) += gout (cout x hw) * cols (hw x kk)
        detail::gemm<T>(false, false, geo.cout, kk, hw, gout, cols.data(),
                        gr.grad(kernels).data(), T(1));
      }
      if (want_x) {
        // gcols (hw x kk) = gout^T (hw x cout) * kflat (cout x kk)
        detail::gemm<T>(true, false, hw, kk, geo.cout, gout,
                        gr.value(kernels).data(), gcols.data());
        detail::col2im_add(gcols.data(), geo,
                           gr.grad(x).data() + n * geo.cin * geo.h * geo.w);
      }
    }
  });
}

// 2x2 max pooling, stride 2, on the trailing two axes. Ties keep the first
// element in row-major scan order.
template <typename T>
Var maxpool2(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  if (X.rank() < 2)
    throw DimensionError("maxpool2: need rank >= 2, got " +
                         shape_to_string(X.shape()));
  const std::size_t h = X.dim(X.rank() - 2);
  const std::size_t w = X.dim(X.rank() - 1);
  if (h % 2 != 0 || w % 2 != 0)
    throw DimensionError("maxpool2: spatial dims must be even, got " +
                         std::to_string(h) + "x" + std::to_string(w));
  const std::size_t lead = X.size() / (h * w);
  Shape os = X.shape();
  os[os.size() - 2] = h / 2;
  os[os.size() - 1] = w / 2;
  Tensor<T> out(os);
  auto arg = std::make_shared<std::vector<std::uint32_t>>(out.size());
  const std::size_t ho = h / 2, wo = w / 2;
  const T* xd = X.data();
  for (std::size_t l = 0; l < lead; ++l) {
    const T* plane = xd + l * h * w;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (2 * i) * w + 2 * j;
        T bv = plane[best];
        const std::size_t cand[3] = {(2 * i) * w + 2 * j + 1,
                                     (2 * i + 1) * w + 2 * j,
                                     (2 * i + 1) * w + 2 * j + 1};
        for (std::size_t c : cand) {
          if (plane[c] > bv) {
            bv = plane[c];
            best = c;
          }
        }
        const std::size_t oi = l * ho * wo + i * wo + j;
        out[oi] = bv;
        (*arg)[oi] = std::uint32_t(l * h * w + best);
      }
    }
  }
  return g.make(std::move(out), {x}, [x, arg](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[(*arg)[i]] += go[i];
  });
}

// Transposed convolution with 2x2 kernels and stride 2: every input pixel
// scatters into a disjoint 2x2 output block, doubling H and W (the exact
// adjoint of a stride-2 valid convolution with the same kernels).
// x: [Cin,H,W] or [B,Cin,H,W]; kernels: [Cin,Cout,2,2].
template <typename T>
Var upconv2(Graph<T>& g, Var x, Var kernels) {
  const Tensor<T>& X = g.value(x);
  const Tensor<T>& K = g.value(kernels);
  if (X.rank() != 3 && X.rank() != 4)
    throw DimensionError("upconv2: input must be [C,H,W] or [B,C,H,W], got " +
                         shape_to_string(X.shape()));
  if (K.rank() != 4 || K.dim(2) != 2 || K.dim(3) != 2)
    throw DimensionError("upconv2: kernel must be [Cin,Cout,2,2], got " +
                         shape_to_string(K.shape()));
  const bool batched = X.rank() == 4;
  const std::size_t batch = batched ? X.dim(0) : 1;
  const std::size_t cin = batched ? X.dim(1) : X.dim(0);
  const std::size_t h = batched ? X.dim(2) : X.dim(1);
  const std::size_t w = batched ? X.dim(3) : X.dim(2);
  if (K.dim(0) != cin)
    throw DimensionError("upconv2: kernel expects " + std::to_string(K.dim(0)) +
                         " input channels, got " + std::to_string(cin));
  const std::size_t cout = K.dim(1);
  const std::size_t hw = h * w;
  const std::size_t co4 = cout * 4;
  Shape os = batched ? Shape{batch, cout, 2 * h, 2 * w}
                     : Shape{cout, 2 * h, 2 * w};
  Tensor<T> out(std::move(os));
  {
    std::vector<T> p(hw * co4);
    for (std::size_t n = 0; n < batch; ++n) {
      const T* xs = X.data() + n * cin * hw;  // [cin x hw]
      // p (hw x cout*4) = xs^T * kflat (cin x cout*4)
      detail::gemm<T>(true, false, hw, co4, cin, xs, K.data(), p.data());
      T* od = out.data() + n * cout * 4 * hw;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          const T* row = p.data() + (i * w + j) * co4;
          for (std::size_t c = 0; c < cout; ++c)
            for (std::size_t di = 0; di < 2; ++di)
              for (std::size_t dj = 0; dj < 2; ++dj)
                od[c * 4 * hw + (2 * i + di) * 2 * w + (2 * j + dj)] =
                    row[(c * 2 + di) * 2 + dj];
        }
    }
  }
  return g.make(std::move(out), {x, kernels},
                [x, kernels, batch, cin, cout, h, w](Graph<T>& gr, int self) {
    const std::size_t hw = h * w;
    const std::size_t co4 = cout * 4;
    const Tensor<T>& go = gr.grad(Var{self});
    std::vector<T> gp(hw * co4);
    const bool want_x = gr.wants_grad(x);
    const bool want_k = gr.wants_grad(kernels);
    for (std::size_t n = 0; n < batch; ++n) {
      const T* god = go.data() + n * cout * 4 * hw;
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          T* row = gp.data() + (i * w + j) * co4;
          for (std::size_t c = 0; c < cout; ++c)
            for (std::size_t di = 0; di < 2; ++di)
              for (std::size_t dj = 0; dj < 2; ++dj)
                row[(c * 2 + di) * 2 + dj] =
                    god[c * 4 * hw + (2 * i + di) * 2 * w + (2 * j + dj)];
        }
      if (want_x) {
        // gx (cin x hw) += kflat (cin x co4) * gp^T (co4 x hw)
        detail::gemm<T>(false, true, cin, hw, co4, gr.value(kernels).data(),
                        gp.data(), gr.grad(x).data() + n * cin * hw, T(1));
      }
      if (want_k) {
        // gk (cin x co4) += xs (cin x hw) * gp (hw x co4)
        detail::gemm<T>(false, false, cin, co4, hw,
                        gr.value(x).data() + n * cin * hw, gp.data(),
                        gr.grad(kernels).data(), T(1));
      }
    }
  });
}

// Concatenate along the channel axis. [C,H,W] or [B,C,H,W].
template <typename T>
Var concat_channels(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& A = g.value(a);
  const Tensor<T>& B = g.value(b);
  if (A.rank() != B.rank() || (A.rank() != 3 && A.rank() != 4))
    throw DimensionError("concat_channels: got " + shape_to_string(A.shape()) +
                         " and " + shape_to_string(B.shape()));
  const std::size_t caxis = A.rank() - 3;
  for (std::size_t i = 0; i < A.rank(); ++i) {
    if (i != caxis && A.dim(i) != B.dim(i))
      throw DimensionError("concat_channels: shapes differ off the channel "
                           "axis, " + shape_to_string(A.shape()) + " vs " +
                           shape_to_string(B.shape()));
  }
  const std::size_t batch = A.rank() == 4 ? A.dim(0) : 1;
  const std::size_t ca = A.dim(caxis), cb = B.dim(caxis);
  const std::size_t hw = A.size() / (batch * std::max<std::size_t>(ca, 1));
  Shape os = A.shape();
  os[caxis] = ca + cb;
  Tensor<T> out(os);
  const std::size_t hw_b =
      cb ? B.size() / (batch * cb) : hw;  // equal spatial extents
  for (std::size_t n = 0; n < batch; ++n) {
    T* dst = out.data() + n * (ca + cb) * hw;
    std::copy_n(A.data() + n * ca * hw, ca * hw, dst);
    std::copy_n(B.data() + n * cb * hw_b, cb * hw_b, dst + ca * hw);
  }
  return g.make(std::move(out), {a, b},
                [a, b, batch, ca, cb, hw](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    for (std::size_t n = 0; n < batch; ++n) {
      const T* src = go.data() + n * (ca + cb) * hw;
      if (gr.wants_grad(a)) {
        T* ga = gr.grad(a).data() + n * ca * hw;
        for (std::size_t i = 0; i < ca * hw; ++i) ga[i] += src[i];
      }
      if (gr.wants_grad(b)) {
        T* gb = gr.grad(b).data() + n * cb * hw;
        for (std::size_t i = 0; i < cb * hw; ++i) gb[i] += src[ca * hw + i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// normalization and regularization

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

// Per-channel batch normalization over axis 1 of [B,C,...]. Training mode
// normalizes with batch statistics (population variance) and updates the
// running estimates in `state`; eval mode normalizes with the running
// estimates. gamma and beta are [C].
template <typename T>
Var batchnorm(Graph<T>& g, Var x, Var gamma, Var beta,
              BatchNormState<T>& state, Mode mode, T eps = T(1e-5),
              T momentum = T(0.9)) {
  const Tensor<T>& X = g.value(x);
  if (X.rank() < 2)
    throw DimensionError("batchnorm: need [B,C,...], got " +
                         shape_to_string(X.shape()));
  const std::size_t batch = X.dim(0);
  const std::size_t c = X.dim(1);
  const std::size_t hw = X.size() / (batch * c);
  if (g.value(gamma).size() != c || g.value(beta).size() != c)
    throw DimensionError("batchnorm: gamma/beta must have length " +
                         std::to_string(c));
  if (state.running_mean.size() != c) {
    state.running_mean = Tensor<T>({c});
    state.running_var = Tensor<T>::ones({c});
  }
  if (mode == Mode::train && batch < 2)
    throw ConfigError("batchnorm: training requires batch size >= 2, got " +
                      std::to_string(batch));

  const std::size_t n = batch * hw;
  auto xhat = std::make_shared<Tensor<T>>(X.shape());
  auto inv_std = std::make_shared<Tensor<T>>(Shape{c});
  Tensor<T> out(X.shape());
  const Tensor<T>& gam = g.value(gamma);
  const Tensor<T>& bet = g.value(beta);
  const T* xd = X.data();

  for (std::size_t ch = 0; ch < c; ++ch) {
    T mean, var;
    if (mode == Mode::train) {
      T s = T(0);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = xd + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      mean = s / T(n);
      T v = T(0);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = xd + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const T d = p[i] - mean;
          v += d * d;
        }
      }
      var = v / T(n);
      state.running_mean[ch] = momentum * state.running_mean[ch] +
                               (T(1) - momentum) * mean;
      state.running_var[ch] = momentum * state.running_var[ch] +
                              (T(1) - momentum) * var;
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[ch] = is;
    for (std::size_t b = 0; b < batch; ++b) {
      const T* p = xd + (b * c + ch) * hw;
      T* xh = xhat->data() + (b * c + ch) * hw;
      T* o = out.data() + (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = (p[i] - mean) * is;
        o[i] = gam[ch] * xh[i] + bet[ch];
      }
    }
  }

  const bool train_stats = mode == Mode::train;
  return g.make(std::move(out), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std, batch, c, hw, n,
                 train_stats](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    const Tensor<T>& gam = gr.value(gamma);
    for (std::size_t ch = 0; ch < c; ++ch) {
      T sum_g = T(0), sum_gx = T(0);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum_g += go[base + i];
          sum_gx += go[base + i] * (*xhat)[base + i];
        }
      }
      if (gr.wants_grad(gamma)) gr.grad(gamma)[ch] += sum_gx;
      if (gr.wants_grad(beta)) gr.grad(beta)[ch] += sum_g;
      if (gr.wants_grad(x)) {
        Tensor<T>& gx = gr.grad(x);
        const T is = (*inv_std)[ch];
        if (train_stats) {
          const T mg = sum_g / T(n);
          const T mgx = sum_gx / T(n);
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i)
              gx[base + i] += gam[ch] * is *
                              (go[base + i] - mg - (*xhat)[base + i] * mgx);
          }
        } else {
          for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t base = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i)
              gx[base + i] += gam[ch] * is * go[base + i];
          }
        }
      }
    }
  });
}

// Inverted dropout: in training, zeroes each element with probability rate
// and scales survivors by 1/(1-rate) so expectations match eval mode, where
// this is the identity. rate 0 is the identity in both modes.
template <typename T>
Var dropout(Graph<T>& g, Var x, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout: rate must be in [0,1), got " +
                      std::to_string(rate));
  if (mode == Mode::eval || rate == 0.0) return x;
  const Tensor<T>& X = g.value(x);
  const T scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<Tensor<T>>(X.shape());
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const T m = rng.uniform() >= rate ? scale : T(0);
    (*mask)[i] = m;
    out[i] = X[i] * m;
  }
  return g.make(std::move(out), {x}, [x, mask](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// classification heads

// Row-wise softmax on [B x K].
template <typename T>
Var softmax(Graph<T>& g, Var x) {
  const Tensor<T>& X = g.value(x);
  if (X.rank() != 2)
    throw DimensionError("softmax: need [B,K], got " +
                         shape_to_string(X.shape()));
  const std::size_t b = X.dim(0), k = X.dim(1);
  Tensor<T> out(X.shape());
  for (std::size_t i = 0; i < b; ++i) {
    T m = X(i, 0);
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, X(i, j));
    T s = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      out(i, j) = std::exp(X(i, j) - m);
      s += out(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) out(i, j) /= s;
  }
  return g.make(std::move(out), {x}, [x, b, k](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(Var{self});
    const Tensor<T>& p = gr.value(Var{self});
    Tensor<T>& gx = gr.grad(x);
    for (std::size_t i = 0; i < b; ++i) {
      T dot = T(0);
      for (std::size_t j = 0; j < k; ++j) dot += go[i * k + j] * p[i * k + j];
      for (std::size_t j = 0; j < k; ++j)
        gx[i * k + j] += p[i * k + j] * (go[i * k + j] - dot);
    }
  });
}

// Mean cross-entropy of softmax(logits) against integer labels; fused for
// numerical stability.
template <typename T>
Var softmax_xent(Graph<T>& g, Var logits, std::vector<std::uint8_t> labels) {
  const Tensor<T>& X = g.value(logits);
  if (X.rank() != 2)
    throw DimensionError("softmax_xent: need [B,K] logits, got " +
                         shape_to_string(X.shape()));
  const std::size_t b = X.dim(0), k = X.dim(1);
  if (labels.size() != b)
    throw DimensionError("softmax_xent: " + std::to_string(labels.size()) +
                         " labels for batch of " + std::to_string(b));
  for (std::uint8_t y : labels)
    if (y >= k)
      throw UsageError("softmax_xent: label " + std::to_string(int(y)) +
                       " out of range for " + std::to_string(k) + " classes");
  auto probs = std::make_shared<Tensor<T>>(Shape{b, k});
  T loss = T(0);
  for (std::size_t i = 0; i < b; ++i) {
    T m = X(i, 0);
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, X(i, j));
    T s = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      const T e = std::exp(X(i, j) - m);
      (*probs)(i, j) = e;
      s += e;
    }
    for (std::size_t j = 0; j < k; ++j) (*probs)(i, j) /= s;
    loss -= std::log(std::max((*probs)(i, labels[i]),
                              std::numeric_limits<T>::min()));
  }
  loss /= T(b);
  auto lab = std::make_shared<std::vector<std::uint8_t>>(std::move(labels));
  return g.make(Tensor<T>::scalar(loss), {logits},
                [logits, probs, lab, b, k](Graph<T>& gr, int self) {
    const T go = gr.grad(Var{self})[0];
    Tensor<T>& gx = gr.grad(logits);
    const T inv = go / T(b);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        T d = (*probs)(i, j);
        if (j == (*lab)[i]) d -= T(1);
        gx[i * k + j] += d * inv;
      }
  });
}

}  // namespace specknet
