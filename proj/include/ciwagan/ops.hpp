// Copyright 2026 The CiwaGAN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ciwagan/parallel.hpp"
#include "ciwagan/tensor.hpp"

namespace ciwagan {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

inline void accumulate(Node& target, std::span<const double> delta) {
  auto& g = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

// 1-D convolutions are lowered to GEMMs over [batch x length x channels]
// buffers. A "window" of position t covers input positions
// t*stride + k - offset for taps k in [0, taps); im2col gathers windows into
// rows and col2im scatters rows back. Kernels are [taps x in x out].

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

inline RowMatrix im2col(std::span<const double> x, std::size_t batch, std::size_t len, std::size_t ch,
                        std::size_t taps, std::size_t stride, std::ptrdiff_t offset,
                        std::size_t windows) {
  RowMatrix cols(static_cast<Eigen::Index>(batch * windows), static_cast<Eigen::Index>(taps * ch));
  const auto slen = static_cast<std::ptrdiff_t>(len);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xb = x.data() + b * len * ch;
    for (std::size_t t = 0; t < windows; ++t) {
      double* row = cols.data() + (b * windows + t) * taps * ch;
      const std::ptrdiff_t first = static_cast<std::ptrdiff_t>(t * stride) - offset;
      if (first >= 0 && first + static_cast<std::ptrdiff_t>(taps) <= slen) {
        std::copy_n(xb + first * static_cast<std::ptrdiff_t>(ch), taps * ch, row);
        continue;
      }
      for (std::size_t k = 0; k < taps; ++k) {
        const std::ptrdiff_t pos = first + static_cast<std::ptrdiff_t>(k);
        if (pos < 0 || pos >= slen) {
          std::fill_n(row + k * ch, ch, 0.0);
        } else {
          std::copy_n(xb + pos * static_cast<std::ptrdiff_t>(ch), ch, row + k * ch);
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: out[b, t*stride + k - offset, :] += cols[(b,t), k, :].
inline void col2im(const RowMatrix& cols, std::size_t batch, std::size_t windows, std::size_t taps,
                   std::size_t ch, std::size_t stride, std::ptrdiff_t offset, std::span<double> out,
                   std::size_t len) {
  const auto slen = static_cast<std::ptrdiff_t>(len);
  for (std::size_t b = 0; b < batch; ++b) {
    double* ob = out.data() + b * len * ch;
    for (std::size_t t = 0; t < windows; ++t) {
      const double* row = cols.data() + (b * windows + t) * taps * ch;
      const std::ptrdiff_t first = static_cast<std::ptrdiff_t>(t * stride) - offset;
      for (std::size_t k = 0; k < taps; ++k) {
        const std::ptrdiff_t pos = first + static_cast<std::ptrdiff_t>(k);
        if (pos < 0 || pos >= slen) continue;
        double* dst = ob + pos * static_cast<std::ptrdiff_t>(ch);
        const double* src = row + k * ch;
        for (std::size_t c = 0; c < ch; ++c) dst[c] += src[c];
      }
    }
  }
}

/// [taps x a x b] -> [a x taps*b]
inline RowMatrix kernel_by_input(std::span<const double> w, std::size_t taps, std::size_t a,
                                 std::size_t b) {
  RowMatrix m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(taps * b));
  for (std::size_t k = 0; k < taps; ++k)
    for (std::size_t i = 0; i < a; ++i)
      std::copy_n(w.data() + (k * a + i) * b, b, m.data() + i * taps * b + k * b);
  return m;
}

/// Inverse of kernel_by_input, accumulating into w.
inline void add_kernel_by_input(const RowMatrix& m, std::size_t taps, std::size_t a, std::size_t b,
                                std::span<double> w) {
  for (std::size_t k = 0; k < taps; ++k)
    for (std::size_t i = 0; i < a; ++i) {
      const double* src = m.data() + i * taps * b + k * b;
      double* dst = w.data() + (k * a + i) * b;
      for (std::size_t c = 0; c < b; ++c) dst[c] += src[c];
    }
}

/// out[b,t,o] = sum_k sum_i x[b, t*stride + k - pad, i] * w[k,i,o]
inline void conv_gather(std::span<const double> x, std::size_t batch, std::size_t in_len,
                        std::size_t in_ch, std::span<const double> w, std::size_t taps,
                        std::size_t out_ch, std::size_t stride, std::ptrdiff_t pad,
                        std::span<double> out, std::size_t out_len) {
  const RowMatrix cols = im2col(x, batch, in_len, in_ch, taps, stride, pad, out_len);
  ConstRowMap wm(w.data(), static_cast<Eigen::Index>(taps * in_ch), static_cast<Eigen::Index>(out_ch));
  RowMap om(out.data(), static_cast<Eigen::Index>(batch * out_len), static_cast<Eigen::Index>(out_ch));
  om.noalias() = cols * wm;
}

/// out[b, t*stride + k - crop, o] += x[b,t,i] * w[k,i,o] (out zeroed first).
inline void conv_scatter(std::span<const double> x, std::size_t batch, std::size_t in_len,
                         std::size_t in_ch, std::span<const double> w, std::size_t taps,
                         std::size_t out_ch, std::size_t stride, std::ptrdiff_t crop,
                         std::span<double> out, std::size_t out_len) {
  ConstRowMap xm(x.data(), static_cast<Eigen::Index>(batch * in_len), static_cast<Eigen::Index>(in_ch));
  const RowMatrix y = xm * kernel_by_input(w, taps, in_ch, out_ch);
  std::fill(out.begin(), out.end(), 0.0);
  col2im(y, batch, in_len, taps, out_ch, stride, crop, out, out_len);
}

/// Kernel gradient of conv_gather (transposed == false) or conv_scatter
/// (transposed == true) given the input x and the output gradient g.
inline void conv_kernel_grad(std::span<const double> x, std::size_t batch, std::size_t x_len,
                             std::size_t in_ch, std::span<const double> g, std::size_t g_len,
                             std::size_t out_ch, std::size_t taps, std::size_t stride,
                             std::ptrdiff_t offset, bool transposed, std::span<double> gw) {
  if (!transposed) {
    const RowMatrix cols = im2col(x, batch, x_len, in_ch, taps, stride, offset, g_len);
    ConstRowMap gm(g.data(), static_cast<Eigen::Index>(batch * g_len), static_cast<Eigen::Index>(out_ch));
    RowMap wm(gw.data(), static_cast<Eigen::Index>(taps * in_ch), static_cast<Eigen::Index>(out_ch));
    wm.noalias() += cols.transpose() * gm;
  } else {
    const RowMatrix gcols = im2col(g, batch, g_len, out_ch, taps, stride, offset, x_len);
    ConstRowMap xm(x.data(), static_cast<Eigen::Index>(batch * x_len), static_cast<Eigen::Index>(in_ch));
    const RowMatrix m = xm.transpose() * gcols;
    add_kernel_by_input(m, taps, in_ch, out_ch, gw);
  }
}

/// Input gradient of conv_gather.
inline void conv_gather_input_grad(std::span<const double> g, std::size_t batch, std::size_t out_len,
                                   std::size_t out_ch, std::span<const double> w, std::size_t taps,
                                   std::size_t in_ch, std::size_t stride, std::ptrdiff_t pad,
                                   std::span<double> gx, std::size_t in_len) {
  ConstRowMap gm(g.data(), static_cast<Eigen::Index>(batch * out_len), static_cast<Eigen::Index>(out_ch));
  ConstRowMap wm(w.data(), static_cast<Eigen::Index>(taps * in_ch), static_cast<Eigen::Index>(out_ch));
  const RowMatrix dcols = gm * wm.transpose();
  col2im(dcols, batch, out_len, taps, in_ch, stride, pad, gx, in_len);
}

/// Input gradient of conv_scatter.
inline void conv_scatter_input_grad(std::span<const double> g, std::size_t batch, std::size_t out_len,
                                    std::size_t out_ch, std::span<const double> w, std::size_t taps,
                                    std::size_t in_ch, std::size_t stride, std::ptrdiff_t crop,
                                    std::span<double> gx, std::size_t in_len) {
  const RowMatrix gcols = im2col(g, batch, out_len, out_ch, taps, stride, crop, in_len);
  RowMap xm(gx.data(), static_cast<Eigen::Index>(batch * in_len), static_cast<Eigen::Index>(in_ch));
  xm.noalias() += gcols * kernel_by_input(w, taps, in_ch, out_ch).transpose();
}

/// [taps x a x b] -> [taps x b x a]
inline std::vector<double> swap_kernel(std::span<const double> w, std::size_t taps,
                                       std::size_t a, std::size_t b) {
  std::vector<double> out(w.size());
  for (std::size_t k = 0; k < taps; ++k) {
    for (std::size_t i = 0; i < a; ++i) {
      for (std::size_t j = 0; j < b; ++j) out[(k * b + j) * a + i] = w[(k * a + i) * b + j];
    }
  }
  return out;
}

template <typename Fwd, typename Deriv>
Tensor elementwise(const Tensor& x, Fwd f, Deriv df) {
  std::vector<double> y(x.numel());
  auto xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xs[i]);
  Tensor xin = x;
  return make_result(x.shape(), std::move(y), {&x}, [xin, df](Node& out) mutable {
    auto& g = xin.node()->grad_buffer();
    auto xs = xin.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * df(xs[i], out.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shape plumbing

inline Tensor reshape(const Tensor& x, Shape shape) {
  detail::require(shape_numel(shape) == x.numel(),
                  "reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor xin = x;
  return detail::make_result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
                             {&x}, [xin](detail::Node& out) mutable {
                               detail::accumulate(*xin.node(), out.grad);
                             });
}

/// Columns [begin, end) of the last dimension.
inline Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t c = x.shape().back();
  detail::require(begin < end && end <= c, "slice_last [" + std::to_string(begin) + "," +
                                               std::to_string(end) + ") of " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / c;
  const std::size_t w = end - begin;
  std::vector<double> y(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < w; ++j) y[r * w + j] = x[r * c + begin + j];
  }
  Shape s = x.shape();
  s.back() = w;
  Tensor xin = x;
  return detail::make_result(std::move(s), std::move(y), {&x},
                             [xin, rows, c, w, begin](detail::Node& out) mutable {
                               auto& g = xin.node()->grad_buffer();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t j = 0; j < w; ++j)
                                   g[r * c + begin + j] += out.grad[r * w + j];
                               }
                             });
}

inline Tensor concat_last(const Tensor& a, const Tensor& b) {
  Shape sa = a.shape(), sb = b.shape();
  detail::require(sa.size() == sb.size() &&
                      std::equal(sa.begin(), sa.end() - 1, sb.begin()),
                  "concat_last " + shape_str(sa) + " with " + shape_str(sb));
  const std::size_t ca = sa.back(), cb = sb.back(), rows = a.numel() / ca;
  std::vector<double> y(rows * (ca + cb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().begin() + r * ca, ca, y.begin() + r * (ca + cb));
    std::copy_n(b.data().begin() + r * cb, cb, y.begin() + r * (ca + cb) + ca);
  }
  Shape s = sa;
  s.back() = ca + cb;
  Tensor ain = a, bin = b;
  return detail::make_result(std::move(s), std::move(y), {&a, &b},
                             [ain, bin, rows, ca, cb](detail::Node& out) mutable {
                               const std::size_t c = ca + cb;
                               if (ain.requires_grad()) {
                                 auto& g = ain.node()->grad_buffer();
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < ca; ++j) g[r * ca + j] += out.grad[r * c + j];
                               }
                               if (bin.requires_grad()) {
                                 auto& g = bin.node()->grad_buffer();
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < cb; ++j)
                                     g[r * cb + j] += out.grad[r * c + ca + j];
                               }
                             });
}

/// Repeats a vector of length n as `rows` rows: [rows x n].
inline Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  const std::size_t n = v.numel();
  std::vector<double> y(rows * n);
  for (std::size_t r = 0; r < rows; ++r) std::copy(v.data().begin(), v.data().end(), y.begin() + r * n);
  Tensor vin = v;
  return detail::make_result({rows, n}, std::move(y), {&v}, [vin, rows, n](detail::Node& out) mutable {
    auto& g = vin.node()->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) g[j] += out.grad[r * n + j];
  });
}

/// [taps x a x b] -> [taps x b x a]
inline Tensor swap_last_two(const Tensor& w) {
  detail::require(w.rank() == 3, "swap_last_two expects rank 3, got " + shape_str(w.shape()));
  const std::size_t k = w.dim(0), a = w.dim(1), b = w.dim(2);
  Tensor win = w;
  return detail::make_result({k, b, a}, detail::swap_kernel(w.data(), k, a, b), {&w},
                             [win, k, a, b](detail::Node& out) mutable {
                               detail::accumulate(*win.node(), detail::swap_kernel(out.grad, k, b, a));
                             });
}

// ---------------------------------------------------------------------------
// Arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "add " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
  Tensor ain = a, bin = b;
  return detail::make_result(a.shape(), std::move(y), {&a, &b}, [ain, bin](detail::Node& out) mutable {
    if (ain.requires_grad()) detail::accumulate(*ain.node(), out.grad);
    if (bin.requires_grad()) detail::accumulate(*bin.node(), out.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "sub " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] - b[i];
  Tensor ain = a, bin = b;
  return detail::make_result(a.shape(), std::move(y), {&a, &b}, [ain, bin](detail::Node& out) mutable {
    if (ain.requires_grad()) detail::accumulate(*ain.node(), out.grad);
    if (bin.requires_grad()) {
      auto& g = bin.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require(a.shape() == b.shape(), "mul " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a[i] * b[i];
  Tensor ain = a, bin = b;
  return detail::make_result(a.shape(), std::move(y), {&a, &b}, [ain, bin](detail::Node& out) mutable {
    if (ain.requires_grad()) {
      auto& g = ain.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * bin[i];
    }
    if (bin.requires_grad()) {
      auto& g = bin.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * ain[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double factor) {
  std::vector<double> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = factor * x[i];
  Tensor xin = x;
  return detail::make_result(x.shape(), std::move(y), {&x}, [xin, factor](detail::Node& out) mutable {
    auto& g = xin.node()->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * out.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  std::vector<double> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[i] + c;
  Tensor xin = x;
  return detail::make_result(x.shape(), std::move(y), {&x}, [xin](detail::Node& out) mutable {
    detail::accumulate(*xin.node(), out.grad);
  });
}

inline Tensor square(const Tensor& x) {
  return detail::elementwise(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

/// Square root with derivative taken as 0 at 0.
inline Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw std::domain_error("sqrt of negative value");
  }
  return detail::elementwise(
      x, [](double v) { return std::sqrt(v); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

/// Adds b[C] to every row of x[..., C].
inline Tensor add_bias(const Tensor& x, const Tensor& b) {
  const std::size_t c = x.shape().back();
  detail::require(b.numel() == c, "add_bias: bias " + shape_str(b.shape()) + " vs input " +
                                      shape_str(x.shape()));
  const std::size_t rows = x.numel() / c;
  std::vector<double> y(x.data().begin(), x.data().end());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) y[r * c + j] += b[j];
  Tensor xin = x, bin = b;
  return detail::make_result(x.shape(), std::move(y), {&x, &b},
                             [xin, bin, rows, c](detail::Node& out) mutable {
                               if (xin.requires_grad()) detail::accumulate(*xin.node(), out.grad);
                               if (bin.requires_grad()) {
                                 auto& g = bin.node()->grad_buffer();
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t j = 0; j < c; ++j) g[j] += out.grad[r * c + j];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor xin = x;
  return detail::make_result({1}, {s}, {&x}, [xin](detail::Node& out) mutable {
    auto& g = xin.node()->grad_buffer();
    for (auto& v : g) v += out.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Sums every dimension except the first: [B x ...] -> [B].
inline Tensor sum_per_item(const Tensor& x) {
  const std::size_t b = x.dim(0), n = x.numel() / b;
  std::vector<double> y(b, 0.0);
  for (std::size_t r = 0; r < b; ++r)
    for (std::size_t j = 0; j < n; ++j) y[r] += x[r * n + j];
  Tensor xin = x;
  return detail::make_result({b}, std::move(y), {&x}, [xin, b, n](detail::Node& out) mutable {
    auto& g = xin.node()->grad_buffer();
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += out.grad[r];
  });
}

// ---------------------------------------------------------------------------
// Activations

/// Sign pattern of every piecewise-linear activation. While a recording
/// scope is active each activation appends its mask; while a replaying scope
/// is active activations reuse the recorded masks in call order, so repeated
/// evaluations stay on one linear piece.
class ActivationPattern {
 public:
  enum class Mode { kRecord, kReplay };

  class Scope {
   public:
    Scope(ActivationPattern& p, Mode mode) : saved_(current()) {
      p.mode_ = mode;
      if (mode == Mode::kRecord) p.masks_.clear();
      p.cursor_ = 0;
      current() = &p;
    }
    ~Scope() { current() = saved_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    ActivationPattern* saved_;
  };

  /// mask[i] = 1 where v[i] > 0, recorded or replayed per the active scope.
  static std::vector<char> positive(std::span<const double> v) {
    ActivationPattern* p = current();
    if (p && p->mode_ == Mode::kReplay) {
      if (p->cursor_ >= p->masks_.size() || p->masks_[p->cursor_].size() != v.size()) {
        throw std::logic_error("activation pattern replay does not match the recorded evaluation");
      }
      return p->masks_[p->cursor_++];
    }
    std::vector<char> m(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] > 0.0;
    if (p) p->masks_.push_back(m);
    return m;
  }

  std::size_t size() const { return masks_.size(); }
  void rewind() { cursor_ = 0; }

 private:
  static ActivationPattern*& current() {
    thread_local ActivationPattern* p = nullptr;
    return p;
  }

  Mode mode_ = Mode::kRecord;
  std::vector<std::vector<char>> masks_;
  std::size_t cursor_ = 0;
};

/// y = x where positive, alpha * x elsewhere; relu is alpha = 0.
inline Tensor leaky_relu(const Tensor& x, double alpha) {
  auto mask = std::make_shared<std::vector<char>>(ActivationPattern::positive(x.data()));
  std::vector<double> y(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = (*mask)[i] ? xv[i] : alpha * xv[i];
  Tensor xin = x;
  return detail::make_result(x.shape(), std::move(y), {&x}, [xin, mask, alpha](detail::Node& out) mutable {
    auto& g = xin.node()->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*mask)[i] ? out.grad[i] : alpha * out.grad[i];
  });
}

inline Tensor relu(const Tensor& x) { return leaky_relu(x, 0.0); }

inline Tensor tanh(const Tensor& x) {
  return detail::elementwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::elementwise(
      x, [](double v) { return sigmoid(v); }, [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// Layers

/// y = x W + b for x[batch x in], W[in x out], b[out].
inline Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  detail::require(x.rank() == 2 && w.rank() == 2 && x.dim(1) == w.dim(0) && b.numel() == w.dim(1),
                  "dense: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()) +
                      ", bias " + shape_str(b.shape()));
  using detail::ConstRowMap;
  using detail::RowMap;
  const auto rows = static_cast<Eigen::Index>(x.dim(0));
  const auto in = static_cast<Eigen::Index>(w.dim(0));
  const auto outc = static_cast<Eigen::Index>(w.dim(1));
  std::vector<double> y(static_cast<std::size_t>(rows * outc));
  RowMap ym(y.data(), rows, outc);
  ym.noalias() = ConstRowMap(x.data().data(), rows, in) * ConstRowMap(w.data().data(), in, outc);
  ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data().data(), outc);
  Tensor xin = x, win = w, bin = b;
  return detail::make_result(
      {x.dim(0), w.dim(1)}, std::move(y), {&x, &w, &b},
      [xin, win, bin, rows, in, outc](detail::Node& out) mutable {
        ConstRowMap gy(out.grad.data(), rows, outc);
        if (xin.requires_grad()) {
          RowMap gx(xin.node()->grad_buffer().data(), rows, in);
          gx.noalias() += gy * ConstRowMap(win.data().data(), in, outc).transpose();
        }
        if (win.requires_grad()) {
          RowMap gw(win.node()->grad_buffer().data(), in, outc);
          gw.noalias() += ConstRowMap(xin.data().data(), rows, in).transpose() * gy;
        }
        if (bin.requires_grad()) {
          Eigen::Map<Eigen::RowVectorXd> gb(bin.node()->grad_buffer().data(), outc);
          gb += gy.colwise().sum();
        }
      });
}

/// Convolution with explicit geometry: output position t reads input
/// positions t*stride + k - pad (zeros outside [0, in_len)).
inline Tensor conv1d_padded(const Tensor& x, const Tensor& kernel, std::size_t stride,
                            std::ptrdiff_t pad, std::size_t out_len) {
  detail::require(x.rank() == 3 && kernel.rank() == 3 && x.dim(2) == kernel.dim(1),
                  "conv1d: input " + shape_str(x.shape()) + " vs kernel " + shape_str(kernel.shape()));
  detail::require(stride > 0, "conv1d: stride must be positive");
  const std::size_t batch = x.dim(0), in_len = x.dim(1), in_ch = x.dim(2);
  const std::size_t taps = kernel.dim(0), out_ch = kernel.dim(2);
  std::vector<double> y(batch * out_len * out_ch);
  detail::conv_gather(x.data(), batch, in_len, in_ch, kernel.data(), taps, out_ch, stride, pad, y,
                      out_len);
  Tensor xin = x, kin = kernel;
  return detail::make_result(
      {batch, out_len, out_ch}, std::move(y), {&x, &kernel},
      [=](detail::Node& out) mutable {
        if (xin.requires_grad()) {
          detail::conv_gather_input_grad(out.grad, batch, out_len, out_ch, kin.data(), taps, in_ch,
                                         stride, pad, xin.node()->grad_buffer(), in_len);
        }
        if (kin.requires_grad()) {
          detail::conv_kernel_grad(xin.data(), batch, in_len, in_ch, out.grad, out_len, out_ch, taps,
                                   stride, pad, false, kin.node()->grad_buffer());
        }
      });
}

/// Transposed convolution with explicit geometry: input position t adds into
/// output positions t*stride + k - crop (dropped outside [0, out_len)).
inline Tensor conv1d_transpose_cropped(const Tensor& x, const Tensor& kernel, std::size_t stride,
                                       std::ptrdiff_t crop, std::size_t out_len) {
  detail::require(x.rank() == 3 && kernel.rank() == 3 && x.dim(2) == kernel.dim(1),
                  "conv1d_transpose: input " + shape_str(x.shape()) + " vs kernel " +
                      shape_str(kernel.shape()));
  detail::require(stride > 0, "conv1d_transpose: stride must be positive");
  const std::size_t batch = x.dim(0), in_len = x.dim(1), in_ch = x.dim(2);
  const std::size_t taps = kernel.dim(0), out_ch = kernel.dim(2);
  std::vector<double> y(batch * out_len * out_ch);
  detail::conv_scatter(x.data(), batch, in_len, in_ch, kernel.data(), taps, out_ch, stride, crop, y,
                       out_len);
  Tensor xin = x, kin = kernel;
  return detail::make_result(
      {batch, out_len, out_ch}, std::move(y), {&x, &kernel},
      [=](detail::Node& out) mutable {
        if (xin.requires_grad()) {
          detail::conv_scatter_input_grad(out.grad, batch, out_len, out_ch, kin.data(), taps, in_ch,
                                          stride, crop, xin.node()->grad_buffer(), in_len);
        }
        if (kin.requires_grad()) {
          detail::conv_kernel_grad(xin.data(), batch, in_len, in_ch, out.grad, out_len, out_ch, taps,
                                   stride, crop, true, kin.node()->grad_buffer());
        }
      });
}

/// Left padding of the "same / stride" convolution: total padding
/// (taps - stride), the odd sample going to the right.
inline std::ptrdiff_t conv_left_pad(std::size_t taps, std::size_t stride) {
  return static_cast<std::ptrdiff_t>((taps - stride) / 2);
}

/// Strided convolution x[batch x len x in] * kernel[taps x in x out] ->
/// [batch x len/stride x out].
inline Tensor conv1d(const Tensor& x, const Tensor& kernel, std::size_t stride) {
  detail::require(stride > 0, "conv1d: stride must be positive");
  detail::require(kernel.rank() == 3 && kernel.dim(0) >= stride,
                  "conv1d: kernel " + shape_str(kernel.shape()) + " shorter than stride " +
                      std::to_string(stride));
  detail::require(x.rank() == 3 && x.dim(1) % stride == 0,
                  "conv1d: input " + shape_str(x.shape()) + " length not divisible by stride " +
                      std::to_string(stride));
  return conv1d_padded(x, kernel, stride, conv_left_pad(kernel.dim(0), stride), x.dim(1) / stride);
}

/// Transposed convolution [batch x len x in] -> [batch x len*stride x out];
/// the trailing (taps - stride) samples of the full scatter are cropped.
inline Tensor conv1d_transpose(const Tensor& x, const Tensor& kernel, std::size_t stride) {
  detail::require(stride > 0, "conv1d_transpose: stride must be positive");
  detail::require(kernel.rank() == 3 && kernel.dim(0) >= stride,
                  "conv1d_transpose: kernel " + shape_str(kernel.shape()) +
                      " shorter than stride " + std::to_string(stride));
  detail::require(x.rank() == 3, "conv1d_transpose: input " + shape_str(x.shape()));
  return conv1d_transpose_cropped(x, kernel, stride, 0, x.dim(1) * stride);
}

// ---------------------------------------------------------------------------
// Losses

/// Mean over rows of -log softmax(logits)[target].
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
  detail::require(logits.rank() == 2 && logits.dim(0) == targets.size(),
                  "softmax_cross_entropy: logits " + shape_str(logits.shape()) + " with " +
                      std::to_string(targets.size()) + " targets");
  const std::size_t rows = logits.dim(0), k = logits.dim(1);
  std::vector<double> probs(rows * k);
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw std::out_of_range("softmax_cross_entropy: class " + std::to_string(t) +
                              " outside [0, " + std::to_string(k) + ")");
    }
    const double* l = logits.data().data() + r * k;
    const double m = *std::max_element(l, l + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(l[j] - m);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(l[j] - m) / z;
    total += (m + std::log(z)) - l[t];
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  Tensor lin = logits;
  return detail::make_result({1}, {total / static_cast<double>(rows)}, {&logits},
                             [lin, probs = std::move(probs), tgt, rows, k](detail::Node& out) mutable {
                               auto& g = lin.node()->grad_buffer();
                               const double s = out.grad[0] / static_cast<double>(rows);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t j = 0; j < k; ++j) {
                                   const double ind = static_cast<int>(j) == tgt[r] ? 1.0 : 0.0;
                                   g[r * k + j] += s * (probs[r * k + j] - ind);
                                 }
                               }
                             });
}

}  // namespace ciwagan
