#pragma once

#include <algorithm>
#include <vector>

#include "filmens/gemm.hpp"
#include "filmens/parallel.hpp"
#include "filmens/tensor.hpp"

namespace filmens {

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   std::size_t pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Valid output range [lo, hi) along one axis for kernel offset k:
// indices o with 0 <= o*stride - pad + k < in_extent.
inline void conv_out_range(std::size_t out_extent, std::size_t in_extent, std::size_t stride,
                           std::size_t pad, std::size_t k, std::size_t& lo, std::size_t& hi) {
  lo = (k < pad) ? (pad - k + stride - 1) / stride : 0;
  if (in_extent + pad <= k) {
    hi = lo;
    return;
  }
  hi = std::min(out_extent, (in_extent + pad - k - 1) / stride + 1);
  if (hi < lo) hi = lo;
}

/// Lowers one sample to a (cin*kh*kw) x (oh*ow) patch matrix.
template <typename S>
void im2col_2d(const S* x, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
               std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh,
               std::size_t ow, S* col) {
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t c = 0; c < kw; ++c, ++row) {
        S* dst0 = col + row * oh * ow;
        std::size_t lo, hi;
        conv_out_range(ow, w, stride, pad, c, lo, hi);
        for (std::size_t i = 0; i < oh; ++i) {
          S* __restrict dst = dst0 + i * ow;
          const long ih = static_cast<long>(i * stride + a) - static_cast<long>(pad);
          if (ih < 0 || ih >= static_cast<long>(h)) {
            std::fill(dst, dst + ow, S(0));
            continue;
          }
          const S* __restrict src = x + (ci * h + static_cast<std::size_t>(ih)) * w;
          std::fill(dst, dst + lo, S(0));
          if (stride == 1) {
            const S* s = src + lo + c - pad;
            std::copy(s, s + (hi - lo), dst + lo);
          } else {
            for (std::size_t j = lo; j < hi; ++j) dst[j] = src[j * stride + c - pad];
          }
          std::fill(dst + hi, dst + ow, S(0));
        }
      }
}

/// Scatter-adds a patch-matrix gradient back onto the input sample.
template <typename S>
void col2im_2d_add(const S* col, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh,
                   std::size_t kw, std::size_t stride, std::size_t pad, std::size_t oh,
                   std::size_t ow, S* dx) {
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t a = 0; a < kh; ++a)
      for (std::size_t c = 0; c < kw; ++c, ++row) {
        const S* src0 = col + row * oh * ow;
        std::size_t lo, hi;
        conv_out_range(ow, w, stride, pad, c, lo, hi);
        for (std::size_t i = 0; i < oh; ++i) {
          const long ih = static_cast<long>(i * stride + a) - static_cast<long>(pad);
          if (ih < 0 || ih >= static_cast<long>(h)) continue;
          const S* __restrict src = src0 + i * ow;
          S* __restrict dst = dx + (ci * h + static_cast<std::size_t>(ih)) * w;
          if (stride == 1) {
            S* d = dst + lo + c - pad;
            for (std::size_t j = lo; j < hi; ++j) d[j - lo] += src[j];
          } else {
            for (std::size_t j = lo; j < hi; ++j) dst[j * stride + c - pad] += src[j];
          }
        }
      }
}

template <typename S>
void im2col_1d(const S* x, std::size_t cin, std::size_t len, std::size_t kl, std::size_t stride,
               std::size_t pad, std::size_t ol, S* col) {
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t c = 0; c < kl; ++c, ++row) {
      S* __restrict dst = col + row * ol;
      std::size_t lo, hi;
      conv_out_range(ol, len, stride, pad, c, lo, hi);
      const S* __restrict src = x + ci * len;
      std::fill(dst, dst + lo, S(0));
      if (stride == 1) {
        const S* s = src + lo + c - pad;
        std::copy(s, s + (hi - lo), dst + lo);
      } else {
        for (std::size_t j = lo; j < hi; ++j) dst[j] = src[j * stride + c - pad];
      }
      std::fill(dst + hi, dst + ol, S(0));
    }
}

template <typename S>
void col2im_1d_add(const S* col, std::size_t cin, std::size_t len, std::size_t kl,
                   std::size_t stride, std::size_t pad, std::size_t ol, S* dx) {
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (std::size_t c = 0; c < kl; ++c, ++row) {
      const S* __restrict src = col + row * ol;
      std::size_t lo, hi;
      conv_out_range(ol, len, stride, pad, c, lo, hi);
      S* __restrict dst = dx + ci * len;
      if (stride == 1) {
        S* d = dst + lo + c - pad;
        for (std::size_t j = lo; j < hi; ++j) d[j - lo] += src[j];
      } else {
        for (std::size_t j = lo; j < hi; ++j) dst[j * stride + c - pad] += src[j];
      }
    }
}

template <typename S>
std::vector<S> transpose(const S* a, std::size_t rows, std::size_t cols) {
  std::vector<S> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

/// Shared forward/backward for the 1-d and 2-d convolutions once shapes are
/// reduced to (channels, kernel-positions, output-positions).  Forward and
/// backward-data parallelize over samples; backward-weight accumulates
/// per-chunk partials reduced in fixed order.
template <typename S>
struct ConvPlan {
  std::size_t bsz, cin, cout, kdim, npos;  // kdim = cin*prod(kernel), npos = prod(out spatial)
  std::size_t in_sample, out_sample;       // elements per sample

  // geometry-specific lowering hooks
  virtual void lower(const S* x_sample, S* col) const = 0;
  virtual void scatter(const S* col, S* dx_sample) const = 0;
  virtual ~ConvPlan() = default;

  void forward(const S* x, const S* w, const S* bias, S* out) const {
    parallel_chunks(bsz, [&, x, w, bias, out](std::size_t blo, std::size_t bhi) {
      std::vector<S> col(kdim * npos);
      for (std::size_t b = blo; b < bhi; ++b) {
        lower(x + b * in_sample, col.data());
        S* ob = out + b * out_sample;
        if (bias) {
          for (std::size_t co = 0; co < cout; ++co)
            std::fill(ob + co * npos, ob + (co + 1) * npos, bias[co]);
        }
        detail::gemm_nn(cout, npos, kdim, w, col.data(), ob);
      }
    });
  }

  void backward_data(const S* g, const S* w, S* gx) const {
    const std::vector<S> wt = transpose(w, cout, kdim);
    parallel_chunks(bsz, [&, g, gx](std::size_t blo, std::size_t bhi) {
      std::vector<S> dcol(kdim * npos);
      for (std::size_t b = blo; b < bhi; ++b) {
        std::fill(dcol.begin(), dcol.end(), S(0));
        detail::gemm_nn(kdim, npos, cout, wt.data(), g + b * out_sample, dcol.data());
        scatter(dcol.data(), gx + b * in_sample);
      }
    });
  }

  void backward_weight(const S* g, const S* x, S* gw) const {
    const std::size_t chunks = std::min<std::size_t>(kReduceChunks, bsz);
    std::vector<std::vector<S>> partial(chunks, std::vector<S>(cout * kdim, S(0)));
    parallel_for(chunks, [&, g, x](std::size_t ck) {
      std::vector<S> col(kdim * npos), colt(npos * kdim);
      S* part = partial[ck].data();
      const std::size_t blo = bsz * ck / chunks, bhi = bsz * (ck + 1) / chunks;
      for (std::size_t b = blo; b < bhi; ++b) {
        lower(x + b * in_sample, col.data());
        detail::transpose_into(col.data(), kdim, npos, colt.data());
        detail::gemm_nn(cout, kdim, npos, g + b * out_sample, colt.data(), part);
      }
    });
    for (std::size_t ck = 0; ck < chunks; ++ck)
      for (std::size_t i = 0; i < cout * kdim; ++i) gw[i] += partial[ck][i];
  }

  void backward_bias(const S* g, S* gbias) const {
    for (std::size_t b = 0; b < bsz; ++b)
      for (std::size_t co = 0; co < cout; ++co) {
        const S* grow = g + b * out_sample + co * npos;
        S acc = S(0);
        for (std::size_t i = 0; i < npos; ++i) acc += grow[i];
        gbias[co] += acc;
      }
  }
};

template <typename S>
struct Conv2dPlan final : ConvPlan<S> {
  std::size_t h, w, kh, kw, oh, ow, stride, pad;
  void lower(const S* x_sample, S* col) const override {
    im2col_2d(x_sample, this->cin, h, w, kh, kw, stride, pad, oh, ow, col);
  }
  void scatter(const S* col, S* dx_sample) const override {
    col2im_2d_add(col, this->cin, h, w, kh, kw, stride, pad, oh, ow, dx_sample);
  }
};

template <typename S>
struct Conv1dPlan final : ConvPlan<S> {
  std::size_t len, kl, ol, stride, pad;
  void lower(const S* x_sample, S* col) const override {
    im2col_1d(x_sample, this->cin, len, kl, stride, pad, ol, col);
  }
  void scatter(const S* col, S* dx_sample) const override {
    col2im_1d_add(col, this->cin, len, kl, stride, pad, ol, dx_sample);
  }
};

}  // namespace detail

/// 2-d cross-correlation.  input BxCinxHxW against kernel CoutxCinxkHxkW,
/// optional bias[Cout]; H' = floor((H+2p-kH)/stride)+1 and likewise for W'.
/// Lowered to im2col + GEMM per sample.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                 std::size_t stride, std::size_t pad, Tape<S>* tape = nullptr) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError("conv2d: need BxCinxHxW input and CoutxCinxkHxkW kernel, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (stride == 0) throw ValueError("conv2d: stride must be positive");
  const std::size_t bsz = x.extent(0), cin = x.extent(1), h = x.extent(2), wd = x.extent(3);
  const std::size_t cout = w.extent(0), kh = w.extent(2), kw = w.extent(3);
  if (w.extent(1) != cin)
    throw ShapeError("conv2d: kernel expects " + std::to_string(w.extent(1)) +
                     " input channels, input has " + std::to_string(cin));
  if (h + 2 * pad < kh || wd + 2 * pad < kw)
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()) + " with pad " + std::to_string(pad));
  const std::size_t oh = detail::conv_out_extent(h, kh, stride, pad);
  const std::size_t ow = detail::conv_out_extent(wd, kw, stride, pad);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.extent(0) != cout))
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " for " +
                     std::to_string(cout) + " output channels");

  auto plan = std::make_shared<detail::Conv2dPlan<S>>();
  plan->bsz = bsz;
  plan->cin = cin;
  plan->cout = cout;
  plan->kdim = cin * kh * kw;
  plan->npos = oh * ow;
  plan->in_sample = cin * h * wd;
  plan->out_sample = cout * oh * ow;
  plan->h = h;
  plan->w = wd;
  plan->kh = kh;
  plan->kw = kw;
  plan->oh = oh;
  plan->ow = ow;
  plan->stride = stride;
  plan->pad = pad;

  Tensor<S> out({bsz, cout, oh, ow});
  plan->forward(x.data(), w.data(), has_bias ? bias.data() : nullptr, out.data());

  const bool trace = has_bias ? detail::tracing(tape, x, w, bias) : detail::tracing(tape, x, w);
  if (trace) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, win = w, bin = bias, o = out;
    tape->record([xin, win, bin, o, plan]() mutable {
      const S* g = o.grad();
      if (xin.requires_grad()) plan->backward_data(g, win.data(), xin.grad());
      if (win.requires_grad()) plan->backward_weight(g, xin.data(), win.grad());
      if (bin.defined() && bin.requires_grad()) plan->backward_bias(g, bin.grad());
    });
  }
  return out;
}

/// 1-d cross-correlation, BxCinxL against CoutxCinxk; same lowering.
template <typename S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                 std::size_t stride, std::size_t pad, Tape<S>* tape = nullptr) {
  if (x.ndim() != 3 || w.ndim() != 3)
    throw ShapeError("conv1d: need BxCinxL input and CoutxCinxk kernel, got " +
                     shape_str(x.shape()) + " and " + shape_str(w.shape()));
  if (stride == 0) throw ValueError("conv1d: stride must be positive");
  const std::size_t bsz = x.extent(0), cin = x.extent(1), len = x.extent(2);
  const std::size_t cout = w.extent(0), kl = w.extent(2);
  if (w.extent(1) != cin)
    throw ShapeError("conv1d: kernel expects " + std::to_string(w.extent(1)) +
                     " input channels, input has " + std::to_string(cin));
  if (len + 2 * pad < kl)
    throw ShapeError("conv1d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()) + " with pad " + std::to_string(pad));
  const std::size_t ol = detail::conv_out_extent(len, kl, stride, pad);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.extent(0) != cout))
    throw ShapeError("conv1d: bias shape " + shape_str(bias.shape()) + " for " +
                     std::to_string(cout) + " output channels");

  auto plan = std::make_shared<detail::Conv1dPlan<S>>();
  plan->bsz = bsz;
  plan->cin = cin;
  plan->cout = cout;
  plan->kdim = cin * kl;
  plan->npos = ol;
  plan->in_sample = cin * len;
  plan->out_sample = cout * ol;
  plan->len = len;
  plan->kl = kl;
  plan->ol = ol;
  plan->stride = stride;
  plan->pad = pad;

  Tensor<S> out({bsz, cout, ol});
  plan->forward(x.data(), w.data(), has_bias ? bias.data() : nullptr, out.data());

  const bool trace = has_bias ? detail::tracing(tape, x, w, bias) : detail::tracing(tape, x, w);
  if (trace) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, win = w, bin = bias, o = out;
    tape->record([xin, win, bin, o, plan]() mutable {
      const S* g = o.grad();
      if (xin.requires_grad()) plan->backward_data(g, win.data(), xin.grad());
      if (win.requires_grad()) plan->backward_weight(g, xin.data(), win.grad());
      if (bin.defined() && bin.requires_grad()) plan->backward_bias(g, bin.grad());
    });
  }
  return out;
}

}  // namespace filmens
