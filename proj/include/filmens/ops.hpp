#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "filmens/parallel.hpp"
#include "filmens/rng.hpp"
#include "filmens/tensor.hpp"

namespace filmens {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> out(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  if (detail::tracing(tape, a, b)) {
    out.set_requires_grad(true);
    Tensor<S> ain = a, bin = b, o = out;
    tape->record([ain, bin, o]() mutable {
      const S* g = o.grad();
      if (ain.requires_grad()) {
        S* ga = ain.grad();
        for (std::size_t i = 0; i < o.size(); ++i) ga[i] += g[i];
      }
      if (bin.requires_grad()) {
        S* gb = bin.grad();
        for (std::size_t i = 0; i < o.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
  if (detail::tracing(tape, a, b)) {
    out.set_requires_grad(true);
    Tensor<S> ain = a, bin = b, o = out;
    tape->record([ain, bin, o]() mutable {
      const S* g = o.grad();
      if (ain.requires_grad()) {
        S* ga = ain.grad();
        const S* pb2 = bin.data();
        for (std::size_t i = 0; i < o.size(); ++i) ga[i] += g[i] * pb2[i];
      }
      if (bin.requires_grad()) {
        S* gb = bin.grad();
        const S* pa2 = ain.data();
        for (std::size_t i = 0; i < o.size(); ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor, Tape<S>* tape = nullptr) {
  Tensor<S> out(a.shape());
  const S* pa = a.data();
  S* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * factor;
  if (detail::tracing(tape, a)) {
    out.set_requires_grad(true);
    Tensor<S> ain = a, o = out;
    tape->record([ain, o, factor]() mutable {
      const S* g = o.grad();
      S* ga = ain.grad();
      for (std::size_t i = 0; i < o.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a, Tape<S>* tape = nullptr) {
  S acc = S(0);
  const S* pa = a.data();
  for (std::size_t i = 0; i < a.size(); ++i) acc += pa[i];
  Tensor<S> out = Tensor<S>::scalar(acc);
  if (detail::tracing(tape, a)) {
    out.set_requires_grad(true);
    Tensor<S> ain = a, o = out;
    tape->record([ain, o]() mutable {
      const S g = o.grad()[0];
      S* ga = ain.grad();
      for (std::size_t i = 0; i < ain.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a, Tape<S>* tape = nullptr) {
  Tensor<S> s = sum(a, tape);
  return scale(s, S(1) / static_cast<S>(a.size()), tape);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape, Tape<S>* tape = nullptr) {
  if (shape_numel(new_shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(new_shape));
  Tensor<S> out = Tensor<S>::from_data(std::move(new_shape), a.vec());
  if (detail::tracing(tape, a)) {
    out.set_requires_grad(true);
    Tensor<S> ain = a, o = out;
    tape->record([ain, o]() mutable {
      const S* g = o.grad();
      S* ga = ain.grad();
      for (std::size_t i = 0; i < ain.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// C[m x n] = A[m x k] * B[k x n].
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.extent(1) != b.extent(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor<S> out({m, n});
  {
    const S* pa = a.data();
    const S* pb = b.data();
    S* po = out.data();
    parallel_for(m, [=](std::size_t i) {
      S* __restrict crow = po + i * n;
      for (std::size_t l = 0; l < k; ++l) {
        const S av = pa[i * k + l];
        const S* __restrict brow = pb + l * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    });
  }
  if (detail::tracing(tape, a, b)) {
    out.set_requires_grad(true);
    Tensor<S> ain = a, bin = b, o = out;
    tape->record([ain, bin, o, m, k, n]() mutable {
      const S* g = o.grad();
      if (ain.requires_grad()) {
        S* ga = ain.grad();
        const S* pb = bin.data();
        parallel_for(m, [=](std::size_t i) {
          for (std::size_t l = 0; l < k; ++l) {
            const S* __restrict grow = g + i * n;
            const S* __restrict brow = pb + l * n;
            S acc = S(0);
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + l] += acc;
          }
        });
      }
      if (bin.requires_grad()) {
        S* gb = bin.grad();
        const S* pa = ain.data();
        parallel_for(k, [=](std::size_t l) {
          S* __restrict gbrow = gb + l * n;
          for (std::size_t i = 0; i < m; ++i) {
            const S av = pa[i * k + l];
            const S* __restrict grow = g + i * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        });
      }
    });
  }
  return out;
}

/// out[b, o] = dot(x[b, :], w[o, :]) + bias[o].  Weight layout is
/// out_features x in_features; bias may be an undefined tensor.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias,
                 Tape<S>* tape = nullptr) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.extent(1) != w.extent(1))
    throw ShapeError("linear: incompatible shapes " + shape_str(x.shape()) + " and " +
                     shape_str(w.shape()));
  const std::size_t batch = x.extent(0), in = x.extent(1), outf = w.extent(0);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.ndim() != 1 || bias.extent(0) != outf))
    throw ShapeError("linear: bias shape " + shape_str(bias.shape()) + " for " +
                     std::to_string(outf) + " outputs");
  Tensor<S> out({batch, outf});
  {
    const S* px = x.data();
    const S* pw = w.data();
    const S* pbias = has_bias ? bias.data() : nullptr;
    S* po = out.data();
    parallel_for(batch, [=](std::size_t b) {
      const S* __restrict xrow = px + b * in;
      S* __restrict orow = po + b * outf;
      for (std::size_t o = 0; o < outf; ++o) {
        const S* __restrict wrow = pw + o * in;
        S acc = pbias ? pbias[o] : S(0);
        for (std::size_t i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
        orow[o] = acc;
      }
    });
  }
  const bool trace = has_bias ? detail::tracing(tape, x, w, bias) : detail::tracing(tape, x, w);
  if (trace) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, win = w, bin = bias, o = out;
    tape->record([xin, win, bin, o, batch, in, outf]() mutable {
      const S* g = o.grad();
      if (xin.requires_grad()) {
        S* gx = xin.grad();
        const S* pw = win.data();
        parallel_for(batch, [=](std::size_t b) {
          const S* __restrict grow = g + b * outf;
          S* __restrict gxrow = gx + b * in;
          for (std::size_t ofs = 0; ofs < outf; ++ofs) {
            const S gv = grow[ofs];
            const S* __restrict wrow = pw + ofs * in;
            for (std::size_t i = 0; i < in; ++i) gxrow[i] += gv * wrow[i];
          }
        });
      }
      if (win.requires_grad()) {
        // batch-chunked partials, reduced in fixed order
        const std::size_t chunks = std::min<std::size_t>(kReduceChunks, batch);
        std::vector<std::vector<S>> partial(chunks, std::vector<S>(outf * in, S(0)));
        const S* px = xin.data();
        parallel_for(chunks, [&, px, g](std::size_t c) {
          S* part = partial[c].data();
          const std::size_t lo = batch * c / chunks, hi = batch * (c + 1) / chunks;
          for (std::size_t b = lo; b < hi; ++b) {
            const S* __restrict grow = g + b * outf;
            const S* __restrict xrow = px + b * in;
            for (std::size_t ofs = 0; ofs < outf; ++ofs) {
              const S gv = grow[ofs];
              S* __restrict prow = part + ofs * in;
              for (std::size_t i = 0; i < in; ++i) prow[i] += gv * xrow[i];
            }
          }
        });
        S* gw = win.grad();
        for (std::size_t c = 0; c < chunks; ++c)
          for (std::size_t i = 0; i < outf * in; ++i) gw[i] += partial[c][i];
      }
      if (bin.defined() && bin.requires_grad()) {
        S* gb = bin.grad();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t ofs = 0; ofs < outf; ++ofs) gb[ofs] += g[b * outf + ofs];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations, dropout, loss
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  Tensor<S> out(x.shape());
  const S* px = x.data();
  S* po = out.data();
  parallel_chunks(x.size(), [=](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) po[i] = px[i] > S(0) ? px[i] : S(0);
  });
  if (detail::tracing(tape, x)) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, o = out;
    tape->record([xin, o]() mutable {
      const S* g = o.grad();
      const S* pxx = xin.data();
      S* gx = xin.grad();
      parallel_chunks(xin.size(), [=](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
          if (pxx[i] > S(0)) gx[i] += g[i];
      });
    });
  }
  return out;
}

/// Row-wise log-softmax over the last dim of a 2-d tensor, stabilized by
/// subtracting the row max.
template <typename S>
Tensor<S> log_softmax(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  if (x.ndim() != 2) throw ShapeError("log_softmax: need 2-d input, got " + shape_str(x.shape()));
  const std::size_t rows = x.extent(0), k = x.extent(1);
  Tensor<S> out(x.shape());
  {
    const S* px = x.data();
    S* po = out.data();
    parallel_for(rows, [=](std::size_t r) {
      const S* xrow = px + r * k;
      S* orow = po + r * k;
      S mx = xrow[0];
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xrow[j]);
      S acc = S(0);
      for (std::size_t j = 0; j < k; ++j) acc += std::exp(xrow[j] - mx);
      const S lse = mx + std::log(acc);
      for (std::size_t j = 0; j < k; ++j) orow[j] = xrow[j] - lse;
    });
  }
  if (detail::tracing(tape, x)) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, o = out;
    tape->record([xin, o, rows, k]() mutable {
      const S* g = o.grad();
      const S* po = o.data();
      S* gx = xin.grad();
      parallel_for(rows, [=](std::size_t r) {
        const S* grow = g + r * k;
        const S* orow = po + r * k;
        S gsum = S(0);
        for (std::size_t j = 0; j < k; ++j) gsum += grow[j];
        S* gxrow = gx + r * k;
        for (std::size_t j = 0; j < k; ++j) gxrow[j] += grow[j] - std::exp(orow[j]) * gsum;
      });
    });
  }
  return out;
}

/// Plain softmax, inference only (never recorded on a tape).
template <typename S>
Tensor<S> softmax(const Tensor<S>& x) {
  if (x.ndim() != 2) throw ShapeError("softmax: need 2-d input, got " + shape_str(x.shape()));
  const std::size_t rows = x.extent(0), k = x.extent(1);
  Tensor<S> out(x.shape());
  const S* px = x.data();
  S* po = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xrow = px + r * k;
    S* orow = po + r * k;
    S mx = xrow[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xrow[j]);
    S acc = S(0);
    for (std::size_t j = 0; j < k; ++j) {
      orow[j] = std::exp(xrow[j] - mx);
      acc += orow[j];
    }
    for (std::size_t j = 0; j < k; ++j) orow[j] /= acc;
  }
  return out;
}

/// Inverted dropout.  Train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1-rate); eval mode is the identity.  The mask
/// is drawn sequentially from `rng` so a given stream state fixes it.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double rate, Mode mode, RngStream& rng,
                  Tape<S>* tape = nullptr) {
  if (rate < 0.0 || rate >= 1.0)
    throw ValueError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::eval || rate == 0.0) return x;
  const S keep_scale = S(1.0 / (1.0 - rate));
  std::vector<S> mask(x.size());
  for (auto& m : mask) m = rng.uniform() < rate ? S(0) : keep_scale;
  Tensor<S> out(x.shape());
  const S* px = x.data();
  S* po = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) po[i] = px[i] * mask[i];
  if (detail::tracing(tape, x)) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, o = out;
    tape->record([xin, o, mask = std::move(mask)]() mutable {
      const S* g = o.grad();
      S* gx = xin.grad();
      for (std::size_t i = 0; i < xin.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return out;
}

/// Mean over the batch of -log_softmax(logits)[target].
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets,
                        Tape<S>* tape = nullptr) {
  if (logits.ndim() != 2)
    throw ShapeError("cross_entropy: need 2-d logits, got " + shape_str(logits.shape()));
  const std::size_t batch = logits.extent(0), k = logits.extent(1);
  if (targets.size() != batch)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(batch) + " rows");
  for (std::size_t b = 0; b < batch; ++b)
    if (targets[b] < 0 || static_cast<std::size_t>(targets[b]) >= k)
      throw ValueError("cross_entropy: target " + std::to_string(targets[b]) +
                       " out of range [0," + std::to_string(k) + ") at index " +
                       std::to_string(b));
  std::vector<S> probs(batch * k);
  S loss_acc = S(0);
  const S* px = logits.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const S* xrow = px + b * k;
    S* prow = probs.data() + b * k;
    S mx = xrow[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, xrow[j]);
    S acc = S(0);
    for (std::size_t j = 0; j < k; ++j) {
      prow[j] = std::exp(xrow[j] - mx);
      acc += prow[j];
    }
    const S lse = mx + std::log(acc);
    for (std::size_t j = 0; j < k; ++j) prow[j] /= acc;
    loss_acc += lse - xrow[static_cast<std::size_t>(targets[b])];
  }
  Tensor<S> out = Tensor<S>::scalar(loss_acc / static_cast<S>(batch));
  if (detail::tracing(tape, logits)) {
    out.set_requires_grad(true);
    Tensor<S> xin = logits, o = out;
    tape->record([xin, o, probs = std::move(probs), targets, batch, k]() mutable {
      const S g = o.grad()[0] / static_cast<S>(batch);
      S* gx = xin.grad();
      for (std::size_t b = 0; b < batch; ++b) {
        const S* prow = probs.data() + b * k;
        S* gxrow = gx + b * k;
        const auto t = static_cast<std::size_t>(targets[b]);
        for (std::size_t j = 0; j < k; ++j) gxrow[j] += g * (prow[j] - (j == t ? S(1) : S(0)));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

/// 2x2/stride-2 style max pooling (window == stride).  Ties go to the first
/// element in scan order, so the backward routing is deterministic.
template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& x, std::size_t window, Tape<S>* tape = nullptr) {
  if (x.ndim() != 4) throw ShapeError("max_pool2d: need BxCxHxW, got " + shape_str(x.shape()));
  const std::size_t bsz = x.extent(0), ch = x.extent(1), h = x.extent(2), w = x.extent(3);
  if (window == 0 || h < window || w < window)
    throw ShapeError("max_pool2d: window " + std::to_string(window) + " too large for " +
                     shape_str(x.shape()));
  const std::size_t oh = h / window, ow = w / window;
  Tensor<S> out({bsz, ch, oh, ow});
  std::vector<std::uint32_t> argmax(out.size());
  {
    const S* px = x.data();
    S* po = out.data();
    std::uint32_t* parg = argmax.data();
    parallel_for(bsz * ch, [=](std::size_t plane) {
      const S* xp = px + plane * h * w;
      S* op = po + plane * oh * ow;
      std::uint32_t* ap = parg + plane * oh * ow;
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          S best = xp[(i * window) * w + j * window];
          std::uint32_t bidx = static_cast<std::uint32_t>((i * window) * w + j * window);
          for (std::size_t a = 0; a < window; ++a)
            for (std::size_t b = 0; b < window; ++b) {
              const std::size_t idx = (i * window + a) * w + (j * window + b);
              if (xp[idx] > best) {
                best = xp[idx];
                bidx = static_cast<std::uint32_t>(idx);
              }
            }
          op[i * ow + j] = best;
          ap[i * ow + j] = bidx;
        }
    });
  }
  if (detail::tracing(tape, x)) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, o = out;
    tape->record([xin, o, argmax = std::move(argmax), h, w, oh, ow]() mutable {
      const S* g = o.grad();
      S* gx = xin.grad();
      const std::size_t planes = o.size() / (oh * ow);
      for (std::size_t plane = 0; plane < planes; ++plane) {
        const S* gp = g + plane * oh * ow;
        S* gxp = gx + plane * h * w;
        const std::uint32_t* ap = argmax.data() + plane * oh * ow;
        for (std::size_t i = 0; i < oh * ow; ++i) gxp[ap[i]] += gp[i];
      }
    });
  }
  return out;
}

/// BxCxHxW -> BxC spatial mean.
template <typename S>
Tensor<S> global_avg_pool2d(const Tensor<S>& x, Tape<S>* tape = nullptr) {
  if (x.ndim() != 4)
    throw ShapeError("global_avg_pool2d: need BxCxHxW, got " + shape_str(x.shape()));
  const std::size_t bsz = x.extent(0), ch = x.extent(1), spatial = x.extent(2) * x.extent(3);
  Tensor<S> out({bsz, ch});
  const S* px = x.data();
  S* po = out.data();
  for (std::size_t p = 0; p < bsz * ch; ++p) {
    S acc = S(0);
    const S* xp = px + p * spatial;
    for (std::size_t i = 0; i < spatial; ++i) acc += xp[i];
    po[p] = acc / static_cast<S>(spatial);
  }
  if (detail::tracing(tape, x)) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, o = out;
    tape->record([xin, o, spatial]() mutable {
      const S* g = o.grad();
      S* gx = xin.grad();
      const S inv = S(1) / static_cast<S>(spatial);
      for (std::size_t p = 0; p < o.size(); ++p) {
        const S gv = g[p] * inv;
        S* gxp = gx + p * spatial;
        for (std::size_t i = 0; i < spatial; ++i) gxp[i] += gv;
      }
    });
  }
  return out;
}

}  // namespace filmens
