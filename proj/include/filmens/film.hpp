#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <type_traits>
#include <vector>

#include "filmens/ops.hpp"
#include "filmens/parallel.hpp"
#include "filmens/rng.hpp"
#include "filmens/tensor.hpp"

namespace filmens {

/// Member-major layout of a replicated batch: rows [m*batch, (m+1)*batch)
/// belong to ensemble member m.
struct EnsembleLayout {
  std::size_t members = 1;
  std::size_t batch = 0;

  static EnsembleLayout from_rows(std::size_t rows, std::size_t members) {
    if (members < 1) throw ValueError("EnsembleLayout: members must be >= 1");
    if (rows % members != 0)
      throw ShapeError("EnsembleLayout: " + std::to_string(rows) +
                       " rows not divisible by " + std::to_string(members) + " members");
    return {members, rows / members};
  }
};

/// Per-member affine modulation parameters of one normalization layer:
/// gamma and beta are M x D, row m holding member m's scale and shift.
template <typename S>
struct FiLMParams {
  Tensor<S> gamma;
  Tensor<S> beta;

  std::size_t members() const { return gamma.extent(0); }
  std::size_t channels() const { return gamma.extent(1); }
};

template <typename S>
struct BatchNormState {
  Tensor<S> running_mean;  // D, starts at 0
  Tensor<S> running_var;   // D, starts at 1
  S eps = S(1e-5);
  S stat_momentum = S(0.1);

  static BatchNormState init(std::size_t channels) {
    BatchNormState st;
    st.running_mean = Tensor<S>::zeros({channels});
    st.running_var = Tensor<S>::ones({channels});
    return st;
  }
};

/// Draws gamma and beta i.i.d. uniform on +-sqrt(3/D)*rho.  Larger gain rho
/// spreads the members further apart at initialization; rho -> 0 collapses
/// them onto a single model.
template <typename S>
FiLMParams<S> init_film(std::size_t members, std::size_t channels, double rho, RngStream& rng) {
  if (members < 1 || channels < 1)
    throw ValueError("init_film: members and channels must be >= 1");
  if (rho < 0.0) throw ValueError("init_film: gain must be >= 0, got " + std::to_string(rho));
  const double bound = std::sqrt(3.0 / static_cast<double>(channels)) * rho;
  FiLMParams<S> p;
  p.gamma = Tensor<S>({members, channels}, true);
  p.beta = Tensor<S>({members, channels}, true);
  for (std::size_t i = 0; i < p.gamma.size(); ++i)
    p.gamma.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  for (std::size_t i = 0; i < p.beta.size(); ++i)
    p.beta.data()[i] = static_cast<S>(rng.uniform(-bound, bound));
  return p;
}

/// Stacks M copies of x along the row dimension, member-major.  The backward
/// pass sums the per-copy gradients back into the source.
template <typename S>
Tensor<S> replicate_batch(const Tensor<S>& x, std::size_t members, Tape<S>* tape = nullptr) {
  if (members < 1) throw ValueError("replicate_batch: members must be >= 1");
  Shape out_shape = x.shape();
  out_shape[0] *= members;
  Tensor<S> out(out_shape);
  const std::size_t n = x.size();
  for (std::size_t m = 0; m < members; ++m)
    std::copy(x.data(), x.data() + n, out.data() + m * n);
  if (detail::tracing(tape, x)) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, o = out;
    tape->record([xin, o, members, n]() mutable {
      const S* g = o.grad();
      S* gx = xin.grad();
      for (std::size_t m = 0; m < members; ++m) {
        const S* gm = g + m * n;
        for (std::size_t i = 0; i < n; ++i) gx[i] += gm[i];
      }
    });
  }
  return out;
}

namespace detail {
template <typename S>
void check_film_shapes(const Tensor<S>& x, const FiLMParams<S>& p, const EnsembleLayout& layout,
                       bool overridden, const char* op) {
  if (x.ndim() < 2) throw ShapeError(std::string(op) + ": need at least rows x channels input");
  if (x.extent(0) != layout.members * layout.batch)
    throw ShapeError(std::string(op) + ": " + std::to_string(x.extent(0)) +
                     " rows vs layout " + std::to_string(layout.members) + "x" +
                     std::to_string(layout.batch));
  if (x.extent(1) != p.channels())
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.extent(1)) +
                     " channels, params have " + std::to_string(p.channels()));
  // an explicit member override pins one row of the params, so the layout
  // need not span all of them
  if (!overridden && p.members() != layout.members)
    throw ShapeError(std::string(op) + ": params hold " + std::to_string(p.members()) +
                     " members, layout expects " + std::to_string(layout.members));
}

inline std::size_t trailing_spatial(const Shape& s) {
  std::size_t sp = 1;
  for (std::size_t d = 2; d < s.size(); ++d) sp *= s[d];
  return sp;
}
}  // namespace detail

/// out = gamma[m,c] * F + beta[m,c], broadcast over the trailing spatial
/// dims, with m the member block of each row.  member_override evaluates the
/// whole input under one member's parameters (the sequential inference path).
template <typename S>
Tensor<S> film_apply(const Tensor<S>& x, FiLMParams<S>& params, const EnsembleLayout& layout,
                     std::type_identity_t<Tape<S>>* tape = nullptr,
                     std::optional<std::size_t> member_override = std::nullopt) {
  detail::check_film_shapes(x, params, layout, member_override.has_value(), "film_apply");
  const std::size_t rows = x.extent(0), ch = x.extent(1);
  const std::size_t spatial = detail::trailing_spatial(x.shape());
  const std::size_t batch = layout.batch;
  auto member_of = [batch, member_override](std::size_t r) {
    return member_override ? *member_override : r / batch;
  };
  if (member_override && *member_override >= params.members())
    throw ValueError("film_apply: member override out of range");

  Tensor<S> out(x.shape());
  {
    const S* px = x.data();
    const S* pg = params.gamma.data();
    const S* pb = params.beta.data();
    S* po = out.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t m = member_of(r);
      for (std::size_t c = 0; c < ch; ++c) {
        const S gm = pg[m * ch + c];
        const S bt = pb[m * ch + c];
        const S* xr = px + (r * ch + c) * spatial;
        S* orow = po + (r * ch + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) orow[s] = gm * xr[s] + bt;
      }
    }
  }
  if (detail::tracing(tape, x, params.gamma, params.beta)) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, gin = params.gamma, bin = params.beta, o = out;
    tape->record([xin, gin, bin, o, rows, ch, spatial, batch, member_override]() mutable {
      const S* g = o.grad();
      const S* px = xin.data();
      const S* pg = gin.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t m = member_override ? *member_override : r / batch;
        for (std::size_t c = 0; c < ch; ++c) {
          const S* grow = g + (r * ch + c) * spatial;
          if (xin.requires_grad()) {
            const S gm = pg[m * ch + c];
            S* gxr = xin.grad() + (r * ch + c) * spatial;
            for (std::size_t s = 0; s < spatial; ++s) gxr[s] += grow[s] * gm;
          }
          if (gin.requires_grad()) {
            const S* xr = px + (r * ch + c) * spatial;
            S acc = S(0);
            for (std::size_t s = 0; s < spatial; ++s) acc += grow[s] * xr[s];
            gin.grad()[m * ch + c] += acc;
          }
          if (bin.requires_grad()) {
            S acc = S(0);
            for (std::size_t s = 0; s < spatial; ++s) acc += grow[s];
            bin.grad()[m * ch + c] += acc;
          }
        }
      }
    });
  }
  return out;
}

/// Batch normalization with per-member FiLM affine parameters.
///
/// Train mode normalizes with per-channel statistics of the entire
/// replicated batch (all members jointly), updates the running stats with
/// the unbiased variance, then applies the member affine.  Eval mode
/// normalizes with the running stats.  Gradients flow to the input and to
/// gamma/beta.
template <typename S>
Tensor<S> film_batchnorm_forward(const Tensor<S>& x, FiLMParams<S>& params,
                                 BatchNormState<S>& state, const EnsembleLayout& layout,
                                 Mode mode, std::type_identity_t<Tape<S>>* tape = nullptr,
                                 std::optional<std::size_t> member_override = std::nullopt) {
  detail::check_film_shapes(x, params, layout, member_override.has_value(), "film_batchnorm_forward");
  const std::size_t rows = x.extent(0), ch = x.extent(1);
  const std::size_t spatial = detail::trailing_spatial(x.shape());
  if (state.running_mean.extent(0) != ch)
    throw ShapeError("film_batchnorm_forward: state holds " +
                     std::to_string(state.running_mean.extent(0)) + " channels, input has " +
                     std::to_string(ch));
  if (member_override && *member_override >= params.members())
    throw ValueError("film_batchnorm_forward: member override out of range");
  const std::size_t batch = layout.batch;

  std::vector<S> mean(ch), inv_std(ch);
  if (mode == Mode::train) {
    if (rows < 2)
      throw ValueError("film_batchnorm_forward: train mode needs >= 2 rows, got " +
                       std::to_string(rows));
    const std::size_t n = rows * spatial;
    const S* px = x.data();
    S* rm = state.running_mean.data();
    S* rv = state.running_var.data();
    const double mom = static_cast<double>(state.stat_momentum);
    std::vector<double> mean_d(ch), var_d(ch);
    parallel_for(ch, [&, px](std::size_t c) {
      double acc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const S* xr = px + (r * ch + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) acc += static_cast<double>(xr[s]);
      }
      const double mu = acc / static_cast<double>(n);
      double vacc = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const S* xr = px + (r * ch + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) {
          const double d = static_cast<double>(xr[s]) - mu;
          vacc += d * d;
        }
      }
      mean_d[c] = mu;
      var_d[c] = vacc / static_cast<double>(n);
    });
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = static_cast<S>(mean_d[c]);
      inv_std[c] = static_cast<S>(1.0 / std::sqrt(var_d[c] + static_cast<double>(state.eps)));
      const double unbiased = var_d[c] * static_cast<double>(n) / static_cast<double>(n - 1);
      rm[c] = static_cast<S>((1.0 - mom) * static_cast<double>(rm[c]) + mom * mean_d[c]);
      rv[c] = static_cast<S>((1.0 - mom) * static_cast<double>(rv[c]) + mom * unbiased);
    }
  } else {
    const S* rm = state.running_mean.data();
    const S* rv = state.running_var.data();
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = rm[c];
      inv_std[c] = static_cast<S>(
          1.0 / std::sqrt(static_cast<double>(rv[c]) + static_cast<double>(state.eps)));
    }
  }

  Tensor<S> out(x.shape());
  {
    const S* px = x.data();
    const S* pg = params.gamma.data();
    const S* pb = params.beta.data();
    S* po = out.data();
    parallel_for(rows, [&, px, pg, pb, po](std::size_t r) {
      const std::size_t m = member_override ? *member_override : r / batch;
      for (std::size_t c = 0; c < ch; ++c) {
        const S mu = mean[c], is = inv_std[c];
        const S gm = pg[m * ch + c], bt = pb[m * ch + c];
        const S* xr = px + (r * ch + c) * spatial;
        S* orow = po + (r * ch + c) * spatial;
        for (std::size_t s = 0; s < spatial; ++s) orow[s] = gm * ((xr[s] - mu) * is) + bt;
      }
    });
  }
  debug_check_finite(out, "film_batchnorm_forward");

  if (detail::tracing(tape, x, params.gamma, params.beta)) {
    out.set_requires_grad(true);
    Tensor<S> xin = x, gin = params.gamma, bin = params.beta, o = out;
    const bool train_stats = (mode == Mode::train);
    tape->record([xin, gin, bin, o, mean = std::move(mean), inv_std = std::move(inv_std), rows,
                  ch, spatial, batch, member_override, train_stats]() mutable {
      const S* g = o.grad();
      const S* px = xin.data();
      const S* pg = gin.data();
      const double n = static_cast<double>(rows * spatial);
      parallel_for(ch, [&, g, px, pg](std::size_t c) {
        const double mu = static_cast<double>(mean[c]);
        const double is = static_cast<double>(inv_std[c]);
        // member-wise sums feed dgamma/dbeta; channel-wide sums feed dx
        double sum_h = 0.0, sum_hx = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t m = member_override ? *member_override : r / batch;
          const double gm = static_cast<double>(pg[m * ch + c]);
          const S* grow = g + (r * ch + c) * spatial;
          const S* xr = px + (r * ch + c) * spatial;
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t s = 0; s < spatial; ++s) {
            const double gv = static_cast<double>(grow[s]);
            const double xhat = (static_cast<double>(xr[s]) - mu) * is;
            sum_g += gv;
            sum_gx += gv * xhat;
          }
          if (gin.requires_grad()) gin.grad()[m * ch + c] += static_cast<S>(sum_gx);
          if (bin.requires_grad()) bin.grad()[m * ch + c] += static_cast<S>(sum_g);
          sum_h += gm * sum_g;
          sum_hx += gm * sum_gx;
        }
        if (xin.requires_grad()) {
          S* gx = xin.grad();
          const double mean_h = sum_h / n, mean_hx = sum_hx / n;
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t m = member_override ? *member_override : r / batch;
            const double gm = static_cast<double>(pg[m * ch + c]);
            const S* grow = g + (r * ch + c) * spatial;
            const S* xr = px + (r * ch + c) * spatial;
            S* gxr = gx + (r * ch + c) * spatial;
            for (std::size_t s = 0; s < spatial; ++s) {
              const double h = gm * static_cast<double>(grow[s]);
              if (train_stats) {
                const double xhat = (static_cast<double>(xr[s]) - mu) * is;
                gxr[s] += static_cast<S>(is * (h - mean_h - xhat * mean_hx));
              } else {
                gxr[s] += static_cast<S>(is * h);
              }
            }
          }
        }
      });
    });
  }
  return out;
}

/// Cuts a replicated output back into its M member blocks.  Concatenating
/// the returned tensors in order reproduces the input exactly.
template <typename S>
std::vector<Tensor<S>> split_members(const Tensor<S>& y, const EnsembleLayout& layout,
                                     Tape<S>* tape = nullptr) {
  if (y.ndim() < 1) throw ShapeError("split_members: need at least 1-d input");
  if (y.extent(0) % layout.members != 0 || y.extent(0) != layout.members * layout.batch)
    throw ShapeError("split_members: " + std::to_string(y.extent(0)) +
                     " rows not divisible into " + std::to_string(layout.members) + " blocks of " +
                     std::to_string(layout.batch));
  const std::size_t block = y.size() / layout.members;
  Shape member_shape = y.shape();
  member_shape[0] = layout.batch;
  std::vector<Tensor<S>> outs;
  outs.reserve(layout.members);
  for (std::size_t m = 0; m < layout.members; ++m) {
    Tensor<S> o(member_shape);
    std::copy(y.data() + m * block, y.data() + (m + 1) * block, o.data());
    if (detail::tracing(tape, y)) {
      o.set_requires_grad(true);
      Tensor<S> yin = y, oc = o;
      tape->record([yin, oc, m, block]() mutable {
        const S* g = oc.grad();
        S* gy = yin.grad() + m * block;
        for (std::size_t i = 0; i < block; ++i) gy[i] += g[i];
      });
    }
    outs.push_back(std::move(o));
  }
  return outs;
}

/// Elementwise mean of the member probability tensors; rows stay on the
/// simplex.
template <typename S>
Tensor<S> ensemble_average(const std::vector<Tensor<S>>& member_probs) {
  if (member_probs.empty()) throw ValueError("ensemble_average: no members");
  for (const auto& t : member_probs)
    detail::require_same_shape(member_probs.front(), t, "ensemble_average");
  Tensor<S> out(member_probs.front().shape());
  S* po = out.data();
  for (const auto& t : member_probs) {
    const S* pt = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) po[i] += pt[i];
  }
  const S inv = S(1) / static_cast<S>(member_probs.size());
  for (std::size_t i = 0; i < out.size(); ++i) po[i] *= inv;
  return out;
}

}  // namespace filmens
