#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <tuple>
#include <utility>
#include <string>
#include <vector>

#include "optounet/conv.hpp"
#include "optounet/tape.hpp"
#include "optounet/tensor.hpp"

namespace optounet {

// ---------------------------------------------------------------------------
// Activations

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& x) {
  const auto& xv = x.value();
  const NodeId ix = x.id();
  auto& tape = detail::tape_of(x);
  return tape.record("relu", Tensor4<Scalar>(xv.dims(), xv.array().max(Scalar(0))), {ix},
                     [&tape, ix](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) {
                       // Subgradient at exactly 0 is 0.
                       const auto& in = tape.value(ix).array();
                       sink.grad(ix).array() += (in > Scalar(0)).select(g.array(), Scalar(0));
                     });
}

template <typename Scalar>
Scalar sigmoid_scalar(Scalar v) {
  if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& x) {
  const auto& xv = x.value();
  typename Tensor4<Scalar>::Array out = xv.array().unaryExpr([](Scalar v) { return sigmoid_scalar(v); });
  const NodeId ix = x.id();
  auto& tape = detail::tape_of(x);
  auto y = tape.record("sigmoid", Tensor4<Scalar>(xv.dims(), std::move(out)), {ix}, nullptr);
  const NodeId iy = y.id();
  // The rule reads the node's own output, so it is attached after recording.
  tape.set_backward(iy, [&tape, ix, iy](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) {
    const auto& s = tape.value(iy).array();
    sink.grad(ix).array() += g.array() * s * (Scalar(1) - s);
  });
  return y;
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class BnMode { Train, Infer };

/// Running statistics of one batch-norm layer. gamma/beta are parameters and
/// live in the model's parameter registry.
template <typename Scalar>
struct BnState {
  std::string name;
  Tensor4<Scalar> running_mean;
  Tensor4<Scalar> running_var;
  double momentum = 0.99;
  double eps = 1e-5;
  /// Train-mode batches folded into the running statistics.
  std::uint64_t batches = 0;

  BnState(std::string n, std::size_t channels)
      : name(std::move(n)),
        running_mean(Tensor4<Scalar>::zeros(Dims{1, channels, 1, 1})),
        running_var(Tensor4<Scalar>::constant(Dims{1, channels, 1, 1}, Scalar(1))) {}

  std::size_t channels() const { return running_mean.dims().c; }

  /// Running statistics with the weight still held by their initial values
  /// (mean 0, var 1) removed, so a short run is not pulled toward them.
  std::pair<double, double> corrected(std::size_t c) const {
    if (batches == 0) return {running_mean[c], running_var[c]};
    const double init_weight = std::pow(momentum, static_cast<double>(batches));
    const double w = 1.0 - init_weight;
    return {running_mean[c] / w, std::max(0.0, (running_var[c] - init_weight) / w)};
  }
};

/// Per-channel normalization over (n, h, w). In Train mode uses the biased
/// batch variance and updates the running statistics; in Infer mode uses them.
template <typename Scalar>
Var<Scalar> batchnorm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                      BnState<Scalar>& state, BnMode mode) {
  const auto& xv = x.value();
  const Dims d = xv.dims();
  const std::size_t C = d.c;
  if (state.channels() != C || gamma.value().size() != C || beta.value().size() != C) {
    throw ShapeError("batchnorm '" + state.name + "': input has " + std::to_string(C) +
                     " channels, state has " + std::to_string(state.channels()));
  }
  const std::size_t P = d.plane();
  const double M = static_cast<double>(d.n * P);
  const auto& gv = gamma.value();
  const auto& bv = beta.value();

  std::vector<Scalar> mean(C), inv_std(C);
  for (std::size_t c = 0; c < C; ++c) {
    double m, var;
    if (mode == BnMode::Train) {
      double s = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const Scalar* p = xv.data() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) s += p[i];
      }
      m = s / M;
      double ss = 0.0;
      for (std::size_t n = 0; n < d.n; ++n) {
        const Scalar* p = xv.data() + (n * C + c) * P;
        for (std::size_t i = 0; i < P; ++i) {
          const double dv = p[i] - m;
          ss += dv * dv;
        }
      }
      var = ss / M;
      state.running_mean[c] =
          static_cast<Scalar>(state.momentum * state.running_mean[c] + (1.0 - state.momentum) * m);
      state.running_var[c] =
          static_cast<Scalar>(state.momentum * state.running_var[c] + (1.0 - state.momentum) * var);
    } else {
      std::tie(m, var) = state.corrected(c);
    }
    mean[c] = static_cast<Scalar>(m);
    inv_std[c] = static_cast<Scalar>(1.0 / std::sqrt(var + state.eps));
  }
  if (mode == BnMode::Train) ++state.batches;

  auto xhat = Tensor4<Scalar>::zeros(d);
  auto out = Tensor4<Scalar>::zeros(d);
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (n * C + c) * P;
      auto xs = xv.array().segment(off, P);
      auto hs = xhat.array().segment(off, P);
      hs = (xs - mean[c]) * inv_std[c];
      out.array().segment(off, P) = hs * gv[c] + bv[c];
    }
  }

  const NodeId ix = x.id();
  const NodeId ig = gamma.id();
  const NodeId ib = beta.id();
  auto& tape = detail::tape_of(x);
  auto cache = std::make_shared<const Tensor4<Scalar>>(std::move(xhat));
  return tape.record(
      mode == BnMode::Train ? "batchnorm_train" : "batchnorm_infer", std::move(out), {ix, ig, ib},
      [&tape, ix, ig, ib, cache, inv_std, mode](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) {
        const Dims d = g.dims();
        const std::size_t C = d.c;
        const std::size_t P = d.plane();
        const Scalar M = static_cast<Scalar>(d.n * P);
        const auto& gam = tape.value(ig);
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
        for (std::size_t n = 0; n < d.n; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * P;
            const Scalar* gp = g.data() + off;
            const Scalar* hp = cache->data() + off;
            double a = 0.0, b = 0.0;
            for (std::size_t i = 0; i < P; ++i) {
              a += gp[i];
              b += static_cast<double>(gp[i]) * hp[i];
            }
            sum_g[c] += a;
            sum_gx[c] += b;
          }
        }
        if (sink.wants(ig)) {
          auto& gg = sink.grad(ig);
          for (std::size_t c = 0; c < C; ++c) gg[c] += static_cast<Scalar>(sum_gx[c]);
        }
        if (sink.wants(ib)) {
          auto& gb = sink.grad(ib);
          for (std::size_t c = 0; c < C; ++c) gb[c] += static_cast<Scalar>(sum_g[c]);
        }
        if (!sink.wants(ix)) return;
        auto& gx = sink.grad(ix);
        for (std::size_t n = 0; n < d.n; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * P;
            auto gs = g.array().segment(off, P);
            auto dst = gx.array().segment(off, P);
            const Scalar k = gam[c] * inv_std[c];
            if (mode == BnMode::Infer) {
              dst += gs * k;
            } else {
              auto hs = cache->array().segment(off, P);
              const Scalar mg = static_cast<Scalar>(sum_g[c]) / M;
              const Scalar mgx = static_cast<Scalar>(sum_gx[c]) / M;
              dst += k * (gs - mg - hs * mgx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Resampling and channel plumbing

/// 2x2 max pooling with stride 2. Ties resolve to the first element of the
/// window in row-major order.
template <typename Scalar>
Var<Scalar> maxpool2(const Var<Scalar>& x) {
  const auto& xv = x.value();
  const Dims d = xv.dims();
  if (d.h % 2 != 0 || d.w % 2 != 0) throw ShapeError("maxpool2: extents must be even, got " + d.str());
  const Dims od{d.n, d.c, d.h / 2, d.w / 2};
  auto out = Tensor4<Scalar>::zeros(od);
  auto argmax = std::make_shared<std::vector<std::size_t>>(od.size());
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    const Scalar* in = xv.data() + nc * d.plane();
    for (std::size_t oy = 0; oy < od.h; ++oy) {
      for (std::size_t ox = 0; ox < od.w; ++ox) {
        std::size_t best = (2 * oy) * d.w + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + d.w, best + d.w + 1};
        for (std::size_t k : cand) {
          if (in[k] > in[best]) best = k;
        }
        const std::size_t o = nc * od.plane() + oy * od.w + ox;
        out[o] = in[best];
        (*argmax)[o] = nc * d.plane() + best;
      }
    }
  }
  const NodeId ix = x.id();
  return detail::tape_of(x).record("maxpool2", std::move(out), {ix},
                                   [ix, argmax](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) {
                                     auto& gx = sink.grad(ix);
                                     for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
                                   });
}

/// Nearest-neighbour 2x upsampling: each element becomes a 2x2 block.
template <typename Scalar>
Var<Scalar> upsample_nearest2(const Var<Scalar>& x) {
  const auto& xv = x.value();
  const Dims d = xv.dims();
  const Dims od{d.n, d.c, d.h * 2, d.w * 2};
  auto out = Tensor4<Scalar>::zeros(od);
  for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
    const Scalar* in = xv.data() + nc * d.plane();
    Scalar* o = out.data() + nc * od.plane();
    for (std::size_t y = 0; y < od.h; ++y) {
      for (std::size_t xx = 0; xx < od.w; ++xx) o[y * od.w + xx] = in[(y / 2) * d.w + xx / 2];
    }
  }
  const NodeId ix = x.id();
  return detail::tape_of(x).record(
      "upsample_nearest2", std::move(out), {ix}, [ix](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) {
        auto& gx = sink.grad(ix);
        const Dims d = gx.dims();
        const Dims od = g.dims();
        for (std::size_t nc = 0; nc < d.n * d.c; ++nc) {
          const Scalar* go = g.data() + nc * od.plane();
          Scalar* gi = gx.data() + nc * d.plane();
          for (std::size_t y = 0; y < d.h; ++y) {
            for (std::size_t xx = 0; xx < d.w; ++xx) {
              const Scalar* q = go + (2 * y) * od.w + 2 * xx;
              gi[y * d.w + xx] += (q[0] + q[1]) + (q[od.w] + q[od.w + 1]);
            }
          }
        }
      });
}

/// Stacks b's channels after a's.
template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check_same_tape(a, b);
  const Dims da = a.value().dims();
  const Dims db = b.value().dims();
  if (da.n != db.n || da.h != db.h || da.w != db.w) {
    throw ShapeError("concat_channels: " + da.str() + " and " + db.str() + " disagree on n/h/w");
  }
  const Dims od{da.n, da.c + db.c, da.h, da.w};
  auto out = Tensor4<Scalar>::zeros(od);
  for (std::size_t n = 0; n < da.n; ++n) {
    out.array().segment(n * od.image(), da.image()) = a.value().array().segment(n * da.image(), da.image());
    out.array().segment(n * od.image() + da.image(), db.image()) =
        b.value().array().segment(n * db.image(), db.image());
  }
  const NodeId ia = a.id();
  const NodeId ib = b.id();
  return detail::tape_of(a).record(
      "concat_channels", std::move(out), {ia, ib}, [ia, ib, da, db](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) {
        const std::size_t oi = da.image() + db.image();
        if (sink.wants(ia)) {
          auto& ga = sink.grad(ia);
          for (std::size_t n = 0; n < da.n; ++n)
            ga.array().segment(n * da.image(), da.image()) += g.array().segment(n * oi, da.image());
        }
        if (sink.wants(ib)) {
          auto& gb = sink.grad(ib);
          for (std::size_t n = 0; n < db.n; ++n)
            gb.array().segment(n * db.image(), db.image()) += g.array().segment(n * oi + da.image(), db.image());
        }
      });
}

/// Channels [first, first + count) of x.
template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& x, std::size_t first, std::size_t count) {
  const Dims d = x.value().dims();
  if (count == 0 || first + count > d.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(first) + "," + std::to_string(first + count) +
                     ") outside " + std::to_string(d.c) + " channels");
  }
  const Dims od{d.n, count, d.h, d.w};
  auto out = Tensor4<Scalar>::zeros(od);
  for (std::size_t n = 0; n < d.n; ++n) {
    out.array().segment(n * od.image(), od.image()) =
        x.value().array().segment(n * d.image() + first * d.plane(), od.image());
  }
  const NodeId ix = x.id();
  return detail::tape_of(x).record(
      "slice_channels", std::move(out), {ix}, [ix, d, od, first](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) {
        auto& gx = sink.grad(ix);
        for (std::size_t n = 0; n < d.n; ++n) {
          gx.array().segment(n * d.image() + first * d.plane(), od.image()) +=
              g.array().segment(n * od.image(), od.image());
        }
      });
}

}  // namespace optounet
