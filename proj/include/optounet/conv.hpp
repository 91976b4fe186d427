#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "optounet/parallel.hpp"
#include "optounet/tape.hpp"
#include "optounet/tensor.hpp"

namespace optounet {

/// Zero padding added before/after each spatial axis.
struct Padding2d {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;

  static Padding2d symmetric(std::size_t ph, std::size_t pw) { return {ph, ph, pw, pw}; }
  friend bool operator==(const Padding2d&, const Padding2d&) = default;
};

/// Geometry of a grouped, strided, dilated 2-D cross-correlation.
struct Conv2dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t sh = 1;
  std::size_t sw = 1;
  Padding2d padding{};
  std::size_t dilation = 1;
  std::size_t groups = 1;
  bool has_bias = true;

  /// Stride 1 with padding that preserves the spatial extent. When the
  /// effective kernel is even the extra row/column goes after the input.
  static Conv2dSpec same(std::size_t in, std::size_t out, std::size_t k, std::size_t dilation = 1,
                         std::size_t groups = 1, bool bias = true) {
    const std::size_t total = (k - 1) * dilation;
    const std::size_t before = total / 2;
    return Conv2dSpec{in, out, k, k, 1, 1, Padding2d{before, total - before, before, total - before},
                      dilation, groups, bias};
  }

  std::size_t kh_eff() const { return (kh - 1) * dilation + 1; }
  std::size_t kw_eff() const { return (kw - 1) * dilation + 1; }
  std::size_t in_per_group() const { return in_channels / groups; }
  std::size_t out_per_group() const { return out_channels / groups; }
  Dims weight_dims() const { return Dims{out_channels, in_per_group(), kh, kw}; }
  Dims bias_dims() const { return Dims{1, out_channels, 1, 1}; }
  std::size_t weight_count() const { return out_channels * in_per_group() * kh * kw; }
  std::size_t param_count() const { return weight_count() + (has_bias ? out_channels : 0); }

  void validate() const {
    if (in_channels == 0 || out_channels == 0 || kh == 0 || kw == 0 || sh == 0 || sw == 0 ||
        dilation == 0 || groups == 0) {
      throw ShapeError("conv2d: channels, kernel, stride, dilation and groups must be >= 1");
    }
    if (in_channels % groups != 0 || out_channels % groups != 0) {
      throw ShapeError("conv2d: groups " + std::to_string(groups) + " must divide channels " +
                       std::to_string(in_channels) + "->" + std::to_string(out_channels));
    }
  }

  /// Output dims for an input of the given dims; throws on channel mismatch or
  /// an effective kernel larger than the padded input.
  Dims output_dims(const Dims& in) const {
    validate();
    if (in.c != in_channels) {
      throw ShapeError("conv2d: input has " + std::to_string(in.c) + " channels, expected " +
                       std::to_string(in_channels));
    }
    const std::size_t ph = in.h + padding.top + padding.bottom;
    const std::size_t pw = in.w + padding.left + padding.right;
    if (kh_eff() > ph || kw_eff() > pw) {
      throw ShapeError("conv2d: effective kernel " + std::to_string(kh_eff()) + "x" +
                       std::to_string(kw_eff()) + " exceeds padded input " + std::to_string(ph) +
                       "x" + std::to_string(pw));
    }
    return Dims{in.n, out_channels, (ph - kh_eff()) / sh + 1, (pw - kw_eff()) / sw + 1};
  }
};

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;

// True when the column matrix of a group is the input plane block itself.
inline bool is_pointwise(const Conv2dSpec& s) {
  return s.kh == 1 && s.kw == 1 && s.sh == 1 && s.sw == 1 && s.padding == Padding2d{};
}

// Unfolds channels [c0, c0 + spec.in_per_group()) of one image into a
// (Cg*kh*kw) x (oh*ow) row-major matrix.
template <typename Scalar>
void im2col(const Scalar* image, const Dims& in, const Conv2dSpec& s, std::size_t c0, std::size_t oh,
            std::size_t ow, Scalar* cols) {
  const std::size_t cg = s.in_per_group();
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(in.h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(in.w);
  for (std::size_t ci = 0; ci < cg; ++ci) {
    const Scalar* plane = image + (c0 + ci) * in.plane();
    for (std::size_t ky = 0; ky < s.kh; ++ky) {
      for (std::size_t kx = 0; kx < s.kw; ++kx) {
        Scalar* row = cols + ((ci * s.kh + ky) * s.kw + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.sh + ky * s.dilation) -
                                    static_cast<std::ptrdiff_t>(s.padding.top);
          Scalar* dst = row + oy * ow;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + ow, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * W;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.sw + kx * s.dilation) -
                                      static_cast<std::ptrdiff_t>(s.padding.left);
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds a column matrix back into image channels.
template <typename Scalar>
void col2im(const Scalar* cols, const Dims& in, const Conv2dSpec& s, std::size_t c0, std::size_t oh,
            std::size_t ow, Scalar* image) {
  const std::size_t cg = s.in_per_group();
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(in.h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(in.w);
  for (std::size_t ci = 0; ci < cg; ++ci) {
    Scalar* plane = image + (c0 + ci) * in.plane();
    for (std::size_t ky = 0; ky < s.kh; ++ky) {
      for (std::size_t kx = 0; kx < s.kw; ++kx) {
        const Scalar* row = cols + ((ci * s.kh + ky) * s.kw + kx) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s.sh + ky * s.dilation) -
                                    static_cast<std::ptrdiff_t>(s.padding.top);
          if (iy < 0 || iy >= H) continue;
          const Scalar* src = row + oy * ow;
          Scalar* dst = plane + iy * W;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s.sw + kx * s.dilation) -
                                      static_cast<std::ptrdiff_t>(s.padding.left);
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Forward convolution without a tape. Images of the batch are processed
/// independently, so the result does not depend on the thread count.
template <typename Scalar>
Tensor4<Scalar> conv2d_forward(const Tensor4<Scalar>& x, const Tensor4<Scalar>& weight,
                               const Tensor4<Scalar>* bias, const Conv2dSpec& s) {
  const Dims od = s.output_dims(x.dims());
  if (weight.dims() != s.weight_dims()) {
    throw ShapeError("conv2d: weight dims " + weight.dims().str() + ", expected " + s.weight_dims().str());
  }
  if (s.has_bias != (bias != nullptr)) throw ShapeError("conv2d: bias presence does not match spec");
  if (bias && bias->dims() != s.bias_dims()) {
    throw ShapeError("conv2d: bias dims " + bias->dims().str() + ", expected " + s.bias_dims().str());
  }
  const Dims& id = x.dims();
  const std::size_t P = od.plane();
  const std::size_t K = s.in_per_group() * s.kh * s.kw;
  const std::size_t og = s.out_per_group();
  const bool direct = detail::is_pointwise(s);
  auto out = Tensor4<Scalar>::zeros(od);
  parallel_for(id.n, [&](std::size_t n) {
    std::vector<Scalar> cols(direct ? 0 : K * P);
    const Scalar* image = x.data() + n * id.image();
    for (std::size_t g = 0; g < s.groups; ++g) {
      const Scalar* colp = image + g * s.in_per_group() * id.plane();
      if (!direct) {
        detail::im2col(image, id, s, g * s.in_per_group(), od.h, od.w, cols.data());
        colp = cols.data();
      }
      detail::ConstRowMap<Scalar> wm(weight.data() + g * og * K, og, K);
      detail::ConstRowMap<Scalar> cm(colp, K, P);
      detail::RowMap<Scalar> ym(out.data() + n * od.image() + g * og * P, og, P);
      ym.noalias() = wm * cm;
    }
    if (bias) {
      detail::RowMap<Scalar> ym(out.data() + n * od.image(), od.c, P);
      for (std::size_t c = 0; c < od.c; ++c) ym.row(c).array() += (*bias)[c];
    }
  });
  return out;
}

struct ConvGrads {
  bool input = true;
  bool weight = true;
  bool bias = true;
};

/// Gradients of a convolution given the upstream gradient. Weight and bias
/// gradients are formed per image and summed in image order, which keeps the
/// result bitwise independent of the thread count.
template <typename Scalar>
void conv2d_backward(const Tensor4<Scalar>& x, const Tensor4<Scalar>& weight, const Conv2dSpec& s,
                     const Tensor4<Scalar>& grad_out, Tensor4<Scalar>* grad_x, Tensor4<Scalar>* grad_w,
                     Tensor4<Scalar>* grad_b) {
  const Dims& id = x.dims();
  const Dims& od = grad_out.dims();
  const std::size_t P = od.plane();
  const std::size_t K = s.in_per_group() * s.kh * s.kw;
  const std::size_t og = s.out_per_group();
  const bool direct = detail::is_pointwise(s);
  const std::size_t wsize = weight.size();

  // Per-image weight/bias partials, reduced in a fixed order after each chunk.
  const std::size_t chunk = std::max<std::size_t>(1, std::min(thread_count(), id.n));
  std::vector<std::vector<Scalar>> wpart(grad_w ? chunk : 0, std::vector<Scalar>(wsize));
  std::vector<std::vector<Scalar>> bpart(grad_b ? chunk : 0, std::vector<Scalar>(od.c));

  for (std::size_t base = 0; base < id.n; base += chunk) {
    const std::size_t count = std::min(chunk, id.n - base);
    parallel_for(count, [&](std::size_t slot) {
      const std::size_t n = base + slot;
      std::vector<Scalar> cols(direct ? 0 : K * P);
      std::vector<Scalar> dcols(grad_x && !direct ? K * P : 0);
      const Scalar* image = x.data() + n * id.image();
      const Scalar* gimage = grad_out.data() + n * od.image();
      for (std::size_t g = 0; g < s.groups; ++g) {
        detail::ConstRowMap<Scalar> dy(gimage + g * og * P, og, P);
        detail::ConstRowMap<Scalar> wm(weight.data() + g * og * K, og, K);
        if (grad_w) {
          const Scalar* colp = image + g * s.in_per_group() * id.plane();
          if (!direct) {
            detail::im2col(image, id, s, g * s.in_per_group(), od.h, od.w, cols.data());
            colp = cols.data();
          }
          detail::ConstRowMap<Scalar> cm(colp, K, P);
          detail::RowMap<Scalar> dw(wpart[slot].data() + g * og * K, og, K);
          dw.noalias() = dy * cm.transpose();
        }
        if (grad_x) {
          Scalar* gx = grad_x->data() + n * id.image();
          if (direct) {
            detail::RowMap<Scalar> dx(gx + g * s.in_per_group() * id.plane(), K, P);
            dx.noalias() += wm.transpose() * dy;
          } else {
            detail::RowMap<Scalar> dc(dcols.data(), K, P);
            dc.noalias() = wm.transpose() * dy;
            detail::col2im(dcols.data(), id, s, g * s.in_per_group(), od.h, od.w, gx);
          }
        }
      }
      if (grad_b) {
        detail::ConstRowMap<Scalar> dy(gimage, od.c, P);
        for (std::size_t c = 0; c < od.c; ++c) bpart[slot][c] = dy.row(c).sum();
      }
    });
    for (std::size_t slot = 0; slot < count; ++slot) {
      if (grad_w) {
        Scalar* dst = grad_w->data();
        for (std::size_t i = 0; i < wsize; ++i) dst[i] += wpart[slot][i];
      }
      if (grad_b) {
        for (std::size_t c = 0; c < od.c; ++c) (*grad_b)[c] += bpart[slot][c];
      }
    }
  }
}

/// Tape-recorded convolution. Output element (n, o, y, x) is
/// sum_{i,ky,kx} in(n, i, y*sh + ky*d - top, x*sw + kx*d - left) * w(o, i, ky, kx) + b(o).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const std::optional<Var<Scalar>>& bias,
                   const Conv2dSpec& spec) {
  const auto* bias_value = bias ? &bias->value() : nullptr;
  auto out = conv2d_forward(x.value(), weight.value(), bias_value, spec);
  auto& tape = detail::tape_of(x);
  const NodeId ix = x.id();
  const NodeId iw = weight.id();
  std::vector<NodeId> inputs{ix, iw};
  if (bias) inputs.push_back(bias->id());
  const std::optional<NodeId> ib = bias ? std::optional<NodeId>(bias->id()) : std::nullopt;
  return tape.record(
      spec.groups == 1 ? "conv2d" : "conv2d_grouped", std::move(out), std::move(inputs),
      [&tape, ix, iw, ib, spec](const Tensor4<Scalar>& g, GradSink<Scalar>& sink) {
        Tensor4<Scalar>* gx = sink.wants(ix) ? &sink.grad(ix) : nullptr;
        Tensor4<Scalar>* gw = sink.wants(iw) ? &sink.grad(iw) : nullptr;
        Tensor4<Scalar>* gb = (ib && sink.wants(*ib)) ? &sink.grad(*ib) : nullptr;
        conv2d_backward(tape.value(ix), tape.value(iw), spec, g, gx, gw, gb);
      });
}

/// Depthwise k x k convolution (groups = channels, no bias) followed by a
/// 1 x 1 pointwise convolution with optional bias.
struct SeparableSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t dilation = 1;
  bool pointwise_bias = true;

  Conv2dSpec depthwise() const {
    return Conv2dSpec::same(in_channels, in_channels, kernel, dilation, in_channels, false);
  }
  Conv2dSpec pointwise() const {
    return Conv2dSpec{in_channels, out_channels, 1, 1, 1, 1, Padding2d{}, 1, 1, pointwise_bias};
  }
  std::size_t param_count() const { return depthwise().param_count() + pointwise().param_count(); }
};

template <typename Scalar>
Var<Scalar> separable_conv2d(const Var<Scalar>& x, const Var<Scalar>& depthwise_weight,
                             const Var<Scalar>& pointwise_weight,
                             const std::optional<Var<Scalar>>& pointwise_bias, const SeparableSpec& spec) {
  auto mid = conv2d(x, depthwise_weight, std::optional<Var<Scalar>>{}, spec.depthwise());
  return conv2d(mid, pointwise_weight, pointwise_bias, spec.pointwise());
}

}  // namespace optounet
