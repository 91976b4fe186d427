#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "optounet/tape.hpp"
#include "optounet/tensor.hpp"

namespace optounet {

enum class DiceForm {
  /// Foreground and background overlap ratios summed; 1 at perfect agreement.
  TwoTerm,
  /// Single foreground term 2*sum(p*y)+eps over sum(p)+sum(y)+eps.
  Classical,
};

struct DiceConfig {
  double eps = 1.0;
  DiceForm form = DiceForm::TwoTerm;

  void validate() const {
    if (!(eps > 0.0)) throw ConfigError("dice eps must be > 0");
  }
};

namespace detail {

template <typename Scalar>
void check_dice_inputs(const Tensor4<Scalar>& p, const Tensor4<Scalar>& y) {
  if (p.dims() != y.dims()) {
    throw ShapeError("dice: prediction dims " + p.dims().str() + " vs labels " + y.dims().str());
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= Scalar(0) && p[i] <= Scalar(1))) {
      throw DomainError("dice: prediction " + std::to_string(p[i]) + " at index " + std::to_string(i) +
                        " is outside [0,1]");
    }
    if (y[i] != Scalar(0) && y[i] != Scalar(1)) {
      throw DomainError("dice: label at index " + std::to_string(i) + " is not 0 or 1");
    }
  }
}

}  // namespace detail

/// Dice coefficient over all N elements of p (predicted probabilities) and y
/// (binary labels). TwoTerm form:
///   (sum p*y + eps) / (sum (p + y) + eps)
/// + (sum (1-p)*(1-y) + eps) / (sum (2 - p - y) + eps)
template <typename Scalar>
Var<Scalar> dice_coefficient(const Var<Scalar>& p, const Var<Scalar>& y, const DiceConfig& cfg = {}) {
  detail::check_same_tape(p, y);
  detail::check_dice_inputs(p.value(), y.value());
  cfg.validate();
  const auto eps = static_cast<Scalar>(cfg.eps);
  auto overlap = reduce_sum(mul(p, y));
  auto total = reduce_sum(add(p, y));
  if (cfg.form == DiceForm::Classical) {
    return div(affine(overlap, Scalar(2), eps), add_scalar(total, eps));
  }
  auto fg = div(add_scalar(overlap, eps), add_scalar(total, eps));
  auto p_bg = affine(p, Scalar(-1), Scalar(1));
  auto y_bg = affine(y, Scalar(-1), Scalar(1));
  auto bg_overlap = reduce_sum(mul(p_bg, y_bg));
  auto bg_total = reduce_sum(add(p_bg, y_bg));
  auto bg = div(add_scalar(bg_overlap, eps), add_scalar(bg_total, eps));
  return add(fg, bg);
}

/// 1 - dice_coefficient.
template <typename Scalar>
Var<Scalar> dice_loss(const Var<Scalar>& p, const Var<Scalar>& y, const DiceConfig& cfg = {}) {
  return affine(dice_coefficient(p, y, cfg), Scalar(-1), Scalar(1));
}

/// Tape-free evaluation, accumulated in double.
template <typename Scalar>
double dice_coefficient_value(const Tensor4<Scalar>& p, const Tensor4<Scalar>& y, const DiceConfig& cfg = {}) {
  detail::check_dice_inputs(p, y);
  cfg.validate();
  double overlap = 0, total = 0, bg_overlap = 0, bg_total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i], yi = y[i];
    overlap += pi * yi;
    total += pi + yi;
    bg_overlap += (1 - pi) * (1 - yi);
    bg_total += 2 - pi - yi;
  }
  if (cfg.form == DiceForm::Classical) return (2 * overlap + cfg.eps) / (total + cfg.eps);
  return (overlap + cfg.eps) / (total + cfg.eps) + (bg_overlap + cfg.eps) / (bg_total + cfg.eps);
}

}  // namespace optounet
