#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "optounet/model.hpp"
#include "optounet/tensor.hpp"

namespace optounet {

/// Running mean of squared gradients per parameter element:
///   acc   <- rho * acc + (1 - rho) * g^2
///   theta <- theta - lr * g / sqrt(acc + eps)
template <typename Scalar>
struct RmspropState {
  double lr = 1e-4;
  double rho = 0.9;
  double eps = 1e-8;
  std::vector<Tensor4<Scalar>> acc;

  RmspropState() = default;
  RmspropState(double lr_, double rho_, double eps_) : lr(lr_), rho(rho_), eps(eps_) {}

  /// Zero accumulators shaped like params.
  void init(std::span<const ParamTensor<Scalar>> params) {
    acc.clear();
    acc.reserve(params.size());
    for (const auto& p : params) acc.push_back(Tensor4<Scalar>::zeros(p.value.dims()));
  }
};

/// grads[i] is the gradient of params[i]; a null entry is an error.
template <typename Scalar>
void rmsprop_step(std::span<ParamTensor<Scalar>> params, std::span<const Tensor4<Scalar>* const> grads,
                  RmspropState<Scalar>& state) {
  if (state.acc.empty() && !params.empty()) state.init(params);
  if (state.acc.size() != params.size()) {
    throw IdentityError("rmsprop: state tracks " + std::to_string(state.acc.size()) + " tensors, got " +
                        std::to_string(params.size()) + " parameters");
  }
  if (grads.size() != params.size()) {
    throw IdentityError("rmsprop: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  const auto rho = static_cast<Scalar>(state.rho);
  const auto one_minus_rho = static_cast<Scalar>(1.0 - state.rho);
  const auto lr = static_cast<Scalar>(state.lr);
  const auto eps = static_cast<Scalar>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* g = grads[i];
    if (g == nullptr) throw IdentityError("rmsprop: missing gradient for '" + params[i].name + "'");
    auto& theta = params[i].value;
    auto& a = state.acc[i];
    if (g->dims() != theta.dims() || a.dims() != theta.dims()) {
      throw ShapeError("rmsprop: dims mismatch for '" + params[i].name + "'");
    }
    a.array() = rho * a.array() + one_minus_rho * g->array().square();
    theta.array() -= lr * g->array() / (a.array() + eps).sqrt();
  }
}

}  // namespace optounet
