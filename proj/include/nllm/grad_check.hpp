#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nllm/graph.hpp"

namespace nllm {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int worst_tensor = -1;
  int worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, kGradCheckFloor). Gradients whose magnitude is below
/// the floor are compared on an absolute scale.
inline constexpr double kGradCheckFloor = 1e-2;
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<ad::Var(ad::Graph&, std::span<const ad::Var>)>;

/// Compares reverse-mode gradients of f at `point` with central differences.
GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> point, double step);

using LossFn = std::function<ad::Var(ad::Graph&)>;

/// Same comparison over every scalar of every parameter in `params`. The loss
/// must be a deterministic function of the parameter values.
GradCheckResult grad_check_params(ParamSet& params, const LossFn& loss, double step);

}  // namespace nllm
