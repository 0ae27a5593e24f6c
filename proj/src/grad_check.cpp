#include "nllm/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "nllm/error.hpp"

namespace nllm {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void record(GradCheckResult& r, double a, double n, int tensor, int index) {
  if (!std::isfinite(a) || !std::isfinite(n)) throw NumericError("grad_check: non-finite gradient");
  const double e = relative_error(a, n);
  ++r.checked;
  if (e > r.max_rel_error || r.worst_tensor < 0) {
    r.max_rel_error = e;
    r.worst_tensor = tensor;
    r.worst_index = index;
    r.analytic = a;
    r.numeric = n;
  }
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, std::span<const Tensor> point, double step) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  std::vector<Tensor> work(point.begin(), point.end());
  for (auto& t : work) t.requires_grad = true;

  auto evaluate = [&](bool want_grads, std::vector<std::vector<double>>* grads) {
    ad::Graph g;
    std::vector<ad::Var> leaves;
    leaves.reserve(work.size());
    for (const auto& t : work) leaves.push_back(g.input(t));
    ad::Var out = f(g, leaves);
    const double v = out.item();
    if (want_grads) {
      g.backward(out);
      for (auto leaf : leaves) {
        auto gr = g.grad(leaf);
        grads->emplace_back(gr.begin(), gr.end());
        if (grads->back().empty()) grads->back().assign(static_cast<std::size_t>(leaf.size()), 0.0);
      }
    }
    return v;
  };

  std::vector<std::vector<double>> analytic;
  evaluate(true, &analytic);

  GradCheckResult result;
  for (std::size_t t = 0; t < work.size(); ++t) {
    for (std::size_t i = 0; i < work[t].values.size(); ++i) {
      const double x0 = work[t].values[i];
      work[t].values[i] = x0 + step;
      const double up = evaluate(false, nullptr);
      work[t].values[i] = x0 - step;
      const double down = evaluate(false, nullptr);
      work[t].values[i] = x0;
      record(result, analytic[t][i], (up - down) / (2.0 * step), static_cast<int>(t), static_cast<int>(i));
    }
  }
  return result;
}

GradCheckResult grad_check_params(ParamSet& params, const LossFn& loss, double step) {
  if (!(step > 0.0)) throw ConfigError("grad_check: step must be positive");
  GradBuffer analytic = params.zero_grads();
  {
    ad::Graph g;
    ad::Var out = loss(g);
    g.backward(out);
    g.accumulate_param_grads(analytic);
  }
  auto value = [&] {
    ad::Graph g;
    return loss(g).item();
  };

  GradCheckResult result;
  for (int p = 0; p < params.size(); ++p) {
    auto& vals = params[p].value().values;
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double x0 = vals[i];
      vals[i] = x0 + step;
      const double up = value();
      vals[i] = x0 - step;
      const double down = value();
      vals[i] = x0;
      record(result, analytic[static_cast<std::size_t>(p)][i], (up - down) / (2.0 * step), p,
             static_cast<int>(i));
    }
  }
  return result;
}

}  // namespace nllm
