#include "nllm/params.hpp"

#include <cmath>

#include "nllm/error.hpp"

namespace nllm {

Parameter& ParamSet::add(std::string name, Shape shape, Init init) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Parameter>(std::move(name), shape, init, size()));
  return *params_.back();
}

Parameter* ParamSet::find(std::string_view name) {
  for (auto& p : params_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParamSet::find(std::string_view name) const {
  for (const auto& p : params_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value().values.size();
  return n;
}

void ParamSet::initialize(std::mt19937_64& rng) {
  for (auto& p : params_) {
    auto& vals = p->value().values;
    if (p->init() == Init::Zero) {
      std::fill(vals.begin(), vals.end(), 0.0);
      continue;
    }
    const double fan_in = p->shape().cols();
    const double fan_out = p->shape().rows();
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : vals) v = dist(rng);
  }
}

GradBuffer ParamSet::zero_grads() const {
  GradBuffer g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.emplace_back(p->value().values.size(), 0.0);
  return g;
}

std::vector<Tensor> ParamSet::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p->value());
  return out;
}

void ParamSet::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw ShapeError("snapshot parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!(values[i].shape == params_[i]->shape())) {
      throw ShapeError("snapshot shape mismatch for " + params_[i]->name());
    }
    params_[i]->value().values = values[i].values;
  }
}

void zero(GradBuffer& grads) {
  for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
}

double global_norm(const GradBuffer& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double v : g) s += v * v;
  }
  return std::sqrt(s);
}

void scale(GradBuffer& grads, double factor) {
  for (auto& g : grads) {
    for (double& v : g) v *= factor;
  }
}

double clip_global_norm(GradBuffer& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (std::isfinite(max_norm) && norm > max_norm) scale(grads, max_norm / norm);
  return norm;
}

}  // namespace nllm
