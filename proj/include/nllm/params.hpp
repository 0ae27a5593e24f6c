#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "nllm/tensor.hpp"

namespace nllm {

enum class Init { Zero, Glorot };

/// A named trainable array owned by a ParamSet. Address-stable for the
/// lifetime of its set.
class Parameter {
 public:
  Parameter(std::string name, Shape shape, Init init, int index)
      : name_(std::move(name)), value_(shape), init_(init), index_(index) {}

  const std::string& name() const { return name_; }
  const Shape& shape() const { return value_.shape; }
  Tensor& value() { return value_; }
  const Tensor& value() const { return value_; }
  Init init() const { return init_; }
  int index() const { return index_; }

 private:
  std::string name_;
  Tensor value_;
  Init init_;
  int index_;
};

/// Per-parameter gradient arrays, indexed by Parameter::index().
using GradBuffer = std::vector<std::vector<double>>;

class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;

  Parameter& add(std::string name, Shape shape, Init init = Init::Glorot);

  int size() const { return static_cast<int>(params_.size()); }
  Parameter& operator[](int i) { return *params_[static_cast<std::size_t>(i)]; }
  const Parameter& operator[](int i) const { return *params_[static_cast<std::size_t>(i)]; }
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::size_t scalar_count() const;

  /// Glorot-uniform for weights, zero for Init::Zero.
  void initialize(std::mt19937_64& rng);

  GradBuffer zero_grads() const;
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

void zero(GradBuffer& grads);
double global_norm(const GradBuffer& grads);
void scale(GradBuffer& grads, double factor);
/// Rescales so the global norm is at most max_norm; returns the norm before clipping.
double clip_global_norm(GradBuffer& grads, double max_norm);

}  // namespace nllm
