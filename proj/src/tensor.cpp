#include "nllm/tensor.hpp"

#include <string>

#include "nllm/error.hpp"

namespace nllm {

Shape::Shape(std::initializer_list<int> dims) {
  if (dims.size() == 0 || dims.size() > 2) {
    throw ShapeError("shape must have rank 1 or 2");
  }
  rank_ = static_cast<int>(dims.size());
  int k = 0;
  for (int d : dims) {
    if (d <= 0) throw ShapeError("shape dimensions must be positive");
    dims_[static_cast<std::size_t>(k++)] = d;
  }
  if (rank_ == 1) dims_[1] = 1;
}

std::string Shape::str() const {
  if (rank_ == 1) return "[" + std::to_string(dims_[0]) + "]";
  return "[" + std::to_string(dims_[0]) + "x" + std::to_string(dims_[1]) + "]";
}

Tensor::Tensor(Shape s, std::vector<double> v, bool grad)
    : shape(s), values(std::move(v)), requires_grad(grad) {
  if (static_cast<int>(values.size()) != shape.size()) {
    throw ShapeError("tensor value count " + std::to_string(values.size()) +
                     " does not match shape " + shape.str());
  }
}

Tensor Tensor::vector(std::vector<double> v, bool grad) {
  if (v.empty()) throw ShapeError("empty vector tensor");
  const int n = static_cast<int>(v.size());
  return Tensor(Shape::vector(n), std::move(v), grad);
}

}  // namespace nllm
