#pragma once

#include <array>
#include <initializer_list>
#include <string>
#include <vector>

namespace nllm {

/// Rank-1 or rank-2 extent. A default-constructed shape is the scalar {1}.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims);

  static Shape scalar() { return Shape{1}; }
  static Shape vector(int n) { return Shape{n}; }
  static Shape matrix(int rows, int cols) { return Shape{rows, cols}; }

  int rank() const { return rank_; }
  int operator[](int axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
  int size() const { return rank_ == 1 ? dims_[0] : dims_[0] * dims_[1]; }
  int rows() const { return dims_[0]; }
  int cols() const { return rank_ == 2 ? dims_[1] : 1; }
  bool is_scalar() const { return rank_ == 1 && dims_[0] == 1; }

  bool operator==(const Shape&) const = default;
  std::string str() const;

 private:
  std::array<int, 2> dims_{1, 1};
  int rank_ = 1;
};

/// Dense row-major array of 64-bit floats.
struct Tensor {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;

  Tensor() : values(1, 0.0) {}
  explicit Tensor(Shape s) : shape(s), values(static_cast<std::size_t>(s.size()), 0.0) {}
  Tensor(Shape s, std::vector<double> v, bool grad = false);

  static Tensor scalar(double v, bool grad = false) { return Tensor(Shape::scalar(), {v}, grad); }
  static Tensor vector(std::vector<double> v, bool grad = false);

  int size() const { return shape.size(); }
  double& at(int r, int c) { return values[static_cast<std::size_t>(r * shape.cols() + c)]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r * shape.cols() + c)]; }
};

}  // namespace nllm
