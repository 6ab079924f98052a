#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace changediff {

// Dense row-major double tensor. Desk scale favors double throughout: the
// finite-difference checks need the headroom and the grids are tiny.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s)
      : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), 0.0) {}

  static int64_t numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }
  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  double& operator[](size_t i) { return data[i]; }
  double operator[](size_t i) const { return data[i]; }
  double item() const { return data.at(0); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  std::string shape_str() const;
};

}  // namespace changediff
