#pragma once

#include <memory>
#include <numeric>
#include <vector>

#include "pathfinder/common.hpp"
#include "pathfinder/grid.hpp"

namespace pathfinder {

// Dense double tensor with shared storage. Copies alias the same buffer;
// tape operations never mutate their inputs, and in-place writes through
// mut() are reserved for owners (parameter store, initializers).
class Tensor {
 public:
  Tensor() : shape_{}, buf_(std::make_shared<std::vector<double>>()) {}

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        buf_(std::make_shared<std::vector<double>>(count(shape_), 0.0)) {}

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.buf_->begin(), t.buf_->end(), v);
    return t;
  }

  static Tensor from(std::vector<int> shape, std::vector<double> data) {
    require(count(shape) == data.size(), "Tensor::from: ", data.size(),
            " values for shape of ", count(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.buf_ = std::make_shared<std::vector<double>>(std::move(data));
    return t;
  }

  static Tensor from_grid(const Grid& g) {
    Tensor t({1, g.rows, g.cols});
    std::copy(g.v.begin(), g.v.end(), t.mut());
    return t;
  }

  Grid to_grid() const {
    require(shape_.size() == 3 && shape_[0] == 1, "Tensor::to_grid: expected 1xHxW");
    Grid g(shape_[1], shape_[2]);
    std::copy(buf_->begin(), buf_->end(), g.v.begin());
    return g;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::size_t size() const { return buf_->size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  const double* data() const { return buf_->data(); }
  double* mut() { return buf_->data(); }

  double operator[](std::size_t i) const { return (*buf_)[i]; }

  double at(int i, int j) const { return (*buf_)[std::size_t(i) * dim(1) + j]; }
  double at(int c, int i, int j) const {
    return (*buf_)[(std::size_t(c) * dim(1) + i) * dim(2) + j];
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.buf_ = std::make_shared<std::vector<double>>(*buf_);
    return t;
  }

  // Same storage, new shape (element count must match).
  Tensor reshaped(std::vector<int> shape) const {
    require(count(shape) == size(), "Tensor::reshaped: element count mismatch");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool finite() const { return all_finite(*buf_); }

  double max_abs() const {
    double m = 0.0;
    for (double x : *buf_) m = std::max(m, std::abs(x));
    return m;
  }

 private:
  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      require(d >= 0, "Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> buf_;
};

inline std::string shape_string(const Tensor& t) {
  std::string s = "(";
  for (int i = 0; i < t.ndim(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.dim(i));
  }
  return s + ")";
}

}  // namespace pathfinder
