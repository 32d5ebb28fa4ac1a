#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sdrgnn/errors.hpp"

namespace sdrgnn {

// Dense row-major tensor of 64-bit reals. The shape is fixed at construction;
// there is no reshape-in-place. Rank 0 (scalar), 1 and 2 are what the rest of
// the code uses.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<size_t>(numel_from_shape()), 0.0);
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, double v) {
    Tensor t(std::move(shape));
    t.fill(v);
    return t;
  }

  static Tensor scalar(double v) {
    Tensor t(std::vector<int64_t>{});
    t.data_[0] = v;
    return t;
  }

  static Tensor vector(std::vector<double> values) {
    Tensor t;
    t.shape_ = {static_cast<int64_t>(values.size())};
    t.data_ = std::move(values);
    return t;
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const int64_t r = static_cast<int64_t>(rows.size());
    const int64_t c = r > 0 ? static_cast<int64_t>(rows.begin()->size()) : 0;
    Tensor t({r, c});
    int64_t i = 0;
    for (const auto& row : rows) {
      if (static_cast<int64_t>(row.size()) != c)
        throw ShapeError("matrix literal has ragged rows");
      int64_t j = 0;
      for (double v : row) t.at(i, j++) = v;
      ++i;
    }
    return t;
  }

  // `checked` rejects NaN/Inf; used at ingest boundaries.
  static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                          bool checked = false) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.validate_shape();
    if (static_cast<int64_t>(data.size()) != t.numel_from_shape())
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_string(t.shape_));
    t.data_ = std::move(data);
    if (checked && !t.all_finite())
      throw DataError("non-finite value in tensor of shape " + shape_string(t.shape_));
    return t;
  }

  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t extent(int64_t axis) const { return shape_[static_cast<size_t>(axis)]; }
  const std::vector<int64_t>& shape() const { return shape_; }

  int64_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 1); }
  int64_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 1); }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t i) { return data_[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  void fill(double v) {
    for (auto& x : data_) x = v;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  std::string shape_str() const { return shape_string(shape_); }

  static std::string shape_string(const std::vector<int64_t>& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
      if (i) os << 'x';
      os << s[i];
    }
    os << ']';
    return os.str();
  }

 private:
  void validate_shape() const {
    for (int64_t e : shape_)
      if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_string(shape_));
  }

  int64_t numel_from_shape() const {
    int64_t n = 1;
    for (int64_t e : shape_) n *= e;
    return n;
  }

  std::vector<int64_t> shape_;
  std::vector<double> data_ = {0.0};  // rank-0 default holds one value
};

inline bool approx_equal(const Tensor& a, const Tensor& b, double tol = 1e-12) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (std::abs(a[i] - b[i]) > tol) return false;
  return true;
}

}  // namespace sdrgnn
