#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tae/error.hpp"

namespace tae {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

/// Dense row-major tensor of doubles. A value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims(shape_);
    if (shape_numel(shape_) != data_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "Tensor: shape " + shape_str(shape_) + " holds " +
                                                std::to_string(shape_numel(shape_)) + " values, got " +
                                                std::to_string(data_.size()));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor(Shape{values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> data;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw Error(ErrorCode::ShapeMismatch, "Tensor::matrix: ragged rows");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Number of leading-dimension rows and the width of each flattened row.
  std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t row_width() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }

  std::span<const double> row(std::size_t r) const {
    const std::size_t w = row_width();
    return std::span<const double>(data_).subspan(r * w, w);
  }
  std::span<double> row(std::size_t r) {
    const std::size_t w = row_width();
    return std::span<double>(data_).subspan(r * w, w);
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  /// Gathers rows (along dim 0) into a new tensor of shape [indices.size(), ...].
  Tensor gather_rows(std::span<const std::size_t> indices) const {
    Shape out_shape = shape_;
    out_shape[0] = indices.size();
    Tensor out(out_shape);
    const std::size_t w = row_width();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = row(indices[i]);
      std::copy(src.begin(), src.end(), out.data_.begin() + static_cast<std::ptrdiff_t>(i * w));
    }
    return out;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static void check_dims(const Shape& shape) {
    for (std::size_t d : shape)
      if (d == 0) throw Error(ErrorCode::ShapeMismatch, "Tensor: zero-sized dim in " + shape_str(shape));
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace tae
