#pragma once

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tae/error.hpp"
#include "tae/tensor.hpp"

namespace tae {

/// Index of a parameter tensor inside a ParameterStore.
struct ParamId {
  std::size_t value = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

/// (name, offset) coordinates of one scalar.
struct ScalarLocation {
  std::string name;
  std::size_t offset = 0;
  friend bool operator==(const ScalarLocation&, const ScalarLocation&) = default;
};

/// Ordered list of named parameter tensors with a stable flat indexing.
///
/// Scalars are numbered by registration order, then row-major within each
/// tensor. Parameters are only ever appended, so the flat index of an
/// existing scalar never changes.
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor value) {
    if (by_name_.contains(name)) throw Error(ErrorCode::InvalidArgument, "ParameterStore: duplicate name '" + name + "'");
    ParamId id{params_.size()};
    offsets_.push_back(total_);
    total_ += value.size();
    by_name_.emplace(name, id.value);
    names_.push_back(std::move(name));
    params_.push_back(std::move(value));
    return id;
  }

  std::size_t count() const noexcept { return params_.size(); }
  std::size_t scalar_count() const noexcept { return total_; }

  const Tensor& value(ParamId id) const { return params_.at(id.value); }
  Tensor& value(ParamId id) { return params_.at(id.value); }
  const std::string& name(ParamId id) const { return names_.at(id.value); }
  std::size_t flat_offset(ParamId id) const { return offsets_.at(id.value); }

  ParamId find(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw Error(ErrorCode::InvalidArgument, "ParameterStore: no parameter '" + name + "'");
    return ParamId{it->second};
  }

  ScalarLocation locate(std::size_t flat) const {
    if (flat >= total_) throw Error(ErrorCode::InvalidArgument, "ParameterStore: flat index out of range");
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat);
    const std::size_t idx = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return {names_[idx], flat - offsets_[idx]};
  }

  std::size_t flat_index(const std::string& name, std::size_t offset) const {
    ParamId id = find(name);
    if (offset >= params_[id.value].size()) throw Error(ErrorCode::InvalidArgument, "ParameterStore: offset out of range for '" + name + "'");
    return offsets_[id.value] + offset;
  }

  double scalar(std::size_t flat) const {
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat);
    const std::size_t idx = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return params_[idx][flat - offsets_[idx]];
  }

  /// All scalars concatenated in flat order.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(total_);
    for (const auto& p : params_) out.insert(out.end(), p.values().begin(), p.values().end());
    return out;
  }

  /// Overwrites all scalars from a flat vector of matching length.
  void assign_flat(std::span<const double> flat) {
    if (flat.size() != total_) throw Error(ErrorCode::ShapeMismatch, "ParameterStore::assign_flat: length mismatch");
    std::size_t pos = 0;
    for (auto& p : params_) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), p.size(), p.values().begin());
      pos += p.size();
    }
  }

  bool bit_equal(const ParameterStore& other) const {
    if (other.params_.size() != params_.size() || other.total_ != total_) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].shape() != other.params_[i].shape()) return false;
      if (std::memcmp(params_[i].values().data(), other.params_[i].values().data(), params_[i].size() * sizeof(double)) != 0)
        return false;
    }
    return true;
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
  std::vector<std::size_t> offsets_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::size_t total_ = 0;
};

/// One trainable bit per scalar of a ParameterStore, in flat order.
class TrainableMask {
 public:
  TrainableMask() = default;
  explicit TrainableMask(std::size_t n, bool value = false) : bits_(n, value) {}
  explicit TrainableMask(std::vector<bool> bits) : bits_(std::move(bits)) {}

  static TrainableMask all(std::size_t n) { return TrainableMask(n, true); }
  static TrainableMask none(std::size_t n) { return TrainableMask(n, false); }

  std::size_t size() const noexcept { return bits_.size(); }
  bool operator[](std::size_t i) const { return bits_[i]; }
  void set(std::size_t i, bool v = true) { bits_.at(i) = v; }

  std::size_t popcount() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true)); }

  std::vector<std::size_t> selected() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) out.push_back(i);
    return out;
  }

  /// Grows the mask to `n` scalars, filling new bits with `value`.
  void resize(std::size_t n, bool value) { bits_.resize(n, value); }

  friend bool operator==(const TrainableMask&, const TrainableMask&) = default;

 private:
  std::vector<bool> bits_;
};

}  // namespace tae
