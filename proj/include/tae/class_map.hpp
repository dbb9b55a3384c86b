#pragma once

#include <map>
#include <string>
#include <vector>

#include "tae/error.hpp"

namespace tae {

/// Dataset label <-> classifier column. Columns are assigned in the order
/// classes are first seen, matching the head's chunked growth.
class ClassMap {
 public:
  std::size_t add(int label) {
    if (auto it = column_.find(label); it != column_.end()) return it->second;
    column_.emplace(label, labels_.size());
    labels_.push_back(label);
    return labels_.size() - 1;
  }

  bool contains(int label) const { return column_.contains(label); }

  std::size_t column(int label) const {
    auto it = column_.find(label);
    if (it == column_.end()) throw Error(ErrorCode::MissingClass, "class " + std::to_string(label) + " has no classifier column");
    return it->second;
  }

  int label(std::size_t column) const { return labels_.at(column); }
  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<int>& labels() const noexcept { return labels_; }

  friend bool operator==(const ClassMap&, const ClassMap&) = default;

 private:
  std::vector<int> labels_;
  std::map<int, std::size_t> column_;
};

}  // namespace tae
