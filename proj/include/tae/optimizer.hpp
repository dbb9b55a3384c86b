#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "tae/error.hpp"
#include "tae/parameters.hpp"
#include "tae/tensor.hpp"

namespace tae {

/// Momentum SGD that only touches scalars whose mask bit is set:
///   m <- momentum * m + grad + wd * v;  v <- v - lr * m.
/// Masked-out scalars keep both their value and their momentum buffer.
class MomentumSgd {
 public:
  explicit MomentumSgd(double momentum = 0.9, double weight_decay = 0.0) : momentum_(momentum), weight_decay_(weight_decay) {}

  double momentum() const noexcept { return momentum_; }
  double weight_decay() const noexcept { return weight_decay_; }

  void step(ParameterStore& store, std::span<const Tensor> grads, const TrainableMask& mask, double lr) {
    if (grads.size() != store.count())
      throw Error(ErrorCode::ShapeMismatch, "sgd_step: " + std::to_string(grads.size()) + " gradients for " + std::to_string(store.count()) + " parameters");
    if (mask.size() != store.scalar_count())
      throw Error(ErrorCode::ShapeMismatch, "sgd_step: mask length " + std::to_string(mask.size()) + " != scalar count " + std::to_string(store.scalar_count()));
    for (std::size_t p = 0; p < store.count(); ++p) {
      const ParamId id{p};
      if (grads[p].size() != store.value(id).size())
        throw Error(ErrorCode::ShapeMismatch, "sgd_step: gradient shape " + shape_str(grads[p].shape()) + " for '" + store.name(id) + "' " + shape_str(store.value(id).shape()));
      if (!grads[p].all_finite()) throw Error(ErrorCode::NonFinite, "sgd_step: non-finite gradient in parameter '" + store.name(id) + "'");
    }
    sync(store);
    for (std::size_t p = 0; p < store.count(); ++p) {
      const ParamId id{p};
      auto& v = store.value(id).values();
      auto& m = buffers_[p];
      const auto& g = grads[p].values();
      const std::size_t base = store.flat_offset(id);
      for (std::size_t k = 0; k < v.size(); ++k) {
        if (!mask[base + k]) continue;
        m[k] = momentum_ * m[k] + g[k] + weight_decay_ * v[k];
        v[k] -= lr * m[k];
      }
    }
  }

  /// Zeroes momentum for every scalar whose mask bit is false.
  void reset_frozen(const ParameterStore& store, const TrainableMask& mask) {
    sync(store);
    for (std::size_t p = 0; p < store.count(); ++p) {
      const std::size_t base = store.flat_offset(ParamId{p});
      for (std::size_t k = 0; k < buffers_[p].size(); ++k)
        if (!mask[base + k]) buffers_[p][k] = 0.0;
    }
  }

  const std::vector<std::vector<double>>& buffers() const noexcept { return buffers_; }

 private:
  void sync(const ParameterStore& store) {
    for (std::size_t p = buffers_.size(); p < store.count(); ++p) buffers_.emplace_back(store.value(ParamId{p}).size(), 0.0);
  }

  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> buffers_;
};

}  // namespace tae
