#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tae/autodiff.hpp"
#include "tae/class_map.hpp"
#include "tae/error.hpp"

namespace tae {

struct ReweightConfig {
  double beta = 0.95;
  std::map<int, double> weights;  // class -> w_i

  double weight(int label) const {
    auto it = weights.find(label);
    if (it == weights.end()) throw Error(ErrorCode::MissingClass, "weighted_ce: class " + std::to_string(label) + " has no weight");
    return it->second;
  }
};

/// Effective-number weights w_i = (1 - beta) / (1 - beta^k_i).
inline ReweightConfig effective_weights(const std::map<int, std::size_t>& counts, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw Error(ErrorCode::InvalidArgument, "effective_weights: beta must be in [0, 1), got " + std::to_string(beta));
  ReweightConfig cfg{beta, {}};
  for (const auto& [label, k] : counts) {
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "effective_weights: class " + std::to_string(label) + " has zero samples");
    cfg.weights[label] = (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(k)));
  }
  return cfg;
}

/// Uniform weights of 1 for the given classes (plain cross-entropy).
inline ReweightConfig uniform_weights(const std::map<int, std::size_t>& counts) {
  ReweightConfig cfg{0.0, {}};
  for (const auto& [label, k] : counts) cfg.weights[label] = 1.0;
  return cfg;
}

/// Rescales weights to mean 1 over the listed classes. Ratios are unchanged.
inline ReweightConfig normalized(ReweightConfig cfg) {
  if (cfg.weights.empty()) return cfg;
  double total = 0.0;
  for (const auto& [label, w] : cfg.weights) total += w;
  const double s = static_cast<double>(cfg.weights.size()) / total;
  for (auto& [label, w] : cfg.weights) w *= s;
  return cfg;
}

/// (1/B) * sum_i w_{y_i} * -log softmax(logits_i)[column(y_i)].
inline Var weighted_ce(Var logits, std::span<const int> labels, const ReweightConfig& weights, const ClassMap& columns) {
  std::vector<std::size_t> targets;
  std::vector<double> w;
  targets.reserve(labels.size());
  w.reserve(labels.size());
  for (int l : labels) {
    w.push_back(weights.weight(l));
    targets.push_back(columns.column(l));
  }
  return softmax_cross_entropy(logits, targets, w);
}

}  // namespace tae
