#pragma once

// Centroid bank and the centroid-enhanced losses: min_loss pulls each
// feature toward its class centroid, max_loss pushes centroids apart.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tae/autodiff.hpp"
#include "tae/binary_io.hpp"
#include "tae/data.hpp"
#include "tae/error.hpp"
#include "tae/models.hpp"

namespace tae {

enum class CentroidStatus : std::uint8_t { Learnable = 0, Frozen = 1 };

enum class MaxScope { AllSeen, CurrentTask };

inline MaxScope parse_max_scope(const std::string& s) {
  if (s == "all-seen") return MaxScope::AllSeen;
  if (s == "current-task") return MaxScope::CurrentTask;
  throw Error(ErrorCode::Config, "unknown max_scope '" + s + "' (expected all-seen or current-task)");
}

inline std::string to_string(MaxScope s) { return s == MaxScope::AllSeen ? "all-seen" : "current-task"; }

/// cos(u, v) with norms floored at 1e-12, so zero vectors give 0 rather than NaN.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw Error(ErrorCode::ShapeMismatch, "cosine: length " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  const double c = uv / (std::max(std::sqrt(uu), 1e-12) * std::max(std::sqrt(vv), 1e-12));
  return std::clamp(c, -1.0, 1.0);
}

class CentroidBank {
 public:
  CentroidBank() = default;
  explicit CentroidBank(std::size_t feature_dim) : feature_dim_(feature_dim) {}

  std::size_t feature_dim() const noexcept { return feature_dim_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool contains(int label) const { return row_.contains(label); }
  const std::vector<int>& labels() const noexcept { return labels_; }

  std::size_t row(int label) const {
    auto it = row_.find(label);
    if (it == row_.end()) throw Error(ErrorCode::MissingClass, "centroid bank: no centroid for class " + std::to_string(label));
    return it->second;
  }

  const Tensor& centroid(int label) const { return centroids_[row(label)]; }
  CentroidStatus status(int label) const { return status_[row(label)]; }
  CentroidStatus status_at(std::size_t r) const { return status_.at(r); }

  void add(int label, Tensor centroid, CentroidStatus status = CentroidStatus::Learnable) {
    if (contains(label)) throw Error(ErrorCode::InvalidArgument, "centroid bank: class " + std::to_string(label) + " already present");
    if (centroid.size() != feature_dim_)
      throw Error(ErrorCode::ShapeMismatch, "centroid bank: centroid " + shape_str(centroid.shape()) + " for feature_dim " + std::to_string(feature_dim_));
    row_.emplace(label, labels_.size());
    labels_.push_back(label);
    centroids_.push_back(centroid.reshaped(Shape{feature_dim_}));
    status_.push_back(status);
  }

  void freeze_all() {
    for (auto& s : status_) s = CentroidStatus::Frozen;
  }

  /// All centroids stacked as [K, feature_dim] in bank order.
  Tensor matrix() const {
    Tensor m(Shape{std::max<std::size_t>(size(), 1), feature_dim_});
    for (std::size_t r = 0; r < size(); ++r) std::copy(centroids_[r].values().begin(), centroids_[r].values().end(), m.row(r).begin());
    return m;
  }

  Tensor& centroid_at(std::size_t r) { return centroids_.at(r); }

  friend bool operator==(const CentroidBank&, const CentroidBank&) = default;

 private:
  std::size_t feature_dim_ = 0;
  std::vector<int> labels_;
  std::vector<Tensor> centroids_;
  std::vector<CentroidStatus> status_;
  std::map<int, std::size_t> row_;
};

/// Freezes every existing centroid, then adds a learnable centroid for each
/// class of the task: the L2-normalized mean feature of its samples.
inline void init_centroids(CentroidBank& bank, const Network& net, const LabeledDataset& ds, const TaskDataset& task) {
  bank.freeze_all();
  for (int c : task.classes) {
    std::vector<std::size_t> members;
    for (std::size_t i : task.indices)
      if (ds.labels[i] == c) members.push_back(i);
    if (members.empty()) throw Error(ErrorCode::MissingClass, "init_centroids: class " + std::to_string(c) + " has no samples");
    const Tensor feats = extract_features(net, ds, members);
    Tensor mean(Shape{bank.feature_dim()}, 0.0);
    for (std::size_t r = 0; r < feats.rows(); ++r)
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += feats.at(r, k);
    double norm = 0.0;
    for (auto& v : mean.values()) {
      v /= static_cast<double>(feats.rows());
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      // Degenerate (all-zero) features: fall back to a basis vector.
      mean = Tensor(Shape{bank.feature_dim()}, 0.0);
      mean[bank.size() % bank.feature_dim()] = 1.0;
      norm = 1.0;
    }
    for (auto& v : mean.values()) v /= norm;
    bank.add(c, std::move(mean));
  }
}

/// The bank as a differentiable [K, d] leaf on `tape`.
inline Var bank_leaf(Tape& tape, const CentroidBank& bank) { return tape.leaf(bank.matrix()); }

/// -(1/B) * sum_i cos(f_i, c_{y_i}).
inline Var min_loss(Var features, std::span<const int> labels, const CentroidBank& bank, Var centroids) {
  if (features.shape().size() != 2 || features.shape()[0] != labels.size())
    throw Error(ErrorCode::ShapeMismatch, "min_loss: features " + shape_str(features.shape()) + " for " + std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> rows;
  rows.reserve(labels.size());
  for (int l : labels) {
    if (!bank.contains(l)) throw Error(ErrorCode::MissingClass, "min_loss: no centroid for class " + std::to_string(l));
    rows.push_back(bank.row(l));
  }
  return scale(mean(row_cosine(features, gather_rows(centroids, std::move(rows)))), -1.0);
}

/// Mean cosine over ordered pairs of distinct centroids in scope, computed as
/// (||sum u||^2 - sum ||u||^2) / (K (K - 1)) on unit-normalized rows. Zero when K < 2.
inline Var max_loss(const CentroidBank& bank, Var centroids, MaxScope scope, std::span<const int> current_classes = {}) {
  std::vector<std::size_t> rows;
  if (scope == MaxScope::AllSeen) {
    for (std::size_t r = 0; r < bank.size(); ++r) rows.push_back(r);
  } else {
    for (int c : current_classes) rows.push_back(bank.row(c));
  }
  const std::size_t K = rows.size();
  if (K < 2) return centroids.tape().constant(Tensor::scalar(0.0));
  Var u = normalize_rows(K == bank.size() ? centroids : gather_rows(centroids, rows));
  Var s = sum_rows(u);
  Var pairs = sub(dot(s, s), sum(mul(u, u)));
  return scale(pairs, 1.0 / static_cast<double>(K * (K - 1)));
}

/// Plain SGD on learnable centroids followed by projection back to unit norm.
/// Frozen centroids are left untouched.
inline void step_centroids(CentroidBank& bank, const Tensor& grad, double lr) {
  if (grad.rank() != 2 || grad.dim(0) < bank.size() || grad.dim(1) != bank.feature_dim())
    throw Error(ErrorCode::ShapeMismatch, "step_centroids: gradient " + shape_str(grad.shape()) + " for bank of " + std::to_string(bank.size()));
  for (std::size_t r = 0; r < bank.size(); ++r) {
    if (bank.status_at(r) == CentroidStatus::Frozen) continue;
    auto& c = bank.centroid_at(r).values();
    double norm = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) {
      c[k] -= lr * grad.at(r, k);
      norm += c[k] * c[k];
    }
    norm = std::max(std::sqrt(norm), 1e-12);
    for (auto& v : c) v /= norm;
  }
}

// ---------------------------------------------------------------------------
// Bank checkpoint: "TAEB", u32 version, u32 class count, then per class:
// u32 label, u8 status, feature_dim x f64.

inline constexpr std::uint32_t kBankVersion = 1;

inline io::Bytes encode_bank(const CentroidBank& bank) {
  io::Writer w;
  w.magic("TAEB");
  w.put<std::uint32_t>(kBankVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(bank.size()));
  for (int label : bank.labels()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(label));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(bank.status(label)));
    for (double v : bank.centroid(label).values()) w.put<double>(v);
  }
  return std::move(w.bytes());
}

/// The format does not store feature_dim; it is inferred from the payload
/// size when `feature_dim` is 0.
inline CentroidBank decode_bank(const io::Bytes& bytes, std::size_t feature_dim = 0) {
  io::Reader r(bytes, "centroid bank");
  r.expect_magic("TAEB");
  if (const auto v = r.get<std::uint32_t>("version"); v != kBankVersion)
    throw Error(ErrorCode::BadVersion, "centroid bank: unsupported version " + std::to_string(v));
  const auto count = r.get<std::uint32_t>("class count");
  if (feature_dim == 0) {
    if (count == 0) return CentroidBank(0);
    const std::size_t per = r.remaining() / count;
    if (per * count != r.remaining() || per < 5 + 8 || (per - 5) % 8 != 0)
      throw Error(ErrorCode::Truncated, "centroid bank: payload size inconsistent with " + std::to_string(count) + " classes");
    feature_dim = (per - 5) / 8;
  }
  CentroidBank bank(feature_dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto label = r.get<std::uint32_t>("label");
    const auto status = r.get<std::uint8_t>("status");
    if (status > 1) throw Error(ErrorCode::BadDtype, "centroid bank: unknown status " + std::to_string(status));
    Tensor c(Shape{feature_dim});
    for (auto& v : c.values()) v = r.get<double>("centroid");
    bank.add(static_cast<int>(label), std::move(c), static_cast<CentroidStatus>(status));
  }
  r.expect_end();
  return bank;
}

}  // namespace tae
