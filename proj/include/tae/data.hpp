#pragma once

// Datasets, the binary tensor/label file formats, long-tail transformation,
// incremental task splits, herding exemplar selection and replay memory.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tae/binary_io.hpp"
#include "tae/error.hpp"
#include "tae/models.hpp"
#include "tae/rng.hpp"
#include "tae/tensor.hpp"

namespace tae {

struct LabeledDataset {
  Tensor samples;           // [N, ...input dims]
  std::vector<int> labels;  // [N], each in [0, class_count)
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }

  Shape sample_shape() const { return Shape(samples.shape().begin() + 1, samples.shape().end()); }

  void validate() const {
    if (labels.empty()) throw Error(ErrorCode::InvalidArgument, "dataset: no samples");
    if (samples.rows() != labels.size())
      throw Error(ErrorCode::ShapeMismatch, "dataset: " + std::to_string(samples.rows()) + " samples but " + std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count)
        throw Error(ErrorCode::LabelOutOfRange, "dataset: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                                    " outside [0, " + std::to_string(class_count) + ")");
  }

  /// Sample indices of each class, ascending.
  std::vector<std::vector<std::size_t>> class_indices() const {
    std::vector<std::vector<std::size_t>> out(class_count);
    for (std::size_t i = 0; i < labels.size(); ++i) out[static_cast<std::size_t>(labels[i])].push_back(i);
    return out;
  }

  Tensor batch(std::span<const std::size_t> indices) const { return samples.gather_rows(indices); }

  /// Subset keeping the given sample indices in the given order.
  LabeledDataset subset(std::span<const std::size_t> indices) const {
    LabeledDataset out{samples.gather_rows(indices), {}, class_count};
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) out.labels.push_back(labels[i]);
    return out;
  }
};

// ---------------------------------------------------------------------------
// File formats
//   tensor: "TAED", u32 version=1, u8 dtype (0 = f32 LE), u8 ndim, ndim x u32 dims, payload
//   labels: "TAEL", u32 version=1, u32 count, count x u32 labels

inline constexpr std::uint32_t kDataFormatVersion = 1;
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 36;

inline io::Bytes encode_tensor_file(const Tensor& t) {
  if (t.rank() == 0 || t.rank() > 255) throw Error(ErrorCode::InvalidArgument, "tensor file: rank must be in [1, 255]");
  io::Writer w;
  w.magic("TAED");
  w.put<std::uint32_t>(kDataFormatVersion);
  w.put<std::uint8_t>(0);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw Error(ErrorCode::DimOverflow, "tensor file: dim exceeds u32");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  }
  for (double v : t.values()) w.put<float>(static_cast<float>(v));
  return std::move(w.bytes());
}

inline Tensor decode_tensor_file(const io::Bytes& bytes, const std::string& context = "tensor file") {
  io::Reader r(bytes, context);
  r.expect_magic("TAED");
  if (const auto v = r.get<std::uint32_t>("version"); v != kDataFormatVersion)
    throw Error(ErrorCode::BadVersion, context + ": unsupported version " + std::to_string(v));
  if (const auto dt = r.get<std::uint8_t>("dtype"); dt != 0)
    throw Error(ErrorCode::BadDtype, context + ": unsupported dtype " + std::to_string(dt) + " (only 0 = f32)");
  const auto ndim = r.get<std::uint8_t>("ndim");
  if (ndim == 0) throw Error(ErrorCode::DimOverflow, context + ": ndim must be >= 1");
  Shape shape;
  std::uint64_t numel = 1;
  for (std::uint8_t i = 0; i < ndim; ++i) {
    const auto d = r.get<std::uint32_t>("dims");
    if (d == 0) throw Error(ErrorCode::DimOverflow, context + ": zero-sized dim " + std::to_string(i));
    numel *= d;
    if (numel > kMaxElements) throw Error(ErrorCode::DimOverflow, context + ": element count exceeds 2^36");
    shape.push_back(d);
  }
  const std::uint64_t expected = numel * sizeof(float);
  if (r.remaining() != expected)
    throw Error(ErrorCode::Truncated, context + ": data section expected " + std::to_string(expected) + " bytes, found " + std::to_string(r.remaining()));
  std::vector<double> data(numel);
  for (std::uint64_t i = 0; i < numel; ++i) {
    float f;
    std::memcpy(&f, r.cursor() + i * sizeof(float), sizeof(float));
    data[i] = f;
  }
  return Tensor(std::move(shape), std::move(data));
}

inline io::Bytes encode_label_file(std::span<const int> labels) {
  io::Writer w;
  w.magic("TAEL");
  w.put<std::uint32_t>(kDataFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) w.put<std::uint32_t>(static_cast<std::uint32_t>(l));
  return std::move(w.bytes());
}

inline std::vector<int> decode_label_file(const io::Bytes& bytes, const std::string& context = "label file") {
  io::Reader r(bytes, context);
  r.expect_magic("TAEL");
  if (const auto v = r.get<std::uint32_t>("version"); v != kDataFormatVersion)
    throw Error(ErrorCode::BadVersion, context + ": unsupported version " + std::to_string(v));
  const auto count = r.get<std::uint32_t>("count");
  const std::uint64_t expected = std::uint64_t{count} * sizeof(std::uint32_t);
  if (r.remaining() != expected)
    throw Error(ErrorCode::Truncated, context + ": label section expected " + std::to_string(expected) + " bytes, found " + std::to_string(r.remaining()));
  std::vector<int> labels(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto l = r.get<std::uint32_t>("label");
    if (l > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) throw Error(ErrorCode::LabelOutOfRange, context + ": label too large");
    labels[i] = static_cast<int>(l);
  }
  return labels;
}

inline void write_dataset(const LabeledDataset& ds, const std::string& tensor_path, const std::string& label_path) {
  io::write_file(tensor_path, encode_tensor_file(ds.samples));
  io::write_file(label_path, encode_label_file(ds.labels));
}

/// Loads and validates a dataset. When `class_count` is 0 it is inferred as max label + 1.
inline LabeledDataset load_dataset(const std::string& tensor_path, const std::string& label_path, std::size_t class_count = 0) {
  LabeledDataset ds;
  ds.samples = decode_tensor_file(io::read_file(tensor_path), tensor_path);
  ds.labels = decode_label_file(io::read_file(label_path), label_path);
  if (ds.labels.empty()) throw Error(ErrorCode::InvalidArgument, "load_dataset: '" + label_path + "' holds no labels");
  if (class_count == 0) class_count = static_cast<std::size_t>(*std::max_element(ds.labels.begin(), ds.labels.end())) + 1;
  ds.class_count = class_count;
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// Long-tail protocol

struct LTProtocol {
  double rho = 0.1;
  std::size_t head_count = 500;
  std::size_t memory_per_class = 20;
  bool shuffled = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(rho > 0.0 && rho <= 1.0)) throw Error(ErrorCode::Config, "protocol: rho must be in (0, 1]");
    if (head_count < 1 || static_cast<double>(head_count) * rho < 1.0) throw Error(ErrorCode::Config, "protocol: head_count * rho must be >= 1");
    if (memory_per_class < 1) throw Error(ErrorCode::Config, "protocol: memory_per_class must be >= 1");
  }
};

/// Per-position quotas n_i = round(head * rho^(i / (C-1))).
inline std::vector<std::size_t> long_tail_counts(std::size_t classes, std::size_t head_count, double rho) {
  std::vector<std::size_t> counts(classes, head_count);
  if (classes < 2) return counts;
  for (std::size_t i = 0; i < classes; ++i) {
    const double exponent = static_cast<double>(i) / static_cast<double>(classes - 1);
    counts[i] = static_cast<std::size_t>(std::llround(static_cast<double>(head_count) * std::pow(rho, exponent)));
  }
  return counts;
}

/// Class label occupying each long-tail position: a seeded permutation when
/// shuffled, label order otherwise.
inline std::vector<int> long_tail_order(std::size_t classes, const LTProtocol& proto) {
  std::vector<int> order(classes);
  if (proto.shuffled) {
    auto perm = Rng::stream(proto.seed, 0x4c54).permutation(classes);
    for (std::size_t i = 0; i < classes; ++i) order[i] = static_cast<int>(perm[i]);
  } else {
    std::iota(order.begin(), order.end(), 0);
  }
  return order;
}

/// Keeps the first n_i samples (in index order) of the class at long-tail position i.
inline LabeledDataset make_long_tailed(const LabeledDataset& ds, const LTProtocol& proto) {
  proto.validate();
  const auto counts = long_tail_counts(ds.class_count, proto.head_count, proto.rho);
  const auto order = long_tail_order(ds.class_count, proto);
  const auto by_class = ds.class_indices();
  std::vector<std::size_t> quota(ds.class_count);
  for (std::size_t pos = 0; pos < ds.class_count; ++pos) {
    const auto label = static_cast<std::size_t>(order[pos]);
    if (by_class[label].size() < counts[pos])
      throw Error(ErrorCode::InsufficientSamples, "make_long_tailed: class " + std::to_string(label) + " needs " + std::to_string(counts[pos]) +
                                                      " samples, has " + std::to_string(by_class[label].size()) + " (deficit " +
                                                      std::to_string(counts[pos] - by_class[label].size()) + ")");
    quota[label] = counts[pos];
  }
  std::vector<std::size_t> keep;
  std::vector<std::size_t> taken(ds.class_count, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto c = static_cast<std::size_t>(ds.labels[i]);
    if (taken[c] < quota[c]) {
      keep.push_back(i);
      ++taken[c];
    }
  }
  return ds.subset(keep);
}

// ---------------------------------------------------------------------------
// Incremental tasks

struct TaskDataset {
  std::size_t task_id = 0;           // 1-based
  std::vector<int> classes;          // Y_t, in assignment order
  std::vector<std::size_t> indices;  // samples of the parent dataset, ascending

  std::size_t size() const noexcept { return indices.size(); }
};

/// Tasks holding exactly the given class sets (label spaces must be disjoint).
inline std::vector<TaskDataset> tasks_for_classes(const LabeledDataset& ds, const std::vector<std::vector<int>>& class_sets) {
  std::vector<int> owner(ds.class_count, -1);
  for (std::size_t t = 0; t < class_sets.size(); ++t)
    for (int c : class_sets[t]) {
      if (c < 0 || static_cast<std::size_t>(c) >= ds.class_count) throw Error(ErrorCode::LabelOutOfRange, "tasks: class " + std::to_string(c) + " out of range");
      if (owner[static_cast<std::size_t>(c)] != -1) throw Error(ErrorCode::InvalidArgument, "tasks: class " + std::to_string(c) + " assigned twice");
      owner[static_cast<std::size_t>(c)] = static_cast<int>(t);
    }
  std::vector<TaskDataset> tasks(class_sets.size());
  for (std::size_t t = 0; t < class_sets.size(); ++t) {
    tasks[t].task_id = t + 1;
    tasks[t].classes = class_sets[t];
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int o = owner[static_cast<std::size_t>(ds.labels[i])];
    if (o >= 0) tasks[static_cast<std::size_t>(o)].indices.push_back(i);
  }
  return tasks;
}

/// Equal B0 split: consecutive chunks of `class_order` of C/T classes each.
inline std::vector<TaskDataset> split_tasks(const LabeledDataset& ds, std::size_t steps, std::span<const int> class_order) {
  const std::size_t C = ds.class_count;
  if (steps < 1) throw Error(ErrorCode::InvalidArgument, "split_tasks: steps must be >= 1");
  if (C % steps != 0)
    throw Error(ErrorCode::InvalidArgument, "split_tasks: " + std::to_string(C) + " classes not divisible into " + std::to_string(steps) +
                                                " equal steps (only B0 equal splits are supported)");
  if (class_order.size() != C) throw Error(ErrorCode::InvalidArgument, "split_tasks: class order must list every class");
  const std::size_t per = C / steps;
  std::vector<std::vector<int>> sets(steps);
  for (std::size_t i = 0; i < C; ++i) sets[i / per].push_back(class_order[i]);
  return tasks_for_classes(ds, sets);
}

/// Label-order split.
inline std::vector<TaskDataset> split_tasks(const LabeledDataset& ds, std::size_t steps) {
  std::vector<int> order(ds.class_count);
  std::iota(order.begin(), order.end(), 0);
  return split_tasks(ds, steps, order);
}

/// Split over a seed-determined class order.
inline std::vector<TaskDataset> split_tasks(const LabeledDataset& ds, std::size_t steps, std::uint64_t seed) {
  auto perm = Rng::stream(seed, 0x5350).permutation(ds.class_count);
  std::vector<int> order(perm.begin(), perm.end());
  return split_tasks(ds, steps, order);
}

// ---------------------------------------------------------------------------
// Herding

/// iCaRL herding on the rows of `features` [n, d]: step k picks the unchosen
/// row minimizing || mu - (S + x) / (k + 1) || where S sums the rows chosen so
/// far. Ties go to the lowest index. Returns min(budget, n) indices in pick order.
inline std::vector<std::size_t> herding_select(const Tensor& features, std::size_t budget) {
  if (features.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "herding_select: features must be [n,d], got " + shape_str(features.shape()));
  const std::size_t n = features.dim(0), d = features.dim(1);
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mu[c] += features.at(i, c);
  for (auto& v : mu) v /= static_cast<double>(n);

  const std::size_t take = std::min(budget, n);
  std::vector<std::size_t> chosen;
  std::vector<bool> used(n, false);
  std::vector<double> running(d, 0.0);
  for (std::size_t k = 0; k < take; ++k) {
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      double dist = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = mu[c] - (running[c] + features.at(i, c)) / static_cast<double>(k + 1);
        dist += diff * diff;
      }
      if (best == n || dist < best_dist - 1e-12 * std::max(1.0, best_dist)) {  // near-ties keep the lower index
        best_dist = dist;
        best = i;
      }
    }
    used[best] = true;
    chosen.push_back(best);
    for (std::size_t c = 0; c < d; ++c) running[c] += features.at(best, c);
  }
  return chosen;
}

// ---------------------------------------------------------------------------
// Exemplar memory

struct ExemplarMemory {
  std::size_t budget_per_class = 20;
  std::map<int, std::vector<std::size_t>> entries;  // class -> dataset indices in herding order

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [c, e] : entries) n += e.size();
    return n;
  }

  friend bool operator==(const ExemplarMemory&, const ExemplarMemory&) = default;
};

/// Row-normalized features of the given samples, computed in batches.
inline Tensor extract_features(const Network& net, const LabeledDataset& ds, std::span<const std::size_t> indices, std::size_t batch_size = 256) {
  Tensor out(Shape{indices.size(), net.extractor.feature_dim()});
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    const Tensor f = net.features(ds.batch(indices.subspan(start, end - start)));
    std::copy(f.values().begin(), f.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(start * f.row_width()));
  }
  return out;
}

inline void normalize_rows_inplace(Tensor& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    double s = 0.0;
    for (double v : row) s += v * v;
    const double n = std::max(std::sqrt(s), 1e-12);
    for (auto& v : row) v /= n;
  }
}

/// Herds up to budget_per_class exemplars for every class of `task` not yet in
/// memory, using L2-normalized features of the trained extractor. Existing
/// entries are never modified.
inline void update_memory(ExemplarMemory& mem, const LabeledDataset& ds, const TaskDataset& task, const Network& net) {
  for (int c : task.classes) {
    if (mem.entries.contains(c)) continue;
    std::vector<std::size_t> members;
    for (std::size_t i : task.indices)
      if (ds.labels[i] == c) members.push_back(i);
    if (members.empty()) continue;
    Tensor feats = extract_features(net, ds, members);
    normalize_rows_inplace(feats);
    const auto picks = herding_select(feats, mem.budget_per_class);
    std::vector<std::size_t> chosen;
    for (std::size_t p : picks) chosen.push_back(members[p]);
    mem.entries.emplace(c, std::move(chosen));
  }
}

struct TrainingPool {
  std::vector<std::size_t> indices;      // D^t followed by memory entries
  std::map<int, std::size_t> counts;     // k_i^t per class in the pool
};

inline TrainingPool training_pool(const LabeledDataset& ds, const TaskDataset& task, const ExemplarMemory& mem) {
  TrainingPool pool;
  pool.indices = task.indices;
  for (const auto& [c, e] : mem.entries) pool.indices.insert(pool.indices.end(), e.begin(), e.end());
  for (std::size_t i : pool.indices) ++pool.counts[ds.labels[i]];
  return pool;
}

}  // namespace tae
