#pragma once

// Gradient-sensitivity ranking of extractor scalars: run the previous-task
// model over the new task's data, accumulate per-scalar gradient magnitude
// of the cross-entropy loss, and keep the top-p fraction trainable.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "tae/autodiff.hpp"
#include "tae/class_map.hpp"
#include "tae/data.hpp"
#include "tae/error.hpp"
#include "tae/models.hpp"
#include "tae/parameters.hpp"

namespace tae {

struct SensitivityOptions {
  std::size_t iterations = 1;  // Z: full passes over D^t
  std::size_t batch_size = 32;
  bool signed_accumulation = false;
};

struct SensitivityReport {
  std::vector<double> accumulated;  // one per extractor scalar, flat order, >= 0
  std::size_t iterations = 0;
  std::size_t first_flat = 0;  // flat index of accumulated[0] in the store
};

namespace detail {

/// Gradient of the unweighted batch cross-entropy with respect to every
/// extractor scalar, flattened in store order.
inline std::vector<double> extractor_ce_gradient(const Network& net, const LabeledDataset& ds, std::span<const std::size_t> batch,
                                                 const ClassMap& columns) {
  Tape tape;
  Var logits = net.logits(tape, net.embed(tape, ds.batch(batch)));
  std::vector<std::size_t> targets;
  targets.reserve(batch.size());
  for (std::size_t i : batch) targets.push_back(columns.column(ds.labels[i]));
  tape.backward(softmax_cross_entropy(logits, targets));
  const auto grads = tape.param_grads(net.store);
  std::vector<double> flat;
  flat.reserve(net.extractor.scalar_count());
  for (ParamId id : net.extractor.params()) {
    const auto& g = grads[id.value];
    if (!g.all_finite()) throw Error(ErrorCode::NonFinite, "accumulate_sensitivity: non-finite gradient in '" + net.store.name(id) + "'");
    flat.insert(flat.end(), g.values().begin(), g.values().end());
  }
  return flat;
}

}  // namespace detail

/// Z passes over the task's samples in fixed mini-batch order, summing
/// |dL_ce/dtheta| (or the signed gradient when requested) and dividing by Z.
/// Parameters are never modified.
inline SensitivityReport accumulate_sensitivity(const Network& net, const LabeledDataset& ds, const TaskDataset& task, const ClassMap& columns,
                                                const SensitivityOptions& opts) {
  if (opts.iterations < 1) throw Error(ErrorCode::InvalidArgument, "accumulate_sensitivity: Z must be >= 1");
  if (opts.batch_size < 1) throw Error(ErrorCode::InvalidArgument, "accumulate_sensitivity: batch_size must be >= 1");
  if (task.indices.empty()) throw Error(ErrorCode::InvalidArgument, "accumulate_sensitivity: task has no samples");
  SensitivityReport report;
  report.iterations = opts.iterations;
  report.first_flat = net.extractor.first_flat();
  report.accumulated.assign(net.extractor.scalar_count(), 0.0);
  const std::span<const std::size_t> all(task.indices);
  for (std::size_t z = 0; z < opts.iterations; ++z) {
    for (std::size_t start = 0; start < all.size(); start += opts.batch_size) {
      const auto batch = all.subspan(start, std::min(opts.batch_size, all.size() - start));
      const auto g = detail::extractor_ce_gradient(net, ds, batch, columns);
      for (std::size_t k = 0; k < g.size(); ++k) report.accumulated[k] += opts.signed_accumulation ? g[k] : std::abs(g[k]);
    }
  }
  for (auto& v : report.accumulated) {
    v /= static_cast<double>(opts.iterations);
    if (opts.signed_accumulation) v = std::abs(v);
  }
  return report;
}

/// ceil(p * n), guarded against p * n landing a rounding error above an integer.
inline std::size_t selection_count(double p, std::size_t n) {
  const double exact = p * static_cast<double>(n);
  auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp<std::size_t>(k, 1, n);
}

/// Trainable mask over `total_scalars`: the ceil(p*N) extractor scalars with
/// the largest accumulated sensitivity (ties to the lower flat index) plus
/// every scalar outside the extractor range, which stays trainable.
inline TrainableMask select_top_p(const SensitivityReport& report, double p, std::size_t total_scalars) {
  if (!(p > 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "select_top_p: p must be in (0, 1]");
  const std::size_t n = report.accumulated.size();
  if (report.first_flat + n > total_scalars) throw Error(ErrorCode::ShapeMismatch, "select_top_p: report exceeds store size");
  TrainableMask mask(total_scalars, true);
  for (std::size_t k = 0; k < n; ++k) mask.set(report.first_flat + k, false);
  if (n == 0) return mask;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t keep = selection_count(p, n);
  const auto& acc = report.accumulated;
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), [&acc](std::size_t a, std::size_t b) {
    return acc[a] != acc[b] ? acc[a] > acc[b] : a < b;
  });
  for (std::size_t k = 0; k < keep; ++k) mask.set(report.first_flat + order[k]);
  return mask;
}

/// CSV dump: flat_index,name,offset,sensitivity.
inline void write_sensitivity_csv(const SensitivityReport& report, const ParameterStore& store, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  out << "flat_index,name,offset,sensitivity\n";
  out.precision(17);
  for (std::size_t k = 0; k < report.accumulated.size(); ++k) {
    const std::size_t flat = report.first_flat + k;
    const auto loc = store.locate(flat);
    out << flat << ',' << loc.name << ',' << loc.offset << ',' << report.accumulated[k] << '\n';
  }
}

}  // namespace tae
