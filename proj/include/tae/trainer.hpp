#pragma once

// The incremental training loop. Per task: grow the head, pick the trainable
// extractor scalars by gradient sensitivity, seed the new class centroids,
// train under the combined loss with only the selected scalars moving, herd
// exemplars, and archive the trained sparse delta.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tae/autodiff.hpp"
#include "tae/binary_io.hpp"
#include "tae/centroids.hpp"
#include "tae/class_map.hpp"
#include "tae/data.hpp"
#include "tae/error.hpp"
#include "tae/models.hpp"
#include "tae/optimizer.hpp"
#include "tae/rebalance.hpp"
#include "tae/rng.hpp"
#include "tae/sensitivity.hpp"

namespace tae {

struct LossWeights {
  double gamma1 = 1.0;
  double gamma2 = 0.5;
  double gamma3 = 0.5;

  void validate() const {
    if (gamma1 < 0.0 || gamma2 < 0.0 || gamma3 < 0.0) throw Error(ErrorCode::Config, "loss weights must be nonnegative");
    if (gamma1 == 0.0 && gamma2 == 0.0 && gamma3 == 0.0) throw Error(ErrorCode::Config, "at least one loss weight must be positive");
  }
};

enum class Method {
  Tae,             // sensitivity-selected sparse training + replay
  Finetune,        // every scalar trainable, no replay memory
  FinetuneReplay,  // every scalar trainable, with replay memory
};

inline Method parse_method(const std::string& s) {
  if (s == "tae") return Method::Tae;
  if (s == "finetune") return Method::Finetune;
  if (s == "finetune-replay") return Method::FinetuneReplay;
  throw Error(ErrorCode::Config, "unknown method '" + s + "' (expected tae, finetune or finetune-replay)");
}

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Tae: return "tae";
    case Method::Finetune: return "finetune";
    case Method::FinetuneReplay: return "finetune-replay";
  }
  return "tae";
}

struct TrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double lr = 0.1;
  std::vector<std::size_t> milestones{19, 28, 35};
  double lr_decay = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct TaeOptions {
  double p = 0.3;
  std::size_t iterations = 1;  // Z
  bool signed_accumulation = false;
  MaxScope max_scope = MaxScope::AllSeen;
};

struct EngineConfig {
  ArchitectureSpec arch;
  Method method = Method::Tae;
  TaeOptions tae;
  LossWeights gammas;
  double beta = 0.95;
  bool reweight = true;
  bool normalize_weights = true;  // rescale effective weights to mean 1 per task
  bool ced = true;
  std::size_t memory_per_class = 20;
  TrainConfig train;
};

/// Learning-rate schedule and mask for one task.
struct TaskPlan {
  std::size_t task_id = 0;
  TrainableMask mask;
  std::vector<std::pair<std::size_t, double>> schedule;  // (first epoch, lr)
  std::size_t epochs = 0;
  std::size_t batch_size = 0;

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw Error(ErrorCode::Config, "task plan: epochs and batch_size must be >= 1");
    if (schedule.empty() || schedule.front().first != 0) throw Error(ErrorCode::Config, "task plan: schedule must start at epoch 0");
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      if (schedule[i].first >= epochs) throw Error(ErrorCode::Config, "task plan: schedule epoch beyond training length");
      if (i && schedule[i].first <= schedule[i - 1].first) throw Error(ErrorCode::Config, "task plan: schedule epochs must be strictly increasing");
    }
  }

  double lr_at(std::size_t epoch) const {
    double lr = schedule.front().second;
    for (const auto& [e, v] : schedule)
      if (epoch >= e) lr = v;
    return lr;
  }
};

/// Step schedule: lr until the first milestone, then multiplied by `decay` at each.
inline std::vector<std::pair<std::size_t, double>> step_schedule(const TrainConfig& cfg) {
  std::vector<std::pair<std::size_t, double>> s{{0, cfg.lr}};
  double lr = cfg.lr;
  for (std::size_t m : cfg.milestones) {
    lr *= cfg.lr_decay;
    if (m > 0 && m < cfg.epochs) s.emplace_back(m, lr);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Expansion archive

struct ExpansionArchive {
  struct Delta {
    std::size_t task_id = 0;
    std::size_t extractor_count = 0;                      // trained extractor scalars
    std::vector<std::pair<std::size_t, double>> entries;  // (flat index, value) of every trained scalar
    friend bool operator==(const Delta&, const Delta&) = default;
  };

  std::vector<Delta> deltas;

  /// Expanded-parameter count: every archived extractor delta plus the head at its current size.
  std::size_t cumulative_count(std::size_t head_scalars) const {
    std::size_t n = head_scalars;
    for (const auto& d : deltas) n += d.extractor_count;
    return n;
  }

  /// N_head + N_ext + sum over tasks 2..t of ceil(p * N_ext).
  static std::size_t closed_form(std::size_t head_scalars, std::size_t extractor_scalars, double p, std::size_t tasks) {
    if (tasks == 0) return head_scalars;
    return head_scalars + extractor_scalars + (tasks - 1) * selection_count(p, extractor_scalars);
  }

  friend bool operator==(const ExpansionArchive&, const ExpansionArchive&) = default;
};

// archive.bin: "TAEA", u32 version, u32 task count, then per task:
// u32 task_id, u64 extractor_count, u64 n, n x (u64 flat index, f64 value).
inline io::Bytes encode_archive(const ExpansionArchive& a) {
  io::Writer w;
  w.magic("TAEA");
  w.put<std::uint32_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(a.deltas.size()));
  for (const auto& d : a.deltas) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.task_id));
    w.put<std::uint64_t>(d.extractor_count);
    w.put<std::uint64_t>(d.entries.size());
    for (const auto& [idx, v] : d.entries) {
      w.put<std::uint64_t>(idx);
      w.put<double>(v);
    }
  }
  return std::move(w.bytes());
}

inline ExpansionArchive decode_archive(const io::Bytes& bytes) {
  io::Reader r(bytes, "expansion archive");
  r.expect_magic("TAEA");
  if (const auto v = r.get<std::uint32_t>("version"); v != 1) throw Error(ErrorCode::BadVersion, "expansion archive: unsupported version " + std::to_string(v));
  ExpansionArchive a;
  const auto count = r.get<std::uint32_t>("task count");
  for (std::uint32_t t = 0; t < count; ++t) {
    ExpansionArchive::Delta d;
    d.task_id = r.get<std::uint32_t>("task id");
    d.extractor_count = r.get<std::uint64_t>("extractor count");
    const auto n = r.get<std::uint64_t>("entry count");
    r.need(n * 16, "entries");
    d.entries.reserve(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      const auto idx = r.get<std::uint64_t>("flat index");
      d.entries.emplace_back(idx, r.get<double>("value"));
    }
    a.deltas.push_back(std::move(d));
  }
  r.expect_end();
  return a;
}

// ---------------------------------------------------------------------------
// Combined loss

struct LossTerms {
  Var total;
  std::optional<Var> ce, min, max;
};

/// gamma1 * weighted_ce + gamma2 * min_loss + gamma3 * max_loss on one tape.
/// Terms with a zero weight are not evaluated.
inline LossTerms total_loss(Var features, Var logits, std::span<const int> labels, const ClassMap& columns, const ReweightConfig& weights,
                            const CentroidBank& bank, std::optional<Var> centroids, const LossWeights& gammas, MaxScope scope,
                            std::span<const int> current_classes) {
  LossTerms terms;
  std::vector<Var> parts;
  if (gammas.gamma1 != 0.0) {
    terms.ce = weighted_ce(logits, labels, weights, columns);
    parts.push_back(gammas.gamma1 == 1.0 ? *terms.ce : scale(*terms.ce, gammas.gamma1));
  }
  if (gammas.gamma2 != 0.0 || gammas.gamma3 != 0.0) {
    if (!centroids) throw Error(ErrorCode::InvalidState, "total_loss: centroid terms requested without a centroid bank");
    if (gammas.gamma2 != 0.0) {
      terms.min = min_loss(features, labels, bank, *centroids);
      parts.push_back(scale(*terms.min, gammas.gamma2));
    }
    if (gammas.gamma3 != 0.0) {
      terms.max = max_loss(bank, *centroids, scope, current_classes);
      parts.push_back(scale(*terms.max, gammas.gamma3));
    }
  }
  terms.total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) terms.total = add(terms.total, parts[i]);
  return terms;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  std::vector<double> per_task;  // a_{t,j} for j = 1..t
  double overall = 0.0;          // accuracy over the union of the evaluated tasks
};

// ---------------------------------------------------------------------------
// Engine

/// Full incremental-learning state. A value type: copying snapshots it.
class Engine {
 public:
  explicit Engine(EngineConfig config) : config_(std::move(config)) {
    config_.gammas.validate();
    if (!(config_.tae.p > 0.0 && config_.tae.p <= 1.0)) throw Error(ErrorCode::Config, "tae.p must be in (0, 1]");
    Rng init = Rng::stream(config_.train.seed, 0x494e4954);
    net_ = Network::build(config_.arch, init);
    optimizer_ = MomentumSgd(config_.train.momentum, config_.train.weight_decay);
    bank_ = CentroidBank(config_.arch.feature_dim);
    memory_.budget_per_class = config_.memory_per_class;
  }

  const EngineConfig& config() const noexcept { return config_; }
  const Network& network() const noexcept { return net_; }
  Network& network() noexcept { return net_; }
  const CentroidBank& bank() const noexcept { return bank_; }
  const ExemplarMemory& memory() const noexcept { return memory_; }
  const ExpansionArchive& archive() const noexcept { return archive_; }
  const ClassMap& columns() const noexcept { return columns_; }
  std::size_t tasks_done() const noexcept { return tasks_done_; }
  const TrainableMask& last_mask() const noexcept { return last_mask_; }
  const std::optional<SensitivityReport>& last_sensitivity() const noexcept { return last_report_; }

  bool uses_centroids() const { return config_.ced && (config_.gammas.gamma2 != 0.0 || config_.gammas.gamma3 != 0.0); }

  LossWeights effective_gammas() const {
    LossWeights g = config_.gammas;
    if (!config_.ced) g.gamma2 = g.gamma3 = 0.0;
    if (g.gamma1 == 0.0 && g.gamma2 == 0.0 && g.gamma3 == 0.0) g.gamma1 = 1.0;
    return g;
  }

  /// Trains task `task` (which must be the next task id) on samples of `ds`.
  /// On any error the engine is restored to its state before the call.
  void train_task(const LabeledDataset& ds, const TaskDataset& task) {
    if (task.task_id != tasks_done_ + 1)
      throw Error(ErrorCode::InvalidState, "train_task: expected task " + std::to_string(tasks_done_ + 1) + ", got " + std::to_string(task.task_id));
    Engine snapshot = *this;
    try {
      run_task(ds, task);
    } catch (...) {
      *this = std::move(snapshot);
      throw;
    }
  }

  /// Argmax over all seen classes; per-task accuracy for each evaluation task
  /// plus overall accuracy on their union.
  EvalResult predict_all(const LabeledDataset& eval, std::span<const TaskDataset> eval_tasks, std::size_t batch_size = 256) const {
    EvalResult res;
    std::size_t total_correct = 0, total = 0;
    for (const auto& task : eval_tasks) {
      std::size_t correct = 0;
      const std::span<const std::size_t> idx(task.indices);
      for (std::size_t start = 0; start < idx.size(); start += batch_size) {
        const auto batch = idx.subspan(start, std::min(batch_size, idx.size() - start));
        const Tensor logits = net_.logits(eval.batch(batch));
        for (std::size_t r = 0; r < batch.size(); ++r) {
          const auto row = logits.row(r);
          const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
          if (columns_.label(best) == eval.labels[batch[r]]) ++correct;
        }
      }
      res.per_task.push_back(idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size()));
      total_correct += correct;
      total += idx.size();
    }
    res.overall = total ? static_cast<double>(total_correct) / static_cast<double>(total) : 0.0;
    return res;
  }

  /// Test hook: a task that throws after `after_step` optimizer steps.
  std::optional<std::size_t> fail_after_steps;

 private:
  void run_task(const LabeledDataset& ds, const TaskDataset& task) {
    if (task.classes.empty() || task.indices.empty()) throw Error(ErrorCode::InvalidArgument, "train_task: empty task");
    const std::size_t t = task.task_id;

    // (1) head growth
    for (int c : task.classes) {
      if (columns_.contains(c)) throw Error(ErrorCode::InvalidArgument, "train_task: class " + std::to_string(c) + " already seen");
      columns_.add(c);
    }
    Rng head_rng = Rng::stream(config_.train.seed, 0x48454144ULL + t);
    net_.head.grow(net_.store, task.classes.size(), head_rng);

    // (2) trainable mask
    TaskPlan plan;
    plan.task_id = t;
    plan.epochs = config_.train.epochs;
    plan.batch_size = config_.train.batch_size;
    plan.schedule = step_schedule(config_.train);
    if (config_.method == Method::Tae && t > 1) {
      SensitivityOptions opts{config_.tae.iterations, config_.train.batch_size, config_.tae.signed_accumulation};
      last_report_ = accumulate_sensitivity(net_, ds, task, columns_, opts);
      plan.mask = select_top_p(*last_report_, config_.tae.p, net_.store.scalar_count());
    } else {
      last_report_.reset();
      plan.mask = TrainableMask::all(net_.store.scalar_count());
    }
    plan.validate();
    optimizer_.reset_frozen(net_.store, plan.mask);

    // (3) centroids
    const bool ced = uses_centroids();
    if (ced) init_centroids(bank_, net_, ds, task);

    // (4) training over D^t plus replay memory
    const TrainingPool pool = training_pool(ds, task, memory_);
    ReweightConfig weights = config_.reweight ? effective_weights(pool.counts, config_.beta) : uniform_weights(pool.counts);
    if (config_.reweight && config_.normalize_weights) weights = normalized(std::move(weights));
    const LossWeights gammas = effective_gammas();
    std::size_t steps = 0;
    for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
      const double lr = plan.lr_at(epoch);
      Rng shuffle = Rng::stream(config_.train.seed, (std::uint64_t{t} << 32) | epoch);
      const auto order = shuffle.permutation(pool.indices.size());
      for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
        const std::size_t end = std::min(order.size(), start + plan.batch_size);
        std::vector<std::size_t> batch;
        std::vector<int> labels;
        for (std::size_t k = start; k < end; ++k) {
          batch.push_back(pool.indices[order[k]]);
          labels.push_back(ds.labels[batch.back()]);
        }
        Tape tape;
        Var features = net_.embed(tape, ds.batch(batch));
        Var logits = net_.logits(tape, features);
        std::optional<Var> centroids;
        if (ced) centroids = bank_leaf(tape, bank_);
        const auto terms = total_loss(features, logits, labels, columns_, weights, bank_, centroids, gammas, config_.tae.max_scope, task.classes);
        if (!std::isfinite(terms.total.value()[0])) throw Error(ErrorCode::NonFinite, "train_task: non-finite loss at task " + std::to_string(t));
        tape.backward(terms.total);
        optimizer_.step(net_.store, tape.param_grads(net_.store), plan.mask, lr);
        if (ced) step_centroids(bank_, tape.grad(*centroids), lr);
        ++steps;
        if (fail_after_steps && steps >= *fail_after_steps) throw Error(ErrorCode::InvalidState, "train_task: injected failure");
      }
    }

    // (5) exemplar memory
    if (config_.method != Method::Finetune) update_memory(memory_, ds, task, net_);

    // (6) archive the trained delta
    ExpansionArchive::Delta delta;
    delta.task_id = t;
    const std::size_t n_ext = net_.extractor.scalar_count();
    for (std::size_t flat : plan.mask.selected()) {
      delta.entries.emplace_back(flat, net_.store.scalar(flat));
      if (flat >= net_.extractor.first_flat() && flat < net_.extractor.first_flat() + n_ext) ++delta.extractor_count;
    }
    archive_.deltas.push_back(std::move(delta));
    last_mask_ = std::move(plan.mask);
    ++tasks_done_;
  }

  EngineConfig config_;
  Network net_;
  MomentumSgd optimizer_;
  CentroidBank bank_;
  ExemplarMemory memory_;
  ExpansionArchive archive_;
  ClassMap columns_;
  TrainableMask last_mask_;
  std::optional<SensitivityReport> last_report_;
  std::size_t tasks_done_ = 0;
};

}  // namespace tae
