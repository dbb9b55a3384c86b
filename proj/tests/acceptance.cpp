// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/scenarios.hpp"
#include "tae/tae.hpp"

using namespace tae;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool ok = true;
  std::ostringstream detail;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) detail << "first failure: " << what << "; ";
    ok = ok && cond;
  }
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

const fs::path kWork = fs::temp_directory_path() / "tae_acceptance";

ExperimentConfig reference(std::uint64_t seed) {
  auto cfg = load_config(TAE_SOURCE_DIR "/samples/reference.json");
  cfg.dataset.synthetic.seed = cfg.protocol.seed = cfg.engine.train.seed = seed;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + TAE_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

// 1 ---------------------------------------------------------------------------
void gradient_oracle(Outcome& o) {
  Rng rng(20240611);
  std::size_t graphs = 0, components = 0;
  std::set<std::string> ops;
  for (std::size_t i = 0; i < 20 * check::kFamilies; ++i) {
    const auto c = check::random_case(i, rng);
    const auto r = check::check_gradients(c, 1e-5, 1e-4, 1e-6);
    o.expect(r.failures == 0, c.family + " graph " + std::to_string(i) + ": " + r.worst);
    ops.insert(c.ops.begin(), c.ops.end());
    ++graphs;
    components += r.checked;
  }
  for (const auto& op : check::all_ops()) o.expect(ops.contains(op), "op not covered: " + op);
  o.expect(graphs >= 100, "fewer than 100 graphs");
  o.detail << graphs << " graphs, " << components << " components, " << ops.size() << "/" << check::all_ops().size() << " ops";
}

// 2 ---------------------------------------------------------------------------
void freeze_contract(Outcome& o) {
  auto w = check::blob_world(9, 3, 40, 21, 16);
  auto cfg = check::small_engine(16, 21);
  cfg.train.epochs = 5;
  Engine e(cfg);
  e.train_task(w.train, w.train_tasks[0]);
  std::size_t checked = 0;
  for (std::size_t t = 1; t < 3; ++t) {
    const auto before = e.network().store.flatten();
    e.train_task(w.train, w.train_tasks[t]);
    const auto& mask = e.last_mask();
    const auto& fx = e.network().extractor;
    std::size_t frozen = 0, identical = 0;
    for (std::size_t f = fx.first_flat(); f < fx.first_flat() + fx.scalar_count(); ++f) {
      if (mask[f]) continue;
      ++frozen;
      identical += same_bits(e.network().store.scalar(f), before[f]);
    }
    o.expect(frozen > 0 && identical == frozen, "task " + std::to_string(t + 1) + ": " + std::to_string(identical) + "/" + std::to_string(frozen));
    checked += frozen;
  }
  o.detail << checked << " frozen extractor scalars bit-identical over tasks 2-3";
}

// 3 ---------------------------------------------------------------------------
void sensitivity_exactness(Outcome& o) {
  Rng rng(31);
  ArchitectureSpec spec;
  spec.input_shape = {3};
  spec.hidden = 4;
  spec.hidden_layers = 1;
  spec.feature_dim = 3;
  Network net = Network::build(spec, rng);
  net.head.grow(net.store, 3, rng);
  for (auto& v : net.store.value(net.store.find("fx.fc0.b")).values()) v = rng.uniform(-0.2, 0.2);
  LabeledDataset ds{Tensor(Shape{3, 3}), {0, 1, 2}, 3};
  for (auto& v : ds.samples.values()) v = rng.uniform(-2, 2);
  TaskDataset task{2, {0, 1, 2}, {0, 1, 2}};
  ClassMap columns;
  for (int c : {0, 1, 2}) columns.add(c);
  const std::size_t N = net.extractor.scalar_count();
  o.expect(N <= 50, "extractor has more than 50 scalars");

  double worst = 0;
  for (std::size_t batch : {1, 2, 3}) {
    const auto r = accumulate_sensitivity(net, ds, task, columns, SensitivityOptions{2, batch, false});
    const auto expect = check::manual_sensitivity(net, ds, task.indices, columns, batch, 2);
    for (std::size_t k = 0; k < N; ++k) worst = std::max(worst, std::abs(r.accumulated[k] - expect[k]));
  }
  o.expect(worst <= 1e-12, "sensitivity deviates by " + std::to_string(worst));

  const auto report = accumulate_sensitivity(net, ds, task, columns, SensitivityOptions{2, 2, false});
  for (double p : {0.05, 0.10, 0.20, 0.30, 1.0}) {
    const auto mask = select_top_p(report, p, N);
    const auto want = static_cast<std::size_t>(std::ceil(p * static_cast<double>(N) - 1e-9));
    o.expect(mask.popcount() == std::max<std::size_t>(want, 1), "count at p=" + std::to_string(p));
    // selected set dominates the rest under (value desc, index asc)
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j)
        if (mask[i] && !mask[j]) {
          const auto& a = report.accumulated;
          o.expect(a[i] > a[j] || (a[i] == a[j] && i < j), "ordering at p=" + std::to_string(p));
        }
  }
  SensitivityReport tie;
  tie.accumulated = {0.9, 0.1, 0.5, 0.5, 0.2};
  o.expect(select_top_p(tie, 0.4, 5).selected() == std::vector<std::size_t>{0, 2}, "tie example");
  o.detail << "N=" << N << ", max deviation " << worst;
}

// 4 ---------------------------------------------------------------------------
void loss_oracles(Outcome& o) {
  auto bank_of = [](const std::vector<std::vector<double>>& rows) {
    CentroidBank b(rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) b.add(static_cast<int>(r), Tensor(Shape{rows[r].size()}, rows[r]));
    return b;
  };
  auto min_of = [](const Tensor& f, std::vector<int> labels, const CentroidBank& b) {
    Tape t;
    return min_loss(t.constant(f), labels, b, t.constant(b.matrix())).value()[0];
  };
  auto max_of = [](const CentroidBank& b) {
    Tape t;
    return max_loss(b, t.constant(b.matrix()), MaxScope::AllSeen).value()[0];
  };
  const auto axes = bank_of({{1, 0}, {0, 1}});
  o.expect(std::abs(min_of(Tensor::matrix({{2, 0}, {0, 3}}), {0, 1}, axes) + 1.0) < 1e-15, "min_loss aligned");
  o.expect(std::abs(min_of(Tensor::matrix({{0, 2}, {3, 0}}), {0, 1}, axes)) < 1e-15, "min_loss orthogonal");
  o.expect(std::abs(min_of(Tensor::matrix({{2, 0}, {3, 0}}), {0, 1}, axes) + 0.5) < 1e-15, "min_loss mixed");
  o.expect(std::abs(max_of(bank_of({{1, 0}, {1, 0}})) - 1.0) < 1e-15, "max_loss identical");
  o.expect(std::abs(max_of(axes)) < 1e-15, "max_loss orthogonal");
  const double y = 1.0 / (2.0 * std::sqrt(3.0)), z = std::sqrt(2.0 / 3.0);
  o.expect(std::abs(max_of(bank_of({{1, 0, 0}, {0.5, std::sqrt(3.0) / 2, 0}, {-0.5, y, z}}))) < 1e-15, "max_loss three centroids");

  // total loss linearity
  Tape t;
  Rng rng(41);
  Tensor f(Shape{4, 3}), zl(Shape{4, 3});
  for (auto& v : f.values()) v = rng.normal();
  for (auto& v : zl.values()) v = rng.normal();
  ClassMap columns;
  CentroidBank bank(3);
  for (int c = 0; c < 3; ++c) {
    columns.add(c);
    Tensor u(Shape{3});
    for (auto& v : u.values()) v = rng.normal();
    bank.add(c, u);
  }
  const std::vector<int> labels{0, 2, 1, 2}, current{0, 1, 2};
  const auto weights = normalized(effective_weights({{0, 50}, {1, 5}, {2, 20}}, 0.95));
  Var fv = t.leaf(f), zv = t.leaf(zl), cv = bank_leaf(t, bank);
  auto total = [&](LossWeights g) { return total_loss(fv, zv, labels, columns, weights, bank, cv, g, MaxScope::AllSeen, current); };
  const auto parts = total(LossWeights{1, 1, 1});
  const double ce = parts.ce->value()[0], mn = parts.min->value()[0], mx = parts.max->value()[0];
  for (const LossWeights g : {LossWeights{1, 0.5, 0.5}, LossWeights{0.2, 1.5, 0.7}, LossWeights{1, 0, 0}}) {
    const double got = total(g).total.value()[0];
    o.expect(std::abs(got - (g.gamma1 * ce + g.gamma2 * mn + g.gamma3 * mx)) < 1e-12, "total_loss linearity");
  }

  o.expect(std::abs(effective_weights({{0, 1}}, 0.95).weight(0) - 1.0) < 1e-15, "k=1 weight");
  o.expect(std::abs(effective_weights({{0, 2}}, 0.95).weight(0) - 0.51282) < 1e-5, "k=2 weight");
  o.expect(std::abs(effective_weights({{0, 500}}, 0.95).weight(0) - 0.05) < 1e-9, "k=500 weight");
  ReweightConfig two{0.0, {{0, 2.0}, {1, 1.0}}};
  ClassMap cm;
  cm.add(0);
  cm.add(1);
  Tape t2;
  const std::vector<int> zero{0};
  o.expect(std::abs(weighted_ce(t2.constant(Tensor::matrix({{0, 0}})), zero, two, cm).value()[0] - 2 * std::log(2.0)) < 1e-15, "weighted ce 2 ln 2");
  o.detail << "centroid, combined and reweighting closed forms";
}

// 5 ---------------------------------------------------------------------------
void herding_equivalence(Outcome& o) {
  Rng rng(51);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(12), d = 1 + rng.index(8), budget = 1 + rng.index(6);
    Tensor f(Shape{n, d});
    for (auto& v : f.values()) v = rng.normal();
    if (herding_select(f, budget) != check::herding_oracle(f, budget)) ++mismatches;
  }
  o.expect(mismatches == 0, std::to_string(mismatches) + " classes differ");
  o.detail << "200 classes, " << mismatches << " mismatches";
}

// 6 ---------------------------------------------------------------------------
void protocol_fidelity(Outcome& o) {
  const auto cifar = long_tail_counts(100, 500, 0.1);
  o.expect(cifar.front() == 500 && cifar.back() == 50, "C=100 endpoints");
  o.expect(cifar == check::long_tail_oracle(100, 500, 0.1), "C=100 profile");
  o.expect(long_tail_counts(10, 100, 0.1) == std::vector<std::size_t>{100, 77, 60, 46, 36, 28, 22, 17, 13, 10}, "C=10 profile");

  LabeledDataset ds{Tensor(Shape{100 * 500, 1}), {}, 100};
  for (std::size_t i = 0; i < 100 * 500; ++i) ds.labels.push_back(static_cast<int>(i % 100));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    LTProtocol p{0.1, 500, 20, true, seed};
    const auto lt = make_long_tailed(ds, p);
    std::multiset<std::size_t> sizes;
    for (const auto& idx : lt.class_indices()) sizes.insert(idx.size());
    o.expect(sizes == std::multiset<std::size_t>(cifar.begin(), cifar.end()), "seed " + std::to_string(seed) + " count multiset");
    const auto tasks = split_tasks(lt, 10, seed);
    std::set<int> seen;
    std::size_t samples = 0;
    for (const auto& t : tasks) {
      for (int c : t.classes) o.expect(seen.insert(c).second, "class repeated across tasks");
      samples += t.size();
    }
    o.expect(seen.size() == 100 && samples == lt.size(), "split not exhaustive for seed " + std::to_string(seed));
  }
  o.detail << "endpoints 500/50, 10-class profile, 20 seeds disjoint and exhaustive";
}

// 7 ---------------------------------------------------------------------------
void metric_fidelity(Outcome& o) {
  Rng rng(71);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 1 + rng.index(15);
    AccuracyMatrix m(T);
    for (std::size_t i = 1; i <= T; ++i) {
      std::vector<double> row(i);
      for (auto& a : row) a = rng.uniform();
      m.add_row(row, rng.uniform());
      long double s = 0;
      for (double a : row) s += a;
      worst = std::max(worst, std::abs(avg_accuracy(m, i) - static_cast<double>(s / static_cast<long double>(i))));
    }
  }
  o.expect(worst <= 1e-12, "avg deviates by " + std::to_string(worst));

  const auto dir = kWork / "report_roundtrip";
  fs::remove_all(dir);
  auto cfg = reference(1);
  cfg.engine.train.epochs = 2;
  cfg.output_dir = dir.string();
  const auto r = run_experiment(cfg);
  const auto csv = read_text(dir / "metrics.csv");
  const auto svg = read_text(dir / "curve.svg");
  fs::remove(dir / "curve.svg");
  o.expect(run_cli("report \"" + dir.string() + "\"") == 0, "report verb failed");
  o.expect(read_text(dir / "metrics.csv") == csv, "metrics.csv changed after report");
  o.expect(fs::exists(dir / "curve.svg") && read_text(dir / "curve.svg") == svg, "curve.svg not reproduced");
  o.expect(parse_metrics_csv(csv) == r.matrix, "parsed matrix differs");
  o.detail << "max deviation " << worst << ", report round-trip byte-identical";
}

// 8 / 9 -----------------------------------------------------------------------
struct ReferenceRuns {
  std::vector<double> base, rw, rw_ced, finetune, p005;
  std::vector<ExperimentResult> p03_results, p005_results;
};

const ReferenceRuns& reference_runs() {
  static const ReferenceRuns runs = [] {
    ReferenceRuns r;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto cfg = reference(seed);
      std::vector<ExperimentConfig> configs = ablation_configs(cfg);
      auto ft = cfg;
      ft.engine.method = Method::Finetune;
      auto low = cfg;
      low.engine.tae.p = 0.05;
      configs.push_back(ft);
      configs.push_back(low);
      const auto rows = run_variants(configs, {"base", "rw", "rw_ced", "finetune", "p0.05"}, false);
      r.base.push_back(rows[0].result.avg);
      r.rw.push_back(rows[1].result.avg);
      r.rw_ced.push_back(rows[2].result.avg);
      r.finetune.push_back(rows[3].result.avg);
      r.p005.push_back(rows[4].result.avg);
      r.p03_results.push_back(rows[2].result);
      r.p005_results.push_back(rows[4].result);
    }
    return r;
  }();
  return runs;
}

void directional_ablation(Outcome& o) {
  const auto& r = reference_runs();
  const double b = median(r.base), rw = median(r.rw), full = median(r.rw_ced), ft = median(r.finetune);
  o.expect(b <= rw, "median base > +RW");
  o.expect(rw <= full, "median +RW > +RW+CEd");
  o.expect(full - ft >= 0.05, "finetune gap below 5 points");
  o.detail << "median Avg base " << b << " <= rw " << rw << " <= rw+ced " << full << "; finetune " << ft;
}

void p_sweep(Outcome& o) {
  const auto& r = reference_runs();
  const double hi = median(r.rw_ced), lo = median(r.p005);
  o.expect(hi >= lo, "median Avg(p=0.3) < Avg(p=0.05)");
  auto check_linear = [&](const std::vector<ExperimentResult>& results, double p) {
    for (const auto& res : results) {
      const auto& e = res.expansion;
      o.expect(e.cumulative == e.closed_form, "archive count differs from closed form");
      for (std::size_t t = 0; t < e.cumulative.size(); ++t) {
        const std::size_t fixed = e.head_scalars[t] + e.extractor_scalars;
        o.expect(e.cumulative[t] - fixed == t * selection_count(p, e.extractor_scalars), "expansion not linear in tasks");
      }
    }
  };
  check_linear(r.p03_results, 0.3);
  check_linear(r.p005_results, 0.05);
  const auto& e3 = r.p03_results.front().expansion;
  const auto& e05 = r.p005_results.front().expansion;
  const std::size_t T = e3.cumulative.size(), N = e3.extractor_scalars;
  const std::size_t grow3 = e3.cumulative.back() - e3.head_scalars.back() - N, grow05 = e05.cumulative.back() - e05.head_scalars.back() - N;
  o.expect(grow3 == (T - 1) * selection_count(0.3, N) && grow05 == (T - 1) * selection_count(0.05, N), "growth not proportional to ceil(pN)");
  o.detail << "median Avg p=0.3 " << hi << " vs p=0.05 " << lo << "; expansion beyond task 1: " << grow05 << " (p=0.05) vs " << grow3 << " (p=0.3)";
}

// 10 --------------------------------------------------------------------------
void determinism(Outcome& o) {
  const auto dir = kWork / "determinism";
  const std::string cfg = TAE_SOURCE_DIR "/samples/reference.json";
  fs::remove_all(dir);
  o.expect(run_cli("run \"" + cfg + "\" --out \"" + dir.string() + "\"") == 0, "first run failed");
  const auto csv = read_text(dir / "metrics.csv"), rep = read_text(dir / "report.json");
  fs::remove_all(dir);
  o.expect(run_cli("run \"" + cfg + "\" --out \"" + dir.string() + "\"") == 0, "second run failed");
  o.expect(read_text(dir / "metrics.csv") == csv, "metrics.csv differs");
  o.expect(read_text(dir / "report.json") == rep, "report.json differs");
  o.detail << "metrics.csv " << csv.size() << " B, report.json " << rep.size() << " B identical";
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> criteria{
      {1, "gradient oracle", 30, gradient_oracle},         {2, "freeze contract", 60, freeze_contract},
      {3, "sensitivity exactness", 5, sensitivity_exactness}, {4, "loss formula oracles", 5, loss_oracles},
      {5, "herding equivalence", 30, herding_equivalence},  {6, "protocol fidelity", 10, protocol_fidelity},
      {7, "metric fidelity", 5, metric_fidelity},           {8, "directional ablation", 20 * 60, directional_ablation},
      {9, "p-sweep sanity", 30 * 60, p_sweep},              {10, "determinism", 5 * 60, determinism},
  };
  fs::create_directories(kWork);
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.expect(secs <= c.limit_s, "runtime over limit");
    failed += !o.ok;
    char timing[32];
    std::snprintf(timing, sizeof timing, "%.2f", secs);
    std::cout << (o.ok ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << " (" << timing << " s): " << o.detail.str() << std::endl;
  }
  fs::remove_all(kWork);
  std::cout << (failed ? "acceptance: " + std::to_string(failed) + " criteria failed" : std::string("acceptance: all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
