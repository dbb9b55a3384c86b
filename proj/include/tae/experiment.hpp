#pragma once

// Experiment configuration, the run driver and its output files, the
// ablation grid, the p-sweep, and SVG/JSON report emission.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tae/centroids.hpp"
#include "tae/data.hpp"
#include "tae/error.hpp"
#include "tae/metrics.hpp"
#include "tae/models.hpp"
#include "tae/synthetic.hpp"
#include "tae/trainer.hpp"

namespace tae {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

struct DatasetConfig {
  std::string mode = "synthetic";
  SyntheticSpec synthetic;
  std::string train_data, train_labels, test_data, test_labels;
  std::size_t classes = 0;  // files mode; 0 infers from labels
};

struct ExperimentConfig {
  DatasetConfig dataset;
  LTProtocol protocol;
  std::size_t steps = 5;
  EngineConfig engine;
  std::vector<double> p_sweep{0.05, 0.10, 0.20, 0.30};
  std::string output_dir = "runs/default";
  json raw;  // resolved config echo
};

namespace detail {

struct ConfigReader {
  std::vector<std::string> errors;

  const json* section(const json& root, const char* key) {
    if (!root.contains(key) || !root[key].is_object()) {
      errors.push_back(std::string("missing object '") + key + "'");
      return nullptr;
    }
    return &root[key];
  }

  template <typename T>
  T get(const json* obj, const std::string& path, const char* key, T fallback, bool required = true) {
    if (!obj) return fallback;
    if (!obj->contains(key)) {
      if (required) errors.push_back("missing key '" + path + "." + key + "'");
      return fallback;
    }
    const json& v = (*obj)[key];
    bool ok = false;
    if constexpr (std::is_same_v<T, bool>) ok = v.is_boolean();
    else if constexpr (std::is_same_v<T, std::string>) ok = v.is_string();
    else if constexpr (std::is_floating_point_v<T>) ok = v.is_number();
    else if constexpr (std::is_integral_v<T>) ok = v.is_number_integer() && (std::is_signed_v<T> || v.get<long long>() >= 0);
    else ok = true;
    if (!ok) {
      errors.push_back("key '" + path + "." + key + "' has the wrong type");
      return fallback;
    }
    return v.get<T>();
  }
};

inline Shape shape_from_json(const json& j) {
  Shape s;
  if (j.is_number_integer()) s.push_back(j.get<std::size_t>());
  else
    for (const auto& d : j) s.push_back(d.get<std::size_t>());
  return s;
}

}  // namespace detail

/// Parses and validates an experiment config. All problems are reported together.
inline ExperimentConfig parse_config(const json& root) {
  if (!root.is_object()) throw Error(ErrorCode::Config, "config: top level must be an object");
  detail::ConfigReader rd;
  ExperimentConfig cfg;
  cfg.raw = root;

  if (const json* ds = rd.section(root, "dataset")) {
    cfg.dataset.mode = rd.get<std::string>(ds, "dataset", "mode", "synthetic");
    if (cfg.dataset.mode == "synthetic") {
      auto& s = cfg.dataset.synthetic;
      s.classes = rd.get<std::size_t>(ds, "dataset", "classes", s.classes);
      s.train_per_class = rd.get<std::size_t>(ds, "dataset", "train_per_class", s.train_per_class);
      s.test_per_class = rd.get<std::size_t>(ds, "dataset", "test_per_class", s.test_per_class);
      s.radius = rd.get<double>(ds, "dataset", "radius", s.radius);
      s.sigma = rd.get<double>(ds, "dataset", "sigma", s.sigma);
      s.seed = rd.get<std::uint64_t>(ds, "dataset", "seed", s.seed);
      if (ds->contains("shape")) {
        try {
          s.sample_shape = detail::shape_from_json((*ds)["shape"]);
        } catch (const std::exception&) {
          rd.errors.push_back("key 'dataset.shape' must be an integer or integer array");
        }
      } else {
        rd.errors.push_back("missing key 'dataset.shape'");
      }
      if (s.test_per_class == 0) rd.errors.push_back("dataset.test_per_class must be >= 1");
    } else if (cfg.dataset.mode == "files") {
      cfg.dataset.train_data = rd.get<std::string>(ds, "dataset", "train_data", "");
      cfg.dataset.train_labels = rd.get<std::string>(ds, "dataset", "train_labels", "");
      cfg.dataset.test_data = rd.get<std::string>(ds, "dataset", "test_data", "");
      cfg.dataset.test_labels = rd.get<std::string>(ds, "dataset", "test_labels", "");
      cfg.dataset.classes = rd.get<std::size_t>(ds, "dataset", "classes", 0, false);
    } else {
      rd.errors.push_back("dataset.mode must be \"files\" or \"synthetic\"");
    }
  }

  if (const json* pr = rd.section(root, "protocol")) {
    cfg.protocol.rho = rd.get<double>(pr, "protocol", "rho", cfg.protocol.rho);
    cfg.protocol.head_count = rd.get<std::size_t>(pr, "protocol", "head_count", cfg.protocol.head_count);
    cfg.protocol.memory_per_class = rd.get<std::size_t>(pr, "protocol", "memory_per_class", cfg.protocol.memory_per_class);
    cfg.protocol.shuffled = rd.get<bool>(pr, "protocol", "shuffled", cfg.protocol.shuffled);
    cfg.protocol.seed = rd.get<std::uint64_t>(pr, "protocol", "seed", cfg.protocol.seed);
  }

  if (const json* tk = rd.section(root, "tasks")) cfg.steps = rd.get<std::size_t>(tk, "tasks", "steps", cfg.steps);

  auto& eng = cfg.engine;
  if (const json* md = rd.section(root, "model")) {
    std::string arch = rd.get<std::string>(md, "model", "arch", "mlp");
    try {
      eng.arch.arch = parse_architecture(arch);
    } catch (const Error& e) {
      rd.errors.push_back(e.what());
    }
    eng.arch.feature_dim = rd.get<std::size_t>(md, "model", "feature_dim", eng.arch.feature_dim);
    eng.arch.hidden = rd.get<std::size_t>(md, "model", "hidden", eng.arch.hidden);
    eng.arch.hidden_layers = rd.get<std::size_t>(md, "model", "hidden_layers", eng.arch.hidden_layers, false);
  }

  if (root.contains("method")) {
    try {
      eng.method = parse_method(root["method"].get<std::string>());
    } catch (const std::exception& e) {
      rd.errors.push_back(std::string("method: ") + e.what());
    }
  }

  if (const json* ta = rd.section(root, "tae")) {
    eng.tae.p = rd.get<double>(ta, "tae", "p", eng.tae.p);
    eng.tae.iterations = rd.get<std::size_t>(ta, "tae", "Z", eng.tae.iterations);
    eng.tae.signed_accumulation = rd.get<bool>(ta, "tae", "signed_accumulation", eng.tae.signed_accumulation);
    const std::string scope = rd.get<std::string>(ta, "tae", "max_scope", "all-seen");
    try {
      eng.tae.max_scope = parse_max_scope(scope);
    } catch (const Error& e) {
      rd.errors.push_back(e.what());
    }
    eng.reweight = rd.get<bool>(ta, "tae", "reweight", eng.reweight, false);
    eng.ced = rd.get<bool>(ta, "tae", "ced", eng.ced, false);
    if (ta->contains("p_sweep")) {
      if (!(*ta)["p_sweep"].is_array()) rd.errors.push_back("tae.p_sweep must be an array");
      else cfg.p_sweep = (*ta)["p_sweep"].get<std::vector<double>>();
    }
  }

  if (const json* ls = rd.section(root, "loss")) {
    eng.gammas.gamma1 = rd.get<double>(ls, "loss", "gamma1", eng.gammas.gamma1);
    eng.gammas.gamma2 = rd.get<double>(ls, "loss", "gamma2", eng.gammas.gamma2);
    eng.gammas.gamma3 = rd.get<double>(ls, "loss", "gamma3", eng.gammas.gamma3);
    eng.beta = rd.get<double>(ls, "loss", "beta", eng.beta);
    eng.normalize_weights = rd.get<bool>(ls, "loss", "normalize_weights", eng.normalize_weights, false);
  }

  if (const json* tr = rd.section(root, "train")) {
    auto& t = eng.train;
    t.epochs = rd.get<std::size_t>(tr, "train", "epochs", t.epochs);
    t.batch_size = rd.get<std::size_t>(tr, "train", "batch_size", t.batch_size);
    t.lr = rd.get<double>(tr, "train", "lr", t.lr);
    t.momentum = rd.get<double>(tr, "train", "momentum", t.momentum);
    t.seed = rd.get<std::uint64_t>(tr, "train", "seed", t.seed);
    t.lr_decay = rd.get<double>(tr, "train", "lr_decay", t.lr_decay, false);
    t.weight_decay = rd.get<double>(tr, "train", "weight_decay", t.weight_decay, false);
    if (!tr->contains("schedule")) rd.errors.push_back("missing key 'train.schedule'");
    else if (!(*tr)["schedule"].is_array()) rd.errors.push_back("train.schedule must be an array of milestone epochs");
    else {
      try {
        t.milestones = (*tr)["schedule"].get<std::vector<std::size_t>>();
      } catch (const std::exception&) {
        rd.errors.push_back("train.schedule must hold nonnegative integers");
      }
    }
  }

  if (const json* out = rd.section(root, "output")) cfg.output_dir = rd.get<std::string>(out, "output", "dir", cfg.output_dir);

  // Value checks on what parsed.
  if (cfg.steps < 1) rd.errors.push_back("tasks.steps must be >= 1");
  if (!(eng.tae.p > 0.0 && eng.tae.p <= 1.0)) rd.errors.push_back("tae.p must be in (0, 1]");
  for (double p : cfg.p_sweep)
    if (!(p > 0.0 && p <= 1.0)) rd.errors.push_back("tae.p_sweep values must be in (0, 1]");
  if (eng.tae.iterations < 1) rd.errors.push_back("tae.Z must be >= 1");
  if (!(eng.beta >= 0.0 && eng.beta < 1.0)) rd.errors.push_back("loss.beta must be in [0, 1)");
  if (eng.gammas.gamma1 < 0 || eng.gammas.gamma2 < 0 || eng.gammas.gamma3 < 0) rd.errors.push_back("loss gammas must be nonnegative");
  if (eng.gammas.gamma1 == 0 && eng.gammas.gamma2 == 0 && eng.gammas.gamma3 == 0) rd.errors.push_back("at least one loss gamma must be positive");
  if (eng.train.epochs < 1) rd.errors.push_back("train.epochs must be >= 1");
  if (eng.train.batch_size < 1) rd.errors.push_back("train.batch_size must be >= 1");
  if (!(eng.train.lr > 0.0)) rd.errors.push_back("train.lr must be > 0");
  if (eng.train.momentum < 0.0 || eng.train.momentum >= 1.0) rd.errors.push_back("train.momentum must be in [0, 1)");
  if (eng.train.weight_decay < 0.0) rd.errors.push_back("train.weight_decay must be >= 0");
  if (!(eng.train.lr_decay > 0.0)) rd.errors.push_back("train.lr_decay must be > 0");
  for (std::size_t i = 1; i < eng.train.milestones.size(); ++i)
    if (eng.train.milestones[i] <= eng.train.milestones[i - 1]) rd.errors.push_back("train.schedule must be strictly increasing");
  if (eng.arch.feature_dim < 1 || eng.arch.hidden < 1) rd.errors.push_back("model.feature_dim and model.hidden must be >= 1");
  try {
    cfg.protocol.validate();
  } catch (const Error& e) {
    rd.errors.push_back(e.what());
  }
  eng.memory_per_class = cfg.protocol.memory_per_class;

  if (!rd.errors.empty()) {
    std::string msg = "invalid config:";
    for (const auto& e : rd.errors) msg += "\n  - " + e;
    throw Error(ErrorCode::Config, msg);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config '" + path + "'");
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, "config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(root);
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedData {
  LabeledDataset train;  // long-tailed training pool
  LabeledDataset test;
  std::vector<TaskDataset> train_tasks;
  std::vector<TaskDataset> test_tasks;
};

/// Long-tails the training pool and splits classes into label-order tasks.
/// Long-tail positions follow the seeded shuffle, so with shuffled=true head
/// and tail classes land in arbitrary tasks.
inline PreparedData prepare_data(const ExperimentConfig& cfg) {
  LabeledDataset train, test;
  if (cfg.dataset.mode == "synthetic") {
    auto data = gen_synthetic(cfg.dataset.synthetic);
    train = std::move(data.train);
    test = std::move(data.test);
  } else {
    train = load_dataset(cfg.dataset.train_data, cfg.dataset.train_labels, cfg.dataset.classes);
    test = load_dataset(cfg.dataset.test_data, cfg.dataset.test_labels, cfg.dataset.classes);
    const std::size_t C = std::max(train.class_count, test.class_count);
    train.class_count = test.class_count = C;
    if (train.sample_shape() != test.sample_shape()) throw Error(ErrorCode::ShapeMismatch, "train and test samples differ in shape");
  }
  PreparedData out;
  out.train = make_long_tailed(train, cfg.protocol);
  out.test = std::move(test);
  out.train_tasks = split_tasks(out.train, cfg.steps);
  std::vector<std::vector<int>> sets;
  for (const auto& t : out.train_tasks) sets.push_back(t.classes);
  out.test_tasks = tasks_for_classes(out.test, sets);
  return out;
}

// ---------------------------------------------------------------------------
// Run

struct ExpansionAccounting {
  std::size_t extractor_scalars = 0;
  std::vector<std::size_t> head_scalars;  // after each task
  std::vector<std::size_t> cumulative;    // archive count after each task
  std::vector<std::size_t> closed_form;   // closed-form count after each task
};

struct ExperimentResult {
  AccuracyMatrix matrix;
  ExpansionAccounting expansion;
  double avg = 0.0;   // avg_accuracy at the final step
  double last = 0.0;  // overall accuracy at the final step
};

inline std::string render_curve_svg(const AccuracyMatrix& m) {
  const double W = 480, H = 320, L = 50, R = 20, T = 20, B = 40;
  const std::size_t n = m.rows_done();
  auto x = [&](std::size_t i) { return n <= 1 ? L + (W - L - R) / 2 : L + (W - L - R) * static_cast<double>(i - 1) / static_cast<double>(n - 1); };
  auto y = [&](double v) { return T + (H - T - B) * (1.0 - v); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << ' ' << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << y(0) << "\" x2=\"" << W - R << "\" y2=\"" << y(0) << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << y(0) << "\" x2=\"" << L << "\" y2=\"" << y(1) << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = k / 4.0;
    s << "<text x=\"" << L - 8 << "\" y=\"" << y(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << static_cast<int>(v * 100) << "</text>\n";
  }
  for (std::size_t i = 1; i <= n; ++i)
    s << "<text x=\"" << x(i) << "\" y=\"" << H - B + 16 << "\" font-size=\"11\" text-anchor=\"middle\">" << i << "</text>\n";
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 6 << "\" font-size=\"12\" text-anchor=\"middle\">step</text>\n";
  auto polyline = [&](const char* color, auto value) {
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 1; i <= n; ++i) s << (i > 1 ? " " : "") << x(i) << ',' << y(value(i));
    s << "\"/>\n";
  };
  polyline("#1f77b4", [&](std::size_t i) { return avg_accuracy(m, i); });
  polyline("#d62728", [&](std::size_t i) { return m.overall(i); });
  s << "<text x=\"" << W - R - 60 << "\" y=\"" << T + 12 << "\" font-size=\"12\" fill=\"#1f77b4\">Avg</text>\n";
  s << "<text x=\"" << W - R - 60 << "\" y=\"" << T + 28 << "\" font-size=\"12\" fill=\"#d62728\">Last</text>\n";
  s << "</svg>\n";
  return s.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline json accounting_json(const ExpansionAccounting& e) {
  return json{{"extractor_scalars", e.extractor_scalars}, {"head_scalars", e.head_scalars}, {"cumulative", e.cumulative}, {"closed_form", e.closed_form}};
}

inline json report_json(const ExperimentConfig& cfg, const ExperimentResult& r) {
  json matrix = json::array();
  json avg = json::array(), last = json::array();
  for (std::size_t i = 1; i <= r.matrix.rows_done(); ++i) {
    matrix.push_back(r.matrix.row(i));
    avg.push_back(avg_accuracy(r.matrix, i));
    last.push_back(r.matrix.overall(i));
  }
  return json{{"config", cfg.raw},
              {"method", to_string(cfg.engine.method)},
              {"final", {{"avg", r.avg}, {"last", r.last}}},
              {"per_step", {{"avg", avg}, {"last", last}}},
              {"accuracy_matrix", matrix},
              {"expansion", accounting_json(r.expansion)}};
}

/// Runs the whole task stream. When `write_outputs` is set, the run directory
/// receives config.json, checkpoints/, archive.bin, metrics.csv, report.json and curve.svg.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool write_outputs = true) {
  PreparedData data = prepare_data(cfg);
  EngineConfig ec = cfg.engine;
  ec.arch.input_shape = data.train.sample_shape();
  ec.memory_per_class = cfg.protocol.memory_per_class;
  Engine engine(ec);

  const fs::path dir(cfg.output_dir);
  if (write_outputs) {
    fs::create_directories(dir / "checkpoints");
    write_text(dir / "config.json", cfg.raw.dump(2) + "\n");
  }

  ExperimentResult res;
  res.matrix = AccuracyMatrix(cfg.steps);
  res.expansion.extractor_scalars = engine.network().extractor.scalar_count();
  for (std::size_t t = 0; t < cfg.steps; ++t) {
    engine.train_task(data.train, data.train_tasks[t]);
    const auto eval = engine.predict_all(data.test, std::span<const TaskDataset>(data.test_tasks).first(t + 1));
    res.matrix.add_row(eval.per_task, eval.overall);
    const std::size_t head = engine.network().head.scalar_count();
    res.expansion.head_scalars.push_back(head);
    res.expansion.cumulative.push_back(engine.archive().cumulative_count(head));
    const double p = ec.method == Method::Tae ? ec.tae.p : 1.0;
    res.expansion.closed_form.push_back(ExpansionArchive::closed_form(head, res.expansion.extractor_scalars, p, t + 1));
    if (write_outputs) {
      const std::string stem = "task_" + std::to_string(t + 1);
      save_checkpoint(engine.network(), (dir / "checkpoints" / (stem + ".model")).string());
      io::write_file((dir / "checkpoints" / (stem + ".bank")).string(), encode_bank(engine.bank()));
    }
  }
  res.avg = avg_accuracy(res.matrix, cfg.steps);
  res.last = last_accuracy(res.matrix);

  if (write_outputs) {
    io::write_file((dir / "archive.bin").string(), encode_archive(engine.archive()));
    write_text(dir / "metrics.csv", render_metrics_csv(res.matrix));
    write_text(dir / "report.json", report_json(cfg, res).dump(2) + "\n");
    write_text(dir / "curve.svg", render_curve_svg(res.matrix));
  }
  return res;
}

/// Re-renders metrics.csv and curve.svg of a run directory from its metrics.csv.
inline AccuracyMatrix rerender_report(const fs::path& run_dir) {
  const AccuracyMatrix m = parse_metrics_csv(read_text(run_dir / "metrics.csv"));
  write_text(run_dir / "metrics.csv", render_metrics_csv(m));
  write_text(run_dir / "curve.svg", render_curve_svg(m));
  return m;
}

// ---------------------------------------------------------------------------
// Batch drivers

/// Worker cap from TAE_THREADS (default 1).
inline std::size_t thread_budget() {
  if (const char* env = std::getenv("TAE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

/// Runs job(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
inline void parallel_jobs(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& job) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

struct VariantResult {
  std::string name;
  ExperimentConfig config;
  ExperimentResult result;
};

/// The three-row reweight / centroid ablation grid over a shared seed:
/// neither, +reweight, +reweight+centroids.
inline std::vector<ExperimentConfig> ablation_configs(const ExperimentConfig& base) {
  struct Row {
    const char* name;
    bool rw, ced;
  };
  std::vector<ExperimentConfig> out;
  for (const Row& r : {Row{"base", false, false}, Row{"rw", true, false}, Row{"rw_ced", true, true}}) {
    ExperimentConfig c = base;
    c.engine.reweight = r.rw;
    c.engine.ced = r.ced;
    c.raw["tae"]["reweight"] = r.rw;
    c.raw["tae"]["ced"] = r.ced;
    c.output_dir = (fs::path(base.output_dir) / r.name).string();
    c.raw["output"]["dir"] = c.output_dir;
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<VariantResult> run_variants(std::vector<ExperimentConfig> configs, std::vector<std::string> names, bool write_outputs) {
  std::vector<VariantResult> results(configs.size());
  parallel_jobs(configs.size(), thread_budget(), [&](std::size_t i) {
    results[i] = VariantResult{names[i], configs[i], run_experiment(configs[i], write_outputs)};
  });
  return results;
}

inline std::string render_comparison_csv(const std::string& key_header, const std::vector<VariantResult>& rows,
                                         const std::function<std::string(const VariantResult&)>& key) {
  std::ostringstream s;
  s << key_header << ",avg,last,expanded_params\n";
  for (const auto& r : rows)
    s << key(r) << ',' << format_double(r.result.avg) << ',' << format_double(r.result.last) << ',' << r.result.expansion.cumulative.back() << '\n';
  return s.str();
}

inline std::vector<VariantResult> ablate(const ExperimentConfig& base, bool write_outputs = true) {
  auto configs = ablation_configs(base);
  auto rows = run_variants(configs, {"base", "rw", "rw_ced"}, write_outputs);
  if (write_outputs) {
    fs::create_directories(base.output_dir);
    write_text(fs::path(base.output_dir) / "ablation.csv", render_comparison_csv("rw,ced", rows, [](const VariantResult& r) {
                 return std::string(r.config.engine.reweight ? "1" : "0") + "," + (r.config.engine.ced ? "1" : "0");
               }));
  }
  return rows;
}

inline std::vector<VariantResult> sweep_p(const ExperimentConfig& base, bool write_outputs = true) {
  std::vector<ExperimentConfig> configs;
  std::vector<std::string> names;
  for (double p : base.p_sweep) {
    ExperimentConfig c = base;
    c.engine.tae.p = p;
    c.raw["tae"]["p"] = p;
    const std::string name = "p_" + format_double(p);
    c.output_dir = (fs::path(base.output_dir) / name).string();
    c.raw["output"]["dir"] = c.output_dir;
    configs.push_back(std::move(c));
    names.push_back(name);
  }
  auto rows = run_variants(configs, names, write_outputs);
  if (write_outputs) {
    fs::create_directories(base.output_dir);
    write_text(fs::path(base.output_dir) / "sweep.csv",
               render_comparison_csv("p", rows, [](const VariantResult& r) { return format_double(r.config.engine.tae.p); }));
  }
  return rows;
}

}  // namespace tae
