// tae: command-line front end for data generation, runs, ablations and reports.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tae/tae.hpp"

namespace {

void print_summary(const std::string& name, const tae::ExperimentResult& r) {
  std::cout << name << ": avg=" << tae::format_double(r.avg) << " last=" << tae::format_double(r.last)
            << " expanded=" << r.expansion.cumulative.back() << "\n";
}

int fail(const std::string& kind, const std::string& message) {
  nlohmann::json err{{"error", kind}, {"message", message}};
  std::cerr << err.dump() << "\n";
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed class-incremental learning runner"};
  app.require_subcommand(1);

  tae::SyntheticSpec gen;
  std::vector<std::size_t> gen_shape{32};
  std::string gen_out = "data";
  auto* gen_cmd = app.add_subcommand("gen-data", "Write Gaussian-blob train/test files");
  gen_cmd->add_option("--classes", gen.classes, "Class count")->capture_default_str();
  gen_cmd->add_option("--train-per-class", gen.train_per_class, "Training samples per class")->capture_default_str();
  gen_cmd->add_option("--test-per-class", gen.test_per_class, "Test samples per class")->capture_default_str();
  gen_cmd->add_option("--shape", gen_shape, "Sample shape, e.g. 32 or 3 8 8")->capture_default_str();
  gen_cmd->add_option("--radius", gen.radius, "Sphere radius of class means")->capture_default_str();
  gen_cmd->add_option("--sigma", gen.sigma, "Per-coordinate noise stddev")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--out", gen_out, "Output directory")->capture_default_str();

  std::string config_path;
  std::string out_override;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", out_override, "Override output.dir");
  };
  auto* run_cmd = app.add_subcommand("run", "Run one experiment");
  add_config(run_cmd);
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the reweight/centroid ablation grid");
  add_config(ablate_cmd);
  auto* sweep_cmd = app.add_subcommand("sweep-p", "Run the experiment for each p in tae.p_sweep");
  add_config(sweep_cmd);

  std::string run_dir;
  auto* report_cmd = app.add_subcommand("report", "Re-render metrics.csv and curve.svg of a run directory");
  report_cmd->add_option("run_dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      gen.sample_shape.assign(gen_shape.begin(), gen_shape.end());
      const auto data = tae::gen_synthetic(gen);
      const std::filesystem::path dir(gen_out);
      std::filesystem::create_directories(dir);
      tae::write_dataset(data.train, (dir / "train.data").string(), (dir / "train.labels").string());
      if (gen.test_per_class > 0) tae::write_dataset(data.test, (dir / "test.data").string(), (dir / "test.labels").string());
      std::cout << "wrote " << data.train.size() << " train / " << data.test.size() << " test samples to " << dir.string() << "\n";
      return 0;
    }
    if (*report_cmd) {
      const auto m = tae::rerender_report(run_dir);
      std::cout << "steps=" << m.rows_done() << " avg=" << tae::format_double(tae::avg_accuracy(m, m.rows_done()))
                << " last=" << tae::format_double(tae::last_accuracy(m)) << "\n";
      return 0;
    }
    auto cfg = tae::load_config(config_path);
    if (!out_override.empty()) {
      cfg.output_dir = out_override;
      cfg.raw["output"]["dir"] = out_override;
    }
    if (*run_cmd) {
      print_summary("run", tae::run_experiment(cfg));
    } else if (*ablate_cmd) {
      for (const auto& v : tae::ablate(cfg)) print_summary(v.name, v.result);
    } else if (*sweep_cmd) {
      for (const auto& v : tae::sweep_p(cfg)) print_summary(v.name, v.result);
    }
    return 0;
  } catch (const tae::Error& e) {
    return fail(std::string(tae::to_string(e.code())), e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
