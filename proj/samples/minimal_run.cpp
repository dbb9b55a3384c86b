// Trains the engine on a small synthetic stream and prints the accuracy matrix.

#include <iostream>

#include "tae/tae.hpp"

int main() {
  tae::SyntheticSpec spec;
  spec.classes = 10;
  spec.train_per_class = 100;
  spec.test_per_class = 40;
  spec.seed = 7;
  const auto data = tae::gen_synthetic(spec);

  tae::LTProtocol proto;
  proto.head_count = 100;
  proto.rho = 0.1;
  proto.seed = 7;
  const auto train = tae::make_long_tailed(data.train, proto);
  const auto train_tasks = tae::split_tasks(train, 5);
  std::vector<std::vector<int>> sets;
  for (const auto& t : train_tasks) sets.push_back(t.classes);
  const auto test_tasks = tae::tasks_for_classes(data.test, sets);

  tae::EngineConfig cfg;
  cfg.arch.input_shape = train.sample_shape();
  cfg.arch.hidden = 32;
  cfg.arch.feature_dim = 32;
  cfg.train.epochs = 10;
  cfg.train.milestones = {6, 8};
  cfg.train.lr = 0.05;
  cfg.train.seed = 7;
  tae::Engine engine(cfg);

  tae::AccuracyMatrix m(train_tasks.size());
  for (std::size_t t = 0; t < train_tasks.size(); ++t) {
    engine.train_task(train, train_tasks[t]);
    const auto eval = engine.predict_all(data.test, std::span<const tae::TaskDataset>(test_tasks).first(t + 1));
    m.add_row(eval.per_task, eval.overall);
    std::cout << "step " << t + 1 << ":";
    for (double a : eval.per_task) std::cout << ' ' << tae::format_double(a);
    std::cout << "  overall " << eval.overall << "\n";
  }
  std::cout << "avg " << tae::avg_accuracy(m, m.tasks()) << "  last " << tae::last_accuracy(m) << "\n";
}
