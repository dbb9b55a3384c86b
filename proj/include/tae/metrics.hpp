#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "tae/error.hpp"

namespace tae {

/// Lower-triangular record a_{i,j}: accuracy on task j after training tasks
/// 1..i, plus overall accuracy over all seen classes after each step.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(std::size_t tasks) : tasks_(tasks) {}

  std::size_t tasks() const noexcept { return tasks_; }
  std::size_t rows_done() const noexcept { return rows_.size(); }
  const std::vector<double>& row(std::size_t i) const { return rows_.at(i - 1); }
  double overall(std::size_t i) const { return overall_.at(i - 1); }
  double at(std::size_t i, std::size_t j) const { return rows_.at(i - 1).at(j - 1); }

  void add_row(std::vector<double> accuracies, double overall) {
    if (rows_.size() >= tasks_) throw Error(ErrorCode::InvalidState, "accuracy matrix: all " + std::to_string(tasks_) + " rows already recorded");
    if (accuracies.size() != rows_.size() + 1)
      throw Error(ErrorCode::InvalidArgument, "accuracy matrix: row " + std::to_string(rows_.size() + 1) + " needs " + std::to_string(rows_.size() + 1) +
                                                  " entries, got " + std::to_string(accuracies.size()));
    for (double a : accuracies)
      if (!(a >= 0.0 && a <= 1.0)) throw Error(ErrorCode::InvalidArgument, "accuracy matrix: entry outside [0,1]");
    if (!(overall >= 0.0 && overall <= 1.0)) throw Error(ErrorCode::InvalidArgument, "accuracy matrix: overall accuracy outside [0,1]");
    rows_.push_back(std::move(accuracies));
    overall_.push_back(overall);
  }

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::size_t tasks_ = 0;
  std::vector<std::vector<double>> rows_;
  std::vector<double> overall_;
};

/// Mean of row t: (1/t) * sum_j a_{t,j}.
inline double avg_accuracy(const AccuracyMatrix& m, std::size_t t) {
  if (t < 1 || t > m.rows_done()) throw Error(ErrorCode::InvalidState, "avg_accuracy: row " + std::to_string(t) + " is not complete");
  double s = 0.0;
  for (double a : m.row(t)) s += a;
  return s / static_cast<double>(t);
}

/// Overall accuracy on all seen classes after the final task.
inline double last_accuracy(const AccuracyMatrix& m) {
  if (m.tasks() == 0 || m.rows_done() != m.tasks()) throw Error(ErrorCode::InvalidState, "last_accuracy: final row not recorded");
  return m.overall(m.tasks());
}

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error(ErrorCode::InvalidArgument, "format_double failed");
  return std::string(buf, end);
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw Error(ErrorCode::Config, "metrics.csv: bad number '" + s + "'");
  return v;
}

// metrics.csv: step,task_1..task_T,avg,last with blank cells above the diagonal.
inline std::string render_metrics_csv(const AccuracyMatrix& m) {
  std::ostringstream out;
  out << "step";
  for (std::size_t j = 1; j <= m.tasks(); ++j) out << ",task_" << j;
  out << ",avg,last\n";
  for (std::size_t i = 1; i <= m.rows_done(); ++i) {
    out << i;
    for (std::size_t j = 1; j <= m.tasks(); ++j) {
      out << ',';
      if (j <= i) out << format_double(m.at(i, j));
    }
    out << ',' << format_double(avg_accuracy(m, i)) << ',' << format_double(m.overall(i)) << '\n';
  }
  return out.str();
}

inline AccuracyMatrix parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!l.empty() && l.back() == ',') cells.emplace_back();
    return cells;
  };
  if (!std::getline(in, line)) throw Error(ErrorCode::Config, "metrics.csv: empty");
  const auto header = split(line);
  if (header.size() < 4 || header.front() != "step" || header[header.size() - 2] != "avg" || header.back() != "last")
    throw Error(ErrorCode::Config, "metrics.csv: unexpected header");
  const std::size_t T = header.size() - 3;
  AccuracyMatrix m(T);
  std::size_t expect = 1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != T + 3) throw Error(ErrorCode::Config, "metrics.csv: row " + std::to_string(expect) + " has " + std::to_string(cells.size()) + " cells");
    if (cells[0] != std::to_string(expect)) throw Error(ErrorCode::Config, "metrics.csv: steps out of order");
    std::vector<double> row;
    for (std::size_t j = 1; j <= expect; ++j) row.push_back(parse_double(cells[j]));
    for (std::size_t j = expect + 1; j <= T; ++j)
      if (!cells[j].empty()) throw Error(ErrorCode::Config, "metrics.csv: value above the diagonal");
    const double avg = parse_double(cells[T + 1]);
    m.add_row(std::move(row), parse_double(cells[T + 2]));
    if (std::abs(avg - avg_accuracy(m, expect)) > 1e-12) throw Error(ErrorCode::Config, "metrics.csv: avg column disagrees with task columns");
    ++expect;
  }
  return m;
}

}  // namespace tae
