#pragma once

#include <iomanip>
#include <optional>
#include <sstream>

#include "sepnet/tensor.hpp"

namespace sepnet {

// Rows are predicted classes, columns are actual classes.
struct ConfusionMatrix {
  std::vector<std::vector<int64_t>> counts;
  std::vector<std::string> class_names;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int k, std::vector<std::string> names = {})
      : counts(static_cast<size_t>(k), std::vector<int64_t>(static_cast<size_t>(k), 0)),
        class_names(std::move(names)) {
    if (class_names.empty())
      for (int i = 0; i < k; ++i) class_names.push_back("class" + std::to_string(i));
    if (static_cast<int>(class_names.size()) != k)
      throw ConfigError("class name count does not match matrix size");
  }

  int k() const { return static_cast<int>(counts.size()); }
  void add(int predicted, int actual, int64_t n = 1) {
    if (predicted < 0 || predicted >= k() || actual < 0 || actual >= k())
      throw ConfigError("confusion matrix index out of range");
    counts[static_cast<size_t>(predicted)][static_cast<size_t>(actual)] += n;
  }
  int64_t total() const {
    int64_t t = 0;
    for (const auto& row : counts)
      for (int64_t v : row) t += v;
    return t;
  }
  int64_t trace() const {
    int64_t t = 0;
    for (int i = 0; i < k(); ++i) t += counts[static_cast<size_t>(i)][static_cast<size_t>(i)];
    return t;
  }
  int64_t actual_total(int c) const {
    int64_t t = 0;
    for (int p = 0; p < k(); ++p) t += counts[static_cast<size_t>(p)][static_cast<size_t>(c)];
    return t;
  }
  int64_t predicted_total(int c) const {
    int64_t t = 0;
    for (int a = 0; a < k(); ++a) t += counts[static_cast<size_t>(c)][static_cast<size_t>(a)];
    return t;
  }
};

inline ConfusionMatrix build_confusion(const std::vector<int>& predicted,
                                       const std::vector<int>& actual, int k,
                                       std::vector<std::string> names = {}) {
  if (predicted.size() != actual.size())
    throw ConfigError("predicted/actual length mismatch: " + std::to_string(predicted.size()) +
                      " vs " + std::to_string(actual.size()));
  ConfusionMatrix m(k, std::move(names));
  for (size_t i = 0; i < predicted.size(); ++i) m.add(predicted[i], actual[i]);
  return m;
}

// TP / (all actual c)
inline double sensitivity(const ConfusionMatrix& m, int c) {
  const int64_t actual = m.actual_total(c);
  if (actual == 0)
    throw ConfigError("sensitivity undefined: no actual samples of class " +
                      std::to_string(c));
  return static_cast<double>(m.counts[static_cast<size_t>(c)][static_cast<size_t>(c)]) /
         static_cast<double>(actual);
}

// TN / (TN + FP), one-vs-rest.
inline double specificity(const ConfusionMatrix& m, int c) {
  const int64_t negatives = m.total() - m.actual_total(c);
  if (negatives == 0)
    throw ConfigError("specificity undefined: no negatives for class " + std::to_string(c));
  const int64_t fp = m.predicted_total(c) -
                     m.counts[static_cast<size_t>(c)][static_cast<size_t>(c)];
  return static_cast<double>(negatives - fp) / static_cast<double>(negatives);
}

struct ClassMetrics {
  std::string name;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  int64_t support = 0;  // actual count
};

struct MetricReport {
  double overall_accuracy = 0;
  std::vector<ClassMetrics> per_class;
  std::optional<double> macro_sensitivity;
  std::optional<double> macro_specificity;
};

// Classes with no actual samples (or no negatives) carry an explicit
// undefined marker and are excluded from the macro means.
inline MetricReport report(const ConfusionMatrix& m) {
  if (m.total() == 0) throw ConfigError("metric report requires a non-empty matrix");
  MetricReport r;
  r.overall_accuracy = static_cast<double>(m.trace()) / static_cast<double>(m.total());
  double sens_sum = 0, spec_sum = 0;
  int sens_n = 0, spec_n = 0;
  for (int c = 0; c < m.k(); ++c) {
    ClassMetrics cm;
    cm.name = m.class_names[static_cast<size_t>(c)];
    cm.support = m.actual_total(c);
    if (cm.support > 0) {
      cm.sensitivity = sensitivity(m, c);
      sens_sum += *cm.sensitivity;
      ++sens_n;
    }
    if (m.total() - cm.support > 0) {
      cm.specificity = specificity(m, c);
      spec_sum += *cm.specificity;
      ++spec_n;
    }
    r.per_class.push_back(cm);
  }
  if (sens_n) r.macro_sensitivity = sens_sum / sens_n;
  if (spec_n) r.macro_specificity = spec_sum / spec_n;
  return r;
}

// Tab-separated matrix, predicted rows x actual columns, with a header row
// and column of class names.
inline std::string confusion_to_tsv(const ConfusionMatrix& m) {
  std::ostringstream out;
  out << "predicted\\actual";
  for (const auto& n : m.class_names) out << '\t' << n;
  out << '\n';
  for (int p = 0; p < m.k(); ++p) {
    out << m.class_names[static_cast<size_t>(p)];
    for (int a = 0; a < m.k(); ++a)
      out << '\t' << m.counts[static_cast<size_t>(p)][static_cast<size_t>(a)];
    out << '\n';
  }
  return out.str();
}

inline ConfusionMatrix confusion_from_tsv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw CorruptFileError("empty confusion matrix file");
  std::vector<std::string> names;
  {
    std::istringstream hs(line);
    std::string cell;
    std::getline(hs, cell, '\t');  // corner label
    while (std::getline(hs, cell, '\t')) names.push_back(cell);
  }
  if (names.empty()) throw CorruptFileError("confusion matrix header has no classes");
  ConfusionMatrix m(static_cast<int>(names.size()), names);
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= m.k()) throw CorruptFileError("confusion matrix has too many rows");
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, '\t');
    for (int a = 0; a < m.k(); ++a) {
      if (!std::getline(ls, cell, '\t'))
        throw CorruptFileError("confusion matrix row too short");
      m.counts[static_cast<size_t>(row)][static_cast<size_t>(a)] = std::stoll(cell);
    }
    ++row;
  }
  if (row != m.k()) throw CorruptFileError("confusion matrix has too few rows");
  return m;
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream out;
  out << std::fixed << std::setprecision(6) << *v;
  return out.str();
}

inline std::string report_text(const MetricReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6);
  out << "overall accuracy: " << r.overall_accuracy << "\n\n";
  out << "class                     sensitivity  specificity  support\n";
  for (const auto& c : r.per_class) {
    out << std::left << std::setw(25) << c.name << ' ' << std::right << std::setw(11)
        << format_metric(c.sensitivity) << "  " << std::setw(11)
        << format_metric(c.specificity) << "  " << std::setw(7) << c.support << '\n';
  }
  out << "\nmacro sensitivity: " << format_metric(r.macro_sensitivity) << '\n';
  out << "macro specificity: " << format_metric(r.macro_specificity) << '\n';
  return out.str();
}

inline std::string report_kv(const MetricReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6);
  out << "overall_accuracy=" << r.overall_accuracy << '\n';
  for (const auto& c : r.per_class) {
    out << "sensitivity." << c.name << '=' << format_metric(c.sensitivity) << '\n';
    out << "specificity." << c.name << '=' << format_metric(c.specificity) << '\n';
    out << "support." << c.name << '=' << c.support << '\n';
  }
  out << "macro_sensitivity=" << format_metric(r.macro_sensitivity) << '\n';
  out << "macro_specificity=" << format_metric(r.macro_specificity) << '\n';
  return out.str();
}

}  // namespace sepnet
