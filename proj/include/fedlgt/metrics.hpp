#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedlgt/tensor.hpp"

namespace fedlgt {

// Per-class counts: correct positives, predicted positives, ground-truth positives.
struct ConfusionCounts {
  std::vector<std::uint64_t> correct;
  std::vector<std::uint64_t> predicted;
  std::vector<std::uint64_t> ground_truth;

  std::size_t num_classes() const { return correct.size(); }
};

struct PrecisionRecallF1 {
  double c_p = 0, c_r = 0, c_f1 = 0;
  double o_p = 0, o_r = 0, o_f1 = 0;
};

// All values in [0, 1].
struct MetricsReport {
  double c_ap = 0, c_p = 0, c_r = 0, c_f1 = 0;
  double o_ap = 0, o_p = 0, o_r = 0, o_f1 = 0;

  // Names and values in table order: C-AP C-P C-R C-F1 O-AP O-P O-R O-F1.
  static const std::vector<std::string>& names();
  std::vector<double> values() const;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// A label counts as predicted when its probability is strictly above `threshold`.
ConfusionCounts confusion_counts(const Tensor& probs, const Tensor& targets, double threshold = 0.5);

// Per-class ratios with a zero denominator contribute 0; F1 of (0, 0) is 0.
PrecisionRecallF1 prf1(const ConfusionCounts& counts);

// Mean over the positives of the precision at each positive's rank, ranking by
// descending score with ties broken by ascending index. Throws if there are no positives.
double average_precision(const std::vector<double>& scores, const std::vector<double>& targets);

// (C-AP, O-AP). C-AP averages classes with at least one positive; O-AP ranks
// all (sample, class) pairs flattened sample-major.
std::pair<double, double> average_precision(const Tensor& scores, const Tensor& targets);

MetricsReport evaluate_metrics(const Tensor& probs, const Tensor& targets, double threshold = 0.5);

// "C-AP C-P ..." header and a row of values x100 with two decimals.
std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace fedlgt
