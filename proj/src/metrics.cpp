#include "fedlgt/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fedlgt {
namespace {

void check_pair(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                     " must be equal [N, C]");
  }
}

double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }
double harmonic(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

const std::vector<std::string>& MetricsReport::names() {
  static const std::vector<std::string> n{"C-AP", "C-P", "C-R", "C-F1", "O-AP", "O-P", "O-R", "O-F1"};
  return n;
}

std::vector<double> MetricsReport::values() const { return {c_ap, c_p, c_r, c_f1, o_ap, o_p, o_r, o_f1}; }

ConfusionCounts confusion_counts(const Tensor& probs, const Tensor& targets, double threshold) {
  check_pair("confusion_counts", probs, targets);
  const std::size_t N = probs.dim(0), C = probs.dim(1);
  ConfusionCounts k{std::vector<std::uint64_t>(C), std::vector<std::uint64_t>(C),
                    std::vector<std::uint64_t>(C)};
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      const bool pred = probs[i * C + c] > threshold;
      const bool gt = targets[i * C + c] != 0.0;
      k.predicted[c] += pred;
      k.ground_truth[c] += gt;
      k.correct[c] += pred && gt;
    }
  }
  return k;
}

PrecisionRecallF1 prf1(const ConfusionCounts& k) {
  const std::size_t C = k.num_classes();
  PrecisionRecallF1 r;
  if (C == 0) return r;
  double sum_p = 0, sum_r = 0, mc = 0, mp = 0, mg = 0;
  for (std::size_t c = 0; c < C; ++c) {
    sum_p += ratio(static_cast<double>(k.correct[c]), static_cast<double>(k.predicted[c]));
    sum_r += ratio(static_cast<double>(k.correct[c]), static_cast<double>(k.ground_truth[c]));
    mc += static_cast<double>(k.correct[c]);
    mp += static_cast<double>(k.predicted[c]);
    mg += static_cast<double>(k.ground_truth[c]);
  }
  r.c_p = sum_p / static_cast<double>(C);
  r.c_r = sum_r / static_cast<double>(C);
  r.c_f1 = harmonic(r.c_p, r.c_r);
  r.o_p = ratio(mc, mp);
  r.o_r = ratio(mc, mg);
  r.o_f1 = harmonic(r.o_p, r.o_r);
  return r;
}

double average_precision(const std::vector<double>& scores, const std::vector<double>& targets) {
  if (scores.size() != targets.size()) throw ShapeError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0, acc = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (targets[order[rank]] != 0.0) {
      hits += 1;
      acc += hits / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) throw std::invalid_argument("average_precision: no positive targets");
  return acc / hits;
}

std::pair<double, double> average_precision(const Tensor& scores, const Tensor& targets) {
  check_pair("average_precision", scores, targets);
  const std::size_t N = scores.dim(0), C = scores.dim(1);
  double sum = 0;
  std::size_t classes = 0;
  std::vector<double> s(N), t(N);
  for (std::size_t c = 0; c < C; ++c) {
    bool any = false;
    for (std::size_t i = 0; i < N; ++i) {
      s[i] = scores[i * C + c];
      t[i] = targets[i * C + c];
      any = any || t[i] != 0.0;
    }
    if (!any) continue;
    sum += average_precision(s, t);
    ++classes;
  }
  if (classes == 0) throw std::invalid_argument("average_precision: every class has zero positives");
  const double o_ap = average_precision(scores.values(), targets.values());
  return {sum / static_cast<double>(classes), o_ap};
}

MetricsReport evaluate_metrics(const Tensor& probs, const Tensor& targets, double threshold) {
  const auto pr = prf1(confusion_counts(probs, targets, threshold));
  const auto [c_ap, o_ap] = average_precision(probs, targets);
  return MetricsReport{c_ap, pr.c_p, pr.c_r, pr.c_f1, o_ap, pr.o_p, pr.o_r, pr.o_f1};
}

std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::size_t width = 7;
  for (const auto& [name, r] : rows) width = std::max(width, name.size());
  std::ostringstream os;
  char buf[32];
  os << std::string(width, ' ');
  for (const auto& n : MetricsReport::names()) {
    std::snprintf(buf, sizeof(buf), " %7s", n.c_str());
    os << buf;
  }
  os << '\n';
  for (const auto& [name, r] : rows) {
    os << name << std::string(width - name.size(), ' ');
    for (double v : r.values()) {
      std::snprintf(buf, sizeof(buf), " %7.2f", 100.0 * v);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace fedlgt
