#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fedlgt/metrics.hpp"
#include "fedlgt/util.hpp"
#include "oracles.hpp"

using namespace fedlgt;

using testing::ap_oracle;
using testing::prf_oracle;

TEST_CASE("hand-evaluated precision / recall example") {
  // rows are samples; columns are the two classes
  Tensor y = Tensor::matrix({{1, 0}, {1, 1}, {0, 1}});
  Tensor pred = Tensor::matrix({{1, 1}, {0, 1}, {0, 1}});
  auto r = prf1(confusion_counts(pred, y));
  CHECK(r.c_p == doctest::Approx(0.8333).epsilon(1e-4));
  CHECK(r.c_r == doctest::Approx(0.75));
  CHECK(r.c_f1 == doctest::Approx(0.7895).epsilon(1e-4));
  CHECK(r.o_p == 0.75);
  CHECK(r.o_r == 0.75);
  CHECK(r.o_f1 == 0.75);
}

TEST_CASE("threshold is strict") {
  Tensor y = Tensor::matrix({{1}});
  auto k = confusion_counts(Tensor::matrix({{0.5}}), y);
  CHECK(k.predicted[0] == 0);
  auto r = prf1(k);
  CHECK(r.c_p == 0.0);
  CHECK(r.c_f1 == 0.0);
  CHECK(r.o_f1 == 0.0);
  CHECK(confusion_counts(Tensor::matrix({{std::nextafter(0.5, 1.0)}}), y).predicted[0] == 1);
}

TEST_CASE("perfect and empty predictors") {
  Tensor y = Tensor::matrix({{1, 0, 1}, {0, 1, 1}});
  auto k = confusion_counts(y, y);
  CHECK(k.correct == k.predicted);
  CHECK(k.correct == k.ground_truth);
  auto r = prf1(k);
  for (double v : {r.c_p, r.c_r, r.c_f1, r.o_p, r.o_r, r.o_f1}) CHECK(v == 1.0);
  auto z = prf1(confusion_counts(Tensor::zeros({2, 3}), y));
  for (double v : {z.c_p, z.c_r, z.c_f1, z.o_p, z.o_r, z.o_f1}) CHECK(v == 0.0);
  CHECK_THROWS_AS(confusion_counts(Tensor::zeros({2, 2}), y), ShapeError);
}

TEST_CASE("average precision examples") {
  CHECK(average_precision({0.9, 0.8, 0.1}, {1, 0, 1}) == doctest::Approx(0.8333).epsilon(1e-4));
  CHECK(average_precision({0.9, 0.8, 0.1}, {1, 0, 1}) == (1.0 + 2.0 / 3.0) / 2.0);
  CHECK(average_precision({0.9, 0.8, 0.7, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(average_precision({0.3}, {1}) == 1.0);
  CHECK_THROWS(average_precision({0.3, 0.2}, {0, 0}));
  // ties go to the lower index
  CHECK(average_precision({0.5, 0.5}, {0, 1}) == 0.5);
  CHECK(average_precision({0.5, 0.5}, {1, 0}) == 1.0);

  Tensor s = Tensor::matrix({{0.9, 0.2}, {0.1, 0.3}});
  Tensor t = Tensor::matrix({{1, 0}, {0, 0}});
  auto [c_ap, o_ap] = average_precision(s, t);
  CHECK(c_ap == 1.0);  // class 1 has no positives and is skipped
  CHECK(o_ap == 1.0);
  CHECK_THROWS(average_precision(s, Tensor::zeros({2, 2})));
}

TEST_CASE("metrics match brute-force oracles on random instances") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 10, C = 1 + rng() % 5;
    Tensor p({n, C}), y({n, C});
    for (std::size_t i = 0; i < n * C; ++i) {
      // coarse grid so ties and exact 0.5 happen
      p[i] = static_cast<double>(rng() % 11) / 10.0;
      y[i] = uniform01(rng) < 0.4;
    }
    y[rng() % (n * C)] = 1;
    auto r = prf1(confusion_counts(p, y));
    auto o = prf_oracle(p, y);
    CHECK(r.c_p == o.cp);
    CHECK(r.c_r == o.cr);
    CHECK(r.c_f1 == o.cf1);
    CHECK(r.o_p == o.op);
    CHECK(r.o_r == o.orr);
    CHECK(r.o_f1 == o.of1);

    double sum = 0;
    std::size_t classes = 0;
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> s(n), t(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = p[i * C + c];
        t[i] = y[i * C + c];
      }
      if (std::count(t.begin(), t.end(), 1.0) == 0) continue;
      sum += ap_oracle(s, t);
      ++classes;
    }
    auto [c_ap, o_ap] = average_precision(p, y);
    CHECK(c_ap == sum / static_cast<double>(classes));
    CHECK(o_ap == ap_oracle(p.values(), y.values()));
  }
}

TEST_CASE("F1 harmonic identity and AP monotone invariance") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor p({8, 3}), y({8, 3});
    for (std::size_t i = 0; i < 24; ++i) {
      p[i] = uniform01(rng);
      y[i] = uniform01(rng) < 0.5;
    }
    y[0] = 1;
    auto m = evaluate_metrics(p, y);
    if (m.c_p + m.c_r > 0) CHECK(m.c_f1 == 2 * m.c_p * m.c_r / (m.c_p + m.c_r));
    if (m.o_p + m.o_r > 0) CHECK(m.o_f1 == 2 * m.o_p * m.o_r / (m.o_p + m.o_r));
    Tensor q = p;
    for (std::size_t i = 0; i < 24; ++i) q[i] = std::exp(3 * p[i]) - 7;
    auto [a1, b1] = average_precision(p, y);
    auto [a2, b2] = average_precision(q, y);
    CHECK(a1 == a2);
    CHECK(b1 == b2);
    for (double v : m.values()) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0);
      CHECK(v <= 1);
    }
  }
}

TEST_CASE("table layout lists metrics in column order") {
  MetricsReport r{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  auto t = format_metrics_table({{"FedLGT", r}});
  CHECK(t.find("C-AP") < t.find("C-P "));
  CHECK(t.find("C-F1") < t.find("O-AP"));
  CHECK(t.find("O-R") < t.find("O-F1"));
  CHECK(t.find("10.00") < t.find("80.00"));
}
