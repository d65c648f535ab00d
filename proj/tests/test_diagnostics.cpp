#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <sstream>

#include "fact/diagnostics.hpp"
#include "nlohmann/json.hpp"

using namespace fact::diag;

namespace {

// Mann-Whitney pair statistic: fraction of (positive, negative) pairs ranked
// correctly, with half credit for ties.
double mann_whitney(const std::vector<ScoredCase>& cases) {
  double credit = 0.0;
  long long pairs = 0;
  for (const auto& p : cases) {
    if (!p.label) continue;
    for (const auto& n : cases) {
      if (n.label) continue;
      ++pairs;
      if (p.score > n.score) credit += 1.0;
      else if (p.score == n.score) credit += 0.5;
    }
  }
  return credit / static_cast<double>(pairs);
}

// Exhaustive best accuracy: the accuracy curve only changes at the distinct
// scores, so probing each score and a point just above it covers every level.
double best_accuracy_exhaustive(const std::vector<ScoredCase>& cases) {
  double best = 0.0;
  std::vector<double> probes{0.0};
  for (const auto& c : cases) {
    probes.push_back(c.score);
    probes.push_back(c.score + 1e-9);
    probes.push_back(c.score + 10.0);
  }
  for (double t : probes)
    best = std::max(best, accuracy(confusion_at(cases, t)).value);
  return best;
}

std::vector<ScoredCase> random_cases(std::mt19937_64& rng, bool quantized) {
  std::uniform_int_distribution<int> size(5, 30);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::bernoulli_distribution lbl(0.5);
  const int n = size(rng);
  std::vector<ScoredCase> cases;
  for (int i = 0; i < n; ++i) {
    double s = u(rng);
    if (quantized) s = std::floor(s * 10.0) / 10.0;  // force ties
    const int label = i == 0 ? 0 : i == 1 ? 1 : static_cast<int>(lbl(rng));
    cases.push_back({"c" + std::to_string(i), s, label});
  }
  return cases;
}

}  // namespace

TEST_CASE("confusion matrix counts by hand") {
  const std::vector<ScoredCase> cases = {
      {"a", 0.9, 1}, {"b", 0.8, 0}, {"c", 0.3, 1}, {"d", 0.2, 0}};
  const ConfusionMatrix cm = confusion_at(cases, 0.5);
  CHECK(cm.tp == 1);
  CHECK(cm.fp == 1);
  CHECK(cm.fn == 1);
  CHECK(cm.tn == 1);
  CHECK(cm.total() == 4);

  // Scores equal to the threshold count as predicted positive.
  const ConfusionMatrix edge = confusion_at(cases, 0.8);
  CHECK(edge.tp == 1);
  CHECK(edge.fp == 1);

  CHECK_THROWS(confusion_at({}, 0.5));
}

TEST_CASE("ratio metrics and their degenerate denominators") {
  ConfusionMatrix cm{3, 1, 2, 4};
  CHECK(precision(cm).value == doctest::Approx(3.0 / 4.0));
  CHECK(recall(cm).value == doctest::Approx(3.0 / 5.0));
  CHECK(accuracy(cm).value == doctest::Approx(7.0 / 10.0));
  const double p = 0.75, r = 0.6;
  CHECK(f1(cm).value == doctest::Approx(2 * p * r / (p + r)));

  ConfusionMatrix none_predicted{0, 0, 2, 3};
  CHECK(precision(none_predicted).degenerate);
  CHECK(f1(none_predicted).degenerate);
  ConfusionMatrix no_positives{0, 1, 0, 3};
  CHECK(recall(no_positives).degenerate);
  CHECK_FALSE(accuracy(no_positives).degenerate);
}

TEST_CASE("roc endpoints, diagonal, and perfect separation") {
  const std::vector<ScoredCase> perfect = {
      {"p1", 0.9, 1}, {"p2", 0.8, 1}, {"n1", 0.2, 0}, {"n2", 0.1, 0}};
  const auto pts = roc_curve(perfect);
  CHECK(pts.front().fpr == 0.0);
  CHECK(pts.front().tpr == 0.0);
  CHECK(pts.back().fpr == 1.0);
  CHECK(pts.back().tpr == 1.0);
  bool hits_corner = false;
  for (const auto& p : pts)
    if (p.fpr == 0.0 && p.tpr == 1.0) hits_corner = true;
  CHECK(hits_corner);
  CHECK(auc(perfect) == doctest::Approx(1.0).epsilon(1e-14));

  // All scores equal: chance-level diagonal.
  const std::vector<ScoredCase> flat = {{"a", 0.5, 1}, {"b", 0.5, 0}};
  CHECK(auc(flat) == doctest::Approx(0.5).epsilon(1e-14));

  // Reversed ranking scores zero.
  const std::vector<ScoredCase> reversed = {{"a", 0.1, 1}, {"b", 0.9, 0}};
  CHECK(auc(reversed) == doctest::Approx(0.0).epsilon(1e-14));

  CHECK_THROWS(roc_curve({{"only", 0.5, 1}}));
  CHECK_THROWS(auc({{"only", 0.5, 0}}));
}

TEST_CASE("trapezoidal auc equals the pair statistic on 100 random sets") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const auto cases = random_cases(rng, rep % 2 == 0);
    CHECK(std::abs(auc(cases) - mann_whitney(cases)) < 1e-12);
  }
}

TEST_CASE("label flips and monotone score transforms behave as expected") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    auto cases = random_cases(rng, true);
    const double base = auc(cases);

    auto flipped = cases;
    for (auto& c : flipped) c.label = 1 - c.label;
    CHECK(auc(flipped) == doctest::Approx(1.0 - base).epsilon(1e-12));

    auto squeezed = cases;  // strictly increasing map on [0,1]
    for (auto& c : squeezed) c.score = c.score * c.score;
    CHECK(auc(squeezed) == doctest::Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("optimal threshold matches an exhaustive scan on 50 random sets") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const auto cases = random_cases(rng, rep % 2 == 0);
    const ThresholdResult best = optimal_threshold(cases);
    CHECK(best.accuracy ==
          doctest::Approx(best_accuracy_exhaustive(cases)).epsilon(1e-14));
    // The reported threshold really achieves the reported accuracy.
    CHECK(accuracy(confusion_at(cases, best.threshold)).value ==
          doctest::Approx(best.accuracy).epsilon(1e-14));
  }
}

TEST_CASE("optimal threshold prefers the smallest among ties") {
  const std::vector<ScoredCase> cases = {{"n", 0.2, 0}, {"p", 0.8, 1}};
  const ThresholdResult best = optimal_threshold(cases);
  CHECK(best.accuracy == 1.0);
  CHECK(best.threshold == doctest::Approx(0.5));
  CHECK_THROWS(optimal_threshold({}));
}

TEST_CASE("average positive score") {
  const std::vector<ScoredCase> cases = {{"a", 0.4, 1}, {"b", 0.6, 1}, {"c", 0.9, 0}};
  const AppsResult pos = apps(cases, 1);
  CHECK_FALSE(pos.undefined);
  CHECK(pos.value == doctest::Approx(0.5).epsilon(1e-14));
  const AppsResult neg = apps(cases, 0);
  CHECK(neg.value == doctest::Approx(0.9));
  CHECK(apps({{"a", 0.4, 1}}, 0).undefined);
}

TEST_CASE("identical arms produce an all-zero delta report") {
  std::mt19937_64 rng(4);
  const auto cases = random_cases(rng, false);
  const DiagnosticReport r = compare_runs(cases, cases);
  CHECK(r.original.auc == r.enhanced.auc);
  CHECK(r.original.accuracy == r.enhanced.accuracy);
  const auto j = nlohmann::json::parse(r.to_json());
  for (const auto& [name, d] : j.at("deltas").items()) {
    CHECK(d.at("delta").get<double>() == 0.0);
    CHECK(d.at("percent_increase").get<double>() == 0.0);
  }
}

TEST_CASE("report serializations carry consistent numbers") {
  const std::vector<ScoredCase> original = {
      {"a", 0.7, 1}, {"b", 0.6, 0}, {"c", 0.4, 1}, {"d", 0.3, 0}, {"e", 0.2, 0}};
  const std::vector<ScoredCase> enhanced = {
      {"a", 0.9, 1}, {"b", 0.3, 0}, {"c", 0.8, 1}, {"d", 0.2, 0}, {"e", 0.1, 0}};
  const DiagnosticReport r = compare_runs(original, enhanced);
  CHECK(r.enhanced.auc == doctest::Approx(1.0));
  CHECK(r.enhanced.accuracy == 1.0);

  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("original").at("auc").get<double>() == doctest::Approx(r.original.auc));
  CHECK(j.at("enhanced").at("accuracy").get<double>() == 1.0);
  const double want_pct =
      (r.enhanced.auc - r.original.auc) / r.original.auc * 100.0;
  CHECK(j.at("deltas").at("AUC").at("percent_increase").get<double>() ==
        doctest::Approx(want_pct).epsilon(1e-12));

  // Table: header, six metric rows, threshold footer.
  const std::string table = r.comparison_table();
  std::istringstream is(table);
  std::string line;
  int rows = 0;
  bool saw_header = false, saw_footer = false;
  while (std::getline(is, line)) {
    if (line.rfind("Metric", 0) == 0) saw_header = true;
    else if (line.rfind("Optimal threshold:", 0) == 0) saw_footer = true;
    else ++rows;
  }
  CHECK(saw_header);
  CHECK(saw_footer);
  CHECK(rows == 6);
  CHECK(table.find("Precision") != std::string::npos);
  CHECK(table.find("APPS(+)") != std::string::npos);

  const std::string csv = r.metrics_csv();
  CHECK(csv.rfind("metric,original,enhanced,percent_increase\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);

  const std::string roc = r.roc_csv();
  CHECK(roc.rfind("arm,fpr,tpr\n", 0) == 0);
  const auto lines = std::count(roc.begin(), roc.end(), '\n');
  CHECK(lines == static_cast<long>(1 + r.original.roc.size() + r.enhanced.roc.size()));
}
