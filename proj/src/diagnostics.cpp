#include "fact/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

#include "nlohmann/json.hpp"

namespace fact::diag {

namespace {

void require_both_classes(const std::vector<ScoredCase>& cases, const char* who) {
  bool pos = false, neg = false;
  for (const auto& c : cases) (c.label ? pos : neg) = true;
  if (!pos || !neg)
    throw std::invalid_argument(std::string(who) + ": both classes required");
}

RatioResult ratio(double num, double den) {
  if (den <= 0.0) return {0.0, true};
  return {num / den, false};
}

// Distinct scores sorted descending.
std::vector<double> distinct_scores_desc(const std::vector<ScoredCase>& cases) {
  std::set<double, std::greater<double>> s;
  for (const auto& c : cases) s.insert(c.score);
  return {s.begin(), s.end()};
}

}  // namespace

RatioResult precision(const ConfusionMatrix& cm) {
  return ratio(cm.tp, static_cast<double>(cm.tp + cm.fp));
}
RatioResult recall(const ConfusionMatrix& cm) {
  return ratio(cm.tp, static_cast<double>(cm.tp + cm.fn));
}
RatioResult accuracy(const ConfusionMatrix& cm) {
  return ratio(cm.tp + cm.tn, static_cast<double>(cm.total()));
}
RatioResult f1(const ConfusionMatrix& cm) {
  const RatioResult p = precision(cm), r = recall(cm);
  if (p.degenerate || r.degenerate || p.value + r.value <= 0.0) return {0.0, true};
  return {2.0 * p.value * r.value / (p.value + r.value), false};
}

ConfusionMatrix confusion_at(const std::vector<ScoredCase>& cases, double threshold) {
  if (cases.empty()) throw std::invalid_argument("confusion_at: empty input");
  ConfusionMatrix cm;
  for (const auto& c : cases) {
    const bool predicted = c.score >= threshold;
    if (c.label) (predicted ? cm.tp : cm.fn)++;
    else (predicted ? cm.fp : cm.tn)++;
  }
  return cm;
}

std::vector<RocPoint> roc_curve(const std::vector<ScoredCase>& cases) {
  require_both_classes(cases, "roc_curve");
  long long n_pos = 0, n_neg = 0;
  for (const auto& c : cases) (c.label ? n_pos : n_neg)++;

  std::vector<RocPoint> pts{{0.0, 0.0}};
  for (double t : distinct_scores_desc(cases)) {
    const ConfusionMatrix cm = confusion_at(cases, t);
    pts.push_back({static_cast<double>(cm.fp) / n_neg,
                   static_cast<double>(cm.tp) / n_pos});
  }
  if (pts.back().fpr != 1.0 || pts.back().tpr != 1.0) pts.push_back({1.0, 1.0});
  std::stable_sort(pts.begin(), pts.end(), [](const RocPoint& a, const RocPoint& b) {
    return a.fpr != b.fpr ? a.fpr < b.fpr : a.tpr < b.tpr;
  });
  return pts;
}

double auc(const std::vector<ScoredCase>& cases) {
  const std::vector<RocPoint> pts = roc_curve(cases);
  double area = 0.0;
  for (size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) * 0.5;
  return area;
}

ThresholdResult optimal_threshold(const std::vector<ScoredCase>& cases) {
  if (cases.empty()) throw std::invalid_argument("optimal_threshold: empty input");
  std::vector<double> distinct = distinct_scores_desc(cases);
  std::reverse(distinct.begin(), distinct.end());  // ascending

  std::vector<double> candidates{0.0};
  for (size_t i = 1; i < distinct.size(); ++i)
    candidates.push_back(0.5 * (distinct[i - 1] + distinct[i]));
  candidates.push_back(distinct.back() + 1.0);
  std::sort(candidates.begin(), candidates.end());

  ThresholdResult best{candidates.front(), -1.0};
  for (double t : candidates) {
    const double acc = accuracy(confusion_at(cases, t)).value;
    if (acc > best.accuracy) best = {t, acc};
  }
  return best;
}

AppsResult apps(const std::vector<ScoredCase>& cases, int label) {
  double sum = 0.0;
  long long n = 0;
  for (const auto& c : cases)
    if (c.label == label) {
      sum += c.score;
      ++n;
    }
  if (n == 0) return {0.0, true};
  return {sum / n, false};
}

namespace {

ArmSummary summarize(const std::vector<ScoredCase>& cases) {
  ArmSummary s;
  const ThresholdResult opt = optimal_threshold(cases);
  s.optimal_thr = opt.threshold;
  s.confusion = confusion_at(cases, opt.threshold);
  s.precision = precision(s.confusion).value;
  s.recall = recall(s.confusion).value;
  s.accuracy = accuracy(s.confusion).value;
  s.f1 = f1(s.confusion).value;
  s.auc = auc(cases);
  s.apps_positive = apps(cases, 1).value;
  s.roc = roc_curve(cases);
  return s;
}

double pct_increase(double from, double to) {
  if (from == 0.0) return 0.0;
  return (to - from) / from * 100.0;
}

struct Row {
  const char* name;
  double original, enhanced;
};

std::vector<Row> metric_rows(const DiagnosticReport& r) {
  return {{"Precision", r.original.precision, r.enhanced.precision},
          {"Recall", r.original.recall, r.enhanced.recall},
          {"Accuracy", r.original.accuracy, r.enhanced.accuracy},
          {"F1-score", r.original.f1, r.enhanced.f1},
          {"AUC", r.original.auc, r.enhanced.auc},
          {"APPS(+)", r.original.apps_positive, r.enhanced.apps_positive}};
}

}  // namespace

DiagnosticReport compare_runs(const std::vector<ScoredCase>& original,
                              const std::vector<ScoredCase>& enhanced) {
  DiagnosticReport r;
  r.original = summarize(original);
  r.enhanced = summarize(enhanced);
  return r;
}

std::string DiagnosticReport::comparison_table() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os << "Metric      Original  Enhanced  Increase(%)\n";
  for (const Row& row : metric_rows(*this)) {
    os.precision(4);
    os << row.name;
    for (size_t i = std::string(row.name).size(); i < 12; ++i) os << ' ';
    os << row.original << "    " << row.enhanced << "    ";
    os.precision(2);
    os << pct_increase(row.original, row.enhanced) << '\n';
  }
  os.precision(4);
  os << "Optimal threshold: original " << original.optimal_thr << ", enhanced "
     << enhanced.optimal_thr << '\n';
  return os.str();
}

namespace {

nlohmann::json arm_json(const ArmSummary& s) {
  nlohmann::json j;
  j["confusion"] = {{"tp", s.confusion.tp},
                    {"fp", s.confusion.fp},
                    {"fn", s.confusion.fn},
                    {"tn", s.confusion.tn}};
  j["precision"] = s.precision;
  j["recall"] = s.recall;
  j["accuracy"] = s.accuracy;
  j["f1"] = s.f1;
  j["auc"] = s.auc;
  j["optimal_threshold"] = s.optimal_thr;
  j["apps_positive"] = s.apps_positive;
  return j;
}

}  // namespace

std::string DiagnosticReport::to_json() const {
  nlohmann::json j;
  j["original"] = arm_json(original);
  j["enhanced"] = arm_json(enhanced);
  nlohmann::json deltas;
  for (const Row& row : metric_rows(*this)) {
    deltas[row.name] = {{"delta", row.enhanced - row.original},
                        {"percent_increase", pct_increase(row.original, row.enhanced)}};
  }
  j["deltas"] = deltas;
  return j.dump(2);
}

std::string DiagnosticReport::metrics_csv() const {
  std::ostringstream os;
  os << "metric,original,enhanced,percent_increase\n";
  for (const Row& row : metric_rows(*this))
    os << row.name << ',' << row.original << ',' << row.enhanced << ','
       << pct_increase(row.original, row.enhanced) << '\n';
  return os.str();
}

std::string DiagnosticReport::roc_csv() const {
  std::ostringstream os;
  os << "arm,fpr,tpr\n";
  for (const RocPoint& p : original.roc)
    os << "original," << p.fpr << ',' << p.tpr << '\n';
  for (const RocPoint& p : enhanced.roc)
    os << "enhanced," << p.fpr << ',' << p.tpr << '\n';
  return os.str();
}

}  // namespace fact::diag
