#pragma once

#include <string>
#include <vector>

namespace fact::diag {

struct ScoredCase {
  std::string id;
  double score = 0.0;  // in [0,1]
  int label = 0;       // ground truth, 0 or 1
};

struct ConfusionMatrix {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
  long long total() const { return tp + fp + fn + tn; }
};

// Each ratio is 0 with `degenerate` set when its denominator is 0.
struct RatioResult {
  double value = 0.0;
  bool degenerate = false;
  operator double() const { return value; }
};

RatioResult precision(const ConfusionMatrix& cm);
RatioResult recall(const ConfusionMatrix& cm);
RatioResult accuracy(const ConfusionMatrix& cm);
RatioResult f1(const ConfusionMatrix& cm);

// Predicted positive iff score >= threshold.
ConfusionMatrix confusion_at(const std::vector<ScoredCase>& cases, double threshold);

struct RocPoint {
  double fpr = 0.0, tpr = 0.0;
};

// ROC points at every distinct score threshold plus the (0,0)/(1,1) endpoints,
// sorted by false-positive rate.
std::vector<RocPoint> roc_curve(const std::vector<ScoredCase>& cases);

// Trapezoidal area under the ROC; equals the Mann-Whitney pair statistic with
// half-credit ties.
double auc(const std::vector<ScoredCase>& cases);

struct ThresholdResult {
  double threshold = 0.0;
  double accuracy = 0.0;
};

// Accuracy-maximizing threshold among midpoints between adjacent distinct
// scores (plus below-min and above-max candidates); ties pick the smallest.
ThresholdResult optimal_threshold(const std::vector<ScoredCase>& cases);

// Average probability score over cases of one ground-truth class.
struct AppsResult {
  double value = 0.0;
  bool undefined = false;  // no case of that class
};
AppsResult apps(const std::vector<ScoredCase>& cases, int label);

struct ArmSummary {
  ConfusionMatrix confusion;  // at the arm's optimal threshold
  double precision = 0.0, recall = 0.0, accuracy = 0.0, f1 = 0.0;
  double auc = 0.0;
  double optimal_thr = 0.0;
  double apps_positive = 0.0;
  std::vector<RocPoint> roc;
};

struct DiagnosticReport {
  ArmSummary original;
  ArmSummary enhanced;

  std::string comparison_table() const;  // metric, original, enhanced, % increase
  std::string to_json() const;
  std::string metrics_csv() const;
  std::string roc_csv() const;  // arm, fpr, tpr
};

DiagnosticReport compare_runs(const std::vector<ScoredCase>& original,
                              const std::vector<ScoredCase>& enhanced);

}  // namespace fact::diag
