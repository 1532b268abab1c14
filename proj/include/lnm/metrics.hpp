#pragma once

#include <optional>
#include <string>
#include <vector>

namespace lnm::evaluation {

struct MetricReport {
    std::optional<double> auc;  ///< empty when only one class is present
    double sensitivity = 0.0;
    double specificity = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
    double balanced_accuracy = 0.0;
    int tp = 0, fp = 0, tn = 0, fn = 0;

    int n() const { return tp + fp + tn + fn; }
};

/// Mann-Whitney AUC with tied scores counted 0.5 (average ranks).
std::optional<double> auc(const std::vector<int>& labels, const std::vector<double>& scores);

/// Decision rule: score >= threshold is positive.
MetricReport compute_metrics(const std::vector<int>& labels, const std::vector<double>& probs, double threshold);

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

std::vector<RocPoint> roc_curve(const std::vector<int>& labels, const std::vector<double>& scores);

}  // namespace lnm::evaluation
