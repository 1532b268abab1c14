#include "lnm/metrics.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>

#include "lnm/common.hpp"

namespace lnm::evaluation {

std::optional<double> auc(const std::vector<int>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size()) throw ValidationError("auc: labels and scores differ in length");
    const size_t n = labels.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    std::vector<double> rank(n);
    for (size_t i = 0; i < n;) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * double(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double n_pos = 0, n_neg = 0, pos_rank_sum = 0;
    for (size_t i = 0; i < n; ++i) {
        if (labels[i]) {
            n_pos += 1;
            pos_rank_sum += rank[i];
        } else {
            n_neg += 1;
        }
    }
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

MetricReport compute_metrics(const std::vector<int>& labels, const std::vector<double>& probs, double threshold) {
    if (labels.size() != probs.size()) throw ValidationError("compute_metrics: labels and probs differ in length");
    MetricReport r;
    for (size_t i = 0; i < labels.size(); ++i) {
        const bool predicted = probs[i] >= threshold;
        if (labels[i]) {
            predicted ? ++r.tp : ++r.fn;
        } else {
            predicted ? ++r.fp : ++r.tn;
        }
    }
    auto ratio = [](double a, double b) { return b > 0 ? a / b : 0.0; };
    r.auc = auc(labels, probs);
    r.sensitivity = ratio(r.tp, r.tp + r.fn);
    r.specificity = ratio(r.tn, r.tn + r.fp);
    r.accuracy = ratio(r.tp + r.tn, r.n());
    r.f1 = ratio(2.0 * r.tp, 2.0 * r.tp + r.fp + r.fn);
    r.balanced_accuracy = 0.5 * (r.sensitivity + r.specificity);
    return r;
}

std::vector<RocPoint> roc_curve(const std::vector<int>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size()) throw ValidationError("roc_curve: labels and scores differ in length");
    std::vector<double> thresholds(scores);
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    const double n_pos = double(std::count(labels.begin(), labels.end(), 1));
    const double n_neg = double(labels.size()) - n_pos;

    std::vector<RocPoint> curve{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    for (double t : thresholds) {
        double tp = 0, fp = 0;
        for (size_t i = 0; i < labels.size(); ++i) {
            if (scores[i] >= t) (labels[i] ? tp : fp) += 1;
        }
        curve.push_back({t, n_neg > 0 ? fp / n_neg : 0.0, n_pos > 0 ? tp / n_pos : 0.0});
    }
    return curve;
}

}  // namespace lnm::evaluation
