#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lnm/corpus.hpp"
#include "lnm/metrics.hpp"
#include "lnm/mil.hpp"
#include "lnm/vae.hpp"

namespace lnm::evaluation {

using Log = std::function<void(const std::string&)>;

// -- aggregation -----------------------------------------------------------

struct MetricSummary {
    std::map<std::string, double> mean;
    std::map<std::string, double> sd;  ///< population sd over folds
    int n = 0;
};

/// Metric columns in report order: auc, sensitivity, specificity, accuracy, f1, balanced_accuracy.
const std::vector<std::string>& metric_columns();
std::map<std::string, double> metric_values(const MetricReport& r);
/// Mean and population sd of each column; folds with undefined AUC are skipped for that column.
MetricSummary summarize(const std::vector<MetricReport>& reports);

// -- cross-validation plan -------------------------------------------------

struct CVPlan {
    int k = 5;
    int vae_candidates = 5;
    int mlp_candidates = 10;
    std::vector<std::vector<std::string>> test_folds;  ///< patient ids per fold

    std::vector<std::string> train_ids(int fold) const;
    const std::vector<std::string>& test_ids(int fold) const { return test_folds.at(size_t(fold)); }
};

/// Stratified by label; throws DataError when some fold would hold no positive patient.
CVPlan make_cv_plan(const std::vector<PatientBag>& bags, int k, std::uint64_t seed);
/// Throws DataError unless the test folds partition exactly `all_ids`.
void check_partition(const CVPlan& plan, const std::vector<std::string>& all_ids);

// -- hyperparameter search -------------------------------------------------

struct ParamRange {
    double lo = 0.0;
    double hi = 0.0;
    bool log_scale = false;
    bool integer = false;
};

using SearchSpace = std::map<std::string, ParamRange>;
using ParamPoint = std::map<std::string, double>;

ParamPoint sample_point(const SearchSpace& space, preprocess::Rng& rng);

/// Overrides named fields ("base", "learning_rate", ...); unknown names raise ConfigError.
void apply_vae_params(vae::VAEConfig& config, const ParamPoint& point);
void apply_mil_params(mil::MILConfig& config, const ParamPoint& point);

struct SearchRun {
    int index = 0;
    std::uint64_t seed = 0;
    ParamPoint params;
    double objective = 0.0;
};

using Objective = std::function<double(const ParamPoint& params, std::uint64_t seed)>;

/// Seeded random search; the result is ranked by objective, best first (ties by index).
std::vector<SearchRun> hyperparameter_search(const SearchSpace& space, int budget, std::uint64_t seed,
                                             const Objective& objective);
void write_search_ledger(std::ostream& out, const std::vector<SearchRun>& runs);

// -- nested cross-validation -----------------------------------------------

struct NestedCVSettings {
    int folds = 5;
    int vae_candidates = 5;
    int mlp_candidates = 10;
    SearchSpace vae_space;
    SearchSpace mil_space;
};

struct FoldResult {
    int fold = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
    std::vector<SearchRun> vae_runs;  ///< ranked by test SSIM
    std::vector<SearchRun> mil_runs;  ///< ranked by test AUC
    MetricReport report;              ///< selected candidate on the fold's test patients
    std::vector<mil::PredictionTrace> traces;
};

struct CVResult {
    CVPlan plan;
    std::vector<FoldResult> folds;
    MetricSummary summary;
};

/// Throws DataError if any scaler or synthetic patient derives from outside `train_ids`.
void check_leakage(const mil::FeatureContext& context, const std::vector<PatientBag>& training_set,
                   const std::vector<std::string>& train_ids);

CVResult run_nested_cv(const Corpus& corpus, const NestedCVSettings& settings, const vae::VAEConfig& vae_base,
                       const vae::LossWeights& weights, const mil::MILConfig& mil_base, std::uint64_t seed,
                       const Log& log = {});

void write_fold_reports(std::ostream& out, const CVResult& result);

// -- ablation --------------------------------------------------------------

using AblationSpec = mil::FeatureSwitches;

std::string ablation_name(const AblationSpec& spec);

/// Full model plus one-at-a-time switches and the two alternative aggregations.
std::vector<AblationSpec> standard_ablations();

struct AblationRow {
    std::string name;
    AblationSpec spec;
    MetricReport report;
    std::vector<mil::PredictionTrace> traces;
    int node_input_dim = 0;
};

/// Trains one classifier per spec on the same encoded training set.
std::vector<AblationRow> run_ablation(const std::vector<mil::EncodedBag>& train, const std::vector<mil::EncodedBag>& test,
                                      int latent_dim, const mil::MILConfig& base, const std::vector<AblationSpec>& specs,
                                      const Log& log = {});

/// Delimited table with the classification metric columns.
void write_metric_table(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& rows);

// -- uncertainty -----------------------------------------------------------

inline constexpr double kUncertainLow = 0.33;
inline constexpr double kUncertainHigh = 0.66;

struct UncertaintyEntry {
    std::string patient_id;
    int label = 0;
    std::vector<double> probs;
    double mean = 0.0;
    int misclassified = 0;
    bool difficult = false;  ///< misclassified in strictly more than half of the states
    bool uncertain = false;  ///< mean within [0.33, 0.66]
};

struct UncertaintyLedger {
    std::vector<UncertaintyEntry> entries;
    int n_states = 0;

    int difficult_count() const;
    int uncertain_count() const;
};

/// Each element of `states` holds the traces of one saved model state.
UncertaintyLedger accumulate_uncertainty(const std::vector<std::vector<mil::PredictionTrace>>& states,
                                         double threshold);
void write_uncertainty(std::ostream& out, const UncertaintyLedger& ledger);

}  // namespace lnm::evaluation
