#include "lnm/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace lnm::evaluation {

const std::vector<std::string>& metric_columns() {
    static const std::vector<std::string> cols = {"auc", "sensitivity", "specificity",
                                                  "accuracy", "f1", "balanced_accuracy"};
    return cols;
}

std::map<std::string, double> metric_values(const MetricReport& r) {
    std::map<std::string, double> v = {{"sensitivity", r.sensitivity}, {"specificity", r.specificity},
                                       {"accuracy", r.accuracy},       {"f1", r.f1},
                                       {"balanced_accuracy", r.balanced_accuracy}};
    if (r.auc) v["auc"] = *r.auc;
    return v;
}

MetricSummary summarize(const std::vector<MetricReport>& reports) {
    MetricSummary s;
    s.n = int(reports.size());
    for (const auto& col : metric_columns()) {
        std::vector<double> xs;
        for (const auto& r : reports) {
            const auto v = metric_values(r);
            if (auto it = v.find(col); it != v.end()) xs.push_back(it->second);
        }
        if (xs.empty()) continue;
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= double(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        s.mean[col] = mean;
        s.sd[col] = std::sqrt(var / double(xs.size()));
    }
    return s;
}

std::vector<std::string> CVPlan::train_ids(int fold) const {
    std::vector<std::string> ids;
    for (int f = 0; f < int(test_folds.size()); ++f) {
        if (f == fold) continue;
        ids.insert(ids.end(), test_folds[size_t(f)].begin(), test_folds[size_t(f)].end());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

CVPlan make_cv_plan(const std::vector<PatientBag>& bags, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("cross-validation needs at least 2 folds");
    std::vector<std::string> pos, neg;
    for (const auto& b : bags) {
        if (b.is_synthetic) throw DataError("cross-validation plan given synthetic patient " + b.patient_id);
        (b.label() ? pos : neg).push_back(b.patient_id);
    }
    if (int(pos.size()) < k) {
        throw DataError("stratification error: " + std::to_string(pos.size()) + " positive patients for " +
                        std::to_string(k) + " folds");
    }
    if (int(neg.size()) < k) throw DataError("stratification error: too few negative patients for the folds");
    preprocess::Rng rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    CVPlan plan;
    plan.k = k;
    plan.test_folds.resize(size_t(k));
    size_t slot = 0;
    for (const auto* group : {&pos, &neg}) {
        for (const auto& id : *group) plan.test_folds[slot++ % size_t(k)].push_back(id);
    }
    for (auto& fold : plan.test_folds) std::sort(fold.begin(), fold.end());
    return plan;
}

void check_partition(const CVPlan& plan, const std::vector<std::string>& all_ids) {
    std::set<std::string> seen;
    for (const auto& fold : plan.test_folds) {
        for (const auto& id : fold) {
            if (!seen.insert(id).second) throw DataError("patient " + id + " appears in two test folds");
        }
    }
    const std::set<std::string> expected(all_ids.begin(), all_ids.end());
    if (seen != expected) throw DataError("test folds do not cover the cohort exactly");
}

ParamPoint sample_point(const SearchSpace& space, preprocess::Rng& rng) {
    ParamPoint p;
    for (const auto& [name, r] : space) {
        double v = r.lo;
        if (r.hi > r.lo) {
            if (r.integer) {
                std::uniform_int_distribution<long long> d(std::llround(std::ceil(r.lo)), std::llround(std::floor(r.hi)));
                v = double(d(rng));
            } else if (r.log_scale) {
                std::uniform_real_distribution<double> d(std::log(r.lo), std::log(r.hi));
                v = std::exp(d(rng));
            } else {
                std::uniform_real_distribution<double> d(r.lo, r.hi);
                v = d(rng);
            }
        }
        p[name] = v;
    }
    return p;
}

void apply_vae_params(vae::VAEConfig& c, const ParamPoint& point) {
    for (const auto& [name, v] : point) {
        const int i = int(std::lround(v));
        if (name == "base") c.base = i;
        else if (name == "latent_scalar") c.latent_scalar = i;
        else if (name == "kernel") c.kernels.fill(i);
        else if (name == "learning_rate") c.learning_rate = v;
        else if (name == "weight_decay") c.weight_decay = v;
        else if (name == "batch_size") c.batch_size = i;
        else if (name == "accumulation_steps") c.accumulation_steps = i;
        else if (name == "max_epochs") c.max_epochs = i;
        else if (name == "patience") c.patience = i;
        else throw ConfigError("unknown VAE search parameter '" + name + "'");
    }
}

void apply_mil_params(mil::MILConfig& c, const ParamPoint& point) {
    for (const auto& [name, v] : point) {
        const int i = int(std::lround(v));
        if (name == "eta") c.eta = v;
        else if (name == "threshold") c.threshold = v;
        else if (name == "patch_hidden_dim") c.patch_hidden_dim = i;
        else if (name == "patient_hidden_dim") c.patient_hidden_dim = i;
        else if (name == "patch_dropout") c.patch_dropout = v;
        else if (name == "patient_dropout") c.patient_dropout = v;
        else if (name == "learning_rate") c.learning_rate = v;
        else if (name == "weight_decay") c.weight_decay = v;
        else if (name == "batch_size") c.batch_size = i;
        else if (name == "accumulation_steps") c.accumulation_steps = i;
        else if (name == "epochs") c.epochs = i;
        else if (name == "synthetic_patients") c.synthetic_patients = i;
        else if (name == "oversample_ratio") c.oversample_ratio = v;
        else throw ConfigError("unknown MIL search parameter '" + name + "'");
    }
}

std::vector<SearchRun> hyperparameter_search(const SearchSpace& space, int budget, std::uint64_t seed,
                                             const Objective& objective) {
    if (space.empty()) throw ConfigError("hyperparameter search space is empty");
    if (budget < 1) throw ConfigError("hyperparameter search budget must be >= 1");
    for (const auto& [name, r] : space) {
        if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi || (r.log_scale && r.lo <= 0.0)) {
            throw ConfigError("invalid range for search parameter '" + name + "'");
        }
    }
    preprocess::Rng rng(seed);
    std::vector<SearchRun> runs;
    for (int i = 0; i < budget; ++i) {
        SearchRun run;
        run.index = i;
        run.params = sample_point(space, rng);
        run.seed = derive_seed(seed, "search/run/" + std::to_string(i));
        run.objective = objective(run.params, run.seed);
        runs.push_back(std::move(run));
    }
    auto key = [](double x) { return std::isnan(x) ? -std::numeric_limits<double>::infinity() : x; };
    std::stable_sort(runs.begin(), runs.end(),
                     [&](const SearchRun& a, const SearchRun& b) { return key(a.objective) > key(b.objective); });
    return runs;
}

void write_search_ledger(std::ostream& out, const std::vector<SearchRun>& runs) {
    out << "rank,index,seed,objective,params\n" << std::setprecision(10);
    for (size_t r = 0; r < runs.size(); ++r) {
        const auto& run = runs[r];
        out << r + 1 << ',' << run.index << ',' << run.seed << ',' << run.objective << ',';
        bool first = true;
        for (const auto& [k, v] : run.params) {
            out << (first ? "" : ";") << k << '=' << v;
            first = false;
        }
        out << '\n';
    }
}

void check_leakage(const mil::FeatureContext& context, const std::vector<PatientBag>& training_set,
                   const std::vector<std::string>& train_ids) {
    const std::set<std::string> allowed(train_ids.begin(), train_ids.end());
    for (const auto& id : context.node_scaler.fitted_on) {
        if (!allowed.count(id)) throw DataError("leakage: feature scaler fitted on non-training patient " + id);
    }
    for (const auto& b : training_set) {
        const auto& origin = b.is_synthetic ? b.parent_id : b.patient_id;
        if (!allowed.count(origin)) throw DataError("leakage: training patient " + b.patient_id + " derives from " + origin);
    }
}

namespace {

std::vector<PatientBag> select(const Corpus& corpus, const std::vector<std::string>& ids) {
    std::vector<PatientBag> out;
    for (const auto& id : ids) out.push_back(corpus.bag(id));
    return out;
}

MetricReport report_of(const std::vector<mil::PredictionTrace>& traces, double threshold) {
    std::vector<int> labels;
    std::vector<double> probs;
    for (const auto& t : traces) {
        labels.push_back(t.label);
        probs.push_back(t.final_prob);
    }
    return compute_metrics(labels, probs, threshold);
}

}  // namespace

CVResult run_nested_cv(const Corpus& corpus, const NestedCVSettings& settings, const vae::VAEConfig& vae_base,
                       const vae::LossWeights& weights, const mil::MILConfig& mil_base, std::uint64_t seed,
                       const Log& log) {
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };
    CVResult result;
    std::vector<PatientBag> cohort;
    std::vector<std::string> all_ids;
    for (const auto& b : corpus.bags) {
        if (b.is_synthetic) continue;
        cohort.push_back(b);
        all_ids.push_back(b.patient_id);
    }
    result.plan = make_cv_plan(cohort, settings.folds, derive_seed(seed, "cv/plan"));
    result.plan.vae_candidates = settings.vae_candidates;
    result.plan.mlp_candidates = settings.mlp_candidates;
    check_partition(result.plan, all_ids);
    const auto& spacing = corpus.manifest.spacing;

    std::vector<MetricReport> reports;
    for (int f = 0; f < result.plan.k; ++f) {
        FoldResult fold;
        fold.fold = f;
        fold.train_ids = result.plan.train_ids(f);
        fold.test_ids = result.plan.test_ids(f);
        const auto train_bags = select(corpus, fold.train_ids);
        const auto test_bags = select(corpus, fold.test_ids);
        const auto train_patches = vae::real_patches(train_bags);
        const auto test_patches = vae::real_patches(test_bags);
        const std::string tag = "cv/fold" + std::to_string(f);

        std::map<std::uint64_t, vae::Checkpoint> vae_models;
        fold.vae_runs = hyperparameter_search(
            settings.vae_space, settings.vae_candidates, derive_seed(seed, tag + "/vae"),
            [&](const ParamPoint& p, std::uint64_t run_seed) {
                vae::VAEConfig cfg = vae_base;
                apply_vae_params(cfg, p);
                cfg.seed = run_seed;
                cfg.validate();
                auto trained = vae::train_vae(train_patches, test_patches, cfg, weights);
                const double ssim = trained.best.test_ssim;
                vae_models.emplace(run_seed, std::move(trained.best));
                say("fold " + std::to_string(f) + " vae candidate test SSIM " + std::to_string(ssim));
                return ssim;
            });
        auto encoder = vae_models.at(fold.vae_runs.front().seed).model;
        const int latent_dim = encoder->architecture().latent_dim;
        const auto test_encoded = mil::encode_bags(encoder, test_bags, spacing, mil_base.max_patches);

        std::map<std::uint64_t, std::vector<mil::PredictionTrace>> mil_traces;
        double threshold_of_best = mil_base.threshold;
        std::map<std::uint64_t, double> thresholds;
        fold.mil_runs = hyperparameter_search(
            settings.mil_space, settings.mlp_candidates, derive_seed(seed, tag + "/mil"),
            [&](const ParamPoint& p, std::uint64_t run_seed) {
                mil::MILConfig cfg = mil_base;
                apply_mil_params(cfg, p);
                cfg.seed = run_seed;
                cfg.validate();
                preprocess::Rng rng(derive_seed(run_seed, "synthetic"));
                const auto training_set = mil::make_synthetic_patients(train_bags, cfg.synthetic_patients,
                                                                       cfg.oversample_ratio,
                                                                       cfg.synthetic_augmentation, rng);
                const auto train_encoded = mil::encode_bags(encoder, training_set, spacing, cfg.max_patches);
                auto clf = mil::train_classifier(train_encoded, test_encoded, latent_dim, cfg);
                check_leakage(clf.context, training_set, fold.train_ids);
                auto traces = mil::predict(clf, test_encoded);
                const double auc_value = report_of(traces, cfg.threshold).auc.value_or(std::nan(""));
                mil_traces[run_seed] = std::move(traces);
                thresholds[run_seed] = cfg.threshold;
                say("fold " + std::to_string(f) + " mlp candidate test AUC " + std::to_string(auc_value));
                return auc_value;
            });
        const auto best_seed = fold.mil_runs.front().seed;
        threshold_of_best = thresholds.at(best_seed);
        fold.traces = mil_traces.at(best_seed);
        fold.report = report_of(fold.traces, threshold_of_best);
        reports.push_back(fold.report);
        result.folds.push_back(std::move(fold));
    }
    result.summary = summarize(reports);
    return result;
}

void write_fold_reports(std::ostream& out, const CVResult& result) {
    std::vector<std::pair<std::string, MetricReport>> rows;
    for (const auto& f : result.folds) rows.emplace_back("fold" + std::to_string(f.fold), f.report);
    write_metric_table(out, rows);
    out << std::setprecision(6);
    for (const char* stat : {"mean", "sd"}) {
        out << stat;
        const auto& m = std::string(stat) == "mean" ? result.summary.mean : result.summary.sd;
        for (const auto& col : metric_columns()) {
            out << ',';
            if (auto it = m.find(col); it != m.end()) out << it->second;
        }
        out << ",,,,\n";
    }
}

std::string ablation_name(const AblationSpec& s) {
    std::ostringstream n;
    n << "deep=" << (s.use_deep_features ? "on" : "off") << ";node=" << (s.use_clinical_node ? "on" : "off")
      << ";patient=" << (s.use_clinical_patient ? "on" : "off") << ";agg=" << mil::to_string(s.aggregation);
    return n.str();
}

std::vector<AblationSpec> standard_ablations() {
    using mil::Aggregation;
    return {
        {true, true, true, Aggregation::Weighted},
        {true, true, true, Aggregation::MaxOnly},
        {true, true, true, Aggregation::MlpOnly},
        {false, true, true, Aggregation::Weighted},
        {true, false, true, Aggregation::Weighted},
        {true, true, false, Aggregation::Weighted},
        {true, false, false, Aggregation::Weighted},
    };
}

std::vector<AblationRow> run_ablation(const std::vector<mil::EncodedBag>& train, const std::vector<mil::EncodedBag>& test,
                                      int latent_dim, const mil::MILConfig& base, const std::vector<AblationSpec>& specs,
                                      const Log& log) {
    std::vector<AblationRow> rows;
    for (const auto& spec : specs) {
        spec.validate();
        mil::MILConfig cfg = base;
        cfg.switches = spec;
        auto clf = mil::train_classifier(train, test, latent_dim, cfg);
        AblationRow row;
        row.name = ablation_name(spec);
        row.spec = spec;
        row.traces = mil::predict(clf, test);
        row.report = report_of(row.traces, cfg.threshold);
        row.node_input_dim = mil::node_input_dim(latent_dim, spec);
        if (log) log("ablation " + row.name + " test AUC " + std::to_string(row.report.auc.value_or(std::nan(""))));
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_metric_table(std::ostream& out, const std::vector<std::pair<std::string, MetricReport>>& rows) {
    out << "name";
    for (const auto& col : metric_columns()) out << ',' << col;
    out << ",tp,fp,tn,fn\n" << std::setprecision(6);
    for (const auto& [name, r] : rows) {
        const auto v = metric_values(r);
        out << name;
        for (const auto& col : metric_columns()) {
            out << ',';
            if (auto it = v.find(col); it != v.end()) out << it->second;
            else out << "NA";
        }
        out << ',' << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn << '\n';
    }
}

int UncertaintyLedger::difficult_count() const {
    return int(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.difficult; }));
}

int UncertaintyLedger::uncertain_count() const {
    return int(std::count_if(entries.begin(), entries.end(), [](const auto& e) { return e.uncertain; }));
}

UncertaintyLedger accumulate_uncertainty(const std::vector<std::vector<mil::PredictionTrace>>& states,
                                         double threshold) {
    if (states.empty()) throw ValidationError("uncertainty: no saved model states");
    if (states.size() < 2) throw ValidationError("uncertainty: at least two saved model states are required");
    std::map<std::string, UncertaintyEntry> by_patient;
    std::vector<std::string> order;
    for (const auto& state : states) {
        for (const auto& t : state) {
            auto [it, inserted] = by_patient.try_emplace(t.patient_id);
            auto& e = it->second;
            if (inserted) {
                e.patient_id = t.patient_id;
                e.label = t.label;
                order.push_back(t.patient_id);
            } else if (e.label != t.label) {
                throw DataError("uncertainty: patient " + t.patient_id + " has conflicting labels across states");
            }
            e.probs.push_back(t.final_prob);
            if (mil::decide(t.final_prob, threshold) != t.label) ++e.misclassified;
        }
    }
    UncertaintyLedger ledger;
    ledger.n_states = int(states.size());
    for (const auto& id : order) {
        auto e = by_patient.at(id);
        double sum = 0.0;
        for (double p : e.probs) sum += p;
        e.mean = sum / double(e.probs.size());
        e.difficult = 2 * e.misclassified > int(e.probs.size());
        e.uncertain = e.mean >= kUncertainLow && e.mean <= kUncertainHigh;
        ledger.entries.push_back(std::move(e));
    }
    return ledger;
}

void write_uncertainty(std::ostream& out, const UncertaintyLedger& ledger) {
    out << "patient_id,label,n_states,mean,misclassified,difficult,uncertain\n" << std::setprecision(10);
    for (const auto& e : ledger.entries) {
        out << e.patient_id << ',' << e.label << ',' << e.probs.size() << ',' << e.mean << ',' << e.misclassified
            << ',' << int(e.difficult) << ',' << int(e.uncertain) << '\n';
    }
}

}  // namespace lnm::evaluation
