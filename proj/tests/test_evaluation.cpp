#include "doctest_torch.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <set>
#include <sstream>

#include "lnm/evaluation.hpp"
#include "support.hpp"

using namespace lnm;
using namespace lnm::evaluation;

namespace {

std::vector<PatientBag> labelled(int positives, int negatives) {
    std::vector<PatientBag> out;
    for (int i = 0; i < positives + negatives; ++i) {
        PatientBag b;
        b.patient_id = "P" + std::to_string(i);
        b.n_stage = i < positives ? NStage::N1 : NStage::N0;
        out.push_back(b);
    }
    return out;
}

std::vector<std::string> ids_of(const std::vector<PatientBag>& bags) {
    std::vector<std::string> ids;
    for (const auto& b : bags) ids.push_back(b.patient_id);
    return ids;
}

MetricReport with_auc(std::optional<double> a, double sens) {
    MetricReport r;
    r.auc = a;
    r.sensitivity = sens;
    return r;
}

mil::PredictionTrace trace(const std::string& id, int label, double p) {
    mil::PredictionTrace t;
    t.patient_id = id;
    t.label = label;
    t.final_prob = p;
    return t;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("stratified folds partition the cohort") {
    const auto bags = labelled(13, 40);
    const auto plan = make_cv_plan(bags, 5, 3);
    CHECK_NOTHROW(check_partition(plan, ids_of(bags)));
    std::set<std::string> positives;
    for (int i = 0; i < 13; ++i) positives.insert("P" + std::to_string(i));
    size_t lo = 1000, hi = 0;
    for (int f = 0; f < 5; ++f) {
        const auto& test = plan.test_ids(f);
        lo = std::min(lo, test.size());
        hi = std::max(hi, test.size());
        int pos = 0;
        for (const auto& id : test) pos += positives.count(id);
        CHECK(pos >= 2);
        const auto train = plan.train_ids(f);
        CHECK(train.size() + test.size() == bags.size());
        for (const auto& id : train) CHECK(std::find(test.begin(), test.end(), id) == test.end());
    }
    CHECK(hi - lo <= 1);
    CHECK(make_cv_plan(bags, 5, 3).test_folds == plan.test_folds);
}

TEST_CASE("broken partitions are detected") {
    const auto bags = labelled(10, 20);
    auto plan = make_cv_plan(bags, 5, 1);
    auto dup = plan;
    dup.test_folds[1].push_back(dup.test_folds[0].front());
    CHECK_THROWS_AS(check_partition(dup, ids_of(bags)), DataError);
    auto missing = plan;
    missing.test_folds[2].pop_back();
    CHECK_THROWS_AS(check_partition(missing, ids_of(bags)), DataError);
}

TEST_CASE("too few positives for the folds") {
    try {
        make_cv_plan(labelled(3, 30), 5, 1);
        FAIL("expected a stratification error");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("stratification") != std::string::npos);
    }
    CHECK_THROWS_AS(make_cv_plan(labelled(5, 5), 1, 1), ConfigError);
}

TEST_CASE("leakage checks") {
    mil::FeatureContext ctx;
    ctx.node_scaler.fitted_on = {"A", "B"};
    std::vector<PatientBag> training(2);
    training[0].patient_id = "A";
    training[1].patient_id = "SYN0001-B";
    training[1].is_synthetic = true;
    training[1].parent_id = "B";
    CHECK_NOTHROW(check_leakage(ctx, training, {"A", "B"}));
    training[1].parent_id = "C";
    CHECK_THROWS_AS(check_leakage(ctx, training, {"A", "B"}), DataError);
    training[1].parent_id = "B";
    ctx.node_scaler.fitted_on.insert("T");
    CHECK_THROWS_AS(check_leakage(ctx, training, {"A", "B"}), DataError);
}

TEST_CASE("summary of injected fold results") {
    const auto s = summarize({with_auc(0.5, 0.25), with_auc(0.75, 0.5), with_auc(1.0, 0.75), with_auc(0.75, 0.5)});
    CHECK(s.n == 4);
    CHECK(s.mean.at("auc") == 0.75);
    CHECK(s.sd.at("auc") == std::sqrt(0.03125));
    CHECK(s.mean.at("sensitivity") == 0.5);
    CHECK(s.sd.at("sensitivity") == std::sqrt(0.03125));
    CHECK(s.mean.at("specificity") == 0.0);
    CHECK(s.sd.at("specificity") == 0.0);

    const auto skip = summarize({with_auc(0.5, 0.0), with_auc(std::nullopt, 0.0), with_auc(1.0, 0.0)});
    CHECK(skip.mean.at("auc") == 0.75);
    CHECK(skip.sd.at("auc") == 0.25);
}

TEST_CASE("metric columns") {
    const std::vector<std::string> expected{"auc", "sensitivity", "specificity", "accuracy", "f1", "balanced_accuracy"};
    CHECK(metric_columns() == expected);
    MetricReport r;
    r.auc = 0.9;
    r.f1 = 0.4;
    const auto v = metric_values(r);
    CHECK(v.at("auc") == 0.9);
    CHECK(v.at("f1") == 0.4);
    std::stringstream ss;
    write_metric_table(ss, {{"full", r}});
    std::string header;
    std::getline(ss, header);
    CHECK(header.find("name,auc,sensitivity,specificity") == 0);
}

TEST_CASE("collapsed search space always yields its single point") {
    const SearchSpace space{{"learning_rate", {1e-3, 1e-3, true, false}}, {"base", {16, 16, false, true}}};
    const auto runs = hyperparameter_search(space, 4, 8, [](const ParamPoint& p, std::uint64_t) { return p.at("base"); });
    REQUIRE(runs.size() == 4);
    for (const auto& r : runs) {
        CHECK(r.params.at("learning_rate") == 1e-3);
        CHECK(r.params.at("base") == 16);
    }
}

TEST_CASE("search is deterministic and ranked") {
    const SearchSpace space{{"eta", {0.5, 0.75, false, false}}, {"patch_hidden_dim", {64, 256, false, true}}};
    auto objective = [](const ParamPoint& p, std::uint64_t) { return -std::abs(p.at("eta") - 0.6); };
    const auto a = hyperparameter_search(space, 10, 21, objective);
    const auto b = hyperparameter_search(space, 10, 21, objective);
    REQUIRE(a.size() == 10);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].params == b[i].params);
        CHECK(a[i].seed == b[i].seed);
        if (i) CHECK(a[i - 1].objective >= a[i].objective);
        CHECK(a[i].params.at("eta") >= 0.5);
        CHECK(a[i].params.at("eta") <= 0.75);
        CHECK(a[i].params.at("patch_hidden_dim") == std::round(a[i].params.at("patch_hidden_dim")));
    }
    int calls = 0;
    const auto nan_last = hyperparameter_search(space, 3, 2, [&](const ParamPoint&, std::uint64_t) {
        return calls++ == 0 ? std::nan("") : double(calls);
    });
    CHECK(std::isnan(nan_last.back().objective));
    CHECK(nan_last.front().objective == 3.0);
    CHECK_THROWS_AS(hyperparameter_search({}, 3, 1, objective), ConfigError);
}

TEST_CASE("search parameters map onto the configs") {
    vae::VAEConfig v;
    apply_vae_params(v, {{"base", 18.2}, {"learning_rate", 2e-4}, {"kernel", 5}});
    CHECK(v.base == 18);
    CHECK(v.learning_rate == 2e-4);
    CHECK(v.kernels[3] == 5);
    mil::MILConfig m;
    apply_mil_params(m, {{"eta", 0.6}});
    CHECK(m.eta == 0.6);
    CHECK_THROWS_AS(apply_vae_params(v, {{"depth", 3}}), ConfigError);
    CHECK_THROWS_AS(apply_mil_params(m, {{"depth", 3}}), ConfigError);
}

TEST_CASE("uncertainty classification") {
    // consistently missed positive: difficult, not uncertain
    // borderline negative: uncertain
    const std::vector<std::vector<mil::PredictionTrace>> states{
        {trace("A", 1, 0.2), trace("B", 0, 0.45), trace("C", 0, 0.5)},
        {trace("A", 1, 0.3), trace("B", 0, 0.55), trace("C", 0, 0.1)}};
    const auto ledger = accumulate_uncertainty(states, 0.436);
    REQUIRE(ledger.entries.size() == 3);
    const auto& a = ledger.entries[0];
    CHECK(a.mean == doctest::Approx(0.25));
    CHECK(a.misclassified == 2);
    CHECK(a.difficult);
    CHECK_FALSE(a.uncertain);
    const auto& b = ledger.entries[1];
    CHECK(b.mean == doctest::Approx(0.5));
    CHECK(b.uncertain);
    CHECK(b.difficult);
    const auto& c = ledger.entries[2];
    CHECK(c.misclassified == 1);
    CHECK_FALSE(c.difficult);  // exactly half is not a majority
    CHECK(ledger.difficult_count() == 2);
    CHECK(ledger.uncertain_count() == 1);
    CHECK(ledger.n_states == 2);
    CHECK_THROWS_AS(accumulate_uncertainty({states[0]}, 0.436), ValidationError);
    auto conflicting = states;
    conflicting[1][0].label = 0;
    CHECK_THROWS_AS(accumulate_uncertainty(conflicting, 0.436), DataError);
}

TEST_CASE("standard ablations") {
    const auto specs = standard_ablations();
    CHECK(specs.size() == 7);
    std::set<std::string> names;
    for (const auto& s : specs) {
        CHECK_NOTHROW(s.validate());
        names.insert(ablation_name(s));
    }
    CHECK(names.size() == specs.size());
    CHECK(specs.front() == mil::FeatureSwitches{});
}

TEST_CASE("nested CV on a tiny cohort keeps folds leak-free") {
    const auto corpus = generate_phantom_corpus(testing::small_spec(30, 6));
    NestedCVSettings s;
    s.folds = 2;
    s.vae_candidates = 1;
    s.mlp_candidates = 2;
    s.vae_space = {{"learning_rate", {1e-3, 1e-3, true, false}}};
    s.mil_space = {{"eta", {0.5, 0.75, false, false}}};
    vae::VAEConfig v;
    v.base = 16;
    v.latent_scalar = 16;
    v.batch_size = 64;
    v.accumulation_steps = 1;
    v.max_epochs = 1;
    mil::MILConfig m;
    m.patch_hidden_dim = 16;
    m.patient_hidden_dim = 8;
    m.batch_size = 16;
    m.accumulation_steps = 1;
    m.epochs = 2;
    m.synthetic_patients = 5;
    const auto result = run_nested_cv(corpus, s, v, vae::LossWeights::defaults_for_batch(64), m, 4);
    REQUIRE(result.folds.size() == 2);
    std::vector<std::string> ids;
    for (const auto& b : corpus.bags) ids.push_back(b.patient_id);
    CHECK_NOTHROW(check_partition(result.plan, ids));
    for (const auto& f : result.folds) {
        CHECK(f.vae_runs.size() == 1);
        CHECK(f.mil_runs.size() == 2);
        CHECK(f.traces.size() == f.test_ids.size());
        for (const auto& t : f.traces) CHECK(std::find(f.train_ids.begin(), f.train_ids.end(), t.patient_id) == f.train_ids.end());
    }
    CHECK(result.summary.n == 2);
    std::stringstream ss;
    write_fold_reports(ss, result);
    CHECK(std::count(std::istreambuf_iterator<char>(ss), {}, '\n') == 5);
}

}  // TEST_SUITE
