#include "doctest_torch.hpp"

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

#include "lnm/mil.hpp"
#include "support.hpp"

using namespace lnm;
using namespace lnm::mil;

namespace {

constexpr int kLatent = 6;
constexpr int kSlots = 15;

EncodedBag make_bag(const std::string& id, int label, int n_real, std::mt19937_64& rng) {
    std::normal_distribution<float> g(0.0f, 1.0f);
    EncodedBag bag;
    bag.patient_id = id;
    bag.label = label;
    bag.age = 40 + 30 * std::uniform_real_distribution<double>(0, 1)(rng);
    bag.sex = label ? Sex::Female : Sex::Male;
    bag.t_stage = TStage(std::uniform_int_distribution<int>(0, 3)(rng));
    for (int s = 0; s < kSlots; ++s) {
        EncodedPatch p;
        if (s < n_real) {
            p.padding = false;
            p.node_id = id + "-N" + std::to_string(s);
            for (int k = 0; k < kLatent; ++k) p.latent.push_back(g(rng) + (label && s == 0 ? 2.5f : 0.0f));
            p.features.short_axis_mm = 4.0 + g(rng) * 0.5 + (label && s == 0 ? 5.0 : 0.0);
            p.features.long_axis_mm = p.features.short_axis_mm * 1.3;
            p.features.axis_ratio = 1 / 1.3;
            p.features.convexity = 0.95 + 0.01 * s;
            p.features.compactness = 1.1;
        }
        bag.slots.push_back(p);
    }
    return bag;
}

std::vector<EncodedBag> cohort(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<EncodedBag> out;
    for (int i = 0; i < n; ++i) out.push_back(make_bag("P" + std::to_string(i), i % 3 == 0, 1 + i % 6, rng));
    return out;
}

MILConfig small_config() {
    MILConfig c;
    c.patch_hidden_dim = 16;
    c.patient_hidden_dim = 8;
    c.batch_size = 16;
    c.accumulation_steps = 1;
    c.learning_rate = 3e-3;
    c.weight_decay = 0.01;
    c.epochs = 15;
    c.seed = 99;
    return c;
}

}  // namespace

TEST_SUITE("mil") {

TEST_CASE("weighted aggregation arithmetic") {
    CHECK(aggregate(0.75, 0.8, 0.56) == doctest::Approx(0.74).epsilon(1e-12));
    CHECK(aggregate(1.0, 0.3, 0.9) == doctest::Approx(0.3));
    CHECK(aggregate(0.0, 0.3, 0.9) == doctest::Approx(0.9));
    CHECK(decide(0.436, 0.436) == 1);
    CHECK(decide(0.4359, 0.436) == 0);
}

TEST_CASE("effective eta follows the aggregation") {
    MILConfig c;
    CHECK(c.effective_eta() == 0.75);
    c.switches.aggregation = Aggregation::MaxOnly;
    CHECK(c.effective_eta() == 0.0);
    c.switches.aggregation = Aggregation::MlpOnly;
    CHECK(c.effective_eta() == 1.0);
    CHECK(parse_aggregation(to_string(Aggregation::Weighted)) == Aggregation::Weighted);
    CHECK_THROWS_AS(parse_aggregation("mean"), ConfigError);
}

TEST_CASE("eta range and override") {
    MILConfig c;
    c.eta = 0.8;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.eta_override = true;
    CHECK_NOTHROW(c.validate());
    c.synthetic_patients = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("input dimensions follow the switches") {
    FeatureSwitches s;
    CHECK(node_input_dim(kLatent, s) == kLatent + 5);
    CHECK(patient_input_dim(15, s) == 15 + 6 + 5);
    s.use_deep_features = false;
    CHECK(node_input_dim(kLatent, s) == 5);
    s.use_deep_features = true;
    s.use_clinical_node = false;
    CHECK(node_input_dim(kLatent, s) == kLatent);
    CHECK(patient_input_dim(15, s) == 15 + 6);
    s.use_clinical_patient = false;
    CHECK(patient_input_dim(15, s) == 15);
    s.use_deep_features = false;
    CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("padding contributes zero input and never wins the max") {
    auto bags = cohort(12, 1);
    const auto ctx = fit_feature_context(bags);
    apply_feature_context(bags, ctx);
    torch::manual_seed(3);
    MILModel model(kLatent, small_config());
    const auto traces = predict(model, bags, ctx);
    for (size_t b = 0; b < bags.size(); ++b) {
        const auto& t = traces[b];
        double max_real = 0.0;
        for (size_t s = 0; s < bags[b].slots.size(); ++s) {
            if (bags[b].slots[s].padding) {
                CHECK(t.node_probs[s] == 0.0);
                const auto in = node_input(bags[b].slots[s], FeatureSwitches{}, kLatent);
                CHECK(std::all_of(in.begin(), in.end(), [](float v) { return v == 0.0f; }));
            } else {
                max_real = std::max(max_real, t.node_probs[s]);
            }
        }
        CHECK(t.max_node_prob == doctest::Approx(max_real).epsilon(1e-6));
        CHECK(t.final_prob == doctest::Approx(aggregate(0.75, t.patient_mlp_prob, t.max_node_prob)).epsilon(1e-6));
        CHECK(t.decision == decide(t.final_prob, 0.436));
    }
}

TEST_CASE("node probabilities do not depend on the rest of the bag") {
    auto bags = cohort(4, 2);
    const auto ctx = fit_feature_context(bags);
    apply_feature_context(bags, ctx);
    torch::manual_seed(4);
    MILModel model(kLatent, small_config());
    auto changed = bags;
    REQUIRE(bags[3].real_count() >= 2);
    changed[3].slots[1].latent[0] += 3.0f;
    const auto a = predict(model, bags, ctx), b = predict(model, changed, ctx);
    CHECK(a[3].node_probs[0] == doctest::Approx(b[3].node_probs[0]).epsilon(1e-7));
    CHECK(a[3].node_probs[1] != b[3].node_probs[1]);
    CHECK(a[3].node_probs[0] == doctest::Approx(node_mlp_forward(model, bags[3].slots[0])).epsilon(1e-6));
}

TEST_CASE("bag without real nodes uses the zero fallback") {
    std::mt19937_64 rng(3);
    std::vector<EncodedBag> bags{make_bag("A", 0, 2, rng), make_bag("B", 1, 0, rng)};
    const auto ctx = fit_feature_context(bags);
    apply_feature_context(bags, ctx);
    MILModel model(kLatent, small_config());
    const auto t = predict(model, bags, ctx);
    CHECK(t[1].no_real_nodes);
    CHECK(t[1].max_node_prob == 0.0);
    CHECK(t[1].final_prob == doctest::Approx(0.75 * t[1].patient_mlp_prob).epsilon(1e-6));
}

TEST_CASE("mlp-only and max-only aggregation") {
    auto bags = cohort(8, 5);
    const auto ctx = fit_feature_context(bags);
    apply_feature_context(bags, ctx);
    auto cfg = small_config();
    cfg.switches.aggregation = Aggregation::MlpOnly;
    MILModel mlp(kLatent, cfg);
    for (const auto& t : predict(mlp, bags, ctx)) CHECK(t.final_prob == doctest::Approx(t.patient_mlp_prob).epsilon(1e-7));
    cfg.switches.aggregation = Aggregation::MaxOnly;
    MILModel mx(kLatent, cfg);
    for (const auto& t : predict(mx, bags, ctx)) CHECK(t.final_prob == doctest::Approx(t.max_node_prob).epsilon(1e-7));
}

TEST_CASE("feature context is fitted on real training patients only") {
    auto bags = cohort(6, 6);
    bags[2].is_synthetic = true;
    bags[2].slots[0].features.short_axis_mm = 100.0;
    const auto ctx = fit_feature_context(bags);
    CHECK(ctx.node_scaler.max[0] < 100.0);
    CHECK(ctx.node_scaler.fitted_on.count(bags[2].patient_id) == 0);
}

TEST_CASE("trace CSV round-trip") {
    auto bags = cohort(5, 7);
    const auto ctx = fit_feature_context(bags);
    apply_feature_context(bags, ctx);
    MILModel model(kLatent, small_config());
    const auto traces = predict(model, bags, ctx);
    std::stringstream ss;
    write_traces(ss, traces);
    const auto back = read_traces(ss);
    REQUIRE(back.size() == traces.size());
    for (size_t i = 0; i < traces.size(); ++i) {
        CHECK(back[i].patient_id == traces[i].patient_id);
        CHECK(back[i].label == traces[i].label);
        CHECK(back[i].final_prob == doctest::Approx(traces[i].final_prob).epsilon(1e-9));
        CHECK(back[i].node_probs.size() == traces[i].node_probs.size());
        CHECK(back[i].decision == traces[i].decision);
    }
    std::stringstream bad("patient_id,label\nx,1\n");
    CHECK_THROWS_AS(read_traces(bad), DataError);
}

TEST_CASE("multi-state confidence statistics") {
    auto bags = cohort(3, 8);
    const auto ctx = fit_feature_context(bags);
    apply_feature_context(bags, ctx);
    torch::manual_seed(1);
    std::vector<MILModel> states{MILModel(kLatent, small_config()), MILModel(kLatent, small_config())};
    const auto t = patient_forward(bags[0], states, ctx);
    const auto a = predict(states[0], {bags[0]}, ctx)[0], b = predict(states[1], {bags[0]}, ctx)[0];
    CHECK(t.n_states == 2);
    CHECK(t.final_prob == doctest::Approx(a.final_prob).epsilon(1e-7));
    CHECK(t.mean_prob == doctest::Approx(0.5 * (a.final_prob + b.final_prob)).epsilon(1e-7));
    CHECK(t.sd_prob == doctest::Approx(0.5 * std::abs(a.final_prob - b.final_prob)).epsilon(1e-6));
    CHECK(t.min_prob == doctest::Approx(std::min(a.final_prob, b.final_prob)).epsilon(1e-7));
    std::vector<MILModel> none;
    CHECK_THROWS_AS(patient_forward(bags[0], none, ctx), ValidationError);
}

TEST_CASE("synthetic patients") {
    const auto corpus = generate_phantom_corpus(testing::small_spec(30, 4));
    const auto train = corpus.split_bags(Split::Train);
    std::set<std::string> train_ids;
    for (const auto& b : train) train_ids.insert(b.patient_id);
    preprocess::Rng rng(5);
    const auto out = make_synthetic_patients(train, 25, 1.5, preprocess::AugmentationConfig{}, rng);
    REQUIRE(out.size() == train.size() + 25);
    int synthetic_pos = 0;
    for (size_t i = train.size(); i < out.size(); ++i) {
        const auto& s = out[i];
        CHECK(s.is_synthetic);
        CHECK(train_ids.count(s.parent_id) == 1);
        CHECK(s.patient_id.rfind("SYN", 0) == 0);
        CHECK(s.patient_id.find(s.parent_id) != std::string::npos);
        CHECK(s.label() == corpus.bag(s.parent_id).label());
        CHECK(s.patches.size() == corpus.bag(s.parent_id).patches.size());
        for (const auto& p : s.patches) CHECK(p.patient_id == s.patient_id);
        synthetic_pos += s.label();
    }
    CHECK(synthetic_pos > 0);
    preprocess::Rng rng2(5);
    CHECK(make_synthetic_patients(train, 0, 1.5, {}, rng2).size() == train.size());

    std::vector<PatientBag> negatives;
    for (const auto& b : train) if (!b.label()) negatives.push_back(b);
    CHECK_THROWS_AS(make_synthetic_patients(negatives, 5, 1.5, {}, rng2), ConfigError);
}

TEST_CASE("encoding leaves the encoder untouched") {
    torch::manual_seed(2);
    vae::Architecture arch;
    arch.base = 4;
    arch.latent_dim = kLatent;
    vae::VariationalAutoencoder enc(arch);
    std::vector<torch::Tensor> before;
    for (const auto& p : enc->parameters()) before.push_back(p.clone());
    const auto corpus = generate_phantom_corpus(testing::small_spec(6, 3));
    const auto encoded = encode_bags(enc, corpus.bags, corpus.manifest.spacing, 15);
    const auto params = enc->parameters();
    for (size_t i = 0; i < params.size(); ++i) CHECK(torch::equal(params[i], before[i]));
    REQUIRE(encoded.size() == corpus.bags.size());
    for (size_t b = 0; b < encoded.size(); ++b) {
        CHECK(encoded[b].slots.size() == 15);
        CHECK(encoded[b].real_count() == corpus.bags[b].real_patch_count());
        CHECK(encoded[b].label == corpus.bags[b].label());
        for (const auto& s : encoded[b].slots) CHECK(s.latent.size() == (s.padding ? 0u : size_t(kLatent)));
    }
}

TEST_CASE("single-class training set is rejected") {
    auto bags = cohort(6, 9);
    for (auto& b : bags) b.label = 0;
    CHECK_THROWS_AS(train_classifier(bags, {}, kLatent, small_config()), DataError);
}

TEST_CASE("training learns a separable cohort and is reproducible") {
    const auto train = cohort(60, 10), test = cohort(30, 11);
    const auto a = train_classifier(train, test, kLatent, small_config());
    const auto b = train_classifier(train, test, kLatent, small_config());
    REQUIRE(a.history.size() == 15);
    for (size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history.back().test_auc > 0.9);
    for (const auto& s : a.states) CHECK(s.test_auc >= 0.8);
}

TEST_CASE("classifier save and load") {
    const auto train = cohort(30, 12), test = cohort(10, 13);
    auto clf = train_classifier(train, test, kLatent, small_config());
    const auto path = std::filesystem::temp_directory_path() / ("lnm_clf_" + std::to_string(::getpid()));
    save_classifier(clf, path);
    auto loaded = load_classifier(path);
    const auto a = predict(clf, test), b = predict(loaded, test);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].final_prob == b[i].final_prob);
    CHECK(loaded.model->config().threshold == clf.model->config().threshold);
    std::filesystem::remove(path);
}

}  // TEST_SUITE
