#include "lnm/experiment.hpp"

#include <cmath>

#include "lnm/config_json.hpp"

using nlohmann::json;

namespace lnm::evaluation {

void to_json(json& j, const ParamRange& v) {
    j = {{"lo", v.lo}, {"hi", v.hi}, {"log_scale", v.log_scale}, {"integer", v.integer}};
}

void from_json(const json& j, ParamRange& v) {
    config::FieldReader r(j);
    r.optional("lo", v.lo);
    r.optional("hi", v.hi);
    r.optional("log_scale", v.log_scale);
    r.optional("integer", v.integer);
    r.finish();
    if (!std::isfinite(v.lo) || !std::isfinite(v.hi) || v.lo > v.hi) throw ConfigError("range must be finite with lo <= hi");
    if (v.log_scale && v.lo <= 0.0) throw ConfigError("log-scale range must be positive");
}

void to_json(json& j, const NestedCVSettings& v) {
    j = {{"folds", v.folds},
         {"vae_candidates", v.vae_candidates},
         {"mlp_candidates", v.mlp_candidates},
         {"vae_space", v.vae_space},
         {"mil_space", v.mil_space}};
}

void from_json(const json& j, NestedCVSettings& v) {
    config::FieldReader r(j);
    r.optional("folds", v.folds);
    r.optional("vae_candidates", v.vae_candidates);
    r.optional("mlp_candidates", v.mlp_candidates);
    r.optional("vae_space", v.vae_space);
    r.optional("mil_space", v.mil_space);
    r.finish();
    if (v.folds < 2) throw config::FieldError("folds", "must be >= 2");
    if (v.vae_candidates < 1) throw config::FieldError("vae_candidates", "must be >= 1");
    if (v.mlp_candidates < 1) throw config::FieldError("mlp_candidates", "must be >= 1");
    // Names are checked against the configuration structs up front.
    vae::VAEConfig vc;
    mil::MILConfig mc;
    for (const auto& [name, range] : v.vae_space) {
        try {
            apply_vae_params(vc, {{name, range.lo}});
        } catch (const ConfigError& e) {
            throw config::FieldError("vae_space." + name, e.what());
        }
    }
    for (const auto& [name, range] : v.mil_space) {
        try {
            apply_mil_params(mc, {{name, range.lo}});
        } catch (const ConfigError& e) {
            throw config::FieldError("mil_space." + name, e.what());
        }
    }
}

}  // namespace lnm::evaluation

namespace lnm::experiment {

evaluation::NestedCVSettings default_cv_settings() {
    evaluation::NestedCVSettings s;
    s.vae_space = {{"learning_rate", {5e-4, 2e-3, true, false}}};
    s.mil_space = {{"learning_rate", {5e-4, 3e-3, true, false}}, {"eta", {mil::kEtaMin, mil::kEtaMax, false, false}}};
    return s;
}

ExperimentConfig ExperimentConfig::resolved() const {
    ExperimentConfig c = *this;
    c.phantom.seed = seed;
    c.vae.seed = derive_seed(seed, "vae");
    c.mil.seed = derive_seed(seed, "mil");
    return c;
}

void ExperimentConfig::validate() const {
    if (!corpus_path) phantom.validate();
    vae.validate();
    loss.validate();
    mil.validate();
    if (mil.max_patches < 1) throw ConfigError("mil.max_patches must be >= 1");
    if (insight.k_min < 1 || insight.k_max < insight.k_min) throw config::FieldError("insight.k_min", "invalid k range");
    if (!(insight.small_pct < insight.large_pct)) {
        throw config::FieldError("insight.small_pct", "must be below insight.large_pct");
    }
    if (output_dir.empty()) throw config::FieldError("output_dir", "must not be empty");
}

ExperimentConfig phantom_defaults(std::uint64_t seed) {
    ExperimentConfig c;
    c.seed = seed;
    c.phantom.seed = seed;
    c.vae.base = 16;
    c.vae.latent_scalar = 16;
    c.vae.batch_size = 32;
    c.vae.accumulation_steps = 1;
    c.vae.learning_rate = 1e-3;
    c.vae.max_epochs = 40;
    c.vae.patience = 10;
    c.loss = vae::LossWeights::defaults_for_batch(c.vae.batch_size);
    c.mil.batch_size = 32;
    c.mil.accumulation_steps = 1;
    c.mil.learning_rate = 1e-3;
    c.mil.weight_decay = 0.01;
    c.mil.patch_hidden_dim = 256;
    c.mil.epochs = 60;
    return c;
}

void to_json(json& j, const InsightSettings& v) {
    j = {{"k_min", v.k_min},         {"k_max", v.k_max},         {"restarts", v.restarts},
         {"small_pct", v.small_pct}, {"large_pct", v.large_pct}, {"multiples", v.multiples}};
}

void from_json(const json& j, InsightSettings& v) {
    config::FieldReader r(j);
    r.optional("k_min", v.k_min);
    r.optional("k_max", v.k_max);
    r.optional("restarts", v.restarts);
    r.optional("small_pct", v.small_pct);
    r.optional("large_pct", v.large_pct);
    r.optional("multiples", v.multiples);
    r.finish();
    if (v.restarts < 1) throw config::FieldError("restarts", "must be >= 1");
}

void to_json(json& j, const ExperimentConfig& v) {
    j = {{"phantom", v.phantom}, {"vae", v.vae},       {"loss", v.loss},
         {"mil", v.mil},         {"cv", v.cv},         {"insight", v.insight},
         {"output_dir", v.output_dir}, {"seed", v.seed}};
    if (v.corpus_path) j["corpus_path"] = *v.corpus_path;
}

void from_json(const json& j, ExperimentConfig& v) {
    config::FieldReader r(j);
    if (r.has("corpus_path")) {
        std::string path;
        r.optional("corpus_path", path);
        v.corpus_path = path;
    }
    r.optional("phantom", v.phantom);
    r.optional("vae", v.vae);
    // gamma follows the VAE batch size unless given.
    v.loss = vae::LossWeights::defaults_for_batch(v.vae.batch_size);
    r.optional("loss", v.loss);
    r.optional("mil", v.mil);
    r.optional("cv", v.cv);
    r.optional("insight", v.insight);
    r.optional("output_dir", v.output_dir);
    r.optional("seed", v.seed);
    r.finish();
    v.validate();
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    return config::read_json_file(path).get<ExperimentConfig>();
}

Corpus obtain_corpus(const ExperimentConfig& cfg) {
    if (cfg.corpus_path) return load_corpus(*cfg.corpus_path);
    return generate_phantom_corpus(cfg.phantom);
}

EncodedSplits encode_splits(vae::VariationalAutoencoder& encoder, const Corpus& corpus, const mil::MILConfig& cfg) {
    EncodedSplits out;
    const auto train_bags = corpus.split_bags(Split::Train);
    const auto test_bags = corpus.split_bags(Split::Test);
    preprocess::Rng rng(derive_seed(cfg.seed, "synthetic"));
    out.training_set = mil::make_synthetic_patients(train_bags, cfg.synthetic_patients, cfg.oversample_ratio,
                                                    cfg.synthetic_augmentation, rng);
    out.train = mil::encode_bags(encoder, out.training_set, corpus.manifest.spacing, cfg.max_patches);
    out.test = mil::encode_bags(encoder, test_bags, corpus.manifest.spacing, cfg.max_patches);
    out.latent_dim = encoder->architecture().latent_dim;
    return out;
}

PipelineResult run_pipeline(const ExperimentConfig& config, const Log& log) {
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };
    const ExperimentConfig cfg = config.resolved();
    PipelineResult res;
    res.corpus = obtain_corpus(cfg);
    say("corpus: " + std::to_string(res.corpus.bags.size()) + " patients, " +
        std::to_string(res.corpus.manifest.n_positive) + " positive");

    const auto train_patches = vae::real_patches(res.corpus.split_bags(Split::Train));
    const auto test_patches = vae::real_patches(res.corpus.split_bags(Split::Test));
    res.vae = vae::train_vae(train_patches, test_patches, cfg.vae, cfg.loss, [&](const vae::EpochRecord& e) {
        say("vae epoch " + std::to_string(e.epoch) + " train SSIM " + std::to_string(e.train_ssim) + " test SSIM " +
            std::to_string(e.test_ssim));
    });
    auto& model = res.vae.best.model;
    res.train_recon = vae::reconstruction_report(model, train_patches);
    res.test_recon = vae::reconstruction_report(model, test_patches);

    res.encoded = encode_splits(model, res.corpus, cfg.mil);
    res.classifier = mil::train_classifier(res.encoded.train, res.encoded.test, res.encoded.latent_dim, cfg.mil);
    for (const auto& h : res.classifier.history) {
        say("mil epoch " + std::to_string(h.epoch) + " loss " + std::to_string(h.loss) + " train AUC " +
            std::to_string(h.train_auc) + " test AUC " + std::to_string(h.test_auc));
    }
    res.test_traces = mil::predict(res.classifier, res.encoded.test);
    std::vector<int> labels;
    std::vector<double> probs;
    for (const auto& t : res.test_traces) {
        labels.push_back(t.label);
        probs.push_back(t.final_prob);
    }
    res.test_metrics = evaluation::compute_metrics(labels, probs, cfg.mil.threshold);
    return res;
}

LatentTable latent_table(vae::VariationalAutoencoder& encoder, const std::vector<PatientBag>& bags,
                         const VoxelSpacing& spacing) {
    LatentTable t;
    std::vector<const Image*> images;
    for (const auto& b : bags) {
        for (const auto& p : b.patches) {
            if (p.is_padding) continue;
            t.patches.push_back(&p);
            images.push_back(&p.image);
            t.features.push_back(morphometry::node_features(p.mask, spacing));
        }
    }
    const auto mu = vae::encode_patches(encoder, images).to(torch::kFloat64).contiguous();
    const auto* data = mu.data_ptr<double>();
    const auto dim = size_t(mu.size(1));
    for (size_t i = 0; i < t.patches.size(); ++i) t.latents.emplace_back(data + i * dim, data + (i + 1) * dim);
    return t;
}

LocalizationStats grad_cam_localization(vae::VariationalAutoencoder& model, const std::vector<const PatchRecord*>& patches) {
    const insight::CamScore mu_norm = [](const vae::EncoderOutput& enc, const torch::Tensor&) {
        return enc.mu.pow(2).sum();
    };
    return grad_cam_localization(model, patches, std::vector<insight::CamScore>(patches.size(), mu_norm));
}

LocalizationStats grad_cam_localization(vae::VariationalAutoencoder& model, const std::vector<const PatchRecord*>& patches,
                                        const std::vector<insight::CamScore>& scores) {
    if (scores.size() != patches.size()) throw ValidationError("grad_cam_localization: one target per patch required");
    LocalizationStats s;
    for (size_t i = 0; i < patches.size(); ++i) {
        const auto* p = patches[i];
        const auto h = insight::grad_cam(model, p->image, scores[i]);
        const double m = insight::mass_fraction(h.values, insight::bounding_box(p->mask));
        s.mass_inside.push_back(m);
        ++s.n;
        if (m > insight::kTopFraction) ++s.above_baseline;
    }
    return s;
}

std::vector<insight::CamScore> node_logit_scores(mil::TrainedClassifier& clf, vae::VariationalAutoencoder& encoder,
                                                 const std::vector<PatientBag>& bags, const VoxelSpacing& spacing) {
    auto encoded = mil::encode_bags(encoder, bags, spacing, clf.model->config().max_patches);
    mil::apply_feature_context(encoded, clf.context);
    const auto& sw = clf.model->config().switches;
    const int latent_dim = clf.model->latent_dim();
    auto node_model = clf.model;
    std::vector<insight::CamScore> scores;
    for (size_t b = 0; b < bags.size(); ++b) {
        for (size_t i = 0; i < bags[b].patches.size(); ++i) {
            if (bags[b].patches[i].is_padding) continue;
            auto in = mil::node_input(encoded[b].slots[i], sw, latent_dim);
            const size_t skip = sw.use_deep_features ? size_t(latent_dim) : 0;
            const auto features = torch::tensor(std::vector<float>(in.begin() + long(skip), in.end())).unsqueeze(0);
            scores.push_back([node_model, features, deep = sw.use_deep_features](const vae::EncoderOutput& enc,
                                                                               const torch::Tensor&) mutable {
                node_model->eval();
                const auto input = deep ? torch::cat({enc.mu, features}, 1) : features;
                const auto p = node_model->node_forward(input).clamp(1e-7, 1.0 - 1e-7);
                return (torch::log(p) - torch::log1p(-p)).sum();
            });
        }
    }
    return scores;
}

TraversalStats traversal_monotonicity(vae::VariationalAutoencoder& model, const insight::GrowthDirection& direction,
                                      const std::vector<std::vector<double>>& mus) {
    TraversalStats s;
    for (const auto& mu : mus) {
        const auto strip = insight::render_traversal(model, mu, direction.direction, direction.multiples);
        std::vector<int> areas;
        for (const auto& img : strip) areas.push_back(insight::half_max_area(img));
        ++s.n;
        if (insight::nondecreasing(areas)) ++s.monotone;
        s.areas.push_back(std::move(areas));
    }
    return s;
}

}  // namespace lnm::experiment
