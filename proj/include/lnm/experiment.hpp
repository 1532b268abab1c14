#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lnm/corpus.hpp"
#include "lnm/evaluation.hpp"
#include "lnm/latent_insight.hpp"
#include "lnm/mil.hpp"
#include "lnm/vae.hpp"

namespace lnm::evaluation {
void to_json(nlohmann::json& j, const ParamRange& v);
void from_json(const nlohmann::json& j, ParamRange& v);
void to_json(nlohmann::json& j, const NestedCVSettings& v);
void from_json(const nlohmann::json& j, NestedCVSettings& v);
}  // namespace lnm::evaluation

namespace lnm::experiment {

struct InsightSettings {
    int k_min = 2;
    int k_max = 12;
    int restarts = 10;
    double small_pct = 25.0;
    double large_pct = 75.0;
    std::vector<double> multiples{-2, -1, 0, 1, 2};
};

/// Searched learning rates for both stages and eta over its declared range.
evaluation::NestedCVSettings default_cv_settings();

struct ExperimentConfig {
    std::optional<std::string> corpus_path;  ///< load instead of generating
    PhantomSpec phantom;
    vae::VAEConfig vae;
    vae::LossWeights loss = vae::LossWeights::defaults_for_batch(1024);
    mil::MILConfig mil;
    evaluation::NestedCVSettings cv = default_cv_settings();
    InsightSettings insight;
    std::string output_dir = "runs";
    std::uint64_t seed = 7;

    /// Phantom seed = global seed; VAE and MIL seeds derived from it.
    ExperimentConfig resolved() const;
    void validate() const;
};

/// Settings sized for the 168-patient phantom cohort on a CPU.
ExperimentConfig phantom_defaults(std::uint64_t seed);

void to_json(nlohmann::json& j, const InsightSettings& v);
void from_json(const nlohmann::json& j, InsightSettings& v);
void to_json(nlohmann::json& j, const ExperimentConfig& v);
void from_json(const nlohmann::json& j, ExperimentConfig& v);

ExperimentConfig load_config(const std::filesystem::path& path);

using Log = std::function<void(const std::string&)>;

Corpus obtain_corpus(const ExperimentConfig& cfg);

/// Adds synthetic patients to the training bags and encodes both splits.
struct EncodedSplits {
    std::vector<PatientBag> training_set;  ///< real train bags followed by synthetic ones
    std::vector<mil::EncodedBag> train;
    std::vector<mil::EncodedBag> test;
    int latent_dim = 0;
};

EncodedSplits encode_splits(vae::VariationalAutoencoder& encoder, const Corpus& corpus, const mil::MILConfig& cfg);

struct PipelineResult {
    Corpus corpus;
    vae::TrainResult vae;
    vae::ReconstructionMetrics train_recon;
    vae::ReconstructionMetrics test_recon;
    EncodedSplits encoded;
    mil::TrainedClassifier classifier;
    std::vector<mil::PredictionTrace> test_traces;
    evaluation::MetricReport test_metrics;
};

/// Corpus, VAE, encoding, synthetic patients and classifier, evaluated on the test split.
PipelineResult run_pipeline(const ExperimentConfig& cfg, const Log& log = {});

/// Node-level latents and features of every real patch in `bags`.
struct LatentTable {
    std::vector<std::vector<double>> latents;
    std::vector<morphometry::NodeFeatures> features;
    std::vector<const PatchRecord*> patches;
};

LatentTable latent_table(vae::VariationalAutoencoder& encoder, const std::vector<PatientBag>& bags,
                         const VoxelSpacing& spacing);

struct LocalizationStats {
    int n = 0;
    int above_baseline = 0;           ///< patches with more than 25% of the mass inside the node box
    std::vector<double> mass_inside;  ///< per patch
    double fraction() const { return n ? double(above_baseline) / n : 0.0; }
};

LocalizationStats grad_cam_localization(vae::VariationalAutoencoder& model, const std::vector<const PatchRecord*>& patches);
/// One backprop target per patch.
LocalizationStats grad_cam_localization(vae::VariationalAutoencoder& model, const std::vector<const PatchRecord*>& patches,
                                        const std::vector<insight::CamScore>& scores);

/// Node-MLP logit of each real patch of `bags` (latent_table order), with the classifier's feature normalization.
std::vector<insight::CamScore> node_logit_scores(mil::TrainedClassifier& clf, vae::VariationalAutoencoder& encoder,
                                                 const std::vector<PatientBag>& bags, const VoxelSpacing& spacing);

struct TraversalStats {
    int n = 0;
    int monotone = 0;
    std::vector<std::vector<int>> areas;  ///< half-max area per multiple, per patch
    double fraction() const { return n ? double(monotone) / n : 0.0; }
};

TraversalStats traversal_monotonicity(vae::VariationalAutoencoder& model, const insight::GrowthDirection& direction,
                                      const std::vector<std::vector<double>>& mus);

}  // namespace lnm::experiment
