#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lnm/corpus.hpp"
#include "lnm/morphometry.hpp"
#include "lnm/preprocess.hpp"
#include "lnm/vae.hpp"

namespace lnm::mil {

enum class Aggregation { MaxOnly, MlpOnly, Weighted };
std::string to_string(Aggregation a);
Aggregation parse_aggregation(const std::string& s);

/// Which inputs reach the two MLPs and how their outputs are combined.
struct FeatureSwitches {
    bool use_deep_features = true;     ///< encoder mu in the node MLP input
    bool use_clinical_node = true;     ///< size/border features (node input and largest-node slot)
    bool use_clinical_patient = true;  ///< age, sex, T stage
    Aggregation aggregation = Aggregation::Weighted;

    void validate() const;
    friend bool operator==(const FeatureSwitches&, const FeatureSwitches&) = default;
};

inline constexpr double kEtaMin = 0.5;
inline constexpr double kEtaMax = 0.75;

struct MILConfig {
    double eta = 0.75;
    bool eta_override = false;  ///< permits eta outside [0.5, 0.75]
    double threshold = 0.436;
    int patch_hidden_dim = 2048;
    int patient_hidden_dim = 96;
    double patch_dropout = 0.4;
    double patient_dropout = 0.3;
    double learning_rate = 6.59e-3;
    double weight_decay = 0.16;
    int batch_size = 128;
    int accumulation_steps = 4;
    int epochs = 60;
    int synthetic_patients = 25;
    double oversample_ratio = 1.5;
    int max_patches = 15;
    double state_auc_threshold = 0.8;  ///< test AUC at which an epoch's predictions are kept
    FeatureSwitches switches;
    preprocess::AugmentationConfig synthetic_augmentation;
    std::uint64_t seed = 0;

    /// eta actually used by the aggregation (1 for MLP-only, 0 for max-only).
    double effective_eta() const;
    void validate() const;
};

inline constexpr int kPatientMlpLayers = 4;
inline constexpr int kInputLayoutVersion = 1;

/// One instance slot after encoding. Padding slots carry no latent.
struct EncodedPatch {
    std::string node_id;
    bool padding = true;
    std::vector<float> latent;
    morphometry::NodeFeatures features;
};

struct EncodedBag {
    std::string patient_id;
    int label = 0;
    double age = 0.0;
    Sex sex = Sex::Male;
    TStage t_stage = TStage::T1;
    bool is_synthetic = false;
    std::string parent_id;
    std::vector<EncodedPatch> slots;  ///< exactly max_patches entries

    size_t real_count() const;
    /// Index of the real slot with the largest short axis, or -1.
    int largest_node_slot() const;
};

/// Runs the frozen encoder and the morphometry on every real patch.
std::vector<EncodedBag> encode_bags(vae::VariationalAutoencoder& encoder, const std::vector<PatientBag>& bags,
                                    const VoxelSpacing& spacing, int max_patches);

/// Normalization fitted on training patients only.
struct FeatureContext {
    morphometry::FeatureScaler node_scaler;
    double age_min = 0.0;
    double age_max = 1.0;

    double scale_age(double age) const;
};

/// Fits on non-synthetic bags only.
FeatureContext fit_feature_context(const std::vector<EncodedBag>& train);
void apply_feature_context(std::vector<EncodedBag>& bags, const FeatureContext& context);

/// Node MLP input: [latent | 5 normalized features] per the switches.
int node_input_dim(int latent_dim, const FeatureSwitches& s);
/// Patient MLP input: [max_patches probs | age | sex | T one-hot x4 | 5 largest-node features].
int patient_input_dim(int max_patches, const FeatureSwitches& s);

/// Padding slots yield an all-zero input of the same length.
std::vector<float> node_input(const EncodedPatch& patch, const FeatureSwitches& s, int latent_dim);
/// Clinical part of the patient input (everything after the probability slots).
std::vector<float> patient_context(const EncodedBag& bag, const FeatureContext& context, const FeatureSwitches& s);

struct BatchTensors {
    torch::Tensor node_inputs;   ///< [M, node_dim] real nodes only
    torch::Tensor node_bag;      ///< [M] long, owning bag row
    torch::Tensor node_slot;     ///< [M] long, slot index
    torch::Tensor patient_ctx;   ///< [B, ctx_dim]
    torch::Tensor labels;        ///< [B]
    int batch = 0;
};

BatchTensors make_batch(const std::vector<const EncodedBag*>& bags, const FeatureContext& context,
                        const FeatureSwitches& switches, int latent_dim, int max_patches);

struct ForwardResult {
    torch::Tensor node_probs;    ///< [B, max_patches], padding slots 0
    torch::Tensor real_mask;     ///< [B, max_patches] bool
    torch::Tensor patient_prob;  ///< [B]
    torch::Tensor max_prob;      ///< [B], 0 for bags without real nodes
    torch::Tensor final_prob;    ///< [B]
};

class MILModelImpl : public torch::nn::Module {
 public:
    MILModelImpl(int latent_dim, const MILConfig& config);

    /// Node MLP on prepared node inputs, [M, node_dim] -> [M] probabilities.
    torch::Tensor node_forward(const torch::Tensor& node_inputs);
    ForwardResult forward(const BatchTensors& batch);

    int latent_dim() const { return latent_dim_; }
    const MILConfig& config() const { return config_; }

 private:
    int latent_dim_;
    MILConfig config_;
    torch::nn::Sequential node_mlp_{nullptr};
    torch::nn::Sequential patient_mlp_{nullptr};
};
TORCH_MODULE(MILModel);

struct PredictionTrace {
    std::string patient_id;
    int label = 0;
    std::vector<double> node_probs;
    double patient_mlp_prob = 0.0;
    double max_node_prob = 0.0;
    double final_prob = 0.0;
    int decision = 0;
    bool no_real_nodes = false;  ///< scored through the all-zero fallback
    // Final-probability statistics across the model states supplied.
    int n_states = 0;
    double mean_prob = 0.0;
    double sd_prob = 0.0;
    double min_prob = 0.0;
    double max_prob_across_states = 0.0;
};

/// Eval-mode probability of one node input.
double node_mlp_forward(MILModel& model, const EncodedPatch& patch);

/// First state supplies the trace values; all states contribute to the confidence stats.
PredictionTrace patient_forward(const EncodedBag& bag, std::vector<MILModel>& states, const FeatureContext& context);
std::vector<PredictionTrace> predict(MILModel& model, const std::vector<EncodedBag>& bags, const FeatureContext& context);

/// final = eta * p_mlp + (1 - eta) * p_max.
double aggregate(double eta, double patient_mlp_prob, double max_node_prob);
int decide(double final_prob, double threshold);

void write_traces(std::ostream& out, const std::vector<PredictionTrace>& traces);
std::vector<PredictionTrace> read_traces(std::istream& in);

/// Appends `n` augmented clones; positive parents are drawn with odds oversample_ratio : 1.
std::vector<PatientBag> make_synthetic_patients(const std::vector<PatientBag>& train, int n,
                                                double oversample_ratio,
                                                const preprocess::AugmentationConfig& augmentation,
                                                preprocess::Rng& rng);

struct ClassifierEpoch {
    int epoch = 0;
    double loss = 0.0;
    double train_auc = 0.0;
    double test_auc = 0.0;  ///< NaN without a test set
};

struct SavedState {
    int epoch = 0;
    double test_auc = 0.0;
    std::vector<PredictionTrace> traces;
};

struct TrainedClassifier {
    MILModel model{nullptr};
    FeatureContext context;
    std::vector<ClassifierEpoch> history;
    std::vector<SavedState> states;  ///< epochs whose test AUC reached state_auc_threshold
};

/// Normalizes a copy of `bags` with the classifier's own context, then predicts with the final model.
std::vector<PredictionTrace> predict(TrainedClassifier& clf, const std::vector<EncodedBag>& bags);

void write_classifier_history(std::ostream& out, const std::vector<ClassifierEpoch>& history);

/// Trains both MLPs jointly on BCE of the aggregated probability. `test` is only scored.
TrainedClassifier train_classifier(const std::vector<EncodedBag>& train, const std::vector<EncodedBag>& test,
                                   int latent_dim, const MILConfig& config);

void save_classifier(const TrainedClassifier& clf, const std::filesystem::path& path);
TrainedClassifier load_classifier(const std::filesystem::path& path);

}  // namespace lnm::mil
