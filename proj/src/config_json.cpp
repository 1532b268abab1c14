#include "lnm/config_json.hpp"

#include <algorithm>
#include <fstream>

using nlohmann::json;

namespace lnm {

namespace config {

FieldReader::FieldReader(const json& object) : object_(object) {
    if (!object_.is_object()) throw ConfigError("expected an object");
}

void FieldReader::finish() const {
    for (const auto& [key, value] : object_.items()) {
        if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) throw FieldError(key, "unknown field");
    }
}

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": malformed JSON: " + e.what());
    }
}

}  // namespace config

using config::FieldReader;

void to_json(json& j, const VoxelSpacing& v) { j = {{"in_plane_mm", v.in_plane_mm}, {"slice_mm", v.slice_mm}}; }

void from_json(const json& j, VoxelSpacing& v) {
    FieldReader r(j);
    r.optional("in_plane_mm", v.in_plane_mm);
    r.optional("slice_mm", v.slice_mm);
    r.finish();
    v.validate();
}

void to_json(json& j, const NodeDesign& v) {
    j = {{"short_axis_mm", v.short_axis_mm},
         {"axis_ratio", v.axis_ratio},
         {"irregular", v.irregular},
         {"heterogeneous", v.heterogeneous},
         {"n_slices", v.n_slices}};
}

void from_json(const json& j, NodeDesign& v) {
    FieldReader r(j);
    r.optional("short_axis_mm", v.short_axis_mm);
    r.optional("axis_ratio", v.axis_ratio);
    r.optional("irregular", v.irregular);
    r.optional("heterogeneous", v.heterogeneous);
    r.optional("n_slices", v.n_slices);
    r.finish();
}

#define LNM_PHANTOM_FIELDS(X)                                                                              \
    X(n_patients) X(positive_fraction) X(nodes_mean) X(nodes_sd) X(max_nodes) X(max_patches) X(test_fraction) \
    X(short_axis_mean) X(short_axis_sd) X(short_axis_min) X(negative_short_axis_max) X(axis_ratio_mean)       \
    X(axis_ratio_sd) X(axis_ratio_min) X(size_branch_fraction) X(large_short_axis_min)                       \
    X(large_short_axis_max) X(combo_short_axis_min) X(combo_short_axis_max) X(extra_positive_nodes_mean)     \
    X(irregular_probability) X(heterogeneous_probability) X(irregular_amplitude_min)                         \
    X(irregular_amplitude_max) X(smooth_amplitude_max) X(heterogeneous_texture_min)                          \
    X(heterogeneous_texture_max) X(homogeneous_texture_max) X(centre_jitter_px) X(spacing) X(seed)           \
    X(forced_nodes)

void to_json(json& j, const PhantomSpec& v) {
    j = json::object();
#define X(name) j[#name] = v.name;
    LNM_PHANTOM_FIELDS(X)
#undef X
}

void from_json(const json& j, PhantomSpec& v) {
    FieldReader r(j);
#define X(name) r.optional(#name, v.name);
    LNM_PHANTOM_FIELDS(X)
#undef X
    r.finish();
    v.validate();
}

namespace preprocess {

void to_json(json& j, const Range& v) { j = {{"lo", v.lo}, {"hi", v.hi}}; }

void from_json(const json& j, Range& v) {
    FieldReader r(j);
    r.optional("lo", v.lo);
    r.optional("hi", v.hi);
    r.finish();
    if (v.lo > v.hi) throw ConfigError("lo must not exceed hi");
}

#define LNM_AUGMENT_FIELDS(X)                                                                        \
    X(hflip_probability) X(vflip_probability) X(translate_probability) X(max_shift_px)               \
    X(noise_probability) X(noise_sigma) X(gamma_probability) X(gamma) X(bias_probability) X(bias_order) \
    X(bias_coefficient)

void to_json(json& j, const AugmentationConfig& v) {
    j = json::object();
#define X(name) j[#name] = v.name;
    LNM_AUGMENT_FIELDS(X)
#undef X
}

void from_json(const json& j, AugmentationConfig& v) {
    FieldReader r(j);
#define X(name) r.optional(#name, v.name);
    LNM_AUGMENT_FIELDS(X)
#undef X
    r.finish();
    v.validate();
}

}  // namespace preprocess

namespace vae {

#define LNM_VAE_FIELDS(X)                                                                              \
    X(base) X(latent_scalar) X(kernels) X(learning_rate) X(weight_decay) X(batch_size) X(accumulation_steps) \
    X(max_epochs) X(patience) X(anneal_rate) X(augment) X(augmentation) X(seed)

void to_json(json& j, const VAEConfig& v) {
    j = json::object();
#define X(name) j[#name] = v.name;
    LNM_VAE_FIELDS(X)
#undef X
}

void from_json(const json& j, VAEConfig& v) {
    FieldReader r(j);
#define X(name) r.optional(#name, v.name);
    LNM_VAE_FIELDS(X)
#undef X
    r.finish();
    v.validate();
}

void to_json(json& j, const LossWeights& v) {
    j = {{"alpha", v.alpha}, {"lambda", v.lambda}, {"gamma", v.gamma}, {"beta", v.beta}, {"annealing", v.annealing}};
}

void from_json(const json& j, LossWeights& v) {
    FieldReader r(j);
    r.optional("alpha", v.alpha);
    r.optional("lambda", v.lambda);
    r.optional("gamma", v.gamma);
    r.optional("beta", v.beta);
    r.optional("annealing", v.annealing);
    r.finish();
    v.validate();
}

}  // namespace vae

namespace mil {

void to_json(json& j, const FeatureSwitches& v) {
    j = {{"use_deep_features", v.use_deep_features},
         {"use_clinical_node", v.use_clinical_node},
         {"use_clinical_patient", v.use_clinical_patient},
         {"aggregation", to_string(v.aggregation)}};
}

void from_json(const json& j, FeatureSwitches& v) {
    FieldReader r(j);
    r.optional("use_deep_features", v.use_deep_features);
    r.optional("use_clinical_node", v.use_clinical_node);
    r.optional("use_clinical_patient", v.use_clinical_patient);
    std::string aggregation = to_string(v.aggregation);
    r.optional("aggregation", aggregation);
    r.finish();
    try {
        v.aggregation = parse_aggregation(aggregation);
    } catch (const ConfigError& e) {
        throw config::FieldError("aggregation", e.what());
    }
    v.validate();
}

#define LNM_MIL_FIELDS(X)                                                                             \
    X(eta) X(eta_override) X(threshold) X(patch_hidden_dim) X(patient_hidden_dim) X(patch_dropout)       \
    X(patient_dropout) X(learning_rate) X(weight_decay) X(batch_size) X(accumulation_steps) X(epochs)    \
    X(synthetic_patients) X(oversample_ratio) X(max_patches) X(state_auc_threshold) X(switches)          \
    X(synthetic_augmentation) X(seed)

void to_json(json& j, const MILConfig& v) {
    j = json::object();
#define X(name) j[#name] = v.name;
    LNM_MIL_FIELDS(X)
#undef X
}

void from_json(const json& j, MILConfig& v) {
    FieldReader r(j);
#define X(name) r.optional(#name, v.name);
    LNM_MIL_FIELDS(X)
#undef X
    r.finish();
    v.validate();
}

}  // namespace mil
}  // namespace lnm
