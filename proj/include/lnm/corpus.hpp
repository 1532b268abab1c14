#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lnm/common.hpp"
#include "lnm/morphometry.hpp"

namespace lnm {

enum class Sex { Male, Female };
enum class TStage { T1, T2, T3, T4 };
enum class NStage { N0, N1, N2 };

std::string to_string(Sex sex);
std::string to_string(TStage t);
std::string to_string(NStage n);
Sex parse_sex(const std::string& s);
TStage parse_t_stage(const std::string& s);
NStage parse_n_stage(const std::string& s);

/// One cropped 2D cross-section of a node.
struct PatchRecord {
    Image image = make_patch_image();  ///< values in [0,1]
    Mask mask = make_patch_mask();     ///< values in {0,1}
    std::string patient_id;
    std::string node_id;
    int slice_index = 0;
    bool is_padding = false;

    static PatchRecord padding(const std::string& patient_id);
    /// Throws ValidationError when the value-range or foreground invariants fail.
    void validate() const;

    friend bool operator==(const PatchRecord&, const PatchRecord&) = default;
};

/// Generator ground truth for one node; lets the label oracle be recomputed.
struct NodeTruth {
    std::string node_id;
    double design_short_axis_mm = 0.0;
    double design_long_axis_mm = 0.0;
    bool irregular = false;
    bool heterogeneous = false;
    double boundary_amplitude = 0.0;  ///< relative radial perturbation
    double texture_sd = 0.0;
    int n_slices = 1;

    friend bool operator==(const NodeTruth&, const NodeTruth&) = default;
};

struct PatientBag {
    std::string patient_id;
    std::vector<PatchRecord> patches;
    double age = 0.0;
    Sex sex = Sex::Male;
    TStage t_stage = TStage::T1;
    NStage n_stage = NStage::N0;
    bool is_synthetic = false;
    std::string parent_id;  ///< source patient for synthetic bags
    std::vector<NodeTruth> nodes;

    int label() const { return n_stage == NStage::N0 ? 0 : 1; }
    size_t real_patch_count() const;

    friend bool operator==(const PatientBag&, const PatientBag&) = default;
};

enum class Split { Train, Test };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct CohortManifest {
    std::map<std::string, Split> split;  ///< patient id -> split
    std::map<std::string, int> fold;     ///< optional outer-CV fold per patient
    VoxelSpacing spacing;
    std::uint64_t generator_seed = 0;
    int max_patches = 15;
    int n_positive = 0;
    int n_negative = 0;

    friend bool operator==(const CohortManifest&, const CohortManifest&) = default;
};

struct Corpus {
    std::vector<PatientBag> bags;
    CohortManifest manifest;

    std::vector<PatientBag> split_bags(Split which) const;
    const PatientBag& bag(const std::string& patient_id) const;

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

/// Node design used to force the content of a patient (tests, examples).
struct NodeDesign {
    double short_axis_mm = 5.0;
    double axis_ratio = 0.75;
    bool irregular = false;
    bool heterogeneous = false;
    int n_slices = 1;
};

struct PhantomSpec {
    int n_patients = 168;
    double positive_fraction = 0.22;
    double nodes_mean = 5.9;
    double nodes_sd = 3.8;
    int max_nodes = 15;
    int max_patches = 15;
    double test_fraction = 0.35;

    // Ordinary node short-axis distribution (mm) and axis ratio.
    double short_axis_mean = 5.2;
    double short_axis_sd = 1.4;
    double short_axis_min = 2.5;
    double negative_short_axis_max = 6.9;
    double axis_ratio_mean = 0.72;
    double axis_ratio_sd = 0.1;
    double axis_ratio_min = 0.45;

    // Suspicious-node design for positive patients.
    double size_branch_fraction = 0.6;     ///< share of positive patients driven by size
    double large_short_axis_min = 8.6;
    double large_short_axis_max = 12.5;
    double combo_short_axis_min = 5.6;
    double combo_short_axis_max = 7.2;
    double extra_positive_nodes_mean = 0.5;  ///< Poisson mean of further suspicious nodes

    // Border and texture.
    double irregular_probability = 0.2;       ///< for non-suspicious nodes
    double heterogeneous_probability = 0.2;   ///< for non-suspicious nodes
    double irregular_amplitude_min = 0.18;
    double irregular_amplitude_max = 0.30;
    double smooth_amplitude_max = 0.03;
    double heterogeneous_texture_min = 0.16;
    double heterogeneous_texture_max = 0.24;
    double homogeneous_texture_max = 0.03;
    double centre_jitter_px = 3.0;

    VoxelSpacing spacing;
    std::uint64_t seed = 7;

    /// When non-empty every patient receives exactly these nodes.
    std::vector<NodeDesign> forced_nodes;

    void validate() const;
};

/// Oracle short-axis thresholds (generator constants, in mm).
inline constexpr double kOracleLargeShortAxisMm = 8.0;
inline constexpr double kOracleSuspiciousShortAxisMm = 5.0;

/// True iff a node with these properties makes its patient positive.
bool oracle_node_positive(double short_axis_mm, bool irregular, bool heterogeneous);

/// Recomputes the label from stored masks (short axis over retained slices) and node flags.
int oracle_label(const PatientBag& bag, const VoxelSpacing& spacing);

Corpus generate_phantom_corpus(const PhantomSpec& spec);

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

}  // namespace lnm
