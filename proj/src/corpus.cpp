#include "lnm/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include <zlib.h>

#include "json.hpp"
#include "lnm/preprocess.hpp"

namespace lnm {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view component) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : component) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::uint64_t z = global_seed + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z ^ h;
}

std::string to_string(Sex sex) { return sex == Sex::Male ? "M" : "F"; }

std::string to_string(TStage t) {
    static const char* names[] = {"T1", "T2", "T3", "T4"};
    return names[int(t)];
}

std::string to_string(NStage n) {
    static const char* names[] = {"N0", "N1", "N2"};
    return names[int(n)];
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Sex parse_sex(const std::string& s) {
    if (s == "M") return Sex::Male;
    if (s == "F") return Sex::Female;
    throw DataError("unknown sex '" + s + "'");
}

TStage parse_t_stage(const std::string& s) {
    for (int i = 0; i < 4; ++i) {
        if (s == to_string(TStage(i))) return TStage(i);
    }
    throw DataError("unknown T stage '" + s + "'");
}

NStage parse_n_stage(const std::string& s) {
    for (int i = 0; i < 3; ++i) {
        if (s == to_string(NStage(i))) return NStage(i);
    }
    throw DataError("unknown N stage '" + s + "'");
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + s + "'");
}

PatchRecord PatchRecord::padding(const std::string& patient_id) {
    PatchRecord p;
    p.patient_id = patient_id;
    p.node_id = "pad";
    p.is_padding = true;
    return p;
}

void PatchRecord::validate() const {
    if (image.height() != mask.height() || image.width() != mask.width()) {
        throw ValidationError("patch " + patient_id + "/" + node_id + ": image and mask shapes differ");
    }
    for (float v : image.values()) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw ValidationError("patch " + patient_id + "/" + node_id + ": image value outside [0,1]");
        }
    }
    for (auto m : mask.values()) {
        if (m > 1) throw ValidationError("patch " + patient_id + "/" + node_id + ": mask is not binary");
    }
    if (slice_index < 0) throw ValidationError("patch " + patient_id + ": negative slice index");
    const size_t fg = foreground_count(mask);
    if (is_padding) {
        bool zero = fg == 0;
        for (float v : image.values()) zero = zero && v == 0.0f;
        if (!zero) throw ValidationError("patch " + patient_id + ": padding slot is not all-zero");
    } else if (fg == 0) {
        throw ValidationError("patch " + patient_id + "/" + node_id + ": empty mask on a real patch");
    }
}

size_t PatientBag::real_patch_count() const {
    return size_t(std::count_if(patches.begin(), patches.end(), [](const PatchRecord& p) { return !p.is_padding; }));
}

std::vector<PatientBag> Corpus::split_bags(Split which) const {
    std::vector<PatientBag> out;
    for (const auto& b : bags) {
        auto it = manifest.split.find(b.patient_id);
        if (it != manifest.split.end() && it->second == which) out.push_back(b);
    }
    return out;
}

const PatientBag& Corpus::bag(const std::string& patient_id) const {
    for (const auto& b : bags) {
        if (b.patient_id == patient_id) return b;
    }
    throw DataError("unknown patient " + patient_id);
}

void PhantomSpec::validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("phantom spec: " + what); };
    if (n_patients < 1) fail("n_patients must be >= 1");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) fail("positive_fraction must be in (0,1)");
    if (!(nodes_sd > 0.0) || !std::isfinite(nodes_mean)) fail("invalid node count distribution");
    if (max_nodes < 1) fail("max_nodes must be >= 1");
    if (max_patches < 1) fail("max_patches must be >= 1");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail("test_fraction must be in (0,1)");
    if (!(short_axis_sd > 0.0) || !(short_axis_min > 0.0) || short_axis_min >= negative_short_axis_max) {
        fail("invalid short-axis distribution");
    }
    if (negative_short_axis_max >= kOracleLargeShortAxisMm) fail("negative_short_axis_max must stay below 8 mm");
    if (!(axis_ratio_sd > 0.0) || !(axis_ratio_min > 0.0 && axis_ratio_min <= 1.0)) fail("invalid axis ratio distribution");
    if (!(size_branch_fraction >= 0.0 && size_branch_fraction <= 1.0)) fail("size_branch_fraction must be in [0,1]");
    if (large_short_axis_min < kOracleLargeShortAxisMm || large_short_axis_max < large_short_axis_min) {
        fail("invalid large-node short-axis range");
    }
    if (combo_short_axis_min < kOracleSuspiciousShortAxisMm || combo_short_axis_max < combo_short_axis_min) {
        fail("invalid suspicious-node short-axis range");
    }
    if (extra_positive_nodes_mean < 0.0) fail("extra_positive_nodes_mean must be >= 0");
    for (double p : {irregular_probability, heterogeneous_probability}) {
        if (!(p >= 0.0 && p <= 1.0)) fail("probabilities must be in [0,1]");
    }
    if (irregular_amplitude_min > irregular_amplitude_max || heterogeneous_texture_min > heterogeneous_texture_max) {
        fail("invalid irregularity/texture ranges");
    }
    if (centre_jitter_px < 0.0 || centre_jitter_px > 8.0) fail("centre_jitter_px must be in [0,8]");
    for (const auto& n : forced_nodes) {
        if (!(n.short_axis_mm > 0.0) || !(n.axis_ratio > 0.0 && n.axis_ratio <= 1.0) || n.n_slices < 1) {
            fail("invalid forced node design");
        }
    }
    spacing.validate();
}

bool oracle_node_positive(double short_axis_mm, bool irregular, bool heterogeneous) {
    return short_axis_mm >= kOracleLargeShortAxisMm ||
           (short_axis_mm >= kOracleSuspiciousShortAxisMm && irregular && heterogeneous);
}

namespace {

std::map<std::string, double> retained_short_axis(const PatientBag& bag, const VoxelSpacing& spacing) {
    std::map<std::string, double> out;
    for (const auto& p : bag.patches) {
        if (p.is_padding) continue;
        const double s = morphometry::diameters(p.mask, spacing).short_axis_mm;
        auto& v = out[p.node_id];
        v = std::max(v, s);
    }
    return out;
}

int count_positive_nodes(const PatientBag& bag, const VoxelSpacing& spacing) {
    const auto axes = retained_short_axis(bag, spacing);
    int n = 0;
    for (const auto& node : bag.nodes) {
        auto it = axes.find(node.node_id);
        if (it == axes.end()) continue;
        n += oracle_node_positive(it->second, node.irregular, node.heterogeneous);
    }
    return n;
}

}  // namespace

int oracle_label(const PatientBag& bag, const VoxelSpacing& spacing) {
    return count_positive_nodes(bag, spacing) > 0 ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Phantom rendering
// ---------------------------------------------------------------------------
namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
    std::normal_distribution<double> dist(mean, sd);
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const double v = dist(rng);
        if (v >= lo && v <= hi) return v;
    }
    return std::clamp(mean, lo, hi);
}

struct NodeShape {
    double semi_long_px = 0.0;
    double semi_short_px = 0.0;
    double angle = 0.0;
    double amplitude = 0.0;
    std::array<double, 5> harmonic_weight{};
    std::array<double, 5> harmonic_phase{};
    double intensity = 0.8;
    double texture_sd = 0.0;
};

double boundary_radius(const NodeShape& s, double phi) {
    double r = 1.0;
    for (int k = 0; k < 5; ++k) r += s.amplitude * s.harmonic_weight[k] * std::cos((k + 3) * phi + s.harmonic_phase[k]);
    return r;
}

Image render_background(Rng& rng) {
    Image bg(kPatchSize, kPatchSize, 0.0f);
    const double base = uniform(rng, 0.28, 0.40);
    struct Wave {
        double kx, ky, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 3; ++i) {
        const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double freq = uniform(rng, 0.05, 0.18);
        waves.push_back({freq * std::cos(theta), freq * std::sin(theta), uniform(rng, 0.0, 6.283), uniform(rng, 0.02, 0.05)});
    }
    const bool vessel = uniform(rng, 0.0, 1.0) < 0.4;
    const double v_theta = uniform(rng, 0.0, std::numbers::pi);
    const double v_offset = uniform(rng, 9.0, 14.0) * (uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0);
    const double v_amp = uniform(rng, 0.04, 0.08);
    std::normal_distribution<double> noise(0.0, 0.015);
    for (int r = 0; r < kPatchSize; ++r) {
        for (int c = 0; c < kPatchSize; ++c) {
            double v = base;
            for (const auto& w : waves) v += w.amp * std::sin(w.kx * c + w.ky * r + w.phase);
            if (vessel) {
                const double x = c + 0.5 - kPatchSize / 2.0, y = r + 0.5 - kPatchSize / 2.0;
                const double d = -std::sin(v_theta) * x + std::cos(v_theta) * y - v_offset;
                v += v_amp * std::exp(-d * d / (2.0 * 1.2 * 1.2));
            }
            bg(r, c) = static_cast<float>(v + noise(rng));
        }
    }
    return bg;
}

Grid<double> texture_field(Rng& rng, double sd) {
    Grid<double> raw(kPatchSize, kPatchSize, 0.0);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& v : raw.values()) v = unit(rng);
    // 3x3 box blur gives blob-like heterogeneity rather than pixel noise.
    Grid<double> smooth(kPatchSize, kPatchSize, 0.0);
    double sumsq = 0.0;
    for (int r = 0; r < kPatchSize; ++r) {
        for (int c = 0; c < kPatchSize; ++c) {
            double acc = 0.0;
            int n = 0;
            for (int dr = -1; dr <= 1; ++dr) {
                for (int dc = -1; dc <= 1; ++dc) {
                    if (!raw.in_bounds(r + dr, c + dc)) continue;
                    acc += raw(r + dr, c + dc);
                    ++n;
                }
            }
            smooth(r, c) = acc / n;
            sumsq += smooth(r, c) * smooth(r, c);
        }
    }
    const double current = std::sqrt(sumsq / double(smooth.size()));
    for (auto& v : smooth.values()) v *= current > 0.0 ? sd / current : 0.0;
    return smooth;
}

PatchRecord render_slice(const NodeShape& shape, double scale, double cx, double cy, Rng& rng) {
    PatchRecord patch;
    const Image bg = render_background(rng);
    const Grid<double> texture = texture_field(rng, shape.texture_sd);
    const double a = std::max(shape.semi_long_px * scale, 0.3);
    const double b = std::max(shape.semi_short_px * scale, 0.3);
    const double ca = std::cos(shape.angle), sa = std::sin(shape.angle);
    constexpr double kEdgePx = 0.6;

    Image raw(kPatchSize, kPatchSize, 0.0f);
    for (int r = 0; r < kPatchSize; ++r) {
        for (int c = 0; c < kPatchSize; ++c) {
            const double x = c + 0.5 - cx, y = r + 0.5 - cy;
            const double u = ca * x + sa * y;
            const double v = -sa * x + ca * y;
            const double rho = std::hypot(u / a, v / b);
            const double phi = std::atan2(v / b, u / a);
            const double edge = boundary_radius(shape, phi);
            const double signed_px = (edge - rho) * b;
            const double weight = 1.0 / (1.0 + std::exp(-signed_px / kEdgePx * 4.0));
            patch.mask(r, c) = rho <= edge ? 1 : 0;
            const double node_value = shape.intensity + texture(r, c);
            raw(r, c) = static_cast<float>(bg(r, c) * (1.0 - weight) + node_value * weight);
        }
    }
    if (foreground_count(patch.mask) == 0) {
        const int r = std::clamp(int(cy), 0, kPatchSize - 1), c = std::clamp(int(cx), 0, kPatchSize - 1);
        patch.mask(r, c) = 1;
    }
    patch.image = preprocess::normalize_intensity(raw);
    return patch;
}

struct PlannedNode {
    NodeDesign design;
    double amplitude = 0.0;
    double texture_sd = 0.0;
};

std::vector<PlannedNode> plan_nodes(const PhantomSpec& spec, bool positive, Rng& rng) {
    std::vector<PlannedNode> plan;
    auto ordinary = [&]() {
        PlannedNode n;
        n.design.short_axis_mm = truncated_normal(rng, spec.short_axis_mean, spec.short_axis_sd,
                                                  spec.short_axis_min, spec.negative_short_axis_max);
        n.design.irregular = uniform(rng, 0.0, 1.0) < spec.irregular_probability;
        n.design.heterogeneous = uniform(rng, 0.0, 1.0) < spec.heterogeneous_probability;
        // Both flags only on nodes well below the suspicious size threshold.
        if (n.design.irregular && n.design.heterogeneous && n.design.short_axis_mm >= kOracleSuspiciousShortAxisMm - 1.0) {
            (uniform(rng, 0.0, 1.0) < 0.5 ? n.design.irregular : n.design.heterogeneous) = false;
        }
        return n;
    };
    auto suspicious = [&](bool size_branch) {
        PlannedNode n;
        if (size_branch) {
            n.design.short_axis_mm = uniform(rng, spec.large_short_axis_min, spec.large_short_axis_max);
            n.design.irregular = uniform(rng, 0.0, 1.0) < spec.irregular_probability;
            n.design.heterogeneous = uniform(rng, 0.0, 1.0) < spec.heterogeneous_probability;
        } else {
            n.design.short_axis_mm = uniform(rng, spec.combo_short_axis_min, spec.combo_short_axis_max);
            n.design.irregular = true;
            n.design.heterogeneous = true;
        }
        return n;
    };

    if (!spec.forced_nodes.empty()) {
        for (const auto& d : spec.forced_nodes) {
            PlannedNode n;
            n.design = d;
            plan.push_back(n);
        }
    } else {
        double count = 0.0;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            count = std::round(std::normal_distribution<double>(spec.nodes_mean, spec.nodes_sd)(rng));
            if (count >= 1.0 && count <= spec.max_nodes) break;
            count = 0.0;
        }
        const int n_nodes = std::clamp(int(count), 1, spec.max_nodes);
        int n_suspicious = 0;
        if (positive) {
            n_suspicious = 1 + int(std::poisson_distribution<int>(spec.extra_positive_nodes_mean)(rng));
            n_suspicious = std::min(n_suspicious, n_nodes);
        }
        const bool patient_size_branch = uniform(rng, 0.0, 1.0) < spec.size_branch_fraction;
        for (int i = 0; i < n_nodes; ++i) {
            if (i < n_suspicious) {
                plan.push_back(suspicious(i == 0 ? patient_size_branch : uniform(rng, 0.0, 1.0) < spec.size_branch_fraction));
            } else {
                plan.push_back(ordinary());
            }
        }
        for (auto& n : plan) {
            n.design.axis_ratio = truncated_normal(rng, spec.axis_ratio_mean, spec.axis_ratio_sd, spec.axis_ratio_min, 1.0);
            const double u = uniform(rng, 0.0, 1.0);
            n.design.n_slices = u < 0.3 ? 1 : u < 0.65 ? 2 : u < 0.9 ? 3 : 4;
        }
        std::shuffle(plan.begin(), plan.end(), rng);
    }
    for (auto& n : plan) {
        n.amplitude = n.design.irregular ? uniform(rng, spec.irregular_amplitude_min, spec.irregular_amplitude_max)
                                         : uniform(rng, 0.0, spec.smooth_amplitude_max);
        n.texture_sd = n.design.heterogeneous ? uniform(rng, spec.heterogeneous_texture_min, spec.heterogeneous_texture_max)
                                              : uniform(rng, 0.0, spec.homogeneous_texture_max);
    }
    return plan;
}

TStage draw_t_stage(Rng& rng, bool positive) {
    static constexpr std::array<double, 4> kNegative = {0.22, 0.53, 0.21, 0.04};
    static constexpr std::array<double, 4> kPositive = {0.06, 0.32, 0.45, 0.17};
    const auto& w = positive ? kPositive : kNegative;
    std::discrete_distribution<int> dist(w.begin(), w.end());
    return TStage(dist(rng));
}

PatientBag generate_patient(const PhantomSpec& spec, const std::string& id, bool planned_positive, Rng& rng) {
    PatientBag bag;
    bag.patient_id = id;
    bag.age = std::round(truncated_normal(rng, 69.5, 11.0, 35.0, 95.0) * 10.0) / 10.0;
    bag.sex = uniform(rng, 0.0, 1.0) < 0.68 ? Sex::Male : Sex::Female;
    bag.t_stage = draw_t_stage(rng, planned_positive);

    const auto plan = plan_nodes(spec, planned_positive, rng);
    const double px = spec.spacing.in_plane_mm;
    int node_index = 0;
    for (const auto& planned : plan) {
        ++node_index;
        std::ostringstream nid;
        nid << 'N' << std::setw(2) << std::setfill('0') << node_index;

        NodeShape shape;
        // Pixel-centre rasterization loses about half a pixel per side relative to the corner hull.
        shape.semi_short_px = std::max(planned.design.short_axis_mm / px / 2.0 - 0.4, 0.3);
        const double long_mm = planned.design.short_axis_mm / planned.design.axis_ratio;
        shape.semi_long_px = std::max(long_mm / px / 2.0 - 0.4, shape.semi_short_px);
        shape.angle = uniform(rng, 0.0, std::numbers::pi);
        shape.amplitude = planned.amplitude;
        double wsum = 0.0;
        for (int k = 0; k < 5; ++k) {
            shape.harmonic_weight[k] = uniform(rng, 0.2, 1.0);
            shape.harmonic_phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
            wsum += shape.harmonic_weight[k];
        }
        for (auto& w : shape.harmonic_weight) w /= wsum / 2.0;
        shape.intensity = uniform(rng, 0.76, 0.86);
        shape.texture_sd = planned.texture_sd;

        const double cx = kPatchSize / 2.0 + uniform(rng, -spec.centre_jitter_px, spec.centre_jitter_px);
        const double cy = kPatchSize / 2.0 + uniform(rng, -spec.centre_jitter_px, spec.centre_jitter_px);

        NodeTruth truth;
        truth.node_id = nid.str();
        truth.design_short_axis_mm = planned.design.short_axis_mm;
        truth.design_long_axis_mm = long_mm;
        truth.irregular = planned.design.irregular;
        truth.heterogeneous = planned.design.heterogeneous;
        truth.boundary_amplitude = planned.amplitude;
        truth.texture_sd = planned.texture_sd;
        truth.n_slices = planned.design.n_slices;
        bag.nodes.push_back(truth);

        double scale = 1.0;
        for (int s = 0; s < planned.design.n_slices; ++s) {
            if (s > 0) scale = std::max(0.3, scale - uniform(rng, 0.1, 0.3));
            auto patch = render_slice(shape, scale, cx + uniform(rng, -0.5, 0.5) * (s > 0),
                                      cy + uniform(rng, -0.5, 0.5) * (s > 0), rng);
            patch.patient_id = id;
            patch.node_id = truth.node_id;
            patch.slice_index = s;
            bag.patches.push_back(std::move(patch));
        }
    }

    bag = preprocess::select_patches(bag, spec.max_patches);
    const int n_pos = count_positive_nodes(bag, spec.spacing);
    bag.n_stage = n_pos == 0 ? NStage::N0 : n_pos <= 3 ? NStage::N1 : NStage::N2;
    return bag;
}

}  // namespace

Corpus generate_phantom_corpus(const PhantomSpec& spec) {
    spec.validate();
    Corpus corpus;
    corpus.manifest.spacing = spec.spacing;
    corpus.manifest.generator_seed = spec.seed;
    corpus.manifest.max_patches = spec.max_patches;

    Rng plan_rng(derive_seed(spec.seed, "phantom/plan"));
    const int n_pos = std::clamp(int(std::lround(spec.n_patients * spec.positive_fraction)), 0, spec.n_patients);
    std::vector<bool> positive(size_t(spec.n_patients), false);
    std::fill(positive.begin(), positive.begin() + n_pos, true);
    std::shuffle(positive.begin(), positive.end(), plan_rng);

    for (int i = 0; i < spec.n_patients; ++i) {
        std::ostringstream id;
        id << 'P' << std::setw(4) << std::setfill('0') << (i + 1);
        Rng rng(derive_seed(spec.seed, "phantom/patient/" + id.str()));
        corpus.bags.push_back(generate_patient(spec, id.str(), positive[size_t(i)], rng));
    }

    // Stratified patient-level train/test split and fold assignment.
    Rng split_rng(derive_seed(spec.seed, "phantom/split"));
    for (int label = 0; label <= 1; ++label) {
        std::vector<std::string> ids;
        for (const auto& b : corpus.bags) {
            if (b.label() == label) ids.push_back(b.patient_id);
        }
        std::shuffle(ids.begin(), ids.end(), split_rng);
        const size_t n_test = size_t(std::lround(double(ids.size()) * spec.test_fraction));
        for (size_t k = 0; k < ids.size(); ++k) {
            corpus.manifest.split[ids[k]] = k < n_test ? Split::Test : Split::Train;
            corpus.manifest.fold[ids[k]] = int(k % 5);
        }
        (label ? corpus.manifest.n_positive : corpus.manifest.n_negative) = int(ids.size());
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------
namespace {

constexpr char kPatchMagic[8] = {'L', 'N', 'M', 'P', 'A', 'T', 'C', 'H'};
constexpr std::uint32_t kPatchFormatVersion = 1;
constexpr int kManifestVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float f) { put_u32(buf, std::bit_cast<std::uint32_t>(f)); }

std::uint32_t get_u32(const std::string& buf, size_t& pos) {
    if (pos + 4 > buf.size()) throw DataError("truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

float get_f32(const std::string& buf, size_t& pos) { return std::bit_cast<float>(get_u32(buf, pos)); }

std::uint32_t crc_of(const std::string& bytes) {
    return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), uInt(bytes.size())));
}

std::string encode_patches(const PatientBag& bag) {
    std::string buf(kPatchMagic, sizeof(kPatchMagic));
    put_u32(buf, kPatchFormatVersion);
    put_u32(buf, std::uint32_t(bag.patches.size()));
    put_u32(buf, kPatchSize);
    put_u32(buf, kPatchSize);
    for (const auto& p : bag.patches) {
        for (float v : p.image.values()) put_f32(buf, v);
        for (auto m : p.mask.values()) put_f32(buf, float(m));
    }
    return buf;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "patients");
    json manifest;
    manifest["format_version"] = kManifestVersion;
    manifest["generator_seed"] = corpus.manifest.generator_seed;
    manifest["spacing"] = {{"in_plane_mm", corpus.manifest.spacing.in_plane_mm},
                           {"slice_mm", corpus.manifest.spacing.slice_mm}};
    manifest["patch_size"] = kPatchSize;
    manifest["max_patches"] = corpus.manifest.max_patches;
    manifest["counts"] = {{"positive", corpus.manifest.n_positive}, {"negative", corpus.manifest.n_negative}};

    json patients = json::array();
    for (const auto& bag : corpus.bags) {
        const std::string bytes = encode_patches(bag);
        const std::string file = "patients/" + bag.patient_id + ".bin";
        write_file(dir / file, bytes);

        json p;
        p["id"] = bag.patient_id;
        auto split = corpus.manifest.split.find(bag.patient_id);
        if (split != corpus.manifest.split.end()) p["split"] = to_string(split->second);
        auto fold = corpus.manifest.fold.find(bag.patient_id);
        if (fold != corpus.manifest.fold.end()) p["fold"] = fold->second;
        p["age"] = bag.age;
        p["sex"] = to_string(bag.sex);
        p["t_stage"] = to_string(bag.t_stage);
        p["n_stage"] = to_string(bag.n_stage);
        p["label"] = bag.label();
        p["is_synthetic"] = bag.is_synthetic;
        p["parent_id"] = bag.parent_id;
        p["file"] = file;
        p["crc32"] = crc_of(bytes);
        json patches = json::array();
        for (const auto& patch : bag.patches) {
            patches.push_back({{"node_id", patch.node_id}, {"slice_index", patch.slice_index}, {"is_padding", patch.is_padding}});
        }
        p["patches"] = patches;
        json nodes = json::array();
        for (const auto& n : bag.nodes) {
            nodes.push_back({{"node_id", n.node_id},
                             {"design_short_axis_mm", n.design_short_axis_mm},
                             {"design_long_axis_mm", n.design_long_axis_mm},
                             {"irregular", n.irregular},
                             {"heterogeneous", n.heterogeneous},
                             {"boundary_amplitude", n.boundary_amplitude},
                             {"texture_sd", n.texture_sd},
                             {"n_slices", n.n_slices}});
        }
        p["nodes"] = nodes;
        patients.push_back(p);
    }
    manifest["patients"] = patients;
    write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Corpus load_corpus(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw DataError("missing manifest: " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }

    Corpus corpus;
    std::string current = "<manifest>";
    try {
        if (manifest.at("format_version").get<int>() != kManifestVersion) throw DataError("unsupported manifest version");
        if (manifest.at("patch_size").get<int>() != kPatchSize) throw DataError("unsupported patch size");
        corpus.manifest.generator_seed = manifest.at("generator_seed").get<std::uint64_t>();
        corpus.manifest.spacing.in_plane_mm = manifest.at("spacing").at("in_plane_mm").get<double>();
        corpus.manifest.spacing.slice_mm = manifest.at("spacing").at("slice_mm").get<double>();
        corpus.manifest.max_patches = manifest.at("max_patches").get<int>();
        corpus.manifest.n_positive = manifest.at("counts").at("positive").get<int>();
        corpus.manifest.n_negative = manifest.at("counts").at("negative").get<int>();

        for (const auto& p : manifest.at("patients")) {
            PatientBag bag;
            bag.patient_id = current = p.at("id").get<std::string>();
            if (p.contains("split")) {
                if (corpus.manifest.split.count(bag.patient_id)) throw DataError("duplicate patient");
                corpus.manifest.split[bag.patient_id] = parse_split(p.at("split").get<std::string>());
            }
            if (p.contains("fold")) corpus.manifest.fold[bag.patient_id] = p.at("fold").get<int>();
            bag.age = p.at("age").get<double>();
            bag.sex = parse_sex(p.at("sex").get<std::string>());
            bag.t_stage = parse_t_stage(p.at("t_stage").get<std::string>());
            bag.n_stage = parse_n_stage(p.at("n_stage").get<std::string>());
            if (p.at("label").get<int>() != bag.label()) throw DataError("label inconsistent with N stage");
            bag.is_synthetic = p.at("is_synthetic").get<bool>();
            bag.parent_id = p.at("parent_id").get<std::string>();
            for (const auto& n : p.at("nodes")) {
                NodeTruth t;
                t.node_id = n.at("node_id").get<std::string>();
                t.design_short_axis_mm = n.at("design_short_axis_mm").get<double>();
                t.design_long_axis_mm = n.at("design_long_axis_mm").get<double>();
                t.irregular = n.at("irregular").get<bool>();
                t.heterogeneous = n.at("heterogeneous").get<bool>();
                t.boundary_amplitude = n.at("boundary_amplitude").get<double>();
                t.texture_sd = n.at("texture_sd").get<double>();
                t.n_slices = n.at("n_slices").get<int>();
                bag.nodes.push_back(t);
            }

            const auto file = dir / p.at("file").get<std::string>();
            if (!std::filesystem::exists(file)) throw DataError("patch file missing: " + file.string());
            const std::string bytes = read_file(file);
            if (crc_of(bytes) != p.at("crc32").get<std::uint32_t>()) throw DataError("checksum mismatch");
            if (bytes.size() < sizeof(kPatchMagic) || std::memcmp(bytes.data(), kPatchMagic, sizeof(kPatchMagic)) != 0) {
                throw DataError("bad patch file magic");
            }
            size_t pos = sizeof(kPatchMagic);
            if (get_u32(bytes, pos) != kPatchFormatVersion) throw DataError("unsupported patch file version");
            const std::uint32_t count = get_u32(bytes, pos);
            const std::uint32_t h = get_u32(bytes, pos);
            const std::uint32_t w = get_u32(bytes, pos);
            const auto& meta = p.at("patches");
            if (h != kPatchSize || w != kPatchSize) throw DataError("unexpected patch dimensions");
            if (count != meta.size()) throw DataError("patch count differs from manifest");
            if (bytes.size() != pos + size_t(count) * 2 * h * w * 4) throw DataError("patch file size mismatch");
            for (std::uint32_t k = 0; k < count; ++k) {
                PatchRecord rec;
                rec.patient_id = bag.patient_id;
                rec.node_id = meta[k].at("node_id").get<std::string>();
                rec.slice_index = meta[k].at("slice_index").get<int>();
                rec.is_padding = meta[k].at("is_padding").get<bool>();
                for (auto& v : rec.image.values()) v = get_f32(bytes, pos);
                for (auto& m : rec.mask.values()) {
                    const float f = get_f32(bytes, pos);
                    if (f != 0.0f && f != 1.0f) throw DataError("mask value is not binary");
                    m = static_cast<std::uint8_t>(f);
                }
                rec.validate();
                bag.patches.push_back(std::move(rec));
            }
            corpus.bags.push_back(std::move(bag));
        }
    } catch (const json::exception& e) {
        throw DataError("malformed record for patient " + current + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError("ingestion error for patient " + current + ": " + e.what());
    }
    return corpus;
}

}  // namespace lnm
