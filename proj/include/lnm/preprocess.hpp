#pragma once

#include <random>

#include "lnm/common.hpp"
#include "lnm/corpus.hpp"

namespace lnm::preprocess {

/// Z-score then min-max rescale to [0,1]. A constant image maps to zeros.
Image normalize_intensity(const Image& image);

/// Largest-area selection with the half-area rule for secondary slices, then zero padding.
PatientBag select_patches(const PatientBag& bag, int max_patches);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct AugmentationConfig {
    double hflip_probability = 0.5;
    double vflip_probability = 0.5;
    double translate_probability = 0.5;
    int max_shift_px = 3;
    double noise_probability = 0.3;
    Range noise_sigma{0.0, 0.03};
    double gamma_probability = 0.3;
    Range gamma{0.8, 1.25};
    double bias_probability = 0.3;
    int bias_order = 2;
    Range bias_coefficient{-0.15, 0.15};

    /// All-off configuration.
    static AugmentationConfig none();
    void validate(int patch_size = kPatchSize) const;
};

using Rng = std::mt19937_64;

PatchRecord augment(const PatchRecord& patch, const AugmentationConfig& cfg, Rng& rng);

// Individual transforms, exposed for tests and reuse.
void flip_horizontal(PatchRecord& patch);
void flip_vertical(PatchRecord& patch);
/// Integer shift; exposed borders are zero-filled.
void translate(PatchRecord& patch, int dx, int dy);
void apply_gamma(Image& image, double gamma);
void add_gaussian_noise(Image& image, double sigma, Rng& rng);
/// Multiplies by 1 + sum of polynomial terms up to `order` in normalized coordinates.
void apply_bias_field(Image& image, int order, const std::vector<double>& coefficients);
void clamp_unit(Image& image);

}  // namespace lnm::preprocess
