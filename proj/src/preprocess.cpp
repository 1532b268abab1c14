#include "lnm/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace lnm::preprocess {

Image normalize_intensity(const Image& image) {
    const auto& v = image.values();
    for (float x : v) {
        if (!std::isfinite(x)) throw ValidationError("normalize_intensity: non-finite pixel value");
    }
    Image out(image.height(), image.width(), 0.0f);
    if (v.empty()) return out;

    double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double var = 0.0;
    for (float x : v) var += (x - mean) * (x - mean);
    var /= double(v.size());
    if (!(var > 0.0)) return out;

    const double sd = std::sqrt(var);
    std::vector<double> z(v.size());
    for (size_t i = 0; i < v.size(); ++i) z[i] = (v[i] - mean) / sd;
    const auto [lo, hi] = std::minmax_element(z.begin(), z.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) return out;
    for (size_t i = 0; i < v.size(); ++i) {
        out.values()[i] = static_cast<float>(std::clamp((z[i] - *lo) / range, 0.0, 1.0));
    }
    return out;
}

PatientBag select_patches(const PatientBag& bag, int max_patches) {
    PatientBag out = bag;
    out.patches.clear();

    std::vector<const PatchRecord*> real;
    for (const auto& p : bag.patches) {
        if (!p.is_padding) real.push_back(&p);
    }

    std::map<std::string, size_t> largest_area;
    for (const auto* p : real) {
        auto& a = largest_area[p->node_id];
        a = std::max(a, foreground_count(p->mask));
    }

    // Keep each node's largest slice; secondary slices need at least half of that area.
    std::vector<const PatchRecord*> kept;
    std::map<std::string, bool> primary_taken;
    for (const auto* p : real) {
        const size_t area = foreground_count(p->mask);
        const size_t top = largest_area[p->node_id];
        if (area == top && !primary_taken[p->node_id]) {
            primary_taken[p->node_id] = true;
            kept.push_back(p);
        } else if (2 * area >= top) {
            kept.push_back(p);
        }
    }

    std::stable_sort(kept.begin(), kept.end(), [](const PatchRecord* a, const PatchRecord* b) {
        return foreground_count(a->mask) > foreground_count(b->mask);
    });
    if (max_patches >= 0 && kept.size() > size_t(max_patches)) kept.resize(size_t(max_patches));

    for (const auto* p : kept) out.patches.push_back(*p);
    while (out.patches.size() < size_t(std::max(max_patches, 0))) {
        out.patches.push_back(PatchRecord::padding(bag.patient_id));
    }
    return out;
}

AugmentationConfig AugmentationConfig::none() {
    AugmentationConfig cfg;
    cfg.hflip_probability = cfg.vflip_probability = cfg.translate_probability = 0.0;
    cfg.noise_probability = cfg.gamma_probability = cfg.bias_probability = 0.0;
    cfg.max_shift_px = 0;
    return cfg;
}

void AugmentationConfig::validate(int patch_size) const {
    for (double p : {hflip_probability, vflip_probability, translate_probability, noise_probability,
                     gamma_probability, bias_probability}) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probability outside [0,1]");
    }
    for (const Range& r : {noise_sigma, gamma, bias_coefficient}) {
        if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
            throw ConfigError("augmentation range must be finite with lo <= hi");
        }
    }
    if (max_shift_px < 0 || max_shift_px >= patch_size) {
        throw ConfigError("augmentation translation must be smaller than the patch");
    }
    if (noise_sigma.lo < 0.0) throw ConfigError("augmentation noise sigma must be nonnegative");
    if (gamma.lo <= 0.0) throw ConfigError("augmentation gamma must be positive");
    if (bias_order < 0 || bias_order > 4) throw ConfigError("bias field order must be in [0,4]");
}

void flip_horizontal(PatchRecord& patch) {
    const int h = patch.image.height(), w = patch.image.width();
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w / 2; ++c) {
            std::swap(patch.image(r, c), patch.image(r, w - 1 - c));
            std::swap(patch.mask(r, c), patch.mask(r, w - 1 - c));
        }
    }
}

void flip_vertical(PatchRecord& patch) {
    const int h = patch.image.height(), w = patch.image.width();
    for (int r = 0; r < h / 2; ++r) {
        for (int c = 0; c < w; ++c) {
            std::swap(patch.image(r, c), patch.image(h - 1 - r, c));
            std::swap(patch.mask(r, c), patch.mask(h - 1 - r, c));
        }
    }
}

void translate(PatchRecord& patch, int dx, int dy) {
    const int h = patch.image.height(), w = patch.image.width();
    Image image(h, w, 0.0f);
    Mask mask(h, w, 0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int sr = r - dy, sc = c - dx;
            if (!patch.image.in_bounds(sr, sc)) continue;
            image(r, c) = patch.image(sr, sc);
            mask(r, c) = patch.mask(sr, sc);
        }
    }
    patch.image = std::move(image);
    patch.mask = std::move(mask);
}

void apply_gamma(Image& image, double gamma) {
    for (auto& v : image.values()) v = static_cast<float>(std::pow(std::max(0.0f, v), gamma));
}

void add_gaussian_noise(Image& image, double sigma, Rng& rng) {
    if (sigma <= 0.0) return;
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& v : image.values()) v = static_cast<float>(v + noise(rng));
}

void apply_bias_field(Image& image, int order, const std::vector<double>& coefficients) {
    const int h = image.height(), w = image.width();
    for (int r = 0; r < h; ++r) {
        const double y = h > 1 ? 2.0 * r / (h - 1) - 1.0 : 0.0;
        for (int c = 0; c < w; ++c) {
            const double x = w > 1 ? 2.0 * c / (w - 1) - 1.0 : 0.0;
            double field = 1.0;
            size_t k = 0;
            for (int i = 0; i <= order; ++i) {
                for (int j = 0; i + j <= order; ++j) {
                    if (i + j == 0) continue;
                    if (k < coefficients.size()) field += coefficients[k] * std::pow(x, i) * std::pow(y, j);
                    ++k;
                }
            }
            image(r, c) = static_cast<float>(image(r, c) * std::max(field, 0.0));
        }
    }
}

void clamp_unit(Image& image) {
    for (auto& v : image.values()) v = std::clamp(v, 0.0f, 1.0f);
}

PatchRecord augment(const PatchRecord& patch, const AugmentationConfig& cfg, Rng& rng) {
    cfg.validate(patch.image.width());
    PatchRecord out = patch;
    if (patch.is_padding) return out;

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw = [&](const Range& r) { return r.lo + (r.hi - r.lo) * unit(rng); };

    if (unit(rng) < cfg.hflip_probability) flip_horizontal(out);
    if (unit(rng) < cfg.vflip_probability) flip_vertical(out);
    if (unit(rng) < cfg.translate_probability && cfg.max_shift_px > 0) {
        std::uniform_int_distribution<int> shift(-cfg.max_shift_px, cfg.max_shift_px);
        const int dx = shift(rng);
        const int dy = shift(rng);
        translate(out, dx, dy);
        if (foreground_count(out.mask) == 0) out = patch;  // node pushed out of frame
    }

    if (unit(rng) < cfg.noise_probability) add_gaussian_noise(out.image, draw(cfg.noise_sigma), rng);
    if (unit(rng) < cfg.gamma_probability) {
        clamp_unit(out.image);
        apply_gamma(out.image, draw(cfg.gamma));
    }
    if (unit(rng) < cfg.bias_probability) {
        const int n_terms = (cfg.bias_order + 1) * (cfg.bias_order + 2) / 2 - 1;
        std::vector<double> coeffs(size_t(std::max(n_terms, 0)));
        for (auto& c : coeffs) c = draw(cfg.bias_coefficient);
        apply_bias_field(out.image, cfg.bias_order, coeffs);
    }
    clamp_unit(out.image);
    return out;
}

}  // namespace lnm::preprocess
