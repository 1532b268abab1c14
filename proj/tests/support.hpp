#pragma once

#include <cmath>

#include "lnm/common.hpp"
#include "lnm/corpus.hpp"

namespace testing {

inline lnm::Mask disc_mask(double radius, double cx = 15.5, double cy = 15.5) {
    lnm::Mask m = lnm::make_patch_mask();
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            if (std::hypot(c - cx, r - cy) <= radius) m(r, c) = 1;
        }
    }
    return m;
}

inline lnm::Mask rect_mask(int row0, int col0, int rows, int cols) {
    lnm::Mask m = lnm::make_patch_mask();
    for (int r = row0; r < row0 + rows; ++r) {
        for (int c = col0; c < col0 + cols; ++c) m(r, c) = 1;
    }
    return m;
}

inline lnm::Image image_from_mask(const lnm::Mask& m, float fg = 0.8f, float bg = 0.1f) {
    lnm::Image img = lnm::make_patch_image();
    for (size_t i = 0; i < img.size(); ++i) img.values()[i] = m.values()[i] ? fg : bg;
    return img;
}

inline lnm::PatchRecord patch_from_mask(const lnm::Mask& m, const std::string& patient, const std::string& node,
                                        int slice = 0) {
    lnm::PatchRecord p;
    p.mask = m;
    p.image = image_from_mask(m);
    p.patient_id = patient;
    p.node_id = node;
    p.slice_index = slice;
    return p;
}

/// Small phantom cohort for fast tests.
inline lnm::PhantomSpec small_spec(int n = 40, std::uint64_t seed = 11) {
    lnm::PhantomSpec s;
    s.n_patients = n;
    s.seed = seed;
    return s;
}

}  // namespace testing
