#include "doctest_torch.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "lnm/morphometry.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace lnm;
using namespace lnm::morphometry;

namespace {

const VoxelSpacing kSpacing{};

Mask transpose(const Mask& m) {
    Mask t(m.width(), m.height(), 0);
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c) t(c, r) = m(r, c);
    return t;
}

Mask shift(const Mask& m, int dr, int dc) {
    Mask t(m.height(), m.width(), 0);
    for (int r = 0; r < m.height(); ++r)
        for (int c = 0; c < m.width(); ++c)
            if (m(r, c)) t(r + dr, c + dc) = 1;
    return t;
}

}  // namespace

TEST_SUITE("morphometry") {

TEST_CASE("single pixel diameters") {
    Mask m = make_patch_mask();
    m(10, 10) = 1;
    const auto d = diameters(m, kSpacing);
    CHECK(d.short_axis_mm == doctest::Approx(0.573).epsilon(1e-9));
    CHECK(d.long_axis_mm == doctest::Approx(std::sqrt(2.0) * 0.573).epsilon(1e-9));
    CHECK(d.long_axis_mm == doctest::Approx(0.810).epsilon(1e-3));
}

TEST_CASE("one by five strip") {
    const auto d = diameters(testing::rect_mask(4, 4, 1, 5), kSpacing);
    CHECK(d.short_axis_mm == doctest::Approx(0.573).epsilon(1e-9));
    CHECK(d.long_axis_mm == doctest::Approx(std::sqrt(26.0) * 0.573).epsilon(1e-9));
    CHECK(d.long_axis_mm == doctest::Approx(2.922).epsilon(1e-3));
}

TEST_CASE("disc diameters match brute-force calipers") {
    for (double radius : {3.0, 5.5, 8.0}) {
        const auto m = testing::disc_mask(radius);
        const auto ref = oracle::brute_feret(m);
        const auto d = diameters(m, kSpacing);
        CHECK(d.long_axis_mm == doctest::Approx(ref.max_diameter * 0.573).epsilon(1e-9));
        // The angle sweep can only overestimate the minimum width.
        CHECK(d.short_axis_mm <= ref.min_diameter * 0.573 + 1e-9);
        CHECK(d.short_axis_mm >= ref.min_diameter * 0.573 - 1e-3);
    }
}

TEST_CASE("radius-8 disc diameters") {
    // Pixel squares reach at most sqrt(2)/2 beyond the radius, so the corner polygon
    // can exceed the continuous diameter by up to sqrt(2) px along a diagonal.
    for (double c : {15.5, 16.0}) {
        const auto d = diameters(testing::disc_mask(8.0, c, c), kSpacing);
        CHECK(std::abs(d.short_axis_mm - 16 * 0.573) <= 0.573);
        CHECK(d.long_axis_mm >= 16 * 0.573);
        CHECK(d.long_axis_mm <= (16 + std::sqrt(2.0)) * 0.573);
    }
}

TEST_CASE("disc border is close to a circle") {
    const auto b = border_irregularity(testing::disc_mask(10.0), kSpacing);
    CHECK(b.compactness >= 0.95);
    CHECK(b.compactness <= 1.15);
    CHECK(b.convexity <= 1.0 + 1e-9);
    CHECK(b.convexity >= 0.95);
}

TEST_CASE("ideal square compactness and convexity") {
    const std::vector<Point> square{{0, 0}, {4, 0}, {4, 4}, {0, 4}};
    CHECK(compactness(polygon_perimeter(square), polygon_area(square)) ==
          doctest::Approx(4.0 / std::numbers::pi).epsilon(1e-12));
    CHECK(polygon_area(square) == doctest::Approx(16.0));
    const auto hull = convex_hull(square);
    CHECK(hull.size() == 4);
    CHECK(polygon_perimeter(hull) == doctest::Approx(16.0));

    const auto b = border_irregularity(testing::rect_mask(8, 8, 12, 12), kSpacing);
    CHECK(b.convexity == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("features invariant under translation and a right-angle rotation") {
    Mask m = testing::rect_mask(6, 8, 9, 4);
    m(5, 9) = 1;
    m(15, 11) = 1;
    const auto f = node_features(m, kSpacing);
    for (const auto& other : {shift(m, 3, -2), transpose(m)}) {
        const auto g = node_features(other, kSpacing);
        const auto a = f.raw(), b = g.raw();
        for (int i = 0; i < kNumFeatures; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
    }
}

TEST_CASE("a spike makes the border less compact and less convex") {
    Mask disc = testing::disc_mask(6.0);
    Mask spiky = disc;
    for (int c = 22; c < 28; ++c) spiky(15, c) = 1;
    const auto a = border_irregularity(disc, kSpacing);
    const auto b = border_irregularity(spiky, kSpacing);
    CHECK(b.compactness > a.compactness);
    CHECK(b.convexity < a.convexity);
    CHECK(b.bi_mean < a.bi_mean);
}

TEST_CASE("axis ratio is short over long and bounded") {
    const auto f = node_features(testing::disc_mask(7.0), kSpacing);
    CHECK(f.axis_ratio == doctest::Approx(f.short_axis_mm / f.long_axis_mm));
    CHECK(f.axis_ratio > 0.0);
    CHECK(f.axis_ratio <= 1.0);
}

TEST_CASE("empty mask is a feature error") {
    CHECK_THROWS_AS(node_features(make_patch_mask(), kSpacing), FeatureError);
    CHECK_THROWS_AS(diameters(make_patch_mask(), kSpacing), DataError);
}

TEST_CASE("spacing scales diameters linearly") {
    const auto m = testing::disc_mask(5.0);
    const VoxelSpacing doubled{2 * 0.573, 3.3};
    CHECK(diameters(m, doubled).long_axis_mm == doctest::Approx(2 * diameters(m, kSpacing).long_axis_mm));
    CHECK_THROWS_AS(diameters(m, VoxelSpacing{0.0, 3.3}), ConfigError);
}

TEST_CASE("scaler maps the training extremes to 0 and 1") {
    std::vector<LabeledFeatures> rows{{"a", {2, 4, 0.5, 0.9, 1.1}}, {"b", {6, 8, 0.7, 1.0, 1.3}}, {"c", {4, 6, 0.6, 0.95, 1.2}}};
    const auto s = fit_scaler(rows);
    CHECK((s.fitted_on == std::set<std::string>{"a", "b", "c"}));
    const auto lo = s.apply(rows[0].raw), hi = s.apply(rows[1].raw), mid = s.apply(rows[2].raw);
    for (int i = 0; i < kNumFeatures; ++i) {
        CHECK(lo[i] == doctest::Approx(0.0));
        CHECK(hi[i] == doctest::Approx(1.0));
        CHECK(mid[i] == doctest::Approx(0.5));
    }
    const auto out = s.apply({100, -5, 0.6, 0.95, 1.2});
    CHECK(out[0] == 1.0);
    CHECK(out[1] == 0.0);
}

TEST_CASE("constant feature maps to zero and empty fit is rejected") {
    std::vector<LabeledFeatures> rows{{"a", {2, 4, 0.5, 1.0, 1.1}}, {"b", {6, 8, 0.7, 1.0, 1.3}}};
    const auto s = fit_scaler(rows);
    CHECK(s.degenerate[3]);
    CHECK(s.apply(rows[1].raw)[3] == 0.0);
    CHECK_THROWS_AS(fit_scaler({}), ConfigError);
}

}  // TEST_SUITE
