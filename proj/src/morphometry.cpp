#include "lnm/morphometry.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <ostream>

namespace lnm {

void VoxelSpacing::validate() const {
    if (!(in_plane_mm > 0.0) || !(slice_mm > 0.0) || !std::isfinite(in_plane_mm) ||
        !std::isfinite(slice_mm)) {
        throw ConfigError("voxel spacing must be strictly positive");
    }
}

namespace morphometry {

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

void require_foreground(const Mask& mask, const char* what) {
    if (foreground_count(mask) == 0) {
        throw FeatureError(std::string(what) + ": mask has no foreground pixels");
    }
}

}  // namespace

std::vector<Point> convex_hull(std::vector<Point> points) {
    std::sort(points.begin(), points.end(), [](const Point& a, const Point& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    points.erase(std::unique(points.begin(), points.end(),
                             [](const Point& a, const Point& b) { return a.x == b.x && a.y == b.y; }),
                 points.end());
    if (points.size() < 3) return points;

    std::vector<Point> hull(2 * points.size());
    size_t k = 0;
    for (const auto& p : points) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (size_t i = points.size() - 1, lower = k + 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], points[i]) <= 0) --k;
        hull[k++] = points[i];
    }
    hull.resize(k - 1);
    return hull;
}

double polygon_perimeter(const std::vector<Point>& polygon) {
    if (polygon.size() < 2) return 0.0;
    double total = 0.0;
    for (size_t i = 0; i < polygon.size(); ++i) {
        total += distance(polygon[i], polygon[(i + 1) % polygon.size()]);
    }
    return total;
}

double polygon_area(const std::vector<Point>& polygon) {
    double twice = 0.0;
    for (size_t i = 0; i < polygon.size(); ++i) {
        const auto& a = polygon[i];
        const auto& b = polygon[(i + 1) % polygon.size()];
        twice += a.x * b.y - b.x * a.y;
    }
    return std::abs(twice) * 0.5;
}

double compactness(double perimeter, double area) {
    if (!(area > 0.0)) throw FeatureError("compactness: area must be positive");
    return perimeter * perimeter / (4.0 * std::numbers::pi * area);
}

FeretDiameters feret_diameters(const std::vector<Point>& hull) {
    FeretDiameters out;
    const size_t n = hull.size();
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) out.max_diameter = std::max(out.max_diameter, distance(hull[i], hull[j]));
    }
    if (n < 3) return out;

    // The minimum width is attained with one caliper flush against a hull edge.
    out.min_diameter = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
        const Point& a = hull[i];
        const Point& b = hull[(i + 1) % n];
        const double len = distance(a, b);
        if (len == 0.0) continue;
        double widest = 0.0;
        for (const auto& p : hull) widest = std::max(widest, std::abs(cross(a, b, p)) / len);
        out.min_diameter = std::min(out.min_diameter, widest);
    }
    return out;
}

std::vector<Point> foreground_corners(const Mask& mask) {
    std::vector<Point> corners;
    for (int r = 0; r < mask.height(); ++r) {
        for (int c = 0; c < mask.width(); ++c) {
            if (!mask(r, c)) continue;
            corners.push_back({double(c), double(r)});
            corners.push_back({double(c + 1), double(r)});
            corners.push_back({double(c), double(r + 1)});
            corners.push_back({double(c + 1), double(r + 1)});
        }
    }
    return corners;
}

Contour trace_contour(const Mask& mask) {
    // Cells span four neighbouring pixel centres; the grid is padded with background so
    // every boundary closes. Saddle cells keep the two diagonal pixels separated.
    constexpr double kHalfDiag = std::numbers::sqrt2 / 2.0;
    Contour contour;
    auto inside = [&](int r, int c) { return mask.in_bounds(r, c) && mask(r, c) != 0; };

    for (int r = -1; r < mask.height(); ++r) {
        for (int c = -1; c < mask.width(); ++c) {
            const bool tl = inside(r, c);
            const bool tr = inside(r, c + 1);
            const bool br = inside(r + 1, c + 1);
            const bool bl = inside(r + 1, c);
            const int n = tl + tr + br + bl;
            if (n == 0 || n == 4) {
                contour.area += n == 4 ? 1.0 : 0.0;
                continue;
            }
            const Point top{c + 1.0, r + 0.5};
            const Point bottom{c + 1.0, r + 1.5};
            const Point left{c + 0.5, r + 1.0};
            const Point right{c + 1.5, r + 1.0};
            auto add_segment = [&](const Point& a, const Point& b, double length) {
                contour.vertices.push_back(a);
                contour.vertices.push_back(b);
                contour.perimeter += length;
            };
            if (n == 1 || n == 3) {
                // The odd corner defines which two edges are cut.
                const bool odd_is_in = n == 1;
                const bool odd_tl = tl == odd_is_in;
                const bool odd_tr = tr == odd_is_in;
                const bool odd_br = br == odd_is_in;
                if (odd_tl) add_segment(top, left, kHalfDiag);
                else if (odd_tr) add_segment(top, right, kHalfDiag);
                else if (odd_br) add_segment(bottom, right, kHalfDiag);
                else add_segment(bottom, left, kHalfDiag);
                contour.area += odd_is_in ? 0.125 : 0.875;
            } else if (tl == br) {
                // saddle
                if (tl) {
                    add_segment(top, left, kHalfDiag);
                    add_segment(bottom, right, kHalfDiag);
                } else {
                    add_segment(top, right, kHalfDiag);
                    add_segment(bottom, left, kHalfDiag);
                }
                contour.area += 0.25;
            } else if (tl == tr) {
                add_segment(left, right, 1.0);
                contour.area += 0.5;
            } else {
                add_segment(top, bottom, 1.0);
                contour.area += 0.5;
            }
        }
    }
    return contour;
}

Diameters diameters(const Mask& mask, const VoxelSpacing& spacing) {
    require_foreground(mask, "diameters");
    spacing.validate();
    const auto feret = feret_diameters(convex_hull(foreground_corners(mask)));
    return {feret.max_diameter * spacing.in_plane_mm, feret.min_diameter * spacing.in_plane_mm};
}

BorderIrregularity border_irregularity(const Mask& mask, const VoxelSpacing& spacing) {
    require_foreground(mask, "border_irregularity");
    spacing.validate();
    // Both ratios are scale-free, so pixel units suffice.
    const auto contour = trace_contour(mask);
    const double hull_perimeter = polygon_perimeter(convex_hull(contour.vertices));
    BorderIrregularity out;
    out.convexity = hull_perimeter / contour.perimeter;
    out.compactness = compactness(contour.perimeter, contour.area);
    out.bi_mean = 0.5 * (out.convexity + 1.0 / out.compactness);
    return out;
}

NodeFeatures node_features(const Mask& mask, const VoxelSpacing& spacing) {
    const auto axes = diameters(mask, spacing);
    const auto border = border_irregularity(mask, spacing);
    NodeFeatures f;
    f.short_axis_mm = axes.short_axis_mm;
    f.long_axis_mm = axes.long_axis_mm;
    f.axis_ratio = axes.short_axis_mm / axes.long_axis_mm;
    f.convexity = border.convexity;
    f.compactness = border.compactness;
    return f;
}

FeatureVector FeatureScaler::apply(const FeatureVector& raw) const {
    FeatureVector out{};
    for (int i = 0; i < kNumFeatures; ++i) {
        if (degenerate[i]) {
            out[i] = 0.0;
            continue;
        }
        out[i] = std::clamp((raw[i] - min[i]) / (max[i] - min[i]), 0.0, 1.0);
    }
    return out;
}

FeatureScaler fit_scaler(const std::vector<LabeledFeatures>& train_features) {
    if (train_features.empty()) throw ConfigError("fit_scaler: training feature set is empty");
    FeatureScaler scaler;
    scaler.min.fill(std::numeric_limits<double>::infinity());
    scaler.max.fill(-std::numeric_limits<double>::infinity());
    for (const auto& row : train_features) {
        scaler.fitted_on.insert(row.patient_id);
        for (int i = 0; i < kNumFeatures; ++i) {
            scaler.min[i] = std::min(scaler.min[i], row.raw[i]);
            scaler.max[i] = std::max(scaler.max[i], row.raw[i]);
        }
    }
    for (int i = 0; i < kNumFeatures; ++i) {
        scaler.degenerate[i] = !(scaler.max[i] > scaler.min[i]);
        if (scaler.degenerate[i]) {
            std::cerr << "warning: feature '" << feature_names()[i]
                      << "' is constant on the training split; it will map to 0\n";
        }
    }
    return scaler;
}

void apply_scaler(NodeFeatures& features, const FeatureScaler& scaler) {
    features.normalized = scaler.apply(features.raw());
}

void write_feature_table(std::ostream& out, const std::vector<FeatureRow>& rows) {
    out << "patient_id,node_id,slice_index";
    for (const auto& name : feature_names()) out << ',' << name;
    for (const auto& name : feature_names()) out << ",norm_" << name;
    out << '\n';
    out << std::setprecision(9);
    for (const auto& row : rows) {
        out << row.patient_id << ',' << row.node_id << ',' << row.slice_index;
        for (double v : row.features.raw()) out << ',' << v;
        for (double v : row.features.normalized) out << ',' << v;
        out << '\n';
    }
}

}  // namespace morphometry
}  // namespace lnm
