#pragma once

#include <array>
#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "lnm/common.hpp"

namespace lnm {

struct VoxelSpacing {
    double in_plane_mm = 0.573;
    double slice_mm = 3.3;

    void validate() const;
    friend bool operator==(const VoxelSpacing&, const VoxelSpacing&) = default;
};

namespace morphometry {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

/// Convex hull (counter-clockwise, no collinear points) by monotone chain.
std::vector<Point> convex_hull(std::vector<Point> points);

double polygon_perimeter(const std::vector<Point>& polygon);
double polygon_area(const std::vector<Point>& polygon);

/// perimeter^2 / (4 pi area).
double compactness(double perimeter, double area);

struct FeretDiameters {
    double max_diameter = 0.0;
    double min_diameter = 0.0;
};

/// Max and min caliper widths of a convex polygon (rotating calipers).
FeretDiameters feret_diameters(const std::vector<Point>& hull);

/// Corner points (in pixel units) of every foreground pixel.
std::vector<Point> foreground_corners(const Mask& mask);

/// Marching-squares boundary of a binary mask sampled at pixel centres.
struct Contour {
    double perimeter = 0.0;  ///< pixel units
    double area = 0.0;       ///< pixel units squared
    std::vector<Point> vertices;
};

Contour trace_contour(const Mask& mask);

struct Diameters {
    double long_axis_mm = 0.0;
    double short_axis_mm = 0.0;
};

Diameters diameters(const Mask& mask, const VoxelSpacing& spacing);

struct BorderIrregularity {
    double convexity = 0.0;
    double compactness = 0.0;
    double bi_mean = 0.0;  ///< (convexity + 1/compactness) / 2
};

BorderIrregularity border_irregularity(const Mask& mask, const VoxelSpacing& spacing);

inline constexpr int kNumFeatures = 5;
using FeatureVector = std::array<double, kNumFeatures>;

inline const std::array<std::string, kNumFeatures>& feature_names() {
    static const std::array<std::string, kNumFeatures> names = {
        "short_axis_mm", "long_axis_mm", "axis_ratio", "convexity", "compactness"};
    return names;
}

struct NodeFeatures {
    double short_axis_mm = 0.0;
    double long_axis_mm = 0.0;
    double axis_ratio = 0.0;
    double convexity = 0.0;
    double compactness = 0.0;
    FeatureVector normalized{};

    FeatureVector raw() const {
        return {short_axis_mm, long_axis_mm, axis_ratio, convexity, compactness};
    }
    double bi_mean() const { return 0.5 * (convexity + 1.0 / compactness); }
};

/// All five raw features for one mask; throws FeatureError on an empty mask.
NodeFeatures node_features(const Mask& mask, const VoxelSpacing& spacing);

/// Per-feature min/max from the training split.
struct FeatureScaler {
    FeatureVector min{};
    FeatureVector max{};
    std::array<bool, kNumFeatures> degenerate{};
    std::set<std::string> fitted_on;  ///< patient ids that contributed

    FeatureVector apply(const FeatureVector& raw) const;
};

struct LabeledFeatures {
    std::string patient_id;
    FeatureVector raw;
};

FeatureScaler fit_scaler(const std::vector<LabeledFeatures>& train_features);
void apply_scaler(NodeFeatures& features, const FeatureScaler& scaler);

struct FeatureRow {
    std::string patient_id;
    std::string node_id;
    int slice_index = 0;
    NodeFeatures features;
};

/// Delimited table: patient_id,node_id,slice_index, 5 raw, 5 normalized.
void write_feature_table(std::ostream& out, const std::vector<FeatureRow>& rows);

}  // namespace morphometry
}  // namespace lnm
