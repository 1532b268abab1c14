#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "lnm/common.hpp"
#include "lnm/morphometry.hpp"
#include "lnm/vae.hpp"

namespace lnm::insight {

inline constexpr double kTopFraction = 0.25;

struct Heatmap {
    Image values = make_patch_image();  ///< [0,1]
    Mask top = make_patch_mask();       ///< highest-valued quarter
    bool degenerate = false;            ///< all values equal before normalization
    bool untrained = false;             ///< gradients vanished everywhere
};

enum class CamTarget { MuSquaredNorm, ReconstructionError };

/// Scalar to backpropagate, given the encoder output and the input batch [1,1,S,S].
using CamScore = std::function<torch::Tensor(const vae::EncoderOutput& enc, const torch::Tensor& x)>;

/// Gradient-weighted activation map of the last 8x8 encoder layer, upsampled to the patch.
Heatmap grad_cam(vae::VariationalAutoencoder& model, const Image& patch, CamTarget target = CamTarget::MuSquaredNorm);
Heatmap grad_cam(vae::VariationalAutoencoder& model, const Image& patch, const CamScore& score);

/// Marks floor(fraction * n) pixels with the largest values; ties go to the earlier pixel in row-major order.
Mask top_fraction_mask(const Image& values, double fraction = kTopFraction);

struct Box {
    int row0 = 0, col0 = 0, row1 = -1, col1 = -1;  ///< inclusive bounds
    bool contains(int r, int c) const { return r >= row0 && r <= row1 && c >= col0 && c <= col1; }
    int area() const { return row1 < row0 ? 0 : (row1 - row0 + 1) * (col1 - col0 + 1); }
};

Box bounding_box(const Mask& mask);
/// Fraction of total heatmap mass inside the box (0 when the map is all zero).
double mass_fraction(const Image& heatmap, const Box& box);

// -- k-means ---------------------------------------------------------------

struct KMeansResult {
    int k = 0;
    std::vector<int> assignment;
    std::vector<std::vector<double>> centroids;
    double inertia = 0.0;
    std::vector<double> objective_history;  ///< of the kept restart
    bool converged = false;
};

/// k-means++ seeding, Lloyd iterations, best of `restarts` by inertia.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed, int restarts = 10,
                    int max_iterations = 300);

struct Spread {
    double sd = 0.0;   ///< population sd
    double min = 0.0;
    double max = 0.0;
    double range() const { return max - min; }
};

struct ClusterStats {
    int size = 0;
    Spread short_axis, long_axis, axis_ratio, bi;
};

struct ClusterReport {
    int k = 0;
    std::vector<ClusterStats> clusters;  ///< only clusters with >= 3 members
    int excluded = 0;
    ClusterStats global;
    double mean_sd_short = 0.0, mean_sd_long = 0.0, mean_sd_ratio = 0.0, mean_sd_bi = 0.0;
    std::vector<std::pair<int, double>> k_scores;  ///< (k, mean intra-cluster short-axis sd)
    bool degenerate = false;                       ///< all latents identical
    std::vector<int> assignment;
};

inline constexpr int kMinClusterSize = 3;

/// Selects k in [k_min, k_max] minimizing the mean intra-cluster short-axis sd.
ClusterReport cluster_latents(const std::vector<std::vector<double>>& latents,
                              const std::vector<morphometry::NodeFeatures>& features, int k_min, int k_max,
                              std::uint64_t seed, int restarts = 10);

void write_cluster_report(std::ostream& out, const ClusterReport& report);

// -- growth direction ------------------------------------------------------

struct GrowthDirection {
    std::vector<double> direction;
    std::vector<double> unit;
    double small_pct = 25.0, large_pct = 75.0;
    double small_cutoff_mm = 0.0, large_cutoff_mm = 0.0;
    int n_small = 0, n_large = 0;
    std::vector<double> multiples{-2, -1, 0, 1, 2};
};

/// Linear-interpolated percentile of `values` (p in [0,100]).
double percentile(std::vector<double> values, double p);

GrowthDirection growth_direction(const std::vector<std::vector<double>>& latents, const std::vector<double>& short_axis_mm,
                                 double small_pct = 25.0, double large_pct = 75.0);

/// One decoded image per multiple of `direction` added to `mu`.
std::vector<Image> render_traversal(vae::VariationalAutoencoder& model, const std::vector<double>& mu,
                                    const std::vector<double>& direction, const std::vector<double>& multiples);

/// Number of pixels above half of the image maximum.
int half_max_area(const Image& image);

bool nondecreasing(const std::vector<int>& values);

}  // namespace lnm::insight
