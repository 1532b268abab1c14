#include "lnm/latent_insight.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

namespace lnm::insight {

namespace F = torch::nn::functional;

Mask top_fraction_mask(const Image& values, double fraction) {
    const auto& v = values.values();
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] > v[b]; });
    Mask mask(values.height(), values.width(), 0);
    const auto n = size_t(std::floor(fraction * double(v.size())));
    for (size_t i = 0; i < n; ++i) mask.values()[order[i]] = 1;
    return mask;
}

Heatmap grad_cam(vae::VariationalAutoencoder& model, const Image& patch, CamTarget target) {
    if (target == CamTarget::MuSquaredNorm) {
        return grad_cam(model, patch, [](const vae::EncoderOutput& enc, const torch::Tensor&) { return enc.mu.pow(2).sum(); });
    }
    return grad_cam(model, patch, [&model](const vae::EncoderOutput& enc, const torch::Tensor& x) {
        return (model->decode(enc.mu) - x).abs().mean();
    });
}

Heatmap grad_cam(vae::VariationalAutoencoder& model, const Image& patch, const CamScore& score_of) {
    const int size = model->architecture().image_size;
    if (patch.height() != size || patch.width() != size) throw ValidationError("grad_cam: patch shape mismatch");
    model->eval();
    const auto x = vae::image_to_tensor(patch);
    auto enc = model->encode(x);
    auto fmap = enc.feature_map;
    fmap.retain_grad();
    const auto score = score_of(enc, x);
    model->zero_grad();
    score.backward();
    const auto grad = fmap.grad().detach();
    const auto act = fmap.detach();

    Heatmap h;
    h.untrained = grad.abs().max().item<double>() == 0.0;
    const auto weights = grad.mean({2, 3}, true);
    auto cam = torch::relu((weights * act).mean(1, true));
    cam = F::interpolate(cam, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{size, size})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
    const double lo = cam.min().item<double>();
    const double hi = cam.max().item<double>();
    h.values = Image(size, size, 0.0f);
    if (hi - lo <= 1e-12) {
        h.degenerate = true;
    } else {
        h.values = vae::tensor_to_image((cam - lo) / (hi - lo));
        for (auto& v : h.values.values()) v = std::clamp(v, 0.0f, 1.0f);
    }
    h.top = top_fraction_mask(h.values);
    model->zero_grad();
    return h;
}

Box bounding_box(const Mask& mask) {
    Box b{mask.height(), mask.width(), -1, -1};
    for (int r = 0; r < mask.height(); ++r) {
        for (int c = 0; c < mask.width(); ++c) {
            if (!mask(r, c)) continue;
            b.row0 = std::min(b.row0, r);
            b.col0 = std::min(b.col0, c);
            b.row1 = std::max(b.row1, r);
            b.col1 = std::max(b.col1, c);
        }
    }
    if (b.row1 < 0) return Box{};
    return b;
}

double mass_fraction(const Image& heatmap, const Box& box) {
    double total = 0.0, inside = 0.0;
    for (int r = 0; r < heatmap.height(); ++r) {
        for (int c = 0; c < heatmap.width(); ++c) {
            total += heatmap(r, c);
            if (box.contains(r, c)) inside += heatmap(r, c);
        }
    }
    return total > 0.0 ? inside / total : 0.0;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

KMeansResult lloyd(const std::vector<std::vector<double>>& points, int k, preprocess::Rng& rng, int max_iterations) {
    const size_t n = points.size();
    KMeansResult res;
    res.k = k;
    std::uniform_int_distribution<size_t> first(0, n - 1);
    res.centroids.push_back(points[first(rng)]);
    std::vector<double> d2(n);
    while (int(res.centroids.size()) < k) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : res.centroids) best = std::min(best, sq_dist(points[i], c));
            d2[i] = best;
            total += best;
        }
        size_t pick = first(rng);
        if (total > 0.0) {
            std::uniform_real_distribution<double> u(0.0, total);
            double t = u(rng);
            pick = n - 1;
            for (size_t i = 0; i < n; ++i) {
                t -= d2[i];
                if (t <= 0.0 && d2[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        }
        res.centroids.push_back(points[pick]);
    }

    res.assignment.assign(n, -1);
    const size_t dim = points.front().size();
    for (int it = 0; it < max_iterations; ++it) {
        bool changed = false;
        double inertia = 0.0;
        for (size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = sq_dist(points[i], res.centroids[size_t(c)]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (res.assignment[i] != best) changed = true;
            res.assignment[i] = best;
            inertia += best_d;
        }
        res.objective_history.push_back(inertia);
        res.inertia = inertia;
        if (!changed && it > 0) {
            res.converged = true;
            break;
        }
        std::vector<std::vector<double>> sums(size_t(k), std::vector<double>(dim, 0.0));
        std::vector<int> counts(size_t(k), 0);
        for (size_t i = 0; i < n; ++i) {
            auto& s = sums[size_t(res.assignment[i])];
            for (size_t d = 0; d < dim; ++d) s[d] += points[i][d];
            ++counts[size_t(res.assignment[i])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[size_t(c)] == 0) continue;  // empty cluster keeps its centroid
            for (size_t d = 0; d < dim; ++d) res.centroids[size_t(c)][d] = sums[size_t(c)][d] / counts[size_t(c)];
        }
    }
    return res;
}

Spread spread_of(const std::vector<double>& xs) {
    Spread s;
    if (xs.empty()) return s;
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    s.sd = std::sqrt(var / double(xs.size()));
    s.min = *std::min_element(xs.begin(), xs.end());
    s.max = *std::max_element(xs.begin(), xs.end());
    return s;
}

ClusterStats stats_of(const std::vector<size_t>& members, const std::vector<morphometry::NodeFeatures>& f) {
    std::vector<double> sa, la, ra, bi;
    for (size_t i : members) {
        sa.push_back(f[i].short_axis_mm);
        la.push_back(f[i].long_axis_mm);
        ra.push_back(f[i].axis_ratio);
        bi.push_back(f[i].bi_mean());
    }
    return {int(members.size()), spread_of(sa), spread_of(la), spread_of(ra), spread_of(bi)};
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed, int restarts,
                    int max_iterations) {
    if (k < 1) throw ConfigError("k-means: k must be >= 1");
    if (points.size() < size_t(k)) throw ConfigError("k-means: k exceeds the number of samples");
    if (restarts < 1) throw ConfigError("k-means: restarts must be >= 1");
    preprocess::Rng rng(seed);
    KMeansResult best;
    for (int r = 0; r < restarts; ++r) {
        auto res = lloyd(points, k, rng, max_iterations);
        if (r == 0 || res.inertia < best.inertia) best = std::move(res);
    }
    return best;
}

ClusterReport cluster_latents(const std::vector<std::vector<double>>& latents,
                              const std::vector<morphometry::NodeFeatures>& features, int k_min, int k_max,
                              std::uint64_t seed, int restarts) {
    if (latents.size() != features.size()) throw ValidationError("cluster_latents: latents and features differ in length");
    if (k_min < 1 || k_max < k_min) throw ConfigError("cluster_latents: invalid k range");
    if (size_t(k_max) > latents.size()) throw ConfigError("cluster_latents: k range exceeds the number of samples");

    std::vector<size_t> everyone(latents.size());
    std::iota(everyone.begin(), everyone.end(), 0);
    ClusterReport best;
    best.global = stats_of(everyone, features);
    best.degenerate = std::all_of(latents.begin(), latents.end(), [&](const auto& l) { return l == latents.front(); });
    if (best.degenerate) {
        best.k = 1;
        best.clusters.push_back(best.global);
        best.assignment.assign(latents.size(), 0);
        best.mean_sd_short = best.global.short_axis.sd;
        best.mean_sd_long = best.global.long_axis.sd;
        best.mean_sd_ratio = best.global.axis_ratio.sd;
        best.mean_sd_bi = best.global.bi.sd;
        best.k_scores.emplace_back(1, best.mean_sd_short);
        return best;
    }

    double best_score = std::numeric_limits<double>::infinity();
    std::vector<std::pair<int, double>> scores;
    for (int k = k_min; k <= k_max; ++k) {
        const auto km = kmeans(latents, k, derive_seed(seed, "kmeans/k" + std::to_string(k)), restarts);
        ClusterReport rep;
        rep.k = k;
        rep.global = best.global;
        rep.assignment = km.assignment;
        std::vector<std::vector<size_t>> members(static_cast<size_t>(k));
        for (size_t i = 0; i < km.assignment.size(); ++i) members[size_t(km.assignment[i])].push_back(i);
        for (const auto& m : members) {
            if (int(m.size()) < kMinClusterSize) {
                rep.excluded += m.empty() ? 0 : 1;
                continue;
            }
            rep.clusters.push_back(stats_of(m, features));
        }
        double score = std::numeric_limits<double>::infinity();
        if (!rep.clusters.empty()) {
            const double n = double(rep.clusters.size());
            double s = 0, l = 0, r = 0, b = 0;
            for (const auto& c : rep.clusters) {
                s += c.short_axis.sd;
                l += c.long_axis.sd;
                r += c.axis_ratio.sd;
                b += c.bi.sd;
            }
            rep.mean_sd_short = s / n;
            rep.mean_sd_long = l / n;
            rep.mean_sd_ratio = r / n;
            rep.mean_sd_bi = b / n;
            score = rep.mean_sd_short;
        }
        scores.emplace_back(k, score);
        if (score < best_score) {
            best_score = score;
            best = std::move(rep);
        }
    }
    best.k_scores = scores;
    return best;
}

void write_cluster_report(std::ostream& out, const ClusterReport& r) {
    out << "row,size,short_sd,short_range,long_sd,long_range,ratio_sd,ratio_range,bi_sd,bi_range\n"
        << std::setprecision(6);
    auto line = [&](const std::string& name, const ClusterStats& c) {
        out << name << ',' << c.size << ',' << c.short_axis.sd << ',' << c.short_axis.range() << ','
            << c.long_axis.sd << ',' << c.long_axis.range() << ',' << c.axis_ratio.sd << ','
            << c.axis_ratio.range() << ',' << c.bi.sd << ',' << c.bi.range() << '\n';
    };
    line("global", r.global);
    out << "mean_intra_cluster," << r.clusters.size() << ',' << r.mean_sd_short << ",," << r.mean_sd_long << ",,"
        << r.mean_sd_ratio << ",," << r.mean_sd_bi << ",\n";
    for (size_t i = 0; i < r.clusters.size(); ++i) line("cluster" + std::to_string(i), r.clusters[i]);
    out << "# k=" << r.k << " excluded=" << r.excluded << " degenerate=" << int(r.degenerate) << '\n';
}

double percentile(std::vector<double> values, double p) {
    if (values.empty()) throw ValidationError("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(p, 0.0, 100.0) / 100.0 * double(values.size() - 1);
    const auto lo = size_t(std::floor(pos));
    const auto hi = std::min(values.size() - 1, lo + 1);
    return values[lo] + (pos - double(lo)) * (values[hi] - values[lo]);
}

GrowthDirection growth_direction(const std::vector<std::vector<double>>& latents, const std::vector<double>& short_axis_mm,
                                 double small_pct, double large_pct) {
    if (latents.size() != short_axis_mm.size() || latents.empty()) {
        throw ValidationError("growth_direction: latents and sizes must be nonempty and of equal length");
    }
    if (!(small_pct < large_pct)) throw ConfigError("growth_direction: small percentile must be below large percentile");
    GrowthDirection g;
    g.small_pct = small_pct;
    g.large_pct = large_pct;
    g.small_cutoff_mm = percentile(short_axis_mm, small_pct);
    g.large_cutoff_mm = percentile(short_axis_mm, large_pct);
    const size_t dim = latents.front().size();
    std::vector<double> small(dim, 0.0), large(dim, 0.0);
    for (size_t i = 0; i < latents.size(); ++i) {
        const bool is_small = short_axis_mm[i] <= g.small_cutoff_mm;
        const bool is_large = short_axis_mm[i] >= g.large_cutoff_mm;
        if (is_small && is_large) throw ConfigError("growth_direction: small and large groups overlap");
        if (is_small) {
            ++g.n_small;
            for (size_t d = 0; d < dim; ++d) small[d] += latents[i][d];
        }
        if (is_large) {
            ++g.n_large;
            for (size_t d = 0; d < dim; ++d) large[d] += latents[i][d];
        }
    }
    if (g.n_small == 0 || g.n_large == 0) throw ConfigError("growth_direction: empty size group");
    g.direction.resize(dim);
    double norm = 0.0;
    for (size_t d = 0; d < dim; ++d) {
        g.direction[d] = large[d] / g.n_large - small[d] / g.n_small;
        norm += g.direction[d] * g.direction[d];
    }
    norm = std::sqrt(norm);
    g.unit = g.direction;
    if (norm > 0.0) {
        for (auto& v : g.unit) v /= norm;
    }
    return g;
}

std::vector<Image> render_traversal(vae::VariationalAutoencoder& model, const std::vector<double>& mu,
                                    const std::vector<double>& direction, const std::vector<double>& multiples) {
    if (mu.size() != direction.size()) throw ValidationError("render_traversal: mu and direction differ in length");
    std::vector<Image> strip;
    for (double m : multiples) {
        std::vector<float> z(mu.size());
        for (size_t d = 0; d < mu.size(); ++d) z[d] = float(mu[d] + m * direction[d]);
        strip.push_back(vae::decode(model, z));
    }
    return strip;
}

int half_max_area(const Image& image) {
    const auto& v = image.values();
    if (v.empty()) return 0;
    const float half = 0.5f * *std::max_element(v.begin(), v.end());
    return int(std::count_if(v.begin(), v.end(), [&](float x) { return x > half; }));
}

bool nondecreasing(const std::vector<int>& values) {
    return std::is_sorted(values.begin(), values.end());
}

}  // namespace lnm::insight
