#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "loadfed/dataio.hpp"
#include "loadfed/random.hpp"

namespace loadfed {

template <std::size_t Dim>
using Point = std::array<double, Dim>;

/// (mean_hh, median_hh, total, max_hh, min_hh)
using FeatureVector = Point<5>;

inline FeatureVector to_features(const HouseholdStats& s) {
    return {s.mean_hh, s.median_hh, s.total, s.max_hh, s.min_hh};
}

template <std::size_t Dim>
double squared_distance(const Point<Dim>& a, const Point<Dim>& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < Dim; ++i) {
        const double t = a[i] - b[i];
        d += t * t;
    }
    return d;
}

template <std::size_t Dim>
struct Standardization {
    std::vector<Point<Dim>> points;
    Point<Dim> mean{};
    Point<Dim> stddev{};
};

/// Z-scores each dimension using the population standard deviation. A
/// dimension with zero variance maps to 0.
template <std::size_t Dim>
Standardization<Dim> standardize(std::span<const Point<Dim>> points) {
    if (points.size() < 2) throw std::domain_error("standardize: need at least 2 households");
    const double n = static_cast<double>(points.size());
    Standardization<Dim> out;
    for (const auto& p : points)
        for (std::size_t d = 0; d < Dim; ++d) out.mean[d] += p[d];
    for (auto& m : out.mean) m /= n;
    for (const auto& p : points)
        for (std::size_t d = 0; d < Dim; ++d) out.stddev[d] += (p[d] - out.mean[d]) * (p[d] - out.mean[d]);
    for (auto& s : out.stddev) s = std::sqrt(s / n);

    out.points.reserve(points.size());
    for (const auto& p : points) {
        Point<Dim> z{};
        for (std::size_t d = 0; d < Dim; ++d) z[d] = out.stddev[d] > 0.0 ? (p[d] - out.mean[d]) / out.stddev[d] : 0.0;
        out.points.push_back(z);
    }
    return out;
}

template <std::size_t Dim>
struct ClusterAssignment {
    std::vector<std::size_t> labels;      // per point, in 0..k-1
    std::vector<Point<Dim>> centroids;
    std::vector<double> inertia_history;  // after each assignment step
    std::size_t iterations = 0;
    bool converged = false;

    std::size_t k() const { return centroids.size(); }
};

template <std::size_t Dim>
double inertia(std::span<const Point<Dim>> points, std::span<const std::size_t> labels,
               std::span<const Point<Dim>> centroids) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) total += squared_distance(points[i], centroids[labels[i]]);
    return total;
}

struct KMeansOptions {
    std::size_t k = 18;
    std::uint64_t seed = 0;
    std::size_t max_iters = 300;
};

namespace detail {

template <std::size_t Dim>
std::size_t nearest(const Point<Dim>& p, std::span<const Point<Dim>> centroids) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
        const double d = squared_distance(p, centroids[c]);
        if (d < best_d) {  // strict: ties go to the lower id
            best_d = d;
            best = c;
        }
    }
    return best;
}

template <std::size_t Dim>
std::vector<Point<Dim>> kmeans_plus_plus(std::span<const Point<Dim>> points, std::size_t k, Rng& rng) {
    const std::size_t n = points.size();
    std::vector<Point<Dim>> centers;
    std::vector<bool> chosen(n, false);
    std::size_t first = rng.below(n);
    centers.push_back(points[first]);
    chosen[first] = true;

    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points[i], centers[0]);
    while (centers.size() < k) {
        double total = 0.0;
        for (double d : d2) total += d;
        std::size_t pick = n;
        if (total > 0.0) {
            const double r = rng.uniform01() * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] <= 0.0) continue;
                acc += d2[i];
                pick = i;
                if (acc > r) break;
            }
        } else {
            // All remaining points coincide with a center; take the first unused one.
            for (std::size_t i = 0; i < n && pick == n; ++i)
                if (!chosen[i]) pick = i;
        }
        chosen[pick] = true;
        centers.push_back(points[pick]);
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(points[i], centers.back()));
    }
    return centers;
}

}  // namespace detail

/// Re-seeds every empty cluster at the point farthest from its own centroid,
/// taking only points whose cluster would stay non-empty. Returns the number of
/// repairs made (at most k).
template <std::size_t Dim>
std::size_t repair_empty_clusters(std::span<const Point<Dim>> points, ClusterAssignment<Dim>& a) {
    const std::size_t k = a.k();
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t l : a.labels) ++sizes[l];
    std::size_t repairs = 0;
    for (std::size_t c = 0; c < k; ++c) {
        if (sizes[c] != 0) continue;
        std::size_t far = points.size();
        double far_d = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            if (sizes[a.labels[i]] < 2) continue;
            const double d = squared_distance(points[i], a.centroids[a.labels[i]]);
            if (d > far_d) {
                far_d = d;
                far = i;
            }
        }
        if (far == points.size()) break;  // k > n; nothing to donate
        --sizes[a.labels[far]];
        a.labels[far] = c;
        a.centroids[c] = points[far];
        ++sizes[c];
        ++repairs;
    }
    return repairs;
}

/// Lloyd's algorithm with seeded k-means++ initialization. Stops when an
/// iteration leaves every label unchanged or after max_iters updates.
template <std::size_t Dim>
ClusterAssignment<Dim> kmeans(std::span<const Point<Dim>> points, const KMeansOptions& opt) {
    const std::size_t n = points.size();
    if (opt.k < 1) throw std::domain_error("kmeans: k must be >= 1");
    if (opt.k > n) throw std::domain_error("kmeans: k exceeds number of households");

    Rng rng(derive_seed(opt.seed, {0x6b6d65616e73ULL}));
    ClusterAssignment<Dim> a;
    a.centroids = detail::kmeans_plus_plus(points, opt.k, rng);

    auto assign = [&] {
        std::vector<std::size_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = detail::nearest<Dim>(points[i], a.centroids);
        return labels;
    };

    a.labels = assign();
    repair_empty_clusters(points, a);
    a.inertia_history.push_back(inertia<Dim>(points, a.labels, a.centroids));

    for (std::size_t it = 0; it < opt.max_iters; ++it) {
        // Update: member means, summed in point order.
        std::vector<Point<Dim>> sums(opt.k, Point<Dim>{});
        std::vector<std::size_t> counts(opt.k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t d = 0; d < Dim; ++d) sums[a.labels[i]][d] += points[i][d];
            ++counts[a.labels[i]];
        }
        for (std::size_t c = 0; c < opt.k; ++c)
            for (std::size_t d = 0; d < Dim; ++d) a.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);

        auto previous = a.labels;
        a.labels = assign();
        repair_empty_clusters(points, a);
        a.inertia_history.push_back(inertia<Dim>(points, a.labels, a.centroids));
        a.iterations = it + 1;
        if (a.labels == previous) {
            a.converged = true;
            break;
        }
    }
    return a;
}

}  // namespace loadfed
