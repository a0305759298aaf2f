#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "random.hpp"

namespace orbitloc {

struct KMeansResult {
    std::vector<int> assignments;
    Matrix<double> centroids; // C x dim
    int iterations = 0;
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

} // namespace detail

/// k-means with k-means++ seeding and Lloyd iterations. Stops when no
/// centroid moves more than `tol` or after `max_iter` rounds. Empty clusters
/// are reseeded from the point farthest from its centroid.
inline KMeansResult kmeans(const Matrix<double>& points, int clusters, std::uint64_t seed, int max_iter = 100,
                           double tol = 1e-6)
{
    const std::size_t n = points.rows, d = points.cols;
    if (clusters < 1 || static_cast<std::size_t>(clusters) > n)
        throw invalid_argument_error("kmeans: need 1 <= C <= number of points");
    const auto c = static_cast<std::size_t>(clusters);
    Rng gen(seed);

    KMeansResult res;
    res.centroids = Matrix<double>(c, d);
    std::vector<double> best(n, std::numeric_limits<double>::infinity());

    // k-means++: first centre uniform, then D^2 sampling.
    std::size_t first = uniform_index(gen, n);
    std::copy_n(points.row(first).begin(), d, res.centroids.row(0).begin());
    for (std::size_t k = 1; k < c; ++k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            best[i] = std::min(best[i], detail::sq_dist(points.row(i), res.centroids.row(k - 1)));
            total += best[i];
        }
        std::size_t pick = n - 1;
        if (total > 0) {
            double r = unit_uniform(gen) * total;
            for (std::size_t i = 0; i < n; ++i) {
                r -= best[i];
                if (r < 0) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = uniform_index(gen, n);
        }
        std::copy_n(points.row(pick).begin(), d, res.centroids.row(k).begin());
    }

    res.assignments.assign(n, -1);
    std::vector<double> dist(n);
    std::vector<std::size_t> counts(c);
    Matrix<double> sums(c, d);
    for (int it = 0; it < max_iter; ++it) {
        res.iterations = it + 1;
        for (std::size_t i = 0; i < n; ++i) {
            double bd = std::numeric_limits<double>::infinity();
            int bk = 0;
            for (std::size_t k = 0; k < c; ++k) {
                const double dd = detail::sq_dist(points.row(i), res.centroids.row(k));
                if (dd < bd) {
                    bd = dd;
                    bk = static_cast<int>(k);
                }
            }
            res.assignments[i] = bk;
            dist[i] = bd;
        }

        // Reseed empty clusters from the farthest points, one at a time.
        std::fill(counts.begin(), counts.end(), 0);
        for (const int a : res.assignments)
            ++counts[static_cast<std::size_t>(a)];
        for (std::size_t k = 0; k < c; ++k) {
            if (counts[k] > 0)
                continue;
            // Some cluster holds >= 2 points because C <= n.
            std::size_t far = n;
            for (std::size_t i = 0; i < n; ++i)
                if (counts[static_cast<std::size_t>(res.assignments[i])] > 1 && (far == n || dist[i] > dist[far]))
                    far = i;
            --counts[static_cast<std::size_t>(res.assignments[far])];
            res.assignments[far] = static_cast<int>(k);
            counts[k] = 1;
            dist[far] = 0;
        }

        std::fill(sums.data.begin(), sums.data.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            auto row = sums.row(static_cast<std::size_t>(res.assignments[i]));
            const auto p = points.row(i);
            for (std::size_t j = 0; j < d; ++j)
                row[j] += p[j];
        }
        double moved = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            auto cen = res.centroids.row(k);
            double m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double v = sums(k, j) / static_cast<double>(counts[k]);
                m2 += (v - cen[j]) * (v - cen[j]);
                cen[j] = v;
            }
            moved = std::max(moved, std::sqrt(m2));
        }
        if (moved < tol)
            break;
    }
    return res;
}

} // namespace orbitloc
