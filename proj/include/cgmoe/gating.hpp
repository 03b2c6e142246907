#pragma once

// Query-time gating: KNN interpolation of the trained gating vector over
// canonicalized error pairs, tapering to zero for large uncertainties.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cgmoe/error.hpp"
#include "cgmoe/order_dag.hpp"

namespace cgmoe {

inline constexpr int default_knn_k = 5;

/// Sorted (larger, smaller) form; makes g(e_t, e_r) = g(e_r, e_t) exact.
inline ErrorPair canonical_error(const ErrorPair &e) { return {std::max(e[0], e[1]), std::min(e[0], e[1])}; }

struct GatingSolution
{
    std::vector<double> g;
    std::vector<ErrorPair> error_pairs;  // canonicalized
    int knn_k = default_knn_k;
    double r_max = 0.0;

    bool empty() const { return g.empty(); }
};

inline GatingSolution make_gating_solution(std::vector<double> g, const std::vector<ErrorPair> &errors,
        int knn_k = default_knn_k)
{
    require(g.size() == errors.size(), "dimension_mismatch", "gating values and error pairs differ in count");
    require(knn_k >= 1, "invalid_argument", "knn_k must be positive");
    GatingSolution sol;
    sol.g = std::move(g);
    sol.knn_k = knn_k;
    sol.error_pairs.reserve(errors.size());
    for (const auto &e : errors)
    {
        const ErrorPair c = canonical_error(e);
        sol.error_pairs.push_back(c);
        sol.r_max = std::max(sol.r_max, std::hypot(c[0], c[1]));
    }
    return sol;
}

/// Inverse-distance-weighted mean of the knn_k nearest gating values. The
/// output is scaled by a linear taper from 1 at |e| = r_max to 0 at 2 r_max.
inline double gating_interpolate(const GatingSolution &sol, const ErrorPair &e_query)
{
    require(!sol.empty(), "invalid_model", "gating solution is empty");
    const ErrorPair q = canonical_error(e_query);
    const double radius = std::hypot(q[0], q[1]);
    double taper = 1.0;
    if (radius > sol.r_max)
    {
        if (radius >= 2.0 * sol.r_max)
            return 0.0;
        taper = (2.0 * sol.r_max - radius) / sol.r_max;
    }

    const std::size_t n = sol.g.size();
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(sol.knn_k), n);
    std::vector<std::pair<double, std::size_t>> dist(n);
    for (std::size_t i = 0; i < n; i++)
        dist[i] = {std::hypot(sol.error_pairs[i][0] - q[0], sol.error_pairs[i][1] - q[1]), i};
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());

    double value;
    if (dist[0].first == 0.0)
    {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t j = 0; j < k && dist[j].first == 0.0; j++, count++)
            sum += sol.g[dist[j].second];
        value = sum / static_cast<double>(count);
    } else
    {
        double num = 0.0;
        double den = 0.0;
        for (std::size_t j = 0; j < k; j++)
        {
            const double w = 1.0 / dist[j].first;
            num += w * sol.g[dist[j].second];
            den += w;
        }
        value = num / den;
    }
    return std::clamp(taper * value, 0.0, 1.0);
}

} // namespace cgmoe
