#pragma once

// Slow reference solvers used only by the tests. None of them calls into the
// library's own solvers.

#include "isodrl/core.hpp"
#include "isodrl/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <vector>

namespace isodrl::testing {

inline double weighted_mean(std::span<const double> m, std::span<const double> v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) acc += m[i] * v[i];
    return acc;
}

/// Weighted least-squares projection onto {x : x_i <= x_j for (i, j) in edges}
/// by Dykstra's cyclic projections onto the individual half-spaces.
inline std::vector<double> dykstra_projection(std::span<const double> y, std::span<const double> m,
                                              const std::vector<IndexPair>& edges, int max_sweeps = 200000,
                                              double tol = 1e-13) {
    std::vector<double> x(y.begin(), y.end());
    std::vector<std::pair<double, double>> inc(edges.size(), {0.0, 0.0});
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double change = 0.0;
        for (std::size_t e = 0; e < edges.size(); ++e) {
            const auto [i, j] = edges[e];
            const double zi = x[i] + inc[e].first;
            const double zj = x[j] + inc[e].second;
            double pi = zi, pj = zj;
            if (zi > zj) pi = pj = (m[i] * zi + m[j] * zj) / (m[i] + m[j]);
            inc[e] = {zi - pi, zj - pj};
            change = std::max({change, std::abs(pi - x[i]), std::abs(pj - x[j])});
            x[i] = pi;
            x[j] = pj;
        }
        if (change < tol) break;
    }
    return x;
}

/// Every edge (i, j) with x_i <= x_j for all isotonic x: the full comparability
/// relation, built directly from the order definition.
inline std::vector<IndexPair> all_order_pairs(const OrderSpec& order) {
    std::vector<IndexPair> out;
    if (const auto* s = std::get_if<ScoreOrder>(&order)) {
        for (std::size_t i = 0; i < s->scores.size(); ++i)
            for (std::size_t j = 0; j < s->scores.size(); ++j)
                if (i != j && s->scores[i] <= s->scores[j]) out.emplace_back(i, j);
    } else {
        const auto& pts = std::get<ComponentwiseOrder>(order).points;
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t j = 0; j < pts.size(); ++j) {
                if (i == j) continue;
                bool le = true;
                for (std::size_t k = 0; k < pts[i].size(); ++k) le = le && pts[i][k] <= pts[j][k];
                if (le) out.emplace_back(i, j);
            }
    }
    return out;
}

/// Maximum of E[w R] - E[R] over {a <= w <= b, E[w] = 1} by enumerating LP
/// vertices: all coordinates but one at a bound, the remaining one solved
/// from the mean constraint.
inline double vertex_lp_bounds(std::span<const double> m, std::span<const double> r, double a, double b) {
    const std::size_t n = r.size();
    const double base = weighted_mean(m, r);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t free = 0; free < n; ++free) {
        for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
            if (mask & (std::size_t{1} << free)) continue;
            std::vector<double> w(n);
            double used = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (i == free) continue;
                w[i] = (mask >> i) & 1 ? b : a;
                used += m[i] * w[i];
            }
            w[free] = (1.0 - used) / m[free];
            if (w[free] < a - 1e-12 || w[free] > b + 1e-12) continue;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += m[i] * w[i] * r[i];
            best = std::max(best, acc - base);
        }
    }
    return best;
}

/// The bounds LP restricted to weights nondecreasing in score. Every vertex of
/// that polytope is a step function: a on a prefix, b on a suffix and one
/// intermediate value in between, so enumerating the two cut points suffices.
inline double chain_iso_lp_bounds(std::span<const double> m, std::span<const double> r,
                                  std::span<const double> scores, double a, double b) {
    const std::size_t n = r.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
    const double base = weighted_mean(m, r);
    double best = -std::numeric_limits<double>::infinity();
    // Positions [0, p) get a, [p, q) get the middle value, [q, n) get b.
    for (std::size_t p = 0; p <= n; ++p) {
        for (std::size_t q = p; q <= n; ++q) {
            double low = 0.0, mid = 0.0, high = 0.0;
            for (std::size_t k = 0; k < n; ++k) (k < p ? low : k < q ? mid : high) += m[idx[k]];
            double c;
            if (mid > 0.0) {
                c = (1.0 - a * low - b * high) / mid;
                if (c < a - 1e-12 || c > b + 1e-12) continue;
            } else {
                if (std::abs(a * low + b * high - 1.0) > 1e-12) continue;
                c = 0.0;
            }
            // Ties in score must share a weight.
            bool ok = true;
            std::vector<double> w(n);
            for (std::size_t k = 0; k < n; ++k) w[idx[k]] = k < p ? a : k < q ? c : b;
            for (std::size_t k = 0; k + 1 < n; ++k)
                if (scores[idx[k]] == scores[idx[k + 1]] && w[idx[k]] != w[idx[k + 1]]) ok = false;
            if (!ok) continue;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += m[i] * w[i] * r[i];
            best = std::max(best, acc - base);
        }
    }
    return best;
}

/// KL-constrained maximum without a cap: the maximizer is an exponential tilt
/// w = exp(R / t) / E[exp(R / t)], and the divergence is decreasing in t, so
/// t is found by bisection on a log scale.
inline double kl_tilt_oracle(std::span<const double> m, std::span<const double> r, double rho) {
    const double base = weighted_mean(m, r);
    const double top = *std::max_element(r.begin(), r.end());
    auto tilt = [&](double t, std::vector<double>& w) {
        double z = 0.0;
        w.resize(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) z += m[i] * (w[i] = std::exp((r[i] - top) / t));
        double div = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) {
            w[i] /= z;
            if (w[i] > 0.0) div += m[i] * w[i] * std::log(w[i]);
        }
        return div;
    };
    std::vector<double> w;
    double lo = 1e-12, hi = 1e12;
    if (tilt(lo, w) <= rho) {
        // The divergence cannot reach rho: mass piles on the top level.
        tilt(lo, w);
    } else {
        for (int it = 0; it < 400; ++it) {
            const double mid = std::sqrt(lo * hi);
            (tilt(mid, w) > rho ? lo : hi) = mid;
        }
        tilt(hi, w);
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) acc += m[i] * w[i] * r[i];
    return acc - base;
}

/// Random probability masses bounded away from zero.
inline std::vector<double> random_masses(Philox& rng, std::size_t n) {
    std::vector<double> m(n);
    double total = 0.0;
    for (double& v : m) total += (v = 0.2 + rng.uniform());
    for (double& v : m) v /= total;
    return m;
}

/// Values drawn from a small lattice so that ties occur.
inline std::vector<double> random_values(Philox& rng, std::size_t n, bool lattice) {
    std::vector<double> v(n);
    for (double& x : v) x = lattice ? static_cast<double>(rng.below(4)) : rng.normal();
    return v;
}

inline OrderSpec random_order(Philox& rng, std::size_t n, bool componentwise) {
    if (!componentwise) {
        std::vector<double> s(n);
        for (double& x : s) x = static_cast<double>(rng.below(n + 1));
        return ScoreOrder{s};
    }
    std::vector<std::vector<double>> pts(n, std::vector<double>(2));
    for (auto& p : pts)
        for (double& x : p) x = static_cast<double>(rng.below(4));
    return ComponentwiseOrder{pts};
}

} // namespace isodrl::testing
