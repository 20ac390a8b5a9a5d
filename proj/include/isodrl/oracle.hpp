#pragma once

// Independent maximizer of E[w R] - E[R] over a feasible weight set, used to
// cross-check the closed-form and dual solvers. It knows nothing about their
// structure: it runs a log-barrier interior-point method with equality-
// constrained Newton steps on the explicit constraint list
//
//   E[w] = 1,  lo <= w <= hi,  E[w log w] <= rho (KL sets),
//   w_i <= w_j for every comparable pair (when an order is given).
//
// Atoms in the same tie class of the order share one variable.

#include "isodrl/core.hpp"
#include "isodrl/drl.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

namespace isodrl {

struct OracleOptions {
    double gap_tolerance = 1e-11;
    double barrier_growth = 8.0;
    int max_newton_steps = 200;
};

namespace detail {

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

private:
    std::vector<std::size_t> parent_;
};

struct BarrierProblem {
    Eigen::VectorXd mass;      // per variable
    Eigen::VectorXd objective; // mass * mean risk per variable
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
    std::optional<double> rho; // KL budget
    std::vector<IndexPair> edges; // v_first <= v_second
};

inline double kl_term(double v) { return v > 0.0 ? v * std::log(v) : 0.0; }

/// Values of all inequality slacks; every entry must stay positive.
inline bool slacks(const BarrierProblem& p, const Eigen::VectorXd& v, std::vector<double>& out) {
    out.clear();
    const Eigen::Index k = v.size();
    for (Eigen::Index i = 0; i < k; ++i) {
        out.push_back(v[i] - p.lo);
        if (std::isfinite(p.hi)) out.push_back(p.hi - v[i]);
    }
    for (const auto& [i, j] : p.edges) out.push_back(v[static_cast<Eigen::Index>(j)] - v[static_cast<Eigen::Index>(i)]);
    if (p.rho) {
        double d = 0.0;
        for (Eigen::Index i = 0; i < k; ++i) d += p.mass[i] * kl_term(v[i]);
        out.push_back(*p.rho - d);
    }
    return std::all_of(out.begin(), out.end(), [](double s) { return s > 0.0 && std::isfinite(s); });
}

inline double barrier_value(const BarrierProblem& p, const Eigen::VectorXd& v, double t, std::vector<double>& buf) {
    if (!slacks(p, v, buf)) return -std::numeric_limits<double>::infinity();
    double phi = t * p.objective.dot(v);
    for (double s : buf) phi += std::log(s);
    return phi;
}

/// Maximizes t * c'v + sum log(slack) subject to mass'v = 1, from a strictly
/// feasible v, by damped Newton steps.
inline void center(const BarrierProblem& p, Eigen::VectorXd& v, double t, int max_steps) {
    const Eigen::Index k = v.size();
    if (k < 2) return;
    std::vector<double> buf;
    for (int step = 0; step < max_steps; ++step) {
        Eigen::VectorXd grad = t * p.objective;
        Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(k, k); // Hessian of -phi
        for (Eigen::Index i = 0; i < k; ++i) {
            const double s_lo = v[i] - p.lo;
            grad[i] += 1.0 / s_lo;
            hess(i, i) += 1.0 / (s_lo * s_lo);
            if (std::isfinite(p.hi)) {
                const double s_hi = p.hi - v[i];
                grad[i] -= 1.0 / s_hi;
                hess(i, i) += 1.0 / (s_hi * s_hi);
            }
        }
        for (const auto& [a, b] : p.edges) {
            const auto i = static_cast<Eigen::Index>(a);
            const auto j = static_cast<Eigen::Index>(b);
            const double s = v[j] - v[i];
            grad[j] += 1.0 / s;
            grad[i] -= 1.0 / s;
            const double h = 1.0 / (s * s);
            hess(i, i) += h;
            hess(j, j) += h;
            hess(i, j) -= h;
            hess(j, i) -= h;
        }
        if (p.rho) {
            double d = 0.0;
            Eigen::VectorXd dg(k);
            for (Eigen::Index i = 0; i < k; ++i) {
                d += p.mass[i] * kl_term(v[i]);
                dg[i] = -p.mass[i] * (std::log(v[i]) + 1.0);
            }
            const double g = *p.rho - d;
            grad += dg / g;
            hess += dg * dg.transpose() / (g * g);
            for (Eigen::Index i = 0; i < k; ++i) hess(i, i) += p.mass[i] / (v[i] * g);
        }

        // Eliminate the equality through a null-space basis pivoted on the
        // heaviest variable, then solve the reduced system with Jacobi scaling.
        Eigen::Index pivot = 0;
        p.mass.maxCoeff(&pivot);
        Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(k, k - 1);
        for (Eigen::Index c = 0, col = 0; c < k; ++c) {
            if (c == pivot) continue;
            basis(c, col) = 1.0;
            basis(pivot, col) = -p.mass[c] / p.mass[pivot];
            ++col;
        }
        Eigen::MatrixXd reduced = basis.transpose() * hess * basis;
        Eigen::VectorXd reduced_grad = basis.transpose() * grad;
        const Eigen::VectorXd scale = reduced.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
        reduced = scale.asDiagonal() * reduced * scale.asDiagonal();
        reduced_grad = scale.cwiseProduct(reduced_grad);
        const Eigen::VectorXd y = scale.cwiseProduct(reduced.ldlt().solve(reduced_grad));
        const Eigen::VectorXd dv = basis * y;

        const double decrement = dv.dot(hess * dv);
        if (!(decrement > 1e-20)) return;

        const double phi0 = barrier_value(p, v, t, buf);
        const double slope = grad.dot(dv);
        double s = 1.0;
        Eigen::VectorXd trial;
        for (int ls = 0; ls < 100; ++ls, s *= 0.5) {
            trial = v + s * dv;
            const double phi = barrier_value(p, trial, t, buf);
            if (phi >= phi0 + 0.25 * s * slope) break;
        }
        if (barrier_value(p, trial, t, buf) == -std::numeric_limits<double>::infinity()) return;
        // Re-impose the equality exactly to stop rounding drift.
        v = trial;
        v.array() += (1.0 - p.mass.dot(trial)) / p.mass.sum();
        if (!slacks(p, v, buf)) v = trial;
        if (0.5 * decrement < 1e-14) return;
    }
}

} // namespace detail

/// Maximum of E[w R] - E[R] over the set, optionally restricted to weights
/// isotonic in `order`. Throws `infeasible` when no strictly feasible start
/// exists.
inline double oracle_max(const EmpiricalDistribution& dist, std::span<const double> risk, const UncertaintySet& set,
                         const std::optional<OrderSpec>& order = std::nullopt, const OracleOptions& options = {}) {
    require_aligned(dist, risk.size(), "risk vector");
    const std::size_t n = risk.size();
    const double base = expectation(dist, risk);

    detail::BarrierProblem p;
    const auto& gamma = set.truncation();
    if (const auto* bnd = std::get_if<Bounds>(&set.variant())) {
        p.lo = bnd->a;
        p.hi = gamma ? std::min(bnd->b, *gamma) : bnd->b;
    } else {
        const auto& div = std::get<FDivergence>(set.variant());
        if (div.rho == 0.0) return 0.0;
        p.lo = 0.0;
        p.hi = gamma.value_or(std::numeric_limits<double>::infinity());
        p.rho = div.rho;
    }
    if (p.hi <= 1.0) return 0.0;

    // Tie classes: atoms joined by edges in both directions share a variable.
    std::vector<IndexPair> edges;
    if (order) {
        require_aligned(dist, order_size(*order), "order");
        edges = comparable_pairs(*order);
    }
    detail::UnionFind uf(n);
    {
        std::vector<IndexPair> sorted = edges;
        std::sort(sorted.begin(), sorted.end());
        for (const auto& [i, j] : edges)
            if (std::binary_search(sorted.begin(), sorted.end(), IndexPair{j, i})) uf.unite(i, j);
    }
    std::vector<long> var_of_root(n, -1);
    std::vector<std::size_t> var_of(n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = uf.find(i);
        if (var_of_root[r] < 0) var_of_root[r] = static_cast<long>(k++);
        var_of[i] = static_cast<std::size_t>(var_of_root[r]);
    }
    p.mass = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
    p.objective = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < n; ++i) {
        p.mass[static_cast<Eigen::Index>(var_of[i])] += dist.mass(i);
        p.objective[static_cast<Eigen::Index>(var_of[i])] += dist.mass(i) * risk[i];
    }
    for (const auto& [i, j] : edges)
        if (var_of[i] != var_of[j]) p.edges.push_back({var_of[i], var_of[j]});
    std::sort(p.edges.begin(), p.edges.end());
    p.edges.erase(std::unique(p.edges.begin(), p.edges.end()), p.edges.end());

    // Strictly feasible start: tilt the constant 1 along longest-path depth.
    std::vector<double> depth(k, 0.0);
    for (std::size_t pass = 0; pass < k; ++pass) {
        bool changed = false;
        for (const auto& [i, j] : p.edges) {
            if (depth[j] < depth[i] + 1.0) {
                depth[j] = depth[i] + 1.0;
                changed = true;
            }
        }
        if (!changed) break;
        if (pass + 1 == k) fail(ErrorKind::infeasible, "order graph has a cycle after tie collapse");
    }
    double mean_depth = 0.0;
    for (std::size_t v = 0; v < k; ++v) mean_depth += p.mass[static_cast<Eigen::Index>(v)] * depth[v];
    double spread = 0.0, var_depth = 0.0;
    for (std::size_t v = 0; v < k; ++v) {
        const double c = depth[v] - mean_depth;
        spread = std::max(spread, std::abs(c));
        var_depth += p.mass[static_cast<Eigen::Index>(v)] * c * c;
    }
    double eps = 0.0;
    if (spread > 0.0) {
        const double room = std::min(1.0 - p.lo, p.hi - 1.0);
        eps = 0.5 * room / spread;
        if (p.rho) eps = std::min(eps, 0.5 * std::sqrt(*p.rho / var_depth));
    }
    Eigen::VectorXd v(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) v[static_cast<Eigen::Index>(i)] = 1.0 + eps * (depth[i] - mean_depth);
    std::vector<double> buf;
    if (!detail::slacks(p, v, buf)) fail(ErrorKind::infeasible, "no strictly feasible starting point");

    const double inequality_count = static_cast<double>(buf.size());
    double t = 1.0;
    for (int outer = 0; outer < 200; ++outer) {
        detail::center(p, v, t, options.max_newton_steps);
        if (inequality_count / t < options.gap_tolerance) break;
        t *= options.barrier_growth;
    }
    return p.objective.dot(v) - base;
}

inline double oracle_max(const EmpiricalDistribution& dist, const RiskVector& risk, const UncertaintySet& set,
                         const std::optional<OrderSpec>& order = std::nullopt, const OracleOptions& options = {}) {
    return oracle_max(dist, risk.values(), set, order, options);
}

} // namespace isodrl
