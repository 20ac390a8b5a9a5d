#pragma once

// Worst-case excess risk sup E[w R] - E[R] over density ratios with E[w] = 1,
// without any shape constraint. Bounds sets have a closed form; f-divergence
// balls are solved through their two-parameter dual by nested bisection.

#include "isodrl/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace isodrl {

/// f(x) = x log x. Its derivative inverse is exp(t - 1) and f''(1) = 1.
struct KlDivergence {
    static double value(double w) { return w > 0.0 ? w * std::log(w) : 0.0; }
    static double inverse_derivative(double t) { return std::exp(t - 1.0); }
    static constexpr double second_derivative_at_one = 1.0;
};

/// State of the two dual multipliers at a solution.
struct KLDualState {
    double lambda = 0.0;
    double nu = 0.0;
    double divergence_at_solution = 0.0;
};

template <class Divergence = KlDivergence>
double divergence_of(const EmpiricalDistribution& dist, std::span<const double> weights) {
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) acc += dist.mass(i) * Divergence::value(weights[i]);
    return acc;
}

namespace detail {

inline double excess(const EmpiricalDistribution& dist, std::span<const double> weights,
                     std::span<const double> values, double baseline) {
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += dist.mass(i) * weights[i] * values[i];
    return acc - baseline;
}

/// Closed-form maximizer over {E[w] = 1, a <= w <= b}. b may be +infinity, in
/// which case all mass goes to the top risk level.
inline ExcessRiskSolution bounds_closed_form(const EmpiricalDistribution& dist, std::span<const double> values,
                                             double a, double b, double baseline) {
    const std::size_t n = values.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return values[i] < values[j]; });

    const double threshold = std::isinf(b) ? 1.0 : (b - 1.0) / (b - a);

    // Walk the distinct risk levels; t* is the first CDF value reaching the
    // threshold and q* the level where it is reached.
    double cdf = 0.0;
    double t_star = 1.0;
    double q_star = values[idx[n - 1]];
    double p_at_q = 0.0;
    for (std::size_t k = 0; k < n;) {
        std::size_t end = k;
        double level_mass = 0.0;
        while (end < n && values[idx[end]] == values[idx[k]]) level_mass += dist.mass(idx[end++]);
        cdf += level_mass;
        if (cdf >= threshold - 1e-12 || end == n) {
            t_star = end == n ? 1.0 : cdf;
            q_star = values[idx[k]];
            p_at_q = level_mass;
            break;
        }
        k = end;
    }

    // (b - a) t* - (b - 1), arranged to stay accurate for very large b.
    const double surplus = std::isinf(b) ? 1.0 - a : 1.0 - a * t_star - b * (1.0 - t_star);
    double eta = a + surplus / p_at_q;
    eta = std::clamp(eta, a, b);

    ExcessRiskSolution sol;
    sol.weights.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (values[i] < q_star) sol.weights[i] = a;
        else if (values[i] > q_star) sol.weights[i] = b;
        else sol.weights[i] = eta;
    }
    sol.delta = excess(dist, sol.weights, values, baseline);
    sol.dual = BoundsDual{t_star, eta, q_star};
    return sol;
}

inline bool is_constant(std::span<const double> values) {
    return std::adjacent_find(values.begin(), values.end(), std::not_equal_to<>()) == values.end();
}

inline ExcessRiskSolution unit_weights(const EmpiricalDistribution& dist, std::span<const double> values,
                                       double baseline, double nu) {
    ExcessRiskSolution sol;
    sol.weights.assign(values.size(), 1.0);
    sol.delta = excess(dist, sol.weights, values, baseline);
    sol.dual = FDivDual{0.0, nu, 0.0, true};
    return sol;
}

template <class Divergence>
struct DualEvaluation {
    std::vector<double> weights;
    double nu = 0.0;
    double divergence = 0.0;
};

/// Solves E[min{(f')^{-1}((R - nu)/lambda), cap}_+] = 1 for nu at fixed lambda.
template <class Divergence>
DualEvaluation<Divergence> normalize_at(const EmpiricalDistribution& dist, std::span<const double> values,
                                        double lambda, double cap) {
    const std::size_t n = values.size();
    const auto [min_it, max_it] = std::minmax_element(values.begin(), values.end());
    const double r_min = *min_it;
    const double r_max = *max_it;

    std::vector<double> w(n);
    auto fill = [&](double nu) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double wi = Divergence::inverse_derivative((values[i] - nu) / lambda);
            wi = std::clamp(std::isnan(wi) ? cap : wi, 0.0, cap);
            w[i] = wi;
            total += dist.mass(i) * wi;
        }
        return total;
    };

    double span = lambda;
    double lo = r_min - span;
    double hi = r_max + span;
    for (int k = 0; fill(lo) < 1.0; ++k) {
        if (k > 200) fail(ErrorKind::numeric_failure, "cannot bracket normalization multiplier (low side)");
        span *= 2.0;
        lo = r_min - span;
    }
    span = lambda;
    for (int k = 0; fill(hi) > 1.0; ++k) {
        if (k > 200) fail(ErrorKind::numeric_failure, "cannot bracket normalization multiplier (high side)");
        span *= 2.0;
        hi = r_max + span;
    }
    for (int it = 0; it < 400; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (fill(mid) > 1.0) lo = mid;
        else hi = mid;
    }

    DualEvaluation<Divergence> out;
    out.nu = 0.5 * (lo + hi);
    fill(out.nu);

    // Rescale uncapped weights so the mean constraint holds to rounding.
    double capped = 0.0, free_mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (w[i] >= cap) capped += dist.mass(i) * w[i];
        else free_mass += dist.mass(i) * w[i];
    }
    if (free_mass > 0.0) {
        const double factor = (1.0 - capped) / free_mass;
        if (factor > 0.0)
            for (double& wi : w)
                if (wi < cap) wi = std::min(wi * factor, cap);
    }

    out.weights = std::move(w);
    out.divergence = divergence_of<Divergence>(dist, out.weights);
    return out;
}

} // namespace detail

/// Worst case over {E[w] = 1, a <= w <= b}: w* puts weight a below the
/// quantile q*, b above it and eta* on the level q* itself.
inline ExcessRiskSolution solve_bounds(const EmpiricalDistribution& dist, std::span<const double> risk,
                                       double a, double b) {
    require_aligned(dist, risk.size(), "risk vector");
    require(std::isfinite(a) && std::isfinite(b), "bounds must be finite");
    require(a >= 0.0 && a < 1.0, "lower bound must satisfy 0 <= a < 1");
    require(b > 1.0, "upper bound must satisfy b > 1");
    return detail::bounds_closed_form(dist, risk, a, b, expectation(dist, risk));
}

inline ExcessRiskSolution solve_bounds(const EmpiricalDistribution& dist, const RiskVector& risk,
                                       double a, double b) {
    return solve_bounds(dist, risk.values(), a, b);
}

/// Worst case over {E[w] = 1, E[f(w)] <= rho, 0 <= w <= gamma}.
///
/// The maximizer is w = min{(f')^{-1}((R - nu)/lambda), gamma}_+. The inner
/// bisection picks nu so that E[w] = 1; the outer bisection (in log lambda)
/// picks lambda so that the divergence equals rho. When even the lambda -> 0
/// limit (the bounds solution with a = 0, b = gamma) has divergence below rho,
/// the divergence constraint is slack and that limit is returned.
///
/// `baseline` is the subtrahend of the objective; pass E[R] for the plain
/// problem.
namespace detail {

/// Body of the f-divergence solver for risks already mapped onto [0, 2].
template <class Divergence>
ExcessRiskSolution solve_f_divergence_scaled(const EmpiricalDistribution& dist, std::span<const double> risk,
                                             double rho, std::optional<double> gamma, double baseline) {
    const double cap = gamma.value_or(std::numeric_limits<double>::infinity());

    // The optimal weight depends on an atom only through its risk, so solve
    // on the distinct risk levels and broadcast back. Levels closer than a
    // relative 1e-12 are merged; left apart they would force lambda below the
    // resolution of nu.
    {
        const auto [lo_it, hi_it] = std::minmax_element(risk.begin(), risk.end());
        const double merge_tol = 1e-12 * std::max({std::abs(*lo_it), std::abs(*hi_it), *hi_it - *lo_it});
        std::vector<std::size_t> idx(risk.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return risk[i] < risk[j]; });
        std::vector<double> level_sum, level_mass;
        std::vector<std::size_t> level_of(risk.size());
        double group_start = 0.0;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const std::size_t i = idx[k];
            if (k == 0 || risk[i] - group_start > merge_tol) {
                group_start = risk[i];
                level_sum.push_back(0.0);
                level_mass.push_back(0.0);
            }
            level_sum.back() += dist.mass(i) * risk[i];
            level_mass.back() += dist.mass(i);
            level_of[i] = level_sum.size() - 1;
        }
        if (level_sum.size() < risk.size()) {
            std::vector<double> levels(level_sum.size());
            for (std::size_t l = 0; l < levels.size(); ++l) levels[l] = level_sum[l] / level_mass[l];
            if (levels.size() == 1) return detail::unit_weights(dist, risk, baseline, levels[0]);
            const auto level_dist = EmpiricalDistribution::normalized(std::move(level_mass));
            ExcessRiskSolution sol = solve_f_divergence_scaled<Divergence>(level_dist, levels, rho, gamma, baseline);
            std::vector<double> weights(risk.size());
            for (std::size_t i = 0; i < risk.size(); ++i) weights[i] = sol.weights[level_of[i]];
            sol.weights = std::move(weights);
            sol.delta = detail::excess(dist, sol.weights, risk, baseline);
            return sol;
        }
    }

    ExcessRiskSolution limit = detail::bounds_closed_form(dist, risk, 0.0, cap, baseline);
    const double limit_divergence = divergence_of<Divergence>(dist, limit.weights);
    if (limit_divergence <= rho) {
        limit.dual = FDivDual{0.0, std::get<BoundsDual>(limit.dual).q_star, limit_divergence, true};
        return limit;
    }

    const auto [min_it, max_it] = std::minmax_element(risk.begin(), risk.end());
    const double range = *max_it - *min_it;

    auto eval = [&](double lambda) { return detail::normalize_at<Divergence>(dist, risk, lambda, cap); };

    double lambda_hi = range;
    auto at_hi = eval(lambda_hi);
    for (int k = 0; at_hi.divergence > rho; ++k) {
        if (k > 200) fail(ErrorKind::numeric_failure, "cannot bracket lambda from above");
        lambda_hi *= 2.0;
        at_hi = eval(lambda_hi);
    }
    double lambda_lo = 1e-8 * range;
    for (int k = 0; eval(lambda_lo).divergence <= rho; ++k) {
        if (k > 900) fail(ErrorKind::numeric_failure, "cannot bracket lambda from below");
        lambda_lo *= 0.5;
    }

    for (int it = 0; it < 300 && std::abs(at_hi.divergence - rho) > 1e-10; ++it) {
        const double mid = std::sqrt(lambda_lo * lambda_hi);
        if (mid <= lambda_lo || mid >= lambda_hi) break;
        auto at_mid = eval(mid);
        if (at_mid.divergence > rho) {
            lambda_lo = mid;
        } else {
            lambda_hi = mid;
            at_hi = std::move(at_mid);
        }
    }

    double mean_w = 0.0;
    for (std::size_t i = 0; i < risk.size(); ++i) mean_w += dist.mass(i) * at_hi.weights[i];
    if (std::abs(at_hi.divergence - rho) > 1e-8 || std::abs(mean_w - 1.0) > 1e-10)
        fail(ErrorKind::numeric_failure,
             "dual bisection did not converge: |D - rho| = " + std::to_string(std::abs(at_hi.divergence - rho)) +
                 ", |E[w] - 1| = " + std::to_string(std::abs(mean_w - 1.0)));

    ExcessRiskSolution sol;
    sol.delta = detail::excess(dist, at_hi.weights, risk, baseline);
    sol.weights = std::move(at_hi.weights);
    sol.dual = FDivDual{lambda_hi, at_hi.nu, at_hi.divergence, false};
    return sol;
}

} // namespace detail

template <class Divergence = KlDivergence>
ExcessRiskSolution solve_f_divergence(const EmpiricalDistribution& dist, std::span<const double> risk,
                                      double rho, std::optional<double> gamma, double baseline) {
    require_aligned(dist, risk.size(), "risk vector");
    require(std::isfinite(rho) && rho >= 0.0, "rho must be finite and >= 0");
    if (gamma) require(*gamma >= 1.0, "truncation gamma must be >= 1");
    for (double r : risk) require(std::isfinite(r), "risk values must be finite");

    if (rho == 0.0 || (gamma && *gamma == 1.0) || detail::is_constant(risk)) {
        auto sol = detail::unit_weights(dist, risk, baseline, risk.empty() ? 0.0 : risk[0]);
        if (rho == 0.0) std::get<FDivDual>(sol.dual).lambda_star = std::numeric_limits<double>::infinity();
        return sol;
    }

    // The problem is equivariant under R -> (R - lo) / s, so solve on [0, 2].
    // Halving before subtracting keeps s finite for any finite risks.
    const auto [lo_it, hi_it] = std::minmax_element(risk.begin(), risk.end());
    const double lo = *lo_it;
    const double s = 0.5 * *hi_it - 0.5 * lo;
    std::vector<double> z(risk.size());
    for (std::size_t i = 0; i < risk.size(); ++i) z[i] = risk[i] / s - lo / s;
    ExcessRiskSolution sol =
        detail::solve_f_divergence_scaled<Divergence>(dist, z, rho, gamma, baseline / s - lo / s);
    sol.delta *= s;
    if (auto* d = std::get_if<FDivDual>(&sol.dual)) {
        d->lambda_star *= s;
        d->nu_star = lo + s * d->nu_star;
    }
    return sol;
}

inline ExcessRiskSolution solve_kl(const EmpiricalDistribution& dist, std::span<const double> risk, double rho,
                                   std::optional<double> gamma = std::nullopt) {
    require_aligned(dist, risk.size(), "risk vector");
    return solve_f_divergence<KlDivergence>(dist, risk, rho, gamma, expectation(dist, risk));
}

inline ExcessRiskSolution solve_kl(const EmpiricalDistribution& dist, const RiskVector& risk, double rho,
                                   std::optional<double> gamma = std::nullopt) {
    return solve_kl(dist, risk.values(), rho, gamma);
}

inline KLDualState kl_dual_state(const ExcessRiskSolution& sol) {
    const auto& d = std::get<FDivDual>(sol.dual);
    return {d.lambda_star, d.nu_star, d.divergence};
}

/// Solves against `risk` but subtracts `baseline` instead of E[risk].
inline ExcessRiskSolution solve_with_baseline(const EmpiricalDistribution& dist, std::span<const double> risk,
                                              const UncertaintySet& set, double baseline) {
    require_aligned(dist, risk.size(), "risk vector");
    const auto& gamma = set.truncation();
    if (const auto* bnd = std::get_if<Bounds>(&set.variant())) {
        const double b = gamma ? std::min(bnd->b, *gamma) : bnd->b;
        if (b <= 1.0) return detail::unit_weights(dist, risk, baseline, 0.0);
        return detail::bounds_closed_form(dist, risk, bnd->a, b, baseline);
    }
    const auto& div = std::get<FDivergence>(set.variant());
    return solve_f_divergence<KlDivergence>(dist, risk, div.rho, gamma, baseline);
}

inline ExcessRiskSolution solve(const EmpiricalDistribution& dist, std::span<const double> risk,
                                const UncertaintySet& set) {
    require_aligned(dist, risk.size(), "risk vector");
    return solve_with_baseline(dist, risk, set, expectation(dist, risk));
}

/// True iff the weights are a nondecreasing function of risk. Weights inside a
/// tie class of equal risk are averaged before comparing.
inline bool monotone_rearrangement_check(const ExcessRiskSolution& solution, std::span<const double> risk,
                                         double tolerance = 1e-9) {
    const auto& w = solution.weights;
    require(w.size() == risk.size(), "weights and risk must be aligned");
    const std::size_t n = risk.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return risk[i] < risk[j]; });

    double previous = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n;) {
        std::size_t end = k;
        double sum = 0.0;
        while (end < n && risk[idx[end]] == risk[idx[k]]) sum += w[idx[end++]];
        const double avg = sum / static_cast<double>(end - k);
        if (avg < previous - tolerance * std::max(1.0, std::abs(previous))) return false;
        previous = avg;
        k = end;
    }
    return true;
}

inline bool monotone_rearrangement_check(const ExcessRiskSolution& solution, const RiskVector& risk,
                                         double tolerance = 1e-9) {
    return monotone_rearrangement_check(solution, risk.values(), tolerance);
}

} // namespace isodrl
