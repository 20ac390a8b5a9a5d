#pragma once

// Worst-case excess risk under an isotonic constraint on the density ratio.
//
// The constrained problem is solved by projecting the risk onto the isotonic
// cone and solving the unconstrained problem on the projection. The objective
// keeps the mean of the raw (unprojected) risk as its subtrahend.

#include "isodrl/core.hpp"
#include "isodrl/drl.hpp"
#include "isodrl/isotonic.hpp"
#include "isodrl/parallel.hpp"
#include "isodrl/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace isodrl {

inline constexpr double default_gamma = 50.0;

struct IsoExcessRiskReport {
    double delta_iso = 0.0;
    double delta_plain = 0.0;
    ProjectionResult projected_risk;
    /// Worst-case weights; constant on projection blocks, hence isotonic.
    ExcessRiskSolution solution;
    double gamma = default_gamma;
};

namespace detail {

inline IsoExcessRiskReport solve_projected(const EmpiricalDistribution& dist, std::span<const double> risk,
                                           const UncertaintySet& set, ProjectionResult projection,
                                           double gamma) {
    const UncertaintySet capped = set.with_truncation(gamma);
    const double raw_mean = expectation(dist, risk);

    IsoExcessRiskReport report;
    report.gamma = gamma;
    report.solution = solve_with_baseline(dist, projection.projected, capped, raw_mean);
    report.delta_iso = report.solution.delta;
    report.delta_plain = solve_with_baseline(dist, risk, capped, raw_mean).delta;
    // Projection preserves the mean, so only rounding can separate the two.
    if (capped.is_singleton()) report.solution.delta = report.delta_iso = report.delta_plain = 0.0;
    report.projected_risk = std::move(projection);
    return report;
}

} // namespace detail

/// Isotonic worst-case excess risk with weights capped at gamma.
inline IsoExcessRiskReport solve_iso(const EmpiricalDistribution& dist, std::span<const double> risk,
                                     const UncertaintySet& set, const OrderSpec& order,
                                     double gamma = default_gamma) {
    require_aligned(dist, risk.size(), "risk vector");
    require_aligned(dist, order_size(order), "order");
    require(gamma >= 1.0, "truncation gamma must be >= 1");
    return detail::solve_projected(dist, risk, set, project(dist, risk, order), gamma);
}

inline IsoExcessRiskReport solve_iso(const EmpiricalDistribution& dist, const RiskVector& risk,
                                     const UncertaintySet& set, const OrderSpec& order,
                                     double gamma = default_gamma) {
    return solve_iso(dist, risk.values(), set, order, gamma);
}

/// Isotonic worst case when the order is induced by a pre-fitted ratio w0.
///
/// Risk is first averaged within each level set of w0 (the conditional mean
/// given w0), then projected along the one-dimensional chain of w0 levels
/// under the pushforward masses. The result must coincide exactly with the
/// direct projection under ScoreOrder(w0).
inline IsoExcessRiskReport solve_iso_recalibration(const EmpiricalDistribution& dist, std::span<const double> risk,
                                                   const UncertaintySet& set, std::span<const double> w0,
                                                   double gamma = default_gamma) {
    require_aligned(dist, risk.size(), "risk vector");
    require_aligned(dist, w0.size(), "w0 vector");
    require(gamma >= 1.0, "truncation gamma must be >= 1");
    for (double v : w0) require(std::isfinite(v) && v >= 0.0, "w0 values must be finite and nonnegative");

    const std::size_t n = risk.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return w0[i] < w0[j]; });

    std::vector<double> level_risk, level_mass;
    std::vector<std::size_t> level_of(n);
    for (std::size_t k = 0; k < n;) {
        std::size_t end = k;
        double weighted = 0.0, mass = 0.0;
        while (end < n && w0[idx[end]] == w0[idx[k]]) {
            weighted += dist.mass(idx[end]) * risk[idx[end]];
            mass += dist.mass(idx[end]);
            level_of[idx[end]] = level_risk.size();
            ++end;
        }
        level_risk.push_back(weighted / mass);
        level_mass.push_back(mass);
        k = end;
    }

    ProjectionResult projection;
    if (detail::all_equal(risk)) {
        projection.projected.assign(risk.begin(), risk.end());
    } else {
        const std::vector<double> level_fit = detail::pava_chain(level_risk, level_mass);
        projection.projected.resize(n);
        for (std::size_t i = 0; i < n; ++i) projection.projected[i] = level_fit[level_of[i]];
    }
    projection.sse = detail::weighted_sse(dist, risk, projection.projected);

    const ProjectionResult direct = project_pava(dist, risk, w0);
    for (std::size_t i = 0; i < n; ++i)
        if (direct.projected[i] != projection.projected[i])
            fail(ErrorKind::numeric_failure, "two-stage w0 projection disagrees with direct projection");

    return detail::solve_projected(dist, risk, set, std::move(projection), gamma);
}

/// E[(w - pi(w)) (R - pi(R))]: how far the true excess risk under a
/// non-isotonic ratio w can exceed the isotonic worst case.
inline double misspecification_gap(const EmpiricalDistribution& dist, std::span<const double> risk,
                                   std::span<const double> candidate_w, const OrderSpec& order) {
    require_aligned(dist, risk.size(), "risk vector");
    require_aligned(dist, candidate_w.size(), "candidate weights");
    const double mean_w = expectation(dist, candidate_w);
    require(std::abs(mean_w - 1.0) <= 1e-6, "candidate weights must have mean 1");

    const ProjectionResult pw = project(dist, candidate_w, order);
    const ProjectionResult pr = project(dist, risk, order);
    double acc = 0.0;
    for (std::size_t i = 0; i < risk.size(); ++i)
        acc += dist.mass(i) * (candidate_w[i] - pw.projected[i]) * (risk[i] - pr.projected[i]);
    return acc;
}

/// Leading-order largest KL radius whose isotonic excess risk stays within
/// epsilon: f''(1) epsilon^2 / (2 Var(pi(R))).
inline double shift_budget(double epsilon, double variance_projected) {
    require(epsilon > 0.0 && std::isfinite(epsilon), "epsilon must be positive");
    require(variance_projected > 0.0 && std::isfinite(variance_projected), "variance must be positive");
    return KlDivergence::second_derivative_at_one * epsilon * epsilon / (2.0 * variance_projected);
}

struct HardnessOutcome {
    double delta_plain_noisy = 0.0;
    double delta_iso_noisy = 0.0;
};

/// Constant true risk observed through Bernoulli noise. The plain bounds-set
/// estimate stays bounded away from zero while the isotonic estimate under an
/// uninformative random order shrinks with n.
inline HardnessOutcome hardness_demo(std::size_t n, double mean_risk, double a, double b, std::uint64_t seed,
                                     bool noisy = true) {
    require(n >= 1, "n must be positive");
    require(mean_risk > 0.0 && mean_risk < 1.0, "mean risk must lie in (0, 1)");
    require(a >= 0.0 && a < 1.0 && b > 1.0, "bounds require 0 <= a < 1 < b");

    Philox rng(seed);
    std::vector<double> scores(n), risk(n);
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = rng.uniform();
        risk[i] = noisy ? (rng.bernoulli(mean_risk) ? 1.0 : 0.0) : mean_risk;
    }
    const auto dist = EmpiricalDistribution::uniform(n);
    const auto set = UncertaintySet::bounds(a, b);
    const auto report = solve_iso(dist, risk, set, ScoreOrder{scores}, std::max(default_gamma, b));
    return {report.delta_plain, report.delta_iso};
}

/// Synthetic instance for rate experiments: X ~ U(0, 1), true risk R(X),
/// observed risk R(X) + N(0, noise_sd^2), order by X.
struct ProbeInstance {
    std::function<double(double)> risk = [](double x) { return x + 0.25 * std::sin(6.0 * 3.14159265358979323846 * x); };
    double noise_sd = 0.5;
    UncertaintySet set = UncertaintySet::kl(2.0);
    double gamma = default_gamma;
    std::size_t repetitions = 50;
    std::size_t reference_factor = 10;
    std::size_t threads = 1;
};

struct ProbeRow {
    std::size_t n = 0;
    double median_error = 0.0;
    double mean_error = 0.0;
};

struct ProbeTable {
    double reference = 0.0;
    std::size_t reference_n = 0;
    std::vector<ProbeRow> rows;
};

namespace detail {

inline double probe_estimate(const ProbeInstance& inst, std::size_t n, std::uint64_t seed, bool noisy) {
    Philox rng(seed);
    std::vector<double> x(n), r(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.uniform();
        r[i] = inst.risk(x[i]) + (noisy ? inst.noise_sd * rng.normal() : 0.0);
    }
    const auto dist = EmpiricalDistribution::uniform(n);
    return solve_iso(dist, r, inst.set, ScoreOrder{x}, inst.gamma).delta_iso;
}

/// Noiseless estimate on the midpoint design x_i = (i + 1/2) / n, whose
/// discretization error is O(1/n) rather than the O(n^{-1/2}) of a random draw.
inline double probe_reference(const ProbeInstance& inst, std::size_t n) {
    std::vector<double> x(n), r(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
        r[i] = inst.risk(x[i]);
    }
    return solve_iso(EmpiricalDistribution::uniform(n), r, inst.set, ScoreOrder{x}, inst.gamma).delta_iso;
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
        m = 0.5 * (m + lower);
    }
    return m;
}

} // namespace detail

/// Error of the noisy isotonic estimate against a noiseless reference computed
/// on a midpoint design ten times the largest n, for each n in the grid.
inline ProbeTable convergence_probe(const std::vector<std::size_t>& n_grid, const ProbeInstance& inst,
                                    std::uint64_t seed, bool noisy = true) {
    require(!n_grid.empty(), "n grid must be nonempty");
    for (std::size_t k = 0; k < n_grid.size(); ++k) {
        require(n_grid[k] >= 2, "grid sizes must be >= 2");
        if (k > 0) require(n_grid[k] > n_grid[k - 1], "n grid must be increasing");
    }
    require(inst.repetitions >= 1, "need at least one repetition");

    ProbeTable table;
    table.reference_n = inst.reference_factor * n_grid.back();
    table.reference = detail::probe_reference(inst, table.reference_n);

    for (std::size_t k = 0; k < n_grid.size(); ++k) {
        std::vector<double> errors(inst.repetitions);
        parallel_for(inst.repetitions, inst.threads, [&](std::size_t rep) {
            const std::uint64_t s = derive_seed(seed, 1 + k * 1000003ULL + rep);
            errors[rep] = std::abs(detail::probe_estimate(inst, n_grid[k], s, noisy) - table.reference);
        });
        ProbeRow row;
        row.n = n_grid[k];
        row.mean_error = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
        row.median_error = detail::median_of(errors);
        table.rows.push_back(row);
    }
    return table;
}

/// Least-squares slope of log(median error) against log(n).
inline double loglog_slope(const ProbeTable& table) {
    const std::size_t m = table.rows.size();
    require(m >= 2, "slope needs at least two grid points");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& row : table.rows) {
        const double x = std::log(static_cast<double>(row.n));
        const double y = std::log(std::max(row.median_error, 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double k = static_cast<double>(m);
    return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

} // namespace isodrl
