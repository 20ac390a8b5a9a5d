#pragma once

// Monte-Carlo drivers for the conformal covariate-shift experiments: each
// repetition partitions the data, fits a logistic ratio w0, builds split
// conformal bands, turns their miscoverage on D3 into a risk vector and
// compares plain, weighted and robustly calibrated bands on test0.

#include "isodrl/conformal.hpp"
#include "isodrl/core.hpp"
#include "isodrl/data.hpp"
#include "isodrl/drl.hpp"
#include "isodrl/isotonic.hpp"
#include "isodrl/parallel.hpp"
#include "isodrl/random.hpp"
#include "isodrl/ratio.hpp"
#include "isodrl/robust_iso.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

namespace isodrl {

enum class Scenario { synthetic, wine };

inline const char* to_string(Scenario s) { return s == Scenario::synthetic ? "synthetic" : "wine"; }

struct ExperimentConfig {
    Scenario scenario = Scenario::synthetic;
    double zeta = 0.0;
    std::size_t d = 5;
    std::optional<Eigen::VectorXd> beta;
    std::size_t N = 1000;
    std::size_t M = 500;
    std::vector<double> eta_grid{0.1, 0.2, 0.3, 0.4, 0.5};
    /// Fixed radius for eta sweeps; synthetic runs default to the analytic KL.
    std::optional<double> rho;
    std::vector<double> rho_grid;
    double alpha = 0.1;
    double gamma = default_gamma;
    std::size_t repetitions = 100;
    std::uint64_t master_seed = 0;
    std::size_t threads = 1;
    bool componentwise = false;
    LogisticOptions logistic;
    std::string white_csv;
    std::string red_csv;

    SyntheticConfig synthetic() const {
        SyntheticConfig s;
        s.d = d;
        s.zeta = zeta;
        s.beta = beta;
        s.N = N;
        s.M = M;
        return s;
    }

    void validate() const {
        require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
        require(gamma >= 1.0, "gamma must be >= 1");
        require(repetitions >= 1, "repetitions must be >= 1");
        require(threads >= 1, "threads must be >= 1");
        for (double e : eta_grid) require(e > 0.0 && e < 1.0, "eta values must lie in (0, 1)");
        for (double r : rho_grid) require(r >= 0.0 && std::isfinite(r), "rho values must be finite and >= 0");
        if (scenario == Scenario::synthetic) synthetic().validate();
    }
};

struct ResultRow {
    Scenario scenario = Scenario::synthetic;
    Method method = Method::cp;
    double eta = 0.0;
    double rho = std::numeric_limits<double>::quiet_NaN();
    std::size_t repetition = 0;
    double coverage = 0.0;
    double mean_width = 0.0;
    std::size_t infinite_width_count = 0;
    double delta_hat = std::numeric_limits<double>::quiet_NaN();
    double level_used = 0.0;
    /// Plug-in KL estimate from the fitted w0 on D3.
    double rho_star_estimate = std::numeric_limits<double>::quiet_NaN();
};

/// KL(N(mu, Sigma) || N(0, I)) = (tr Sigma + mu'mu - d - log det Sigma) / 2.
inline double analytic_gaussian_kl(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
    require(sigma.rows() == sigma.cols() && sigma.rows() == mu.size(), "dimension mismatch");
    require(sigma.isApprox(sigma.transpose(), 1e-12), "covariance must be symmetric");
    const Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    require(llt.info() == Eigen::Success, "covariance must be positive definite");
    const Eigen::MatrixXd L = llt.matrixL();
    const double log_det = 2.0 * L.diagonal().array().log().sum();
    return 0.5 * (sigma.trace() + mu.squaredNorm() - static_cast<double>(mu.size()) - log_det);
}

namespace detail {

struct RepetitionPlan {
    Scenario scenario;
    double eta;
    std::vector<double> rhos;
    double alpha;
    double gamma;
    bool componentwise;
    const std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&)>* oracle_ratio;
    LogisticOptions logistic;
};

inline void push_band_rows(std::vector<ResultRow>& rows, const ResultRow& base, const MethodCoverage& cov) {
    ResultRow row = base;
    row.coverage = cov.coverage;
    row.mean_width = cov.mean_width;
    row.infinite_width_count = cov.infinite_width_count;
    rows.push_back(row);
}

inline std::vector<ResultRow> run_repetition(const TrainTest& data, const RepetitionPlan& plan,
                                             std::size_t repetition, std::uint64_t seed) {
    const PartitionedData part = partition(data.train, data.test, plan.eta, derive_seed(seed, 1));
    const LogisticRatioModel w0 = fit_logistic_ratio(part.d1.X, part.test1.X, plan.logistic);
    const ConformalCalibrator cal = fit_split_cp(part.d2, derive_seed(seed, 2));
    const std::vector<double> risks = miscoverage_risks(cal, part.d3, plan.alpha);
    const std::vector<double> w0_d3 = ratios_at(w0, part.d3.X);

    const LabeledSet& test0 = part.test0;
    const auto n0 = static_cast<Eigen::Index>(test0.size());
    std::vector<double> w0_test(test0.size());
    for (Eigen::Index i = 0; i < n0; ++i) w0_test[static_cast<std::size_t>(i)] = ratio_at(w0, test0.X.row(i));

    auto unweighted = [&](double level) {
        std::vector<Interval> bands(test0.size());
        for (Eigen::Index i = 0; i < n0; ++i) bands[static_cast<std::size_t>(i)] = band_at(cal, test0.X.row(i), level);
        return evaluate(bands, test0);
    };

    ResultRow base;
    base.scenario = plan.scenario;
    base.eta = plan.eta;
    base.repetition = repetition;
    base.rho_star_estimate = kl_plugin(w0_d3);
    base.level_used = plan.alpha;

    std::vector<ResultRow> rows;
    {
        ResultRow r = base;
        r.method = Method::cp;
        push_band_rows(rows, r, unweighted(plan.alpha));
    }
    {
        const WeightedCalibration weighted(cal, ratios_at(w0, cal.calib_points));
        std::vector<Interval> bands(test0.size());
        for (Eigen::Index i = 0; i < n0; ++i)
            bands[static_cast<std::size_t>(i)] =
                weighted.band(test0.X.row(i), plan.alpha, w0_test[static_cast<std::size_t>(i)]);
        ResultRow r = base;
        r.method = Method::wcp;
        push_band_rows(rows, r, evaluate(bands, test0));
    }
    if (plan.oracle_ratio) {
        const auto& ratio = *plan.oracle_ratio;
        std::vector<double> cw(cal.calib_scores.size());
        for (std::size_t i = 0; i < cw.size(); ++i) cw[i] = ratio(cal.calib_points.row(static_cast<Eigen::Index>(i)));
        const WeightedCalibration weighted(cal, std::move(cw));
        std::vector<Interval> bands(test0.size());
        for (Eigen::Index i = 0; i < n0; ++i)
            bands[static_cast<std::size_t>(i)] = weighted.band(test0.X.row(i), plan.alpha, ratio(test0.X.row(i)));
        ResultRow r = base;
        r.method = Method::wcp_oracle;
        push_band_rows(rows, r, evaluate(bands, test0));
    }

    // Projections do not depend on rho, so they are computed once.
    const auto dist = EmpiricalDistribution::uniform(risks.size());
    const double raw_mean = expectation(dist, risks);
    std::vector<std::pair<Method, ProjectionResult>> projections;
    projections.emplace_back(Method::iso_drl_w0, project_pava(dist, risks, w0_d3));
    if (plan.componentwise) {
        std::vector<std::vector<double>> points(part.d3.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            points[i].resize(static_cast<std::size_t>(part.d3.dim()));
            for (Eigen::Index k = 0; k < part.d3.dim(); ++k)
                points[i][static_cast<std::size_t>(k)] = part.d3.X(static_cast<Eigen::Index>(i), k);
        }
        projections.emplace_back(Method::iso_drl_comp,
                                 project(dist, risks, OrderSpec{ComponentwiseOrder{std::move(points)}}));
    }

    for (double rho : plan.rhos) {
        const UncertaintySet set = UncertaintySet::kl(rho, plan.gamma);
        auto calibrated = [&](Method method, std::span<const double> solved_on) {
            // Projected risks keep the raw mean; at rho = 0 only rounding would differ.
            const double delta = set.is_singleton() ? 0.0 : solve_with_baseline(dist, solved_on, set, raw_mean).delta;
            ResultRow r = base;
            r.method = method;
            r.rho = rho;
            r.delta_hat = delta;
            r.level_used = std::max(0.0, plan.alpha - delta);
            push_band_rows(rows, r, unweighted(r.level_used));
        };
        calibrated(Method::drl, risks);
        for (const auto& [method, proj] : projections) calibrated(method, proj.projected);
    }
    return rows;
}

inline std::vector<ResultRow> run_plan_grid(const ExperimentConfig& cfg, const std::vector<double>& etas,
                                            const std::vector<double>& rhos) {
    cfg.validate();
    require(!etas.empty(), "eta grid must be nonempty");
    require(!rhos.empty(), "rho grid must be nonempty");

    std::optional<TrainTest> wine;
    std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&)> oracle;
    if (cfg.scenario == Scenario::wine) {
        if (cfg.white_csv.empty() || cfg.red_csv.empty())
            fail(ErrorKind::io_error, "wine data paths are not set; run tools/fetch_wine.sh first");
        wine = load_wine(cfg.white_csv, cfg.red_csv);
    } else {
        oracle = GaussianShiftRatio(cfg.synthetic());
    }

    std::vector<std::vector<ResultRow>> per_rep(cfg.repetitions);
    parallel_for(cfg.repetitions, cfg.threads, [&](std::size_t rep) {
        const std::uint64_t rep_seed = derive_seed(cfg.master_seed, rep);
        const TrainTest data = wine ? *wine : generate_synthetic(cfg.synthetic(), derive_seed(rep_seed, 0));
        for (std::size_t e = 0; e < etas.size(); ++e) {
            RepetitionPlan plan{cfg.scenario, etas[e], rhos, cfg.alpha, cfg.gamma, cfg.componentwise,
                                oracle ? &oracle : nullptr, cfg.logistic};
            try {
                auto rows = run_repetition(data, plan, rep, derive_seed(rep_seed, 100 + e));
                per_rep[rep].insert(per_rep[rep].end(), rows.begin(), rows.end());
            } catch (const Error& err) {
                fail(err.kind(), std::string(err.what()) + " (eta = " + std::to_string(etas[e]) +
                                     ", repetition = " + std::to_string(rep) + ")");
            }
        }
    });
    std::vector<ResultRow> out;
    for (auto& rows : per_rep) out.insert(out.end(), rows.begin(), rows.end());
    return out;
}

} // namespace detail

/// Analytic KL between the synthetic target and source laws.
inline double synthetic_rho_star(const ExperimentConfig& cfg) {
    const SyntheticConfig s = cfg.synthetic();
    return analytic_gaussian_kl(s.mean(), s.target_covariance());
}

/// Sweeps the split ratio at a fixed radius (analytic KL by default).
inline std::vector<ResultRow> run_varying_eta(const ExperimentConfig& cfg) {
    double rho;
    if (cfg.rho) rho = *cfg.rho;
    else if (cfg.scenario == Scenario::synthetic) rho = synthetic_rho_star(cfg);
    else fail(ErrorKind::invalid_argument, "the wine scenario needs an explicit rho for an eta sweep");
    return detail::run_plan_grid(cfg, cfg.eta_grid, {rho});
}

/// Sweeps the radius at the first eta of the grid.
inline std::vector<ResultRow> run_varying_rho(const ExperimentConfig& cfg) {
    require(!cfg.eta_grid.empty(), "eta grid must be nonempty");
    return detail::run_plan_grid(cfg, {cfg.eta_grid.front()}, cfg.rho_grid);
}

/// Uniform grid of `count` points from lo to hi inclusive.
inline std::vector<double> linear_grid(double lo, double hi, std::size_t count) {
    require(count >= 1 && hi >= lo, "linear grid needs count >= 1 and hi >= lo");
    std::vector<double> out(count);
    for (std::size_t k = 0; k < count; ++k)
        out[k] = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
    return out;
}

/// Wine run: eta = 0.02 and 100 radii in [0.005, 2] unless overridden.
inline std::vector<ResultRow> run_wine(ExperimentConfig cfg) {
    cfg.scenario = Scenario::wine;
    if (cfg.eta_grid.empty() || cfg.eta_grid == ExperimentConfig{}.eta_grid) cfg.eta_grid = {0.02};
    if (cfg.rho_grid.empty()) cfg.rho_grid = linear_grid(0.005, 2.0, 100);
    return run_varying_rho(cfg);
}

// ---------------------------------------------------------------------------
// Summaries and output

struct CellSummary {
    Method method;
    double eta;
    double rho;
    std::size_t count = 0;
    double median_coverage = 0.0;
    double median_width = 0.0;
    double median_level = 0.0;
};

inline double median(std::vector<double> v) {
    require(!v.empty(), "median of an empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t mid = v.size() / 2;
    if (v.size() % 2) return v[mid];
    if (std::isinf(v[mid]) && v[mid] == v[mid - 1]) return v[mid];
    return 0.5 * (v[mid - 1] + v[mid]);
}

/// Medians per (method, eta, rho) cell, in a stable sorted order.
inline std::vector<CellSummary> summarize(const std::vector<ResultRow>& rows) {
    using Key = std::tuple<int, double, double>;
    std::map<Key, std::vector<const ResultRow*>> cells;
    for (const auto& r : rows) cells[{static_cast<int>(r.method), r.eta, std::isnan(r.rho) ? -1.0 : r.rho}].push_back(&r);
    std::vector<CellSummary> out;
    for (const auto& [key, members] : cells) {
        std::vector<double> cov, width, level;
        for (const auto* r : members) {
            cov.push_back(r->coverage);
            width.push_back(r->mean_width);
            level.push_back(r->level_used);
        }
        CellSummary s;
        s.method = members.front()->method;
        s.eta = members.front()->eta;
        s.rho = members.front()->rho;
        s.count = members.size();
        s.median_coverage = median(cov);
        s.median_width = median(width);
        s.median_level = median(level);
        out.push_back(s);
    }
    return out;
}

inline const CellSummary* find_cell(const std::vector<CellSummary>& cells, Method method, double eta,
                                    std::optional<double> rho = std::nullopt) {
    for (const auto& c : cells)
        if (c.method == method && c.eta == eta && (!rho || c.rho == *rho)) return &c;
    return nullptr;
}

inline constexpr int result_schema_version = 1;

inline void write_results_csv(std::ostream& out, const std::vector<ResultRow>& rows) {
    out << "scenario,method,eta,rho,repetition,coverage,mean_width,infinite_width_count,delta_hat,level_used,"
           "rho_star_estimate\n";
    auto num = [](double v) { return std::isnan(v) ? std::string() : format_double(v); };
    for (const auto& r : rows) {
        out << to_string(r.scenario) << ',' << to_string(r.method) << ',' << num(r.eta) << ',' << num(r.rho) << ','
            << r.repetition << ',' << num(r.coverage) << ',' << num(r.mean_width) << ',' << r.infinite_width_count
            << ',' << num(r.delta_hat) << ',' << num(r.level_used) << ',' << num(r.rho_star_estimate) << '\n';
    }
}

// ---------------------------------------------------------------------------
// KDE divergence proxy

struct RhoHatConfig {
    double bandwidth = 0.125;
    double fraction = 0.5;
    std::size_t repetitions = 1000;
    /// Source points used in the plug-in average; 0 means all of the refit
    /// subsample.
    std::size_t eval_count = 0;
    std::uint64_t master_seed = 0;
    std::size_t threads = 1;
};

namespace detail {

inline Eigen::MatrixXd random_rows(const Eigen::MatrixXd& X, double fraction, Philox& rng) {
    const auto n = static_cast<std::size_t>(X.rows());
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    const std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * double(n))));
    Eigen::MatrixXd out(static_cast<Eigen::Index>(keep), X.cols());
    for (std::size_t k = 0; k < keep; ++k) out.row(static_cast<Eigen::Index>(k)) = X.row(static_cast<Eigen::Index>(idx[k]));
    return out;
}

} // namespace detail

/// Repeated refits of the KDE ratio on random subsamples of both groups; each
/// refit yields the plug-in mean of w log w over source points.
inline std::vector<double> rho_hat_distribution(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target,
                                                const RhoHatConfig& cfg) {
    require(cfg.fraction > 0.0 && cfg.fraction <= 1.0, "fraction must lie in (0, 1]");
    require(cfg.repetitions >= 1, "repetitions must be >= 1");
    std::vector<double> out(cfg.repetitions);
    parallel_for(cfg.repetitions, cfg.threads, [&](std::size_t rep) {
        Philox rng(derive_seed(cfg.master_seed, rep));
        const Eigen::MatrixXd src = detail::random_rows(source, cfg.fraction, rng);
        const Eigen::MatrixXd tgt = detail::random_rows(target, cfg.fraction, rng);
        const KdeRatioModel model = fit_kde_ratio(src, tgt, cfg.bandwidth);
        const Eigen::Index k =
            cfg.eval_count == 0 ? src.rows() : std::min<Eigen::Index>(src.rows(), static_cast<Eigen::Index>(cfg.eval_count));
        out[rep] = kl_plugin(model, src.topRows(k));
    });
    return out;
}

} // namespace isodrl
