#pragma once

// Split conformal prediction around an OLS fit, its likelihood-ratio
// weighted variant, and calibration of the nominal level against the worst
// case excess miscoverage.

#include "isodrl/core.hpp"
#include "isodrl/data.hpp"
#include "isodrl/drl.hpp"
#include "isodrl/random.hpp"
#include "isodrl/robust_iso.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace isodrl {

struct LinearModel {
    Eigen::VectorXd coefficients;
    double intercept = 0.0;
    bool rank_deficient = false;

    double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return intercept + x.dot(coefficients); }
};

/// Least squares with intercept. Rank-deficient designs get the minimum-norm
/// solution and are flagged.
inline LinearModel fit_ols(const LabeledSet& data) {
    require(data.size() >= 1, "OLS needs data");
    const Eigen::Index n = data.X.rows();
    const Eigen::Index d = data.X.cols();
    Eigen::MatrixXd design(n, d + 1);
    design.col(0).setOnes();
    design.rightCols(d) = data.X;
    const Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
    const Eigen::VectorXd theta = cod.solve(data.y);
    return {theta.tail(d), theta[0], cod.rank() < d + 1};
}

/// A closed interval; `empty` marks the band that covers nothing.
struct Interval {
    double lower = 0.0;
    double upper = 0.0;
    bool empty = false;

    bool contains(double y) const { return !empty && lower <= y && y <= upper; }
    double width() const { return empty ? 0.0 : upper - lower; }
    bool infinite() const { return !empty && std::isinf(upper - lower); }
};

inline Interval symmetric_band(double center, double half_width) {
    if (half_width < 0.0) return {center, center, true};
    return {center - half_width, center + half_width, false};
}

struct ConformalCalibrator {
    LinearModel model;
    std::vector<double> calib_scores; // sorted ascending
    Eigen::MatrixXd calib_points;     // rows aligned with calib_scores

    /// The ceil((n+1)(1-a))-th smallest score; +inf when that rank exceeds n,
    /// negative (empty band) when it is zero, i.e. at a = 1.
    double half_width(double a) const {
        require(a >= 0.0 && a <= 1.0, "level must lie in [0, 1]");
        const double n = static_cast<double>(calib_scores.size());
        const double k = std::ceil((n + 1.0) * (1.0 - a) - 1e-9);
        if (k > n) return std::numeric_limits<double>::infinity();
        if (k <= 0.0) return -1.0;
        return calib_scores[static_cast<std::size_t>(k) - 1];
    }
};

namespace detail {

inline LabeledSet ordered_subset(const LabeledSet& data, std::span<const std::size_t> rows) {
    return data.subset(std::vector<std::size_t>(rows.begin(), rows.end()));
}

} // namespace detail

/// Fits OLS on a random half of `d2` and scores |y - fit| on the other half.
inline ConformalCalibrator fit_split_cp(const LabeledSet& d2, std::uint64_t seed) {
    const std::size_t n = d2.size();
    const std::size_t d = static_cast<std::size_t>(d2.dim());
    require(n >= d + 2, "split conformal needs at least d + 2 points");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Philox rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

    const std::size_t n_fit = n / 2;
    const LabeledSet fit_part = detail::ordered_subset(d2, std::span(perm).first(n_fit));
    const LabeledSet cal_part = detail::ordered_subset(d2, std::span(perm).subspan(n_fit));

    ConformalCalibrator cal;
    cal.model = fit_ols(fit_part);
    std::vector<double> scores(cal_part.size());
    for (std::size_t i = 0; i < cal_part.size(); ++i)
        scores[i] = std::abs(cal_part.y[static_cast<Eigen::Index>(i)] -
                             cal.model.predict(cal_part.X.row(static_cast<Eigen::Index>(i))));
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });
    cal.calib_scores.resize(scores.size());
    cal.calib_points.resize(static_cast<Eigen::Index>(scores.size()), d2.dim());
    for (std::size_t k = 0; k < order.size(); ++k) {
        cal.calib_scores[k] = scores[order[k]];
        cal.calib_points.row(static_cast<Eigen::Index>(k)) = cal_part.X.row(static_cast<Eigen::Index>(order[k]));
    }
    return cal;
}

inline Interval band_at(const ConformalCalibrator& cal, const Eigen::Ref<const Eigen::RowVectorXd>& x, double a) {
    return symmetric_band(cal.model.predict(x), cal.half_width(a));
}

/// Calibration weights evaluated once, reused across test points.
class WeightedCalibration {
public:
    WeightedCalibration(const ConformalCalibrator& cal, std::vector<double> calib_weights)
        : cal_(&cal), cumulative_(calib_weights.size()) {
        require(calib_weights.size() == cal.calib_scores.size(), "one weight per calibration score");
        double total = 0.0;
        for (std::size_t i = 0; i < calib_weights.size(); ++i) {
            require(calib_weights[i] >= 0.0 && std::isfinite(calib_weights[i]), "weights must be finite and >= 0");
            total += calib_weights[i];
            cumulative_[i] = total;
        }
    }

    /// Smallest score whose cumulative normalized weight reaches 1 - a, with
    /// the test point's weight placed at +infinity.
    double half_width(double a, double test_weight) const {
        require(a >= 0.0 && a <= 1.0, "level must lie in [0, 1]");
        require(test_weight >= 0.0 && std::isfinite(test_weight), "test weight must be finite and >= 0");
        const double total = (cumulative_.empty() ? 0.0 : cumulative_.back()) + test_weight;
        require(total > 0.0, "all conformal weights are zero");
        if (a >= 1.0) return -1.0;
        const double need = (1.0 - a) * total * (1.0 - 1e-12);
        const auto it = std::lower_bound(cumulative_.begin(), cumulative_.end(), need);
        if (it == cumulative_.end()) return std::numeric_limits<double>::infinity();
        return cal_->calib_scores[static_cast<std::size_t>(it - cumulative_.begin())];
    }

    Interval band(const Eigen::Ref<const Eigen::RowVectorXd>& x, double a, double test_weight) const {
        return symmetric_band(cal_->model.predict(x), half_width(a, test_weight));
    }

private:
    const ConformalCalibrator* cal_;
    std::vector<double> cumulative_;
};

using WeightFunction = std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&)>;

inline Interval band_weighted(const ConformalCalibrator& cal, const Eigen::Ref<const Eigen::RowVectorXd>& x, double a,
                              const WeightFunction& weight_fn) {
    std::vector<double> w(cal.calib_scores.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = weight_fn(cal.calib_points.row(static_cast<Eigen::Index>(i)));
    return WeightedCalibration(cal, std::move(w)).band(x, a, weight_fn(x));
}

/// r_i = 1 when y_i falls outside the level-a band at x_i.
inline std::vector<double> miscoverage_risks(const ConformalCalibrator& cal, const LabeledSet& d3, double a) {
    std::vector<double> r(d3.size());
    for (std::size_t i = 0; i < d3.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        r[i] = band_at(cal, d3.X.row(row), a).contains(d3.y[row]) ? 0.0 : 1.0;
    }
    return r;
}

enum class Method { cp, wcp_oracle, wcp, drl, iso_drl_w0, iso_drl_comp };

inline const char* to_string(Method m) {
    switch (m) {
    case Method::cp: return "CP";
    case Method::wcp_oracle: return "WCP-oracle";
    case Method::wcp: return "WCP";
    case Method::drl: return "DRL";
    case Method::iso_drl_w0: return "ISO-DRL-w0";
    case Method::iso_drl_comp: return "ISO-DRL-comp";
    }
    return "?";
}

struct CalibrationOutcome {
    Method method = Method::cp;
    double level_used = 0.0;
    std::optional<double> delta_hat;
};

/// Level max{0, alpha - delta} where delta is the worst-case excess of the
/// miscoverage indicators. With an order the risks are projected first and
/// the method is tagged by the order kind.
inline CalibrationOutcome calibrate_level(std::span<const double> risks, const UncertaintySet& set,
                                          const std::optional<OrderSpec>& order, double alpha,
                                          double gamma = default_gamma) {
    require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    require(!risks.empty(), "risk vector must be nonempty");
    const auto dist = EmpiricalDistribution::uniform(risks.size());
    CalibrationOutcome out;
    double delta;
    if (order) {
        delta = solve_iso(dist, risks, set, *order, gamma).delta_iso;
        out.method = std::holds_alternative<ScoreOrder>(*order) ? Method::iso_drl_w0 : Method::iso_drl_comp;
    } else {
        delta = solve_with_baseline(dist, risks, set.with_truncation(gamma), expectation(dist, risks)).delta;
        out.method = Method::drl;
    }
    out.delta_hat = delta;
    out.level_used = std::max(0.0, alpha - delta);
    return out;
}

struct MethodCoverage {
    double coverage = 0.0;
    /// Mean over finite-width bands only.
    double mean_width = 0.0;
    std::size_t infinite_width_count = 0;
};

inline MethodCoverage evaluate(std::span<const Interval> bands, const LabeledSet& test0) {
    require(test0.size() > 0, "evaluation set must be nonempty");
    require(bands.size() == test0.size(), "one band per evaluation point");
    MethodCoverage out;
    std::size_t covered = 0, finite = 0;
    double width_sum = 0.0;
    for (std::size_t i = 0; i < bands.size(); ++i) {
        covered += bands[i].contains(test0.y[static_cast<Eigen::Index>(i)]);
        if (bands[i].infinite()) {
            ++out.infinite_width_count;
        } else {
            width_sum += bands[i].width();
            ++finite;
        }
    }
    out.coverage = static_cast<double>(covered) / static_cast<double>(bands.size());
    out.mean_width = finite ? width_sum / static_cast<double>(finite) : std::numeric_limits<double>::infinity();
    return out;
}

} // namespace isodrl
