#pragma once

// Density-ratio estimates between a source sample (P) and a target sample
// (Q): a probabilistic-classifier ratio from penalized logistic regression,
// and a quotient of two Gaussian kernel density estimates.

#include "isodrl/core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace isodrl {

using PointMatrix = Eigen::MatrixXd; // one point per row

inline constexpr double probability_clamp = 1e-12;

struct LogisticRatioModel {
    Eigen::VectorXd coefficients;
    double intercept = 0.0;
    std::size_t n1 = 0; // source count
    std::size_t m1 = 0; // target count
    int iterations = 0;
    bool converged = false;
    std::vector<std::string> warnings;

    double linear_score(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
        return intercept + x.dot(coefficients);
    }
};

struct LogisticOptions {
    double l2 = 1e-6;
    int max_iter = 100;
    double gradient_tolerance = 1e-8;
};

namespace detail {

inline double sigmoid(double z) {
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

} // namespace detail

/// Penalized logistic regression separating target (label 1) from source
/// (label 0), fitted by damped Newton steps on the mean log-likelihood minus
/// (l2/2)|coefficients|^2. The intercept is not penalized.
inline LogisticRatioModel fit_logistic_ratio(const PointMatrix& source, const PointMatrix& target,
                                             const LogisticOptions& options = {}) {
    require(source.rows() > 0 && target.rows() > 0, "both samples must be nonempty");
    require(source.cols() == target.cols(), "source and target dimensions differ");
    require(options.l2 >= 0.0 && std::isfinite(options.l2), "l2 penalty must be finite and >= 0");
    require(options.max_iter >= 1, "max_iter must be positive");

    const Eigen::Index d = source.cols();
    const Eigen::Index n = source.rows() + target.rows();
    Eigen::MatrixXd design(n, d + 1);
    design.col(0).setOnes();
    design.block(0, 1, source.rows(), d) = source;
    design.block(source.rows(), 1, target.rows(), d) = target;
    Eigen::VectorXd label = Eigen::VectorXd::Zero(n);
    label.tail(target.rows()).setOnes();

    Eigen::VectorXd penalty = Eigen::VectorXd::Constant(d + 1, options.l2);
    penalty[0] = 0.0;

    auto objective = [&](const Eigen::VectorXd& theta) {
        const Eigen::VectorXd z = design * theta;
        double ll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) ll += label[i] * z[i] - detail::softplus(z[i]);
        return ll / static_cast<double>(n) - 0.5 * theta.dot(penalty.cwiseProduct(theta));
    };

    // Start the intercept at the log odds of the label split.
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
    theta[0] = std::log(static_cast<double>(target.rows()) / static_cast<double>(source.rows()));

    LogisticRatioModel model;
    model.n1 = static_cast<std::size_t>(source.rows());
    model.m1 = static_cast<std::size_t>(target.rows());

    double current = objective(theta);
    for (int it = 0; it < options.max_iter; ++it) {
        const Eigen::VectorXd z = design * theta;
        Eigen::VectorXd prob(n), curvature(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            prob[i] = detail::sigmoid(z[i]);
            curvature[i] = prob[i] * (1.0 - prob[i]);
        }
        const Eigen::VectorXd grad =
            design.transpose() * (label - prob) / static_cast<double>(n) - penalty.cwiseProduct(theta);
        model.iterations = it;
        if (grad.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
            model.converged = true;
            break;
        }
        Eigen::MatrixXd info = design.transpose() * curvature.asDiagonal() * design / static_cast<double>(n);
        info.diagonal() += penalty;
        info.diagonal().array() += 1e-12;
        const Eigen::VectorXd step = info.ldlt().solve(grad);

        double scale = 1.0;
        bool improved = false;
        for (int ls = 0; ls < 60; ++ls, scale *= 0.5) {
            const Eigen::VectorXd trial = theta + scale * step;
            const double value = objective(trial);
            if (std::isfinite(value) && value >= current - 1e-15 * std::abs(current)) {
                theta = trial;
                improved = value > current;
                current = value;
                break;
            }
        }
        if (!improved) {
            model.converged = grad.lpNorm<Eigen::Infinity>() <= 1e-6;
            break;
        }
    }

    model.intercept = theta[0];
    model.coefficients = theta.tail(d);
    if (!model.converged) model.warnings.push_back("logistic fit stopped before the gradient tolerance was met");
    if (options.l2 == 0.0 && model.coefficients.norm() > 1e6)
        model.warnings.push_back("classes look separable; ratio relies on probability clamping");
    return model;
}

/// p/(1 - p) * n1/m1 with p clamped to [1e-12, 1 - 1e-12].
inline double ratio_at(const LogisticRatioModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    const double p = std::clamp(detail::sigmoid(model.linear_score(x)), probability_clamp, 1.0 - probability_clamp);
    return p / (1.0 - p) * static_cast<double>(model.n1) / static_cast<double>(model.m1);
}

inline std::vector<double> ratios_at(const LogisticRatioModel& model, const PointMatrix& points) {
    std::vector<double> out(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) out[static_cast<std::size_t>(i)] = ratio_at(model, points.row(i));
    return out;
}

// ---------------------------------------------------------------------------
// Kernel density ratio

struct KdeRatioModel {
    double bandwidth = 0.125;
    PointMatrix source_points;
    PointMatrix target_points;
};

namespace detail {

/// log of the spherical Gaussian KDE of `sample` at x, optionally leaving out
/// one row of the sample.
inline double log_kde(const PointMatrix& sample, const Eigen::Ref<const Eigen::RowVectorXd>& x, double h,
                      Eigen::Index skip = -1) {
    const Eigen::Index m = sample.rows();
    const double d = static_cast<double>(sample.cols());
    const double inv = 1.0 / (2.0 * h * h);
    double top = -std::numeric_limits<double>::infinity();
    std::vector<double> expo;
    expo.reserve(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        if (i == skip) continue;
        const double e = -(sample.row(i) - x).squaredNorm() * inv;
        expo.push_back(e);
        top = std::max(top, e);
    }
    if (expo.empty()) return -std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (double e : expo) acc += std::exp(e - top);
    const double count = static_cast<double>(expo.size());
    return top + std::log(acc / count) - 0.5 * d * std::log(2.0 * std::numbers::pi * h * h);
}

inline double loo_log_likelihood(const PointMatrix& sample, double h) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < sample.rows(); ++i) acc += log_kde(sample, sample.row(i), h, i);
    return acc;
}

} // namespace detail

/// Log-spaced grid of `count` values from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, std::size_t count) {
    require(lo > 0.0 && hi >= lo && count >= 1, "log grid needs 0 < lo <= hi and count >= 1");
    std::vector<double> out(count);
    for (std::size_t k = 0; k < count; ++k) {
        const double f = count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(count - 1);
        out[k] = std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo)));
    }
    return out;
}

/// Bandwidth maximizing the summed leave-one-out log-likelihood of both
/// samples. Each sample needs at least two points.
inline double cross_validate_bandwidth(const PointMatrix& source, const PointMatrix& target,
                                       const std::vector<double>& grid = log_grid(0.01, 1.0, 20)) {
    require(source.rows() >= 2 && target.rows() >= 2, "cross-validation needs two points per sample");
    require(!grid.empty(), "bandwidth grid must be nonempty");
    double best = grid.front();
    double best_score = -std::numeric_limits<double>::infinity();
    for (double h : grid) {
        require(h > 0.0, "bandwidths must be positive");
        const double score = detail::loo_log_likelihood(source, h) + detail::loo_log_likelihood(target, h);
        if (score > best_score) {
            best_score = score;
            best = h;
        }
    }
    return best;
}

/// Two KDEs with a shared bandwidth; the ratio is target density over source
/// density. Without a bandwidth the cross-validated choice is used.
inline KdeRatioModel fit_kde_ratio(const PointMatrix& source, const PointMatrix& target,
                                   std::optional<double> bandwidth = std::nullopt) {
    require(source.rows() > 0 && target.rows() > 0, "both samples must be nonempty");
    require(source.cols() == target.cols(), "source and target dimensions differ");
    const double h = bandwidth ? *bandwidth : cross_validate_bandwidth(source, target);
    require(std::isfinite(h) && h > 0.0, "bandwidth must be positive");
    return {h, source, target};
}

inline double ratio_at(const KdeRatioModel& model, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
    const double log_q = detail::log_kde(model.target_points, x, model.bandwidth);
    const double log_p = detail::log_kde(model.source_points, x, model.bandwidth);
    return std::exp(log_q - log_p);
}

inline std::vector<double> ratios_at(const KdeRatioModel& model, const PointMatrix& points) {
    std::vector<double> out(static_cast<std::size_t>(points.rows()));
    for (Eigen::Index i = 0; i < points.rows(); ++i) out[static_cast<std::size_t>(i)] = ratio_at(model, points.row(i));
    return out;
}

/// Mean of w log w, with 0 log 0 = 0.
inline double kl_plugin(std::span<const double> weights) {
    require(!weights.empty(), "evaluation sample must be nonempty");
    double acc = 0.0;
    for (double w : weights) {
        require(w >= 0.0 && std::isfinite(w), "weights must be finite and nonnegative");
        if (w > 0.0) acc += w * std::log(w);
    }
    return acc / static_cast<double>(weights.size());
}

inline double kl_plugin(const KdeRatioModel& model, const PointMatrix& eval_sample) {
    return kl_plugin(ratios_at(model, eval_sample));
}

} // namespace isodrl
