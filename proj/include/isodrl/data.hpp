#pragma once

// Synthetic covariate-shift data, the wine-quality loader and the random
// partition used by the conformal experiments.

#include "isodrl/core.hpp"
#include "isodrl/csv.hpp"
#include "isodrl/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace isodrl {

struct LabeledSet {
    Eigen::MatrixXd X; // one row per point
    Eigen::VectorXd y;

    std::size_t size() const noexcept { return static_cast<std::size_t>(X.rows()); }
    Eigen::Index dim() const noexcept { return X.cols(); }

    LabeledSet subset(const std::vector<std::size_t>& rows) const {
        LabeledSet out{Eigen::MatrixXd(static_cast<Eigen::Index>(rows.size()), X.cols()),
                       Eigen::VectorXd(static_cast<Eigen::Index>(rows.size()))};
        for (std::size_t k = 0; k < rows.size(); ++k) {
            out.X.row(static_cast<Eigen::Index>(k)) = X.row(static_cast<Eigen::Index>(rows[k]));
            out.y[static_cast<Eigen::Index>(k)] = y[static_cast<Eigen::Index>(rows[k])];
        }
        return out;
    }
};

struct TrainTest {
    LabeledSet train;
    LabeledSet test;
};

// ---------------------------------------------------------------------------
// Synthetic model

/// Source X ~ N(0, I_d); target X ~ N(mu, I_d + zeta 1 1'); in both,
/// Y | X ~ N(X'beta + sin(X_1) + 0.2 X_3^2, 1).
struct SyntheticConfig {
    std::size_t d = 5;
    double zeta = 0.0;
    std::optional<Eigen::VectorXd> mu;   // default (2/sqrt d) 1
    std::optional<Eigen::VectorXd> beta; // default (1/sqrt d) 1
    std::size_t N = 1000;
    std::size_t M = 500;

    Eigen::VectorXd mean() const {
        return mu.value_or(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 2.0 / std::sqrt(double(d))));
    }
    Eigen::VectorXd coefficients() const {
        return beta.value_or(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d), 1.0 / std::sqrt(double(d))));
    }
    Eigen::MatrixXd target_covariance() const {
        const auto k = static_cast<Eigen::Index>(d);
        return Eigen::MatrixXd::Identity(k, k) + zeta * Eigen::MatrixXd::Ones(k, k);
    }

    void validate() const {
        require(d >= 1, "dimension must be positive");
        require(N >= 10 && M >= 10, "need N >= 10 and M >= 10");
        require(std::isfinite(zeta) && zeta > -1.0 / static_cast<double>(d),
                "zeta must exceed -1/d so the target covariance is positive definite");
        require(mean().size() == static_cast<Eigen::Index>(d), "mu has the wrong dimension");
        require(coefficients().size() == static_cast<Eigen::Index>(d), "beta has the wrong dimension");
    }
};

/// Conditional mean of Y given X shared by source and target.
inline double synthetic_regression(const Eigen::Ref<const Eigen::RowVectorXd>& x, const Eigen::VectorXd& beta) {
    double m = x.dot(beta.transpose()) + std::sin(x[0]);
    if (x.size() >= 3) m += 0.2 * x[2] * x[2];
    return m;
}

namespace detail {

inline LabeledSet draw_gaussian_labeled(std::size_t count, const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol,
                                        const Eigen::VectorXd& beta, std::uint64_t seed) {
    Philox rng(seed);
    const Eigen::Index d = mean.size();
    LabeledSet out{Eigen::MatrixXd(static_cast<Eigen::Index>(count), d),
                   Eigen::VectorXd(static_cast<Eigen::Index>(count))};
    Eigen::VectorXd z(d);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(count); ++i) {
        for (Eigen::Index k = 0; k < d; ++k) z[k] = rng.normal();
        out.X.row(i) = (mean + chol * z).transpose();
        out.y[i] = synthetic_regression(out.X.row(i), beta) + rng.normal();
    }
    return out;
}

} // namespace detail

inline TrainTest generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto k = static_cast<Eigen::Index>(cfg.d);
    const Eigen::VectorXd beta = cfg.coefficients();
    const Eigen::LLT<Eigen::MatrixXd> llt(cfg.target_covariance());
    require(llt.info() == Eigen::Success, "target covariance is not positive definite");
    const Eigen::MatrixXd target_chol = llt.matrixL();
    TrainTest out;
    out.train = detail::draw_gaussian_labeled(cfg.N, Eigen::VectorXd::Zero(k), Eigen::MatrixXd::Identity(k, k), beta,
                                              derive_seed(seed, 0));
    out.test = detail::draw_gaussian_labeled(cfg.M, cfg.mean(), target_chol, beta, derive_seed(seed, 1));
    return out;
}

/// dQ/dP at x for the synthetic model, where Q = N(mu, Sigma), P = N(0, I).
class GaussianShiftRatio {
public:
    explicit GaussianShiftRatio(const SyntheticConfig& cfg)
        : mu_(cfg.mean()), llt_(cfg.target_covariance()) {
        const Eigen::MatrixXd L = llt_.matrixL();
        log_det_ = 2.0 * L.diagonal().array().log().sum();
    }

    double log_ratio(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
        const Eigen::VectorXd centered = x.transpose() - mu_;
        const double quad_q = centered.dot(llt_.solve(centered));
        return -0.5 * quad_q - 0.5 * log_det_ + 0.5 * x.squaredNorm();
    }

    double operator()(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return std::exp(log_ratio(x)); }

private:
    Eigen::VectorXd mu_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    double log_det_ = 0.0;
};

// ---------------------------------------------------------------------------
// Partition

/// D1 fits the ratio together with test1 covariates, D2 fits the conformal
/// predictor, D3 supplies the risks, test0 measures coverage.
struct PartitionedData {
    LabeledSet d1, d2, d3, test0, test1;
    int attempts = 1;
    std::vector<std::string> warnings;
};

/// Train points go to D1 with probability eta, otherwise to D2 or D3 with
/// equal probability; test points go to test1 with probability eta. An empty
/// part triggers a fresh draw, at most ten in total.
inline PartitionedData partition(const LabeledSet& train, const LabeledSet& test, double eta, std::uint64_t seed) {
    require(eta > 0.0 && eta < 1.0, "eta must lie in (0, 1)");
    constexpr int max_attempts = 10;
    PartitionedData out;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        Philox rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
        std::vector<std::size_t> r1, r2, r3, t0, t1;
        for (std::size_t i = 0; i < train.size(); ++i) {
            if (rng.bernoulli(eta)) r1.push_back(i);
            else if (rng.bernoulli(0.5)) r2.push_back(i);
            else r3.push_back(i);
        }
        for (std::size_t i = 0; i < test.size(); ++i) (rng.bernoulli(eta) ? t1 : t0).push_back(i);

        if (r1.empty() || r2.empty() || r3.empty() || t0.empty() || t1.empty()) {
            out.warnings.push_back("partition attempt " + std::to_string(attempt + 1) +
                                   " left a part empty; redrawing");
            continue;
        }
        out.d1 = train.subset(r1);
        out.d2 = train.subset(r2);
        out.d3 = train.subset(r3);
        out.test0 = test.subset(t0);
        out.test1 = test.subset(t1);
        out.attempts = attempt + 1;
        return out;
    }
    fail(ErrorKind::invalid_argument, "partition left a part empty after 10 attempts (eta too extreme for the sample)");
}

// ---------------------------------------------------------------------------
// Wine quality

inline constexpr std::size_t wine_feature_count = 11;

/// Loads the white (training) and red (test) wine files: 11 physicochemical
/// features and the quality response. Every column is divided by its maximum
/// over both files together.
inline TrainTest load_wine(const std::string& white_csv, const std::string& red_csv,
                           std::optional<char> delimiter = std::nullopt) {
    const NumericTable white = read_numeric_csv(white_csv, delimiter);
    const NumericTable red = read_numeric_csv(red_csv, delimiter);
    for (const auto* t : {&white, &red})
        if (t->header.size() != wine_feature_count + 1)
            fail(ErrorKind::schema_error, "wine files need 12 columns (11 features + quality), found " +
                                              std::to_string(t->header.size()));
    if (white.header != red.header) fail(ErrorKind::schema_error, "white and red wine headers differ");
    if (white.rows.empty() || red.rows.empty()) fail(ErrorKind::io_error, "wine file has no data rows");

    std::vector<double> col_max(wine_feature_count + 1, 0.0);
    for (const auto* t : {&white, &red})
        for (const auto& row : t->rows)
            for (std::size_t k = 0; k < row.size(); ++k) col_max[k] = std::max(col_max[k], std::abs(row[k]));
    for (std::size_t k = 0; k < col_max.size(); ++k)
        if (col_max[k] == 0.0) fail(ErrorKind::schema_error, "column '" + white.header[k] + "' is identically zero");

    auto convert = [&](const NumericTable& t) {
        const auto n = static_cast<Eigen::Index>(t.rows.size());
        LabeledSet s{Eigen::MatrixXd(n, static_cast<Eigen::Index>(wine_feature_count)), Eigen::VectorXd(n)};
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& row = t.rows[static_cast<std::size_t>(i)];
            for (std::size_t k = 0; k < wine_feature_count; ++k)
                s.X(i, static_cast<Eigen::Index>(k)) = row[k] / col_max[k];
            s.y[i] = row[wine_feature_count] / col_max[wine_feature_count];
        }
        return s;
    };
    return {convert(white), convert(red)};
}

} // namespace isodrl
