#pragma once

// Shared data model: empirical distributions, risk vectors, uncertainty sets,
// order specifications and solver outputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace isodrl {

enum class ErrorKind {
    invalid_argument,
    numeric_failure,
    infeasible,
    unbounded_weight,
    io_error,
    schema_error,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::numeric_failure: return "numeric-failure";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::unbounded_weight: return "unbounded-weight";
    case ErrorKind::io_error: return "io-error";
    case ErrorKind::schema_error: return "schema-error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool condition, const std::string& what) {
    if (!condition) fail(ErrorKind::invalid_argument, what);
}

/// Weighted atoms of an empirical measure. Masses are strictly positive and
/// sum to one.
class EmpiricalDistribution {
public:
    static constexpr double normalization_tolerance = 1e-12;

    static EmpiricalDistribution uniform(std::size_t n) {
        require(n >= 1, "uniform distribution needs at least one atom");
        return EmpiricalDistribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
    }

    /// Takes masses that already sum to one.
    static EmpiricalDistribution from_masses(std::vector<double> masses) {
        validate_positive(masses);
        double total = 0.0;
        for (double m : masses) total += m;
        require(std::abs(total - 1.0) <= normalization_tolerance,
                "masses must sum to 1 (got " + std::to_string(total) + ")");
        return EmpiricalDistribution(std::move(masses));
    }

    /// Rescales arbitrary positive masses to sum to one.
    static EmpiricalDistribution normalized(std::vector<double> masses) {
        validate_positive(masses);
        double total = 0.0;
        for (double m : masses) total += m;
        for (double& m : masses) m /= total;
        return EmpiricalDistribution(std::move(masses));
    }

    std::size_t size() const noexcept { return masses_.size(); }
    std::span<const double> masses() const noexcept { return masses_; }
    double mass(std::size_t i) const { return masses_[i]; }

private:
    explicit EmpiricalDistribution(std::vector<double> masses) : masses_(std::move(masses)) {}

    static void validate_positive(const std::vector<double>& masses) {
        require(!masses.empty(), "distribution needs at least one atom");
        for (double m : masses)
            require(std::isfinite(m) && m > 0.0, "atom masses must be finite and strictly positive");
    }

    std::vector<double> masses_;
};

inline EmpiricalDistribution make_uniform_distribution(std::size_t n) {
    return EmpiricalDistribution::uniform(n);
}

/// Per-atom risk values with an optional known bound on |value|.
class RiskVector {
public:
    RiskVector() = default;

    explicit RiskVector(std::vector<double> values, std::optional<double> bound = std::nullopt)
        : values_(std::move(values)), bound_(bound) {
        for (double v : values_) require(std::isfinite(v), "risk values must be finite");
        if (bound_) {
            require(*bound_ >= 0.0, "risk bound must be nonnegative");
            for (double v : values_)
                require(std::abs(v) <= *bound_, "risk value exceeds declared bound");
        }
    }

    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    double operator[](std::size_t i) const { return values_[i]; }
    const std::optional<double>& bound() const noexcept { return bound_; }

private:
    std::vector<double> values_;
    std::optional<double> bound_;
};

inline void require_aligned(const EmpiricalDistribution& dist, std::size_t n, const char* what) {
    if (dist.size() != n)
        fail(ErrorKind::invalid_argument,
             std::string(what) + " has length " + std::to_string(n) + ", distribution has " +
                 std::to_string(dist.size()) + " atoms");
}

/// Sum of mass_i * value_i.
inline double expectation(const EmpiricalDistribution& dist, std::span<const double> values) {
    require_aligned(dist, values.size(), "value vector");
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) acc += dist.mass(i) * values[i];
    return acc;
}

inline double expectation(const EmpiricalDistribution& dist, const RiskVector& risk) {
    return expectation(dist, risk.values());
}

// ---------------------------------------------------------------------------
// Uncertainty sets

struct Bounds {
    double a = 0.0;
    double b = 2.0;
};

enum class DivergenceKind { kl };

struct FDivergence {
    DivergenceKind kind = DivergenceKind::kl;
    double rho = 0.0;
};

/// Either a likelihood-ratio band a <= w <= b or an f-divergence ball
/// E[f(w)] <= rho, both with E[w] = 1, plus an optional cap w <= gamma.
class UncertaintySet {
public:
    using Variant = std::variant<Bounds, FDivergence>;

    static UncertaintySet bounds(double a, double b, std::optional<double> gamma = std::nullopt) {
        return UncertaintySet(Bounds{a, b}, gamma);
    }

    static UncertaintySet kl(double rho, std::optional<double> gamma = std::nullopt) {
        return UncertaintySet(FDivergence{DivergenceKind::kl, rho}, gamma);
    }

    UncertaintySet(Variant variant, std::optional<double> gamma)
        : variant_(variant), gamma_(gamma) {
        if (const auto* bnd = std::get_if<Bounds>(&variant_)) {
            require(std::isfinite(bnd->a) && std::isfinite(bnd->b),
                    "bounds must be finite");
            require(bnd->a >= 0.0 && bnd->a < 1.0 && bnd->b > 1.0,
                    "bounds require 0 <= a < 1 < b");
        } else {
            const auto& div = std::get<FDivergence>(variant_);
            require(std::isfinite(div.rho) && div.rho >= 0.0, "rho must be finite and >= 0");
        }
        if (gamma_) require(*gamma_ >= 1.0, "truncation gamma must be >= 1");
    }

    const Variant& variant() const noexcept { return variant_; }
    const std::optional<double>& truncation() const noexcept { return gamma_; }
    bool is_bounds() const noexcept { return std::holds_alternative<Bounds>(variant_); }
    bool is_kl() const noexcept { return std::holds_alternative<FDivergence>(variant_); }

    /// True when w = 1 is the only admissible weight.
    bool is_singleton() const noexcept {
        if (gamma_ && *gamma_ == 1.0) return true;
        const auto* div = std::get_if<FDivergence>(&variant_);
        return div && div->rho == 0.0;
    }

    UncertaintySet with_truncation(std::optional<double> gamma) const {
        return UncertaintySet(variant_, gamma);
    }

private:
    Variant variant_;
    std::optional<double> gamma_;
};

// ---------------------------------------------------------------------------
// Orders

/// i precedes j iff scores[i] <= scores[j]. Equal scores are tied.
struct ScoreOrder {
    std::vector<double> scores;
};

/// i precedes j iff points[i][k] <= points[j][k] for every coordinate k.
struct ComponentwiseOrder {
    std::vector<std::vector<double>> points;
};

using OrderSpec = std::variant<ScoreOrder, ComponentwiseOrder>;

inline std::size_t order_size(const OrderSpec& order) {
    return std::visit([](const auto& o) -> std::size_t {
        if constexpr (std::is_same_v<std::decay_t<decltype(o)>, ScoreOrder>)
            return o.scores.size();
        else
            return o.points.size();
    }, order);
}

using IndexPair = std::pair<std::size_t, std::size_t>;

namespace detail {

inline bool dominates_weakly(const std::vector<double>& p, const std::vector<double>& q) {
    for (std::size_t k = 0; k < p.size(); ++k)
        if (p[k] > q[k]) return false;
    return true;
}

inline std::vector<IndexPair> score_pairs(const ScoreOrder& order) {
    const auto& s = order.scores;
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return s[i] < s[j]; });

    std::vector<IndexPair> edges;
    for (std::size_t k = 0; k + 1 < idx.size(); ++k) {
        const std::size_t i = idx[k];
        const std::size_t j = idx[k + 1];
        edges.emplace_back(i, j);
        if (s[i] == s[j]) edges.emplace_back(j, i);
    }
    return edges;
}

inline std::vector<IndexPair> componentwise_pairs(const ComponentwiseOrder& order) {
    const auto& pts = order.points;
    const std::size_t n = pts.size();
    if (n == 0) return {};
    const std::size_t d = pts.front().size();
    for (const auto& p : pts) require(p.size() == d, "componentwise order needs equal-dimension points");

    // Identical points are mutually comparable; collapse them first.
    std::vector<std::size_t> rep(n);
    std::vector<std::size_t> reps;
    for (std::size_t i = 0; i < n; ++i) {
        rep[i] = i;
        for (std::size_t r : reps) {
            if (pts[r] == pts[i]) {
                rep[i] = r;
                break;
            }
        }
        if (rep[i] == i) reps.push_back(i);
    }

    const std::size_t m = reps.size();
    std::vector<std::vector<char>> less(m, std::vector<char>(m, 0));
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t b = 0; b < m; ++b)
            if (a != b && dominates_weakly(pts[reps[a]], pts[reps[b]])) less[a][b] = 1;

    std::vector<IndexPair> edges;
    for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = 0; b < m; ++b) {
            if (!less[a][b]) continue;
            bool covered = false;
            for (std::size_t c = 0; c < m && !covered; ++c)
                covered = less[a][c] && less[c][b];
            if (!covered) edges.emplace_back(reps[a], reps[b]);
        }
    }

    // Chain each tie class in both directions.
    std::vector<std::size_t> last(n);
    for (std::size_t i = 0; i < n; ++i) last[i] = i;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = rep[i];
        if (r == i) continue;
        edges.emplace_back(last[r], i);
        edges.emplace_back(i, last[r]);
        last[r] = i;
    }
    std::sort(edges.begin(), edges.end());
    return edges;
}

} // namespace detail

/// Transitively reduced constraint graph of the order: a vector w is isotonic
/// iff w[i] <= w[j] for every returned (i, j). Ties appear as paired edges.
inline std::vector<IndexPair> comparable_pairs(const OrderSpec& order) {
    return std::visit([](const auto& o) {
        if constexpr (std::is_same_v<std::decay_t<decltype(o)>, ScoreOrder>)
            return detail::score_pairs(o);
        else
            return detail::componentwise_pairs(o);
    }, order);
}

inline bool is_isotonic(std::span<const double> w, const std::vector<IndexPair>& edges,
                        double tolerance = 1e-10) {
    for (const auto& [i, j] : edges)
        if (w[i] > w[j] + tolerance) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Solver outputs

struct BoundsDual {
    double t_star = 0.0;
    double eta_star = 0.0;
    double q_star = 0.0;
};

struct FDivDual {
    double lambda_star = 0.0;
    double nu_star = 0.0;
    double divergence = 0.0;
    /// True when the divergence constraint is slack and the cap alone binds.
    bool slack = false;
};

struct ExcessRiskSolution {
    double delta = 0.0;
    std::vector<double> weights;
    std::variant<std::monostate, BoundsDual, FDivDual> dual;
};

} // namespace isodrl
