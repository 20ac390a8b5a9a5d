#pragma once

// Least-squares projection onto the isotonic cone in L2 of an empirical
// measure. Total preorders (scores) use weighted pool-adjacent-violators;
// general partial orders use exact recursive partitioning, where each split
// is a maximum-weight closure computed by max-flow.

#include "isodrl/core.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace isodrl {

struct ProjectionResult {
    std::vector<double> projected;
    /// Weighted squared distance sum_i mass_i (value_i - projected_i)^2.
    double sse = 0.0;
};

namespace detail {

inline double weighted_sse(const EmpiricalDistribution& dist, std::span<const double> values,
                           std::span<const double> projected) {
    double acc = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double r = values[i] - projected[i];
        acc += dist.mass(i) * r * r;
    }
    return acc;
}

inline bool all_equal(std::span<const double> values) {
    return std::adjacent_find(values.begin(), values.end(), std::not_equal_to<>()) == values.end();
}

/// Weighted PAVA on a sequence already in chain order.
inline std::vector<double> pava_chain(std::span<const double> y, std::span<const double> w) {
    struct Block {
        double weighted_sum;
        double weight;
        std::size_t count;
        double mean() const { return weighted_sum / weight; }
    };
    std::vector<Block> stack;
    stack.reserve(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        stack.push_back({w[i] * y[i], w[i], 1});
        while (stack.size() > 1 &&
               stack[stack.size() - 2].mean() >= stack.back().mean()) {
            Block top = stack.back();
            stack.pop_back();
            stack.back().weighted_sum += top.weighted_sum;
            stack.back().weight += top.weight;
            stack.back().count += top.count;
        }
    }
    std::vector<double> out;
    out.reserve(y.size());
    for (const Block& b : stack) out.insert(out.end(), b.count, b.mean());
    return out;
}

/// Dinic max-flow on a small dense-ish graph with real capacities.
class MaxFlow {
public:
    explicit MaxFlow(std::size_t n) : adj_(n), level_(n), iter_(n) {}

    void add_edge(std::size_t from, std::size_t to, double cap) {
        adj_[from].push_back({to, adj_[to].size(), cap});
        adj_[to].push_back({from, adj_[from].size() - 1, 0.0});
    }

    double run(std::size_t s, std::size_t t, double eps) {
        eps_ = eps;
        double flow = 0.0;
        while (bfs(s, t)) {
            std::fill(iter_.begin(), iter_.end(), 0);
            for (;;) {
                const double f = dfs(s, t, std::numeric_limits<double>::infinity());
                if (f <= eps_) break;
                flow += f;
            }
        }
        return flow;
    }

    /// Vertices reachable from s in the residual graph after run().
    std::vector<char> source_side(std::size_t s) const {
        std::vector<char> seen(adj_.size(), 0);
        std::deque<std::size_t> queue{s};
        seen[s] = 1;
        while (!queue.empty()) {
            const std::size_t v = queue.front();
            queue.pop_front();
            for (const Edge& e : adj_[v]) {
                if (e.cap > eps_ && !seen[e.to]) {
                    seen[e.to] = 1;
                    queue.push_back(e.to);
                }
            }
        }
        return seen;
    }

private:
    struct Edge {
        std::size_t to;
        std::size_t rev;
        double cap;
    };

    bool bfs(std::size_t s, std::size_t t) {
        std::fill(level_.begin(), level_.end(), -1);
        std::deque<std::size_t> queue{s};
        level_[s] = 0;
        while (!queue.empty()) {
            const std::size_t v = queue.front();
            queue.pop_front();
            for (const Edge& e : adj_[v]) {
                if (e.cap > eps_ && level_[e.to] < 0) {
                    level_[e.to] = level_[v] + 1;
                    queue.push_back(e.to);
                }
            }
        }
        return level_[t] >= 0;
    }

    double dfs(std::size_t v, std::size_t t, double pushed) {
        if (v == t) return pushed;
        for (std::size_t& k = iter_[v]; k < adj_[v].size(); ++k) {
            Edge& e = adj_[v][k];
            if (e.cap <= eps_ || level_[e.to] != level_[v] + 1) continue;
            const double got = dfs(e.to, t, std::min(pushed, e.cap));
            if (got > eps_) {
                e.cap -= got;
                adj_[e.to][e.rev].cap += got;
                return got;
            }
        }
        return 0.0;
    }

    std::vector<std::vector<Edge>> adj_;
    std::vector<int> level_;
    std::vector<std::size_t> iter_;
    double eps_ = 0.0;
};

/// Exact isotonic regression over an arbitrary constraint graph by recursive
/// partitioning. A block is split into a lower set and an upper set when some
/// upper set carries positive weighted excess over the block mean; the two
/// parts are then solved independently. Blocks that admit no such split are
/// level sets of the solution.
inline std::vector<double> partition_projection(std::span<const double> y, std::span<const double> mass,
                                                const std::vector<IndexPair>& edges) {
    const std::size_t n = y.size();
    std::vector<double> out(n, 0.0);
    if (n == 0) return out;

    std::vector<std::vector<std::size_t>> succ(n);
    for (const auto& [i, j] : edges) succ[i].push_back(j);

    std::vector<std::vector<std::size_t>> pending;
    pending.emplace_back(n);
    std::iota(pending.back().begin(), pending.back().end(), std::size_t{0});

    std::vector<long> local(n, -1);
    while (!pending.empty()) {
        std::vector<std::size_t> block = std::move(pending.back());
        pending.pop_back();

        double wsum = 0.0, wy = 0.0;
        for (std::size_t i : block) {
            wsum += mass[i];
            wy += mass[i] * y[i];
        }
        const double mean = wy / wsum;

        if (block.size() == 1) {
            out[block[0]] = mean;
            continue;
        }

        const std::size_t m = block.size();
        for (std::size_t k = 0; k < m; ++k) local[block[k]] = static_cast<long>(k);

        const std::size_t source = m;
        const std::size_t sink = m + 1;
        MaxFlow flow(m + 2);
        double positive = 0.0;
        double cap_scale = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            const double c = mass[block[k]] * (y[block[k]] - mean);
            cap_scale = std::max(cap_scale, std::abs(c));
            if (c > 0) {
                flow.add_edge(source, k, c);
                positive += c;
            } else if (c < 0) {
                flow.add_edge(k, sink, -c);
            }
        }
        const double inf = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < m; ++k)
            for (std::size_t j : succ[block[k]])
                if (local[j] >= 0) flow.add_edge(k, static_cast<std::size_t>(local[j]), inf);

        const double eps = 1e-15 * cap_scale;
        const double cut = flow.run(source, sink, eps);
        const double gain = positive - cut;

        std::vector<std::size_t> upper, lower;
        if (gain > 1e-12 * std::max(positive, 1e-300)) {
            const std::vector<char> side = flow.source_side(source);
            for (std::size_t k = 0; k < m; ++k) (side[k] ? upper : lower).push_back(block[k]);
        }
        for (std::size_t i : block) local[i] = -1;

        if (upper.empty() || lower.empty()) {
            for (std::size_t i : block) out[i] = mean;
        } else {
            pending.push_back(std::move(lower));
            pending.push_back(std::move(upper));
        }
    }
    return out;
}

} // namespace detail

/// Weighted isotonic regression of values on scores. Atoms with equal scores
/// are pooled into one weighted super-atom before pool-adjacent-violators.
inline ProjectionResult project_pava(const EmpiricalDistribution& dist, std::span<const double> values,
                                     std::span<const double> scores) {
    require_aligned(dist, values.size(), "value vector");
    require_aligned(dist, scores.size(), "score vector");
    const std::size_t n = values.size();
    if (detail::all_equal(values)) return {std::vector<double>(values.begin(), values.end()), 0.0};

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t i, std::size_t j) { return scores[i] < scores[j]; });

    std::vector<double> class_y, class_w;
    std::vector<std::size_t> class_of(n);
    for (std::size_t k = 0; k < n;) {
        std::size_t end = k;
        double ws = 0.0, w = 0.0;
        while (end < n && scores[idx[end]] == scores[idx[k]]) {
            ws += dist.mass(idx[end]) * values[idx[end]];
            w += dist.mass(idx[end]);
            class_of[idx[end]] = class_y.size();
            ++end;
        }
        class_y.push_back(ws / w);
        class_w.push_back(w);
        k = end;
    }

    const std::vector<double> fitted = detail::pava_chain(class_y, class_w);
    ProjectionResult result;
    result.projected.resize(n);
    for (std::size_t i = 0; i < n; ++i) result.projected[i] = fitted[class_of[i]];
    result.sse = detail::weighted_sse(dist, values, result.projected);
    return result;
}

inline ProjectionResult project_pava(const EmpiricalDistribution& dist, const RiskVector& values,
                                     std::span<const double> scores) {
    return project_pava(dist, values.values(), scores);
}

/// Projection under an arbitrary order using its comparable-pair graph.
inline ProjectionResult project_graph(const EmpiricalDistribution& dist, std::span<const double> values,
                                      const std::vector<IndexPair>& edges) {
    require_aligned(dist, values.size(), "value vector");
    for (const auto& [i, j] : edges)
        require(i < values.size() && j < values.size(), "order edge out of range");
    if (edges.empty() || detail::all_equal(values))
        return {std::vector<double>(values.begin(), values.end()), 0.0};
    ProjectionResult result;
    result.projected = detail::partition_projection(values, dist.masses(), edges);
    result.sse = detail::weighted_sse(dist, values, result.projected);
    return result;
}

/// Projection under any OrderSpec through the general partial-order solver.
inline ProjectionResult project_partial_order(const EmpiricalDistribution& dist, std::span<const double> values,
                                              const OrderSpec& order) {
    require_aligned(dist, order_size(order), "order");
    return project_graph(dist, values, comparable_pairs(order));
}

inline ProjectionResult project_partial_order(const EmpiricalDistribution& dist, const RiskVector& values,
                                              const OrderSpec& order) {
    return project_partial_order(dist, values.values(), order);
}

/// Dispatches score orders to PAVA and everything else to the graph solver.
inline ProjectionResult project(const EmpiricalDistribution& dist, std::span<const double> values,
                                const OrderSpec& order) {
    if (const auto* score = std::get_if<ScoreOrder>(&order))
        return project_pava(dist, values, score->scores);
    return project_partial_order(dist, values, order);
}

} // namespace isodrl
