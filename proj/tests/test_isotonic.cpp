#include "isodrl/isotonic.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace isodrl;
using namespace isodrl::testing;

namespace {

void expect_vec_near(const std::vector<double>& got, const std::vector<double>& want, double tol) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
}

double inner(std::span<const double> m, std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += m[i] * a[i] * b[i];
    return acc;
}

} // namespace

TEST(Pava, AlreadyIsotonicIsUnchanged) {
    const auto r = project_pava(make_uniform_distribution(3), std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3});
    expect_vec_near(r.projected, {1, 2, 3}, 1e-15);
    EXPECT_EQ(r.sse, 0.0);
}

TEST(Pava, PoolsViolators) {
    const auto u3 = make_uniform_distribution(3);
    expect_vec_near(project_pava(u3, std::vector<double>{3, 1, 2}, std::vector<double>{1, 2, 3}).projected, {2, 2, 2},
                    1e-12);
    expect_vec_near(project_pava(make_uniform_distribution(4), std::vector<double>{1, 3, 2, 4},
                                 std::vector<double>{1, 2, 3, 4})
                        .projected,
                    {1, 2.5, 2.5, 4}, 1e-12);
}

TEST(Pava, TiedScoresAreAveragedFirst) {
    const auto r = project_pava(make_uniform_distribution(3), std::vector<double>{2, 0, 1}, std::vector<double>{1, 1, 2});
    expect_vec_near(r.projected, {1, 1, 1}, 1e-12);
}

TEST(Pava, WeightedPooling) {
    // Masses 0.75 / 0.25 on a violating pair pool to the weighted mean.
    const auto r = project_pava(EmpiricalDistribution::from_masses({0.75, 0.25}), std::vector<double>{2, 0},
                                std::vector<double>{0, 1});
    expect_vec_near(r.projected, {1.5, 1.5}, 1e-12);
    EXPECT_NEAR(r.sse, 0.75 * 0.25 + 0.25 * 2.25, 1e-12);
}

TEST(PartialOrder, EmptyOrderIsIdentity) {
    const std::vector<double> v{3, 1, 2};
    const auto r = project_partial_order(make_uniform_distribution(3), v,
                                         ComponentwiseOrder{{{0, 1}, {1, 0}, {0.5, 0.5}}});
    expect_vec_near(r.projected, v, 0.0);
}

TEST(PartialOrder, Examples) {
    expect_vec_near(project_partial_order(make_uniform_distribution(2), std::vector<double>{2, 1},
                                          ComponentwiseOrder{{{0, 0}, {1, 1}}})
                        .projected,
                    {1.5, 1.5}, 1e-12);
    expect_vec_near(project_partial_order(make_uniform_distribution(3), std::vector<double>{2, 1, 1},
                                          ComponentwiseOrder{{{0, 0}, {1, 0}, {0, 1}}})
                        .projected,
                    {4.0 / 3, 4.0 / 3, 4.0 / 3}, 1e-12);
}

TEST(PartialOrder, ScoreOrderAgreesWithPava) {
    Philox rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(15);
        const auto dist = EmpiricalDistribution::from_masses(random_masses(rng, n));
        const auto v = random_values(rng, n, trial % 2 == 0);
        const auto order = random_order(rng, n, false);
        const auto& scores = std::get<ScoreOrder>(order).scores;
        expect_vec_near(project_partial_order(dist, v, order).projected, project_pava(dist, v, scores).projected,
                        1e-10);
    }
}

// Both projections against Dykstra's algorithm on the full comparability
// relation, plus idempotence, nonexpansiveness and orthogonality.
TEST(Projection, MatchesQuadraticProgramOracle) {
    Philox rng(2024);
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t n = 1 + rng.below(10);
        const auto masses = random_masses(rng, n);
        const auto dist = EmpiricalDistribution::from_masses(masses);
        const auto v = random_values(rng, n, trial % 3 == 0);
        const auto order = random_order(rng, n, trial % 2 == 1);

        const auto got = project(dist, v, order);
        const auto want = dykstra_projection(v, masses, all_order_pairs(order));
        expect_vec_near(got.projected, want, 1e-6);
        EXPECT_TRUE(is_isotonic(got.projected, comparable_pairs(order), 1e-12));

        const auto twice = project(dist, got.projected, order);
        expect_vec_near(twice.projected, got.projected, 1e-12);

        std::vector<double> resid(n);
        for (std::size_t i = 0; i < n; ++i) resid[i] = v[i] - got.projected[i];
        EXPECT_NEAR(inner(masses, got.projected, resid), 0.0, 1e-7);

        const auto v2 = random_values(rng, n, false);
        const auto got2 = project(dist, v2, order);
        double d_in = 0, d_out = 0;
        for (std::size_t i = 0; i < n; ++i) {
            d_in += masses[i] * (v[i] - v2[i]) * (v[i] - v2[i]);
            d_out += masses[i] * (got.projected[i] - got2.projected[i]) * (got.projected[i] - got2.projected[i]);
        }
        EXPECT_LE(d_out, d_in + 1e-12);
    }
}

TEST(Projection, PreservesMean) {
    Philox rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng.below(20);
        const auto masses = random_masses(rng, n);
        const auto dist = EmpiricalDistribution::from_masses(masses);
        const auto v = random_values(rng, n, false);
        const auto p = project(dist, v, random_order(rng, n, trial % 2 == 0));
        EXPECT_NEAR(weighted_mean(masses, p.projected), weighted_mean(masses, v), 1e-12);
    }
}

TEST(Projection, LargeChainIsFast) {
    Philox rng(1);
    const std::size_t n = 200000;
    std::vector<double> v(n), s(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = rng.uniform();
        v[i] = s[i] + rng.normal();
    }
    const auto p = project_pava(make_uniform_distribution(n), v, s);
    EXPECT_TRUE(is_isotonic(p.projected, comparable_pairs(ScoreOrder{s}), 1e-12));
}

TEST(Projection, RejectsMisalignedInputs) {
    EXPECT_THROW(project_pava(make_uniform_distribution(3), std::vector<double>{1, 2}, std::vector<double>{1, 2}),
                 Error);
    EXPECT_THROW(project_graph(make_uniform_distribution(2), std::vector<double>{1, 2}, {{0, 5}}), Error);
}
