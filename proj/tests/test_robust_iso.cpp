#include "isodrl/oracle.hpp"
#include "isodrl/robust_iso.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace isodrl;
using namespace isodrl::testing;

namespace {

UncertaintySet random_set(Philox& rng, bool kl) {
    if (kl) return UncertaintySet::kl(0.02 + 1.5 * rng.uniform());
    return UncertaintySet::bounds(0.8 * rng.uniform(), 1.1 + 3.0 * rng.uniform());
}

} // namespace

TEST(SolveIso, IsotonicRiskMatchesPlain) {
    const auto dist = make_uniform_distribution(4);
    const std::vector<double> r{0.1, 0.4, 0.4, 2.0};
    for (const auto& set : {UncertaintySet::bounds(0.2, 3.0), UncertaintySet::kl(0.4)}) {
        const auto rep = solve_iso(dist, r, set, ScoreOrder{{1, 2, 3, 4}});
        EXPECT_NEAR(rep.delta_iso, rep.delta_plain, 1e-8);
    }
}

TEST(SolveIso, AntiIsotonicRiskHasNoExcess) {
    const auto dist = make_uniform_distribution(2);
    for (const auto& set : {UncertaintySet::bounds(0.0, 2.0), UncertaintySet::kl(1.0)}) {
        const auto rep = solve_iso(dist, std::vector<double>{1, 0}, set, ScoreOrder{{1, 2}});
        EXPECT_NEAR(rep.delta_iso, 0.0, 1e-12);
        EXPECT_GT(rep.delta_plain, 0.0);
    }
}

TEST(SolveIso, FourAtomBoundsExample) {
    const auto rep = solve_iso(make_uniform_distribution(4), RiskVector({1, 3, 2, 4}), UncertaintySet::bounds(0, 2),
                               ScoreOrder{{1, 2, 3, 4}});
    EXPECT_EQ(rep.projected_risk.projected, (std::vector<double>{1, 2.5, 2.5, 4}));
    EXPECT_NEAR(rep.delta_iso, 0.75, 1e-12);
    EXPECT_NEAR(rep.solution.weights[0], 0.0, 1e-12);
    EXPECT_NEAR(rep.solution.weights[1], 1.0, 1e-12);
    EXPECT_NEAR(rep.solution.weights[2], 1.0, 1e-12);
    EXPECT_NEAR(rep.solution.weights[3], 2.0, 1e-12);
    const auto& dual = std::get<BoundsDual>(rep.solution.dual);
    EXPECT_NEAR(dual.t_star, 0.75, 1e-12);
    EXPECT_NEAR(dual.eta_star, 1.0, 1e-12);
}

TEST(SolveIso, EqualsChainLpOnRandomInstances) {
    Philox rng(600);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(8);
        const auto m = random_masses(rng, n);
        const auto r = random_values(rng, n, trial % 2 == 0);
        const auto order = random_order(rng, n, false);
        const double a = 0.7 * rng.uniform(), b = 1.1 + 2.0 * rng.uniform();
        const auto rep = solve_iso(EmpiricalDistribution::from_masses(m), r, UncertaintySet::bounds(a, b), order);
        EXPECT_NEAR(rep.delta_iso, chain_iso_lp_bounds(m, r, std::get<ScoreOrder>(order).scores, a, b), 1e-9)
            << "trial " << trial;
    }
}

TEST(SolveIso, WeightsAreIsotonicAndFeasible) {
    Philox rng(601);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 1 + rng.below(12);
        const auto m = random_masses(rng, n);
        const auto dist = EmpiricalDistribution::from_masses(m);
        const auto r = random_values(rng, n, trial % 3 == 0);
        const auto order = random_order(rng, n, trial % 2 == 1);
        const auto rep = solve_iso(dist, r, random_set(rng, trial % 4 < 2), order, 10.0);
        EXPECT_TRUE(is_isotonic(rep.solution.weights, comparable_pairs(order), 1e-9));
        EXPECT_NEAR(weighted_mean(m, rep.solution.weights), 1.0, 1e-9);
        for (double w : rep.solution.weights) EXPECT_LE(w, 10.0 + 1e-12);
        EXPECT_GE(rep.delta_iso, -1e-12);
        EXPECT_LE(rep.delta_iso, rep.delta_plain + 1e-9);
    }
}

TEST(SolveIso, AgreesWithConstrainedOracle) {
    Philox rng(602);
    for (int trial = 0; trial < 150; ++trial) {
        const std::size_t n = 1 + rng.below(9);
        const auto dist = EmpiricalDistribution::from_masses(random_masses(rng, n));
        const auto r = random_values(rng, n, trial % 2 == 0);
        const auto order = random_order(rng, n, trial % 3 == 0);
        const auto set = random_set(rng, trial % 2 == 1).with_truncation(8.0);
        const double got = solve_iso(dist, r, set, order, 8.0).delta_iso;
        EXPECT_NEAR(got, oracle_max(dist, r, set, order), 1e-6) << "trial " << trial;
    }
}

TEST(SolveIso, CoarserOrderNeverDecreasesDelta) {
    Philox rng(603);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(10);
        const auto dist = EmpiricalDistribution::from_masses(random_masses(rng, n));
        const auto r = random_values(rng, n, false);
        std::vector<std::vector<double>> pts(n, std::vector<double>(2));
        for (auto& p : pts)
            for (double& x : p) x = rng.uniform();
        // The chain on the first coordinate refines the componentwise order.
        std::vector<double> first(n);
        for (std::size_t i = 0; i < n; ++i) first[i] = pts[i][0];
        const auto set = random_set(rng, trial % 2 == 0);
        const double fine = solve_iso(dist, r, set, ScoreOrder{first}).delta_iso;
        const double coarse = solve_iso(dist, r, set, ComponentwiseOrder{pts}).delta_iso;
        EXPECT_LE(fine, coarse + 1e-9);
    }
}

TEST(Recalibration, DistinctScoresMatchScoreOrder) {
    Philox rng(604);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(30);
        const auto dist = EmpiricalDistribution::from_masses(random_masses(rng, n));
        const auto r = random_values(rng, n, trial % 2 == 0);
        std::vector<double> w0(n);
        for (double& x : w0) x = trial % 3 == 0 ? static_cast<double>(rng.below(4)) : rng.uniform() * 3;
        const auto set = random_set(rng, trial % 2 == 1);
        const auto a = solve_iso_recalibration(dist, r, set, w0);
        const auto b = solve_iso(dist, r, set, ScoreOrder{w0});
        EXPECT_NEAR(a.delta_iso, b.delta_iso, 1e-10);
    }
}

TEST(Recalibration, TiedClassExample) {
    const auto rep = solve_iso_recalibration(make_uniform_distribution(3), std::vector<double>{2, 0, 1},
                                             UncertaintySet::kl(0.5), std::vector<double>{1, 1, 2});
    EXPECT_EQ(rep.projected_risk.projected, (std::vector<double>{1, 1, 1}));
    EXPECT_NEAR(rep.delta_iso, 0.0, 1e-15);
}

TEST(Recalibration, AllTiedGivesZero) {
    const auto rep = solve_iso_recalibration(make_uniform_distribution(4), std::vector<double>{0, 3, 1, 2},
                                             UncertaintySet::bounds(0, 3), std::vector<double>{2, 2, 2, 2});
    EXPECT_NEAR(rep.delta_iso, 0.0, 1e-15);
}

TEST(MisspecificationGap, IsotonicInputsGiveZero) {
    const auto dist = make_uniform_distribution(3);
    const ScoreOrder order{{1, 2, 3}};
    EXPECT_NEAR(misspecification_gap(dist, std::vector<double>{3, 1, 2}, std::vector<double>{0.5, 1, 1.5}, order), 0.0,
                1e-10);
    EXPECT_NEAR(misspecification_gap(dist, std::vector<double>{1, 2, 3}, std::vector<double>{1.5, 0.5, 1}, order), 0.0,
                1e-10);
}

TEST(MisspecificationGap, TwoAtomExample) {
    EXPECT_NEAR(misspecification_gap(make_uniform_distribution(2), std::vector<double>{1, 0},
                                     std::vector<double>{1.5, 0.5}, ScoreOrder{{1, 2}}),
                0.25, 1e-12);
}

TEST(MisspecificationGap, RejectsNonUnitMean) {
    EXPECT_THROW(misspecification_gap(make_uniform_distribution(2), std::vector<double>{1, 0},
                                      std::vector<double>{1.5, 1.5}, ScoreOrder{{1, 2}}),
                 Error);
}

TEST(MisspecificationGap, BoundsAnyCandidate) {
    Philox rng(605);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.below(10);
        const auto m = random_masses(rng, n);
        const auto dist = EmpiricalDistribution::from_masses(m);
        const auto r = random_values(rng, n, false);
        const auto order = random_order(rng, n, trial % 2 == 0);
        const double a = 0.5 * rng.uniform(), b = 1.5 + rng.uniform();
        // Random mean-one candidate inside [a, b]: centre a uniform draw and
        // shrink it toward 1 until it fits.
        std::vector<double> w(n);
        for (double& x : w) x = a + (b - a) * rng.uniform();
        const double mean = weighted_mean(m, w);
        double t = 1.0;
        for (double x : w) {
            const double dev = x - mean;
            if (dev > 0) t = std::min(t, (b - 1.0) / dev);
            if (dev < 0) t = std::min(t, (a - 1.0) / dev);
        }
        double lhs = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            w[i] = 1.0 + t * (w[i] - mean);
            lhs += m[i] * (w[i] - 1.0) * r[i];
        }
        const double iso = solve_iso(dist, r, UncertaintySet::bounds(a, b), order, 1e6).delta_iso;
        EXPECT_LE(lhs, iso + misspecification_gap(dist, r, w, order) + 1e-8);
    }
}

TEST(ShiftBudget, Examples) {
    EXPECT_NEAR(shift_budget(0.1, 0.5), 0.01, 1e-15);
    EXPECT_NEAR(shift_budget(0.2, 1.0), 0.02, 1e-15);
    EXPECT_THROW(shift_budget(0.0, 1.0), Error);
}

TEST(Hardness, NoiselessConstantRiskGivesZero) {
    const auto out = hardness_demo(500, 0.5, 0.5, 1.5, 3, false);
    EXPECT_NEAR(out.delta_plain_noisy, 0.0, 1e-12);
    EXPECT_NEAR(out.delta_iso_noisy, 0.0, 1e-12);
}

TEST(Hardness, NoiseInflatesPlainButNotIso) {
    int plain = 0, iso = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto out = hardness_demo(1000, 0.5, 0.5, 1.5, derive_seed(99, s));
        plain += out.delta_plain_noisy >= 0.05;
        iso += std::abs(out.delta_iso_noisy) <= 0.05;
    }
    EXPECT_GE(plain, 19);
    EXPECT_GE(iso, 19);
}

TEST(Probe, ErrorsShrinkWithSampleSize) {
    ProbeInstance inst;
    inst.repetitions = 20;
    const auto table = convergence_probe({200, 3200}, inst, 5);
    ASSERT_EQ(table.rows.size(), 2u);
    EXPECT_EQ(table.reference_n, 32000u);
    EXPECT_LT(table.rows[1].median_error, table.rows[0].median_error);
    EXPECT_LT(loglog_slope(table), 0.0);
}

TEST(Probe, NoiselessEstimateAtReferenceSizeMatchesReference) {
    ProbeInstance inst;
    inst.reference_factor = 1;
    inst.repetitions = 20;
    const auto table = convergence_probe({40000}, inst, 6, false);
    EXPECT_EQ(table.reference_n, 40000u);
    EXPECT_LE(table.rows[0].median_error, 2e-3);
}

TEST(Probe, RejectsUnsortedGrid) {
    EXPECT_THROW(convergence_probe({500, 100}, ProbeInstance{}, 1), Error);
}
