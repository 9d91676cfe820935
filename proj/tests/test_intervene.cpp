#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "patchsis/intervene.hpp"
#include "patchsis/scenario.hpp"

using namespace patchsis;

namespace
{

InterventionProblem fig4(double budget)
{
    auto p = *load_scenario(PATCHSIS_SCENARIO_DIR "/fig4.json").intervention;
    p.budget = budget;
    return p;
}

// Cost of moving every coordinate to (beta_lower, delta_upper), by hand.
constexpr double kFig4CornerCost = 20.0 * ((1.0 / 0.1 - 1.0 / 0.4) + (1.0 / 1.0 - 1.0 / 1.3));

InterventionProblem box_problem(const MultiLayerDispersal& d, double budget)
{
    const auto N = d.dim();
    InterventionProblem p{d,
                          Vector::Constant(N, 0.1),
                          Vector::Constant(N, 0.5),
                          Vector::Constant(N, 0.1),
                          Vector::Constant(N, 0.4),
                          std::vector<CostFunction>(N, CostFunction::inverse(0.5)),
                          std::vector<CostFunction>(N, CostFunction::inverse(1.3)),
                          budget};
    return p;
}

} // namespace

TEST(ShiftTransform, IdentityOnRandomInstances)
{
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.05, 0.9);
    for (int trial = 0; trial < 20; ++trial)
    {
        const auto inst = oracle::random_instance(rng, 2 + trial % 4, 2);
        const double dbar = inst.r.delta.maxCoeff() + u(rng);
        const auto sys = shift_transform(inst.d, dbar);
        EXPECT_GE(sys.shifted_laplacian.minCoeff(), 0.0);
        const double lhs = oracle::metzler_abscissa(sys.stability_matrix(inst.r.beta, inst.r.delta));
        const double rhs = oracle::metzler_abscissa(sys.nonnegative_matrix(inst.r.beta, inst.r.delta)) - sys.offset();
        EXPECT_NEAR(lhs, rhs, 1e-10);
        EXPECT_NEAR(lhs, oracle::spectral_abscissa(sys.stability_matrix(inst.r.beta, inst.r.delta)), 1e-7);
    }
}

TEST(ShiftTransform, UniformExitRatesGiveZeroDiagonal)
{
    const auto g = construct_equal_split_rates(make_topology("ring", 5), 0.2);
    const auto h = construct_equal_split_rates(make_topology("star", 5), 0.2);
    const auto sys = shift_transform(MultiLayerDispersal({g, h}, {10, 20}), 0.4);
    EXPECT_LE(sys.shifted_laplacian.diagonal().cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(sys.nu_bar, 0.2, 1e-15);
}

TEST(ShiftTransform, SingleCoordinateGivesNetRate)
{
    // One node, one layer: mu = beta - delta.
    const MultiLayerDispersal d({LayerGenerator::from_rates(Matrix::Zero(1, 1))}, {5});
    const auto sys = shift_transform(d, 0.6);
    for (double beta : {0.1, 0.3, 0.7})
        EXPECT_NEAR(spectral_abscissa(sys.nonnegative_matrix(Vector::Constant(1, beta), Vector::Constant(1, 0.25)))
                        - sys.offset(),
                    beta - 0.25, 1e-14);
}

TEST(SolveGp, ZeroBudgetPinsTheFreeCorner)
{
    const auto p = fig4(0.0);
    const auto r = solve_gp(p);
    EXPECT_TRUE(r.solver.degenerate);
    EXPECT_LE((r.beta.array() - 0.4).abs().maxCoeff(), 1e-6);
    EXPECT_LE((r.delta.array() - 0.1).abs().maxCoeff(), 1e-6);
    // Uniform rates on the corner: mu = beta - delta.
    EXPECT_NEAR(r.mu, 0.3, 1e-5);
}

TEST(SolveGp, AffordableCornerIsReached)
{
    const auto r = solve_gp(fig4(kFig4CornerCost + 1.0));
    EXPECT_NEAR(r.mu, 0.1 - 0.4, 1e-4);
    EXPECT_LE(r.budget_used, kFig4CornerCost + 1.0 + 1e-6);
    EXPECT_NEAR(fig4(0).cost(Vector::Constant(20, 0.1), Vector::Constant(20, 0.4)), kFig4CornerCost, 1e-10);
}

TEST(SolveGp, PlateauAtLargeBudget)
{
    const auto r = solve_gp(fig4(300.0));
    EXPECT_NEAR(r.mu, -0.3, 0.05);
    EXPECT_LE(r.budget_used, kFig4CornerCost + 1e-3);
}

TEST(SolveGp, CertificateRoundTripAndBounds)
{
    for (double C : {20.0, 60.0, 100.0, 140.0})
    {
        const auto p = fig4(C);
        const auto r = solve_gp(p);
        const auto sys = shift_transform(p.network, p.delta_bar());
        EXPECT_GT(r.u.minCoeff(), 0.0);
        EXPECT_LE(collatz_wielandt_ratio(sys, r), r.lambda * (1.0 + 1e-6)) << C;
        EXPECT_NEAR(oracle::metzler_abscissa(sys.stability_matrix(r.beta, r.delta)), r.mu, 1e-6) << C;
        EXPECT_LE(r.budget_used, C + 1e-6);
        EXPECT_GE(r.beta.minCoeff(), 0.1 - 1e-12);
        EXPECT_LE(r.beta.maxCoeff(), 0.4 + 1e-12);
        EXPECT_GE(r.delta.minCoeff(), 0.1 - 1e-12);
        EXPECT_LE(r.delta.maxCoeff(), 0.4 + 1e-12);
    }
}

TEST(SolveGp, MonotoneAndDominatesNaive)
{
    double prev = std::numeric_limits<double>::infinity();
    for (double C = 0.0; C <= 300.0; C += 30.0)
    {
        const auto p = fig4(C);
        const auto gp = solve_gp(p);
        const auto nv = naive_allocation(p);
        EXPECT_LE(gp.mu, prev + 1e-6) << C;
        EXPECT_LE(gp.mu, nv.mu + 1e-6) << C;
        EXPECT_LE(nv.budget_used, C + 1e-6);
        prev = gp.mu;
    }
}

TEST(SolveGp, RandomInstancesCertifyLambda)
{
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 6; ++trial)
    {
        const auto inst = oracle::random_instance(rng, 3, 2);
        const auto p = box_problem(inst.d, 10.0 + 10.0 * trial);
        const auto r = solve_gp(p);
        const auto sys = shift_transform(p.network, p.delta_bar());
        EXPECT_LE(collatz_wielandt_ratio(sys, r), r.lambda * (1.0 + 1e-6));
        EXPECT_NEAR(oracle::metzler_abscissa(sys.stability_matrix(r.beta, r.delta)), r.mu, 1e-6);
        EXPECT_LE(r.budget_used, p.budget + 1e-6);
        EXPECT_LE(r.mu, naive_allocation(p).mu + 1e-6);
    }
}

TEST(SolveGp, BudgetBelowOffsetsIsInfeasible)
{
    auto p = fig4(10.0);
    for (auto& c : p.beta_cost)
        c.offset += 1.0; // every coordinate now costs at least 1 + 1/0.4 - 1/0.4
    EXPECT_THROW(solve_gp(p), Infeasible);
}

TEST(NaiveAllocation, ZeroBudgetAndSaturation)
{
    const auto zero = naive_allocation(fig4(0.0));
    EXPECT_LE((zero.beta.array() - 0.4).abs().maxCoeff(), 1e-12);
    EXPECT_LE((zero.delta.array() - 0.1).abs().maxCoeff(), 1e-12);
    EXPECT_NEAR(zero.mu, 0.3, 1e-9);

    // Each half of a coordinate's share saturates on its own bound.
    const auto big = naive_allocation(fig4(1000.0));
    EXPECT_LE((big.beta.array() - 0.1).abs().maxCoeff(), 1e-12);
    EXPECT_LE((big.delta.array() - 0.4).abs().maxCoeff(), 1e-12);
    EXPECT_NEAR(big.budget_used, kFig4CornerCost, 1e-9);
    EXPECT_NEAR(big.budget_unused, 1000.0 - kFig4CornerCost, 1e-9);
}

TEST(InterventionProblem, ValidateRejectsBadBounds)
{
    auto p = fig4(10.0);
    p.beta_lower(3) = 0.0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p = fig4(10.0);
    p.budget = -1.0;
    EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(NaiveAllocation, RecoveryLeftoverRollsOverToInfection)
{
    // C/(2N) = 1 per half: recovery saturates at 1 - 1/1.3, the rest buys infection reduction.
    const auto r = naive_allocation(fig4(40.0));
    const double dhat_cost = 1.0 - 1.0 / 1.3;
    EXPECT_LE((r.delta.array() - 0.4).abs().maxCoeff(), 1e-12);
    const double beta = 1.0 / (1.0 + (1.0 - dhat_cost) + 1.0 / 0.4);
    EXPECT_LE((r.beta.array() - beta).abs().maxCoeff(), 1e-9);
    EXPECT_NEAR(r.budget_used, 40.0, 1e-6);
}
