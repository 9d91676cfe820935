#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "patchsis/model.hpp"

using namespace patchsis;

TEST(AssembleL, MatchesDefinitionOnRandomStates)
{
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 25; ++trial)
    {
        const auto inst = oracle::random_instance(rng, 2 + trial % 6, 1 + trial % 3);
        const Vector x = oracle::random_populations(rng, inst.d);
        const Matrix L = assemble_L(inst.d, x);
        EXPECT_LE((L - oracle::laplacian(inst.d, x)).cwiseAbs().maxCoeff(), 1e-13);
        // Rows sum to zero for any positive x.
        EXPECT_LE((L * Vector::Ones(inst.d.dim())).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(AssembleL, StationaryStateGivesZeroColumnWeightedSum)
{
    // At x = pi, x^T L = 0 as well: sum_i x_i l_ij = -(Q^T x)_j = 0.
    std::mt19937_64 rng(4);
    const auto inst = oracle::random_instance(rng, 6, 2);
    Vector x(inst.d.dim());
    for (Eigen::Index a = 0; a < 2; ++a)
        x.segment(a * 6, 6) = inst.d.population(a) * stationary_distribution(inst.d.layer(a));
    const Matrix L = assemble_L(inst.d, x);
    EXPECT_LE((x.transpose() * L).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(AssembleF, FractionsPerNode)
{
    std::mt19937_64 rng(8);
    const auto inst = oracle::random_instance(rng, 4, 3);
    const Vector x = oracle::random_populations(rng, inst.d);
    const auto F = assemble_F(inst.d, x);
    const Matrix dense = F.dense();
    for (Eigen::Index i = 0; i < 4; ++i)
    {
        const double total = x(i) + x(4 + i) + x(8 + i);
        for (Eigen::Index a = 0; a < 3; ++a)
            for (Eigen::Index s = 0; s < 3; ++s)
                EXPECT_NEAR(dense(a * 4 + i, s * 4 + i), x(s * 4 + i) / total, 1e-15);
    }
    EXPECT_NEAR((dense * Vector::Ones(12) - Vector::Ones(12)).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(AssembleF, ZeroNodePopulationThrows)
{
    std::mt19937_64 rng(8);
    const auto inst = oracle::random_instance(rng, 3, 2);
    Vector x = oracle::random_populations(rng, inst.d);
    x(1) = 0.0;
    x(4) = 0.0;
    EXPECT_THROW(assemble_F(inst.d, x), ZeroPopulation);
}

TEST(AssembleL, EmptyPatchWithInflowThrows)
{
    std::mt19937_64 rng(8);
    const auto inst = oracle::random_instance(rng, 3, 1);
    Vector x = oracle::random_populations(rng, inst.d);
    x(0) = 0.0;
    EXPECT_THROW(assemble_L(inst.d, x), ZeroPopulation);
}

TEST(FullRhs, ComponentwiseEqualsMatrixForm)
{
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 25; ++trial)
    {
        const auto inst = oracle::random_instance(rng, 2 + trial % 5, 1 + trial % 3);
        SystemState s{Vector(inst.d.dim()), oracle::random_populations(rng, inst.d), 0.0};
        for (Eigen::Index k = 0; k < s.p.size(); ++k)
            s.p(k) = u(rng);
        const auto der = full_rhs(inst.d, inst.r, s);
        EXPECT_LE((der.dp - p_rhs_matrix_form(inst.d, inst.r, s)).cwiseAbs().maxCoeff(), 1e-12);
        // Population dynamics conserve each layer's mass.
        for (Eigen::Index a = 0; a < inst.d.m(); ++a)
            EXPECT_NEAR(der.dx.segment(a * inst.d.n(), inst.d.n()).sum(), 0.0, 1e-10);
    }
}

TEST(FullRhs, SingleNodeReducesToScalarSis)
{
    // One node, one layer: dp = beta p (1 - p) - delta p.
    const MultiLayerDispersal d({LayerGenerator::from_rates(Matrix::Zero(1, 1))}, {10.0});
    const EpidemicRates r{Vector::Constant(1, 0.4), Vector::Constant(1, 0.1)};
    const auto der = full_rhs(d, r, {Vector::Constant(1, 0.3), Vector::Constant(1, 10.0), 0.0});
    EXPECT_NEAR(der.dp(0), 0.4 * 0.3 * 0.7 - 0.1 * 0.3, 1e-15);
}

TEST(ReducedAssembly, SinkExampleMatchesSymbolicForm)
{
    const oracle::SinkExample ex;
    const auto d = ex.network();
    const EpidemicRates r = EpidemicRates::uniform(6, 0.1, 0.3);
    const auto rs = make_reduced_system(d, r);
    ASSERT_EQ(rs.size(), 4);
    EXPECT_EQ(rs.sink_index, (std::vector<Eigen::Index>{1, 2, 3, 4}));
    EXPECT_EQ(rs.non_sink_index, (std::vector<Eigen::Index>{0, 5}));

    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 10; ++trial)
    {
        const Vector x = oracle::random_populations(rng, d);
        const auto mats = assemble_reduced(d, rs, x);
        EXPECT_LE((mats.L_bar - ex.L_bar(x)).cwiseAbs().maxCoeff(), 1e-14);
        EXPECT_LE((mats.L_hat - ex.L_hat(x)).cwiseAbs().maxCoeff(), 1e-14);
        EXPECT_LE((mats.F_bar - ex.F_bar(x)).cwiseAbs().maxCoeff(), 1e-14);
        EXPECT_LE((mats.F_hat - ex.F_hat(x)).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(ReducedRhs, AgreesWithFullModelOnSinkCoordinates)
{
    // The reduced right-hand side is the full one restricted to sink rows.
    const oracle::SinkExample ex;
    const auto d = ex.network();
    EpidemicRates r{Vector(6), Vector(6)};
    r.beta << 0.5, 0.4, 0.6, 0.3, 0.2, 0.7;
    r.delta << 0.1, 0.2, 0.1, 0.3, 0.2, 0.1;
    const auto rs = make_reduced_system(d, r);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial)
    {
        SystemState s{Vector(6), oracle::random_populations(rng, d), 0.0};
        for (Eigen::Index k = 0; k < 6; ++k)
            s.p(k) = u(rng);
        const auto red = reduced_rhs(d, r, rs, s);
        const auto full = full_rhs(d, r, s);
        EXPECT_LE((red.dp - rs.restrict(full.dp)).cwiseAbs().maxCoeff(), 1e-13);
        EXPECT_LE((red.dx - full.dx).cwiseAbs().maxCoeff(), 1e-13);
    }
}

TEST(Rates, RecoveryAssumption)
{
    const auto g = construct_equal_split_rates(make_topology("ring", 3), 0.1);
    const MultiLayerDispersal d({g, g}, {1, 1});
    EpidemicRates r = EpidemicRates::uniform(6, 0.2, 0.1);
    r.delta.segment(3, 3).setZero();
    EXPECT_THROW(check_layer_recovery(d, r), AssumptionViolated);
}
