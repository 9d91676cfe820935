#ifndef PATCHSIS_STABILITY_HPP
#define PATCHSIS_STABILITY_HPP

#include <cmath>
#include <span>
#include <vector>

#include "equilibria.hpp"

namespace patchsis
{

/// Explicit necessary and sufficient conditions for stability of the
/// disease-free equilibrium, without a full eigen-decomposition of the
/// Jacobian.
struct StabilityChecklist
{
    std::vector<bool> necessary1_per_node; // exists alpha: delta > beta - nu
    bool necessary1 = false;               // holds at every node
    bool necessary2 = false;               // exists (i, alpha): delta >= beta
    bool sufficient3 = false;              // delta >= beta everywhere
    bool sufficient4 = false;              // perturbed-Laplacian eigenvalue bound

    Vector w;                 // left null vector of B M + L*, max entry 1
    double lambda2 = 0.0;     // second smallest eigenvalue of sym(W (B M + L*))
    double s = 0.0;           // min over (i, alpha) of delta - beta
    double deficit_sum = 0.0; // sum_k w_k (delta_k - beta_k - s)
    double bound_lhs = 0.0;   // left side of the sufficient bound
    bool degenerate = false;  // deficit_sum == 0: bound reduces to s >= 0
    double s_lower = 0.0;     // -lambda2 / (4 n m + 1)
};

/// lambda2 / ((1 + sqrt(1 + lambda2 / deficit_sum))^2 * dim + 1) + s
inline double sufficient_bound_lhs(double lambda2, double deficit_sum, double s, Eigen::Index dim)
{
    if (deficit_sum == 0.0)
        throw DegenerateDenominator("all recovery deficits are equal");
    const double root = 1.0 + std::sqrt(1.0 + lambda2 / deficit_sum);
    return lambda2 / (root * root * static_cast<double>(dim) + 1.0) + s;
}

/// Structure of the Laplacian B M + L* that does not depend on recovery rates.
struct DispersalSpectrum
{
    Vector w;
    double lambda2 = 0.0;
};

inline DispersalSpectrum dispersal_spectrum(const MultiLayerDispersal& d, const Vector& beta)
{
    const Vector x_star = equilibrium_populations(d);
    const auto N = d.dim();
    const Matrix M = Matrix::Identity(N, N) - assemble_F(d, x_star).dense();
    const Matrix G = beta.asDiagonal() * M + assemble_L(d, x_star);

    Matrix stacked(N + 1, N);
    stacked.topRows(N) = G.transpose();
    stacked.row(N).setOnes();
    Vector rhs = Vector::Zero(N + 1);
    rhs(N) = 1.0;
    Vector w = stacked.colPivHouseholderQr().solve(rhs);
    w /= w.maxCoeff();
    const double residual = (G.transpose() * w).lpNorm<Eigen::Infinity>();
    if (!(w.minCoeff() > 0.0) || !(residual <= 1e-10))
        throw SolverFailure("check_conditions", "no positive left null vector of B M + L*");

    const Matrix WG = w.asDiagonal() * G;
    const Matrix sym = 0.5 * (WG + WG.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
        throw EigenFailure("symmetric part did not converge");
    return {w, N > 1 ? es.eigenvalues()(1) : es.eigenvalues()(0)};
}

inline double s_lower_bound(double lambda2, const MultiLayerDispersal& d)
{
    return -lambda2 / (4.0 * static_cast<double>(d.dim()) + 1.0);
}

inline StabilityChecklist check_conditions(const MultiLayerDispersal& d, const EpidemicRates& r)
{
    r.validate(d.dim());
    for (const auto& g : d.layers())
        if (!is_strongly_connected(g))
            throw NonIrreducible("stability conditions require strongly connected layers");

    StabilityChecklist c;
    const auto n = d.n();
    const Vector nu = d.exit_rates();
    const Vector gap = r.delta - r.beta;

    c.necessary1 = true;
    for (Eigen::Index i = 0; i < n; ++i)
    {
        bool ok = false;
        for (Eigen::Index a = 0; a < d.m(); ++a)
        {
            const auto k = d.index(a, i);
            ok = ok || r.delta(k) > r.beta(k) - nu(k);
        }
        c.necessary1_per_node.push_back(ok);
        c.necessary1 = c.necessary1 && ok;
    }
    c.necessary2 = gap.maxCoeff() >= 0.0;
    c.sufficient3 = gap.minCoeff() >= 0.0;

    const auto spectrum = dispersal_spectrum(d, r.beta);
    c.w = spectrum.w;
    c.lambda2 = spectrum.lambda2;
    c.s = gap.minCoeff();
    c.deficit_sum = c.w.dot((gap.array() - c.s).matrix());
    c.s_lower = s_lower_bound(c.lambda2, d);
    if (c.deficit_sum == 0.0)
    {
        c.degenerate = true;
        c.bound_lhs = c.s;
    }
    else
    {
        c.bound_lhs = sufficient_bound_lhs(c.lambda2, c.deficit_sum, c.s, d.dim());
    }
    c.sufficient4 = c.bound_lhs >= 0.0;
    return c;
}

/// Completes `partial` by choosing one common recovery rate for every
/// coordinate outside `deficit_coords` (layer-major indices) so that the
/// sufficient bound holds, with a 1e-6 margin on the rate.
inline EpidemicRates delta_for_sufficient4(const MultiLayerDispersal& d, const EpidemicRates& partial,
                                           std::span<const Eigen::Index> deficit_coords)
{
    partial.validate(d.dim());
    const auto N = d.dim();
    std::vector<char> is_deficit(static_cast<std::size_t>(N), 0);
    for (auto k : deficit_coords)
        is_deficit.at(static_cast<std::size_t>(k)) = 1;

    const auto spectrum = dispersal_spectrum(d, partial.beta);
    const double s_lower = s_lower_bound(spectrum.lambda2, d);

    double s_deficit = std::numeric_limits<double>::infinity();
    double beta_rest = 0.0;
    for (Eigen::Index k = 0; k < N; ++k)
    {
        if (is_deficit[k])
            s_deficit = std::min(s_deficit, partial.delta(k) - partial.beta(k));
        else
            beta_rest = std::max(beta_rest, partial.beta(k));
    }
    if (s_deficit <= s_lower)
        throw Infeasible("delta_for_sufficient4",
                         "deficit " + std::to_string(s_deficit) + " is not above s_lower " + std::to_string(s_lower));

    auto completed = [&](double common) {
        EpidemicRates r = partial;
        for (Eigen::Index k = 0; k < N; ++k)
            if (!is_deficit[k])
                r.delta(k) = common;
        return r;
    };
    auto lhs = [&](double common) {
        const EpidemicRates r = completed(common);
        const Vector gap = r.delta - r.beta;
        const double s = gap.minCoeff();
        const double sum = spectrum.w.dot((gap.array() - s).matrix());
        return sum == 0.0 ? s : sufficient_bound_lhs(spectrum.lambda2, sum, s, N);
    };

    double lo = beta_rest;
    if (lhs(lo) >= 0.0)
        return completed(lo);
    double hi = lo + 1.0;
    if (lhs(hi) < 0.0)
        throw Infeasible("delta_for_sufficient4", "no common recovery rate within [beta, beta + 1]");
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it)
    {
        const double mid = 0.5 * (lo + hi);
        (lhs(mid) >= 0.0 ? hi : lo) = mid;
    }
    return completed(hi + 1e-6);
}

} // namespace patchsis

#endif // PATCHSIS_STABILITY_HPP
