// Reference computations used as test oracles. None of them calls into the
// library's eigen or linear solvers.
#ifndef PATCHSIS_TESTS_ORACLES_HPP
#define PATCHSIS_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "patchsis/network.hpp"
#include "patchsis/model.hpp"

namespace oracle
{

using patchsis::Matrix;
using patchsis::Vector;

/// Characteristic polynomial det(zI - M) by Faddeev-LeVerrier, coefficients
/// from z^n down to z^0 (leading coefficient 1).
inline std::vector<double> char_poly(const Matrix& M)
{
    const auto n = M.rows();
    std::vector<double> c(static_cast<std::size_t>(n + 1), 0.0);
    c[0] = 1.0;
    Matrix Mk = Matrix::Zero(n, n);
    const Matrix I = Matrix::Identity(n, n);
    for (Eigen::Index k = 1; k <= n; ++k)
    {
        Mk = M * (Mk + c[static_cast<std::size_t>(k - 1)] * I);
        c[static_cast<std::size_t>(k)] = -Mk.trace() / static_cast<double>(k);
    }
    return c;
}

/// All roots of a monic polynomial by Durand-Kerner iteration.
inline std::vector<std::complex<double>> polynomial_roots(const std::vector<double>& c)
{
    using cd = std::complex<double>;
    const auto n = c.size() - 1;
    double radius = 0.0;
    for (std::size_t k = 1; k <= n; ++k)
        radius = std::max(radius, std::abs(c[k]));
    radius += 1.0;
    std::vector<cd> z(n);
    for (std::size_t k = 0; k < n; ++k)
        z[k] = radius * std::polar(1.0, 2.0 * M_PI * (static_cast<double>(k) + 0.25) / static_cast<double>(n));
    auto eval = [&](cd x) {
        cd v = 1.0;
        for (std::size_t k = 1; k <= n; ++k)
            v = v * x + c[k];
        return v;
    };
    for (int it = 0; it < 5000; ++it)
    {
        double change = 0.0;
        for (std::size_t k = 0; k < n; ++k)
        {
            cd denom = 1.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != k)
                    denom *= z[k] - z[j];
            const cd step = eval(z[k]) / denom;
            z[k] -= step;
            change = std::max(change, std::abs(step));
        }
        if (change < 1e-15)
            break;
    }
    // Polish each root with Newton steps.
    for (auto& r : z)
        for (int it = 0; it < 5; ++it)
        {
            cd v = 1.0, dv = 0.0;
            for (std::size_t k = 1; k <= n; ++k)
            {
                dv = dv * r + v;
                v = v * r + c[k];
            }
            if (std::abs(dv) > 0.0)
                r -= v / dv;
        }
    return z;
}

/// Largest real part of the eigenvalues, via the characteristic polynomial.
/// Reliable for small matrices only (dimension up to about 8).
inline double spectral_abscissa(const Matrix& M)
{
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& r : polynomial_roots(char_poly(M)))
        best = std::max(best, r.real());
    return best;
}

/// Abscissa of an irreducible Metzler matrix: power iteration on M + cI,
/// stopped once the Collatz-Wielandt bounds close.
inline double metzler_abscissa(const Matrix& M, double tol = 1e-13)
{
    const auto n = M.rows();
    const double c = std::max(0.0, -M.diagonal().minCoeff()) + 1.0;
    const Matrix A = M + c * Matrix::Identity(n, n);
    Vector v = Vector::Ones(n);
    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 1000000 && hi - lo > tol; ++it)
    {
        const Vector w = A * v;
        const Eigen::ArrayXd ratio = w.array() / v.array();
        lo = ratio.minCoeff();
        hi = ratio.maxCoeff();
        v = w / w.maxCoeff();
    }
    return 0.5 * (lo + hi) - c;
}

/// Stationary distribution by power iteration on the uniformized chain.
inline Vector stationary(const Matrix& Q, int iterations = 2000000)
{
    const auto n = Q.rows();
    const double lam = 1.5 * (-Q.diagonal()).maxCoeff();
    const Matrix Pt = (Matrix::Identity(n, n) + Q / lam).transpose();
    Vector pi = Vector::Constant(n, 1.0 / static_cast<double>(n));
    for (int it = 0; it < iterations; ++it)
    {
        Vector next = Pt * pi;
        next /= next.sum();
        const double diff = (next - pi).cwiseAbs().maxCoeff();
        pi = next;
        if (diff < 1e-16)
            break;
    }
    return pi;
}

/// Laplacian entries straight from the definition, one (i, j) at a time.
inline Matrix laplacian(const patchsis::MultiLayerDispersal& d, const Vector& x)
{
    const auto n = d.n();
    Matrix L = Matrix::Zero(d.dim(), d.dim());
    for (Eigen::Index a = 0; a < d.m(); ++a)
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
            {
                if (i == j)
                {
                    double s = 0.0;
                    for (Eigen::Index k = 0; k < n; ++k)
                        if (k != i)
                            s += d.layer(a).rate(k, i) * x(a * n + k);
                    L(a * n + i, a * n + i) = s / x(a * n + i);
                }
                else
                    L(a * n + i, a * n + j) = -d.layer(a).rate(j, i) * x(a * n + j) / x(a * n + i);
            }
    return L;
}

struct Instance
{
    patchsis::MultiLayerDispersal d;
    patchsis::EpidemicRates r;
};

/// Random strongly connected layers: a directed ring backbone through a
/// random permutation plus random extra arcs, all with random rates.
inline patchsis::LayerGenerator random_layer(std::mt19937_64& rng, Eigen::Index n, double extra_density = 0.3)
{
    std::uniform_real_distribution<double> rate(0.05, 1.0), coin(0.0, 1.0);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix q = Matrix::Zero(n, n);
    for (Eigen::Index k = 0; k < n && n > 1; ++k)
        q(perm[k], perm[(k + 1) % n]) = rate(rng);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j && q(i, j) == 0.0 && coin(rng) < extra_density)
                q(i, j) = rate(rng);
    return patchsis::LayerGenerator::from_rates(q);
}

inline Instance random_instance(std::mt19937_64& rng, Eigen::Index n, Eigen::Index m, double beta_lo = 0.05,
                                double beta_hi = 1.0, double delta_lo = 0.05, double delta_hi = 1.0)
{
    std::uniform_real_distribution<double> pop(50.0, 500.0), b(beta_lo, beta_hi), dl(delta_lo, delta_hi);
    std::vector<patchsis::LayerGenerator> layers;
    std::vector<double> pops;
    for (Eigen::Index a = 0; a < m; ++a)
    {
        layers.push_back(random_layer(rng, n));
        pops.push_back(pop(rng));
    }
    patchsis::MultiLayerDispersal d(std::move(layers), std::move(pops));
    patchsis::EpidemicRates r{Vector(n * m), Vector(n * m)};
    for (Eigen::Index k = 0; k < n * m; ++k)
    {
        r.beta(k) = b(rng);
        r.delta(k) = dl(rng);
    }
    return {std::move(d), std::move(r)};
}

/// Random positive head counts with the layer totals of d.
inline Vector random_populations(std::mt19937_64& rng, const patchsis::MultiLayerDispersal& d)
{
    std::uniform_real_distribution<double> w(0.2, 1.0);
    Vector x(d.dim());
    for (Eigen::Index a = 0; a < d.m(); ++a)
    {
        for (Eigen::Index i = 0; i < d.n(); ++i)
            x(a * d.n() + i) = w(rng);
        x.segment(a * d.n(), d.n()) *= d.population(a) / x.segment(a * d.n(), d.n()).sum();
    }
    return x;
}


/// The two-layer, three-node example with its reduced matrices written out
/// symbolically. Layer 1 entries follow the printed matrices; layer 2 entries
/// follow the same definitions (its printed form mixes up superscripts).
struct SinkExample
{
    double q1_12 = 0.3, q1_23 = 0.2, q1_32 = 0.4;
    double q2_12 = 0.25, q2_21 = 0.15, q2_32 = 0.35;

    patchsis::MultiLayerDispersal network(double N1 = 100.0, double N2 = 80.0) const
    {
        Matrix a = Matrix::Zero(3, 3), b = Matrix::Zero(3, 3);
        a(0, 1) = q1_12;
        a(1, 2) = q1_23;
        a(2, 1) = q1_32;
        b(0, 1) = q2_12;
        b(1, 0) = q2_21;
        b(2, 1) = q2_32;
        return {{patchsis::LayerGenerator::from_rates(a), patchsis::LayerGenerator::from_rates(b)}, {N1, N2}};
    }

    // x is layer-major: x(0..2) = x^1_1..x^1_3, x(3..5) = x^2_1..x^2_3.
    // Reduced order: (1,2), (1,3), (2,1), (2,2); non-sink order: (1,1), (2,3).
    Matrix L_bar(const Vector& x) const
    {
        const double x11 = x(0), x12 = x(1), x13 = x(2), x21 = x(3), x22 = x(4), x23 = x(5);
        Matrix L = Matrix::Zero(4, 4);
        L(0, 0) = (q1_12 * x11 + q1_32 * x13) / x12;
        L(0, 1) = -q1_32 * x13 / x12;
        L(1, 0) = -q1_23 * x12 / x13;
        L(1, 1) = q1_23 * x12 / x13;
        L(2, 2) = q2_21 * x22 / x21;
        L(2, 3) = -q2_21 * x22 / x21;
        L(3, 2) = -q2_12 * x21 / x22;
        L(3, 3) = (q2_12 * x21 + q2_32 * x23) / x22;
        return L;
    }

    Matrix L_hat(const Vector& x) const
    {
        Matrix L = Matrix::Zero(4, 2);
        L(0, 0) = -q1_12 * x(0) / x(1);
        L(3, 1) = -q2_32 * x(5) / x(4);
        return L;
    }

    Matrix F_bar(const Vector& x) const
    {
        auto f = [&](int layer, int node) { return x(layer * 3 + node) / (x(node) + x(3 + node)); };
        Matrix F = Matrix::Zero(4, 4);
        F(0, 0) = f(0, 1);
        F(0, 3) = f(1, 1);
        F(1, 1) = f(0, 2);
        F(2, 2) = f(1, 0);
        F(3, 0) = f(0, 1);
        F(3, 3) = f(1, 1);
        return F;
    }

    Matrix F_hat(const Vector& x) const
    {
        auto f = [&](int layer, int node) { return x(layer * 3 + node) / (x(node) + x(3 + node)); };
        Matrix F = Matrix::Zero(4, 2);
        F(1, 1) = f(1, 2);
        F(2, 0) = f(0, 0);
        return F;
    }
};

} // namespace oracle

#endif // PATCHSIS_TESTS_ORACLES_HPP
