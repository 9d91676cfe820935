#ifndef PATCHSIS_EQUILIBRIA_HPP
#define PATCHSIS_EQUILIBRIA_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "model.hpp"

namespace patchsis
{

/// Band around zero in which the spectral abscissa counts as the threshold.
inline constexpr double kThresholdBand = 1e-8;

/// Largest real part over the spectrum (dense eigenvalue solve).
inline double spectral_abscissa(const Matrix& M)
{
    if (M.rows() == 0)
        throw EigenFailure("empty matrix");
    if (!M.allFinite())
        throw EigenFailure("matrix has non-finite entries");
    Eigen::EigenSolver<Matrix> es(M, false);
    if (es.info() != Eigen::Success)
        throw EigenFailure("eigenvalue iteration did not converge");
    return es.eigenvalues().real().maxCoeff();
}

inline double spectral_radius(const Matrix& M)
{
    Eigen::EigenSolver<Matrix> es(M, false);
    if (es.info() != Eigen::Success)
        throw EigenFailure("eigenvalue iteration did not converge");
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

struct PerronPair
{
    double value = 0.0;
    Vector vector; // strictly positive, max entry 1
};

/// Dominant eigenpair of an irreducible Metzler matrix. The eigenvalue comes
/// from the dense solve; the vector from inverse iteration just above it.
inline PerronPair perron_pair(const Matrix& M)
{
    PerronPair out;
    out.value = spectral_abscissa(M);
    const auto N = M.rows();
    const double scale = 1.0 + M.cwiseAbs().maxCoeff();
    const double shift = out.value + 1e-7 * scale;
    const Eigen::PartialPivLU<Matrix> lu(shift * Matrix::Identity(N, N) - M);
    Vector v = Vector::Ones(N);
    for (int it = 0; it < 100; ++it)
    {
        Vector next = lu.solve(v);
        next /= next.cwiseAbs().maxCoeff();
        if (next.sum() < 0.0)
            next = -next;
        const double change = (next - v).lpNorm<Eigen::Infinity>();
        v = std::move(next);
        if (change <= 1e-14)
            break;
    }
    if (!(v.minCoeff() > 0.0))
        throw EigenFailure("Perron vector is not strictly positive (matrix reducible?)");
    const double residual = (M * v - out.value * v).lpNorm<Eigen::Infinity>();
    if (!(residual <= 1e-8 * scale))
        throw EigenFailure("Perron residual " + std::to_string(residual));
    out.vector = v / v.maxCoeff();
    return out;
}

/// The linear part of the infected-fraction dynamics at the dispersal
/// equilibrium: B F* - D - L*, plus the pieces the fixed-point map needs.
struct Linearization
{
    Vector beta;
    Vector delta;
    Matrix F; // F*
    Matrix L; // L*

    Eigen::Index size() const { return beta.size(); }

    Matrix jacobian() const
    {
        Matrix J = beta.asDiagonal() * F - L;
        J.diagonal() -= delta;
        return J;
    }

    /// A = (L* + D)^{-1} B.
    Matrix next_generation() const
    {
        Matrix LD = L;
        LD.diagonal() += delta;
        return LD.partialPivLu().solve(Matrix(beta.asDiagonal()));
    }

    /// (B F* - D - L*) p - P B F* p
    Vector rhs(const Vector& p) const
    {
        const Vector BFp = beta.cwiseProduct(F * p);
        return BFp - delta.cwiseProduct(p) - L * p - p.cwiseProduct(BFp);
    }
};

/// Stacked N^alpha pi^alpha over layers; layers must be strongly connected.
inline Vector equilibrium_populations(const MultiLayerDispersal& d)
{
    Vector x(d.dim());
    for (Eigen::Index a = 0; a < d.m(); ++a)
        x.segment(a * d.n(), d.n()) = d.population(a) * stationary_distribution(d.layer(a));
    return x;
}

inline Linearization linearize(const MultiLayerDispersal& d, const EpidemicRates& r, const Vector& x_star)
{
    return {r.beta, r.delta, assemble_F(d, x_star).dense(), assemble_L(d, x_star)};
}

/// H(p) = (I + A (P + (I - P) M))^{-1} A p with M = I - F*.
class EndemicMap
{
public:
    explicit EndemicMap(const Linearization& sys)
        : m_A(sys.next_generation()), m_M(Matrix::Identity(sys.size(), sys.size()) - sys.F)
    {
    }

    const Matrix& next_generation() const { return m_A; }

    Vector operator()(const Vector& p) const
    {
        const auto N = p.size();
        // P + (I - P) M = M + P (I - M)
        Matrix inner = m_M;
        inner += p.asDiagonal() * (Matrix::Identity(N, N) - m_M);
        Matrix lhs = m_A * inner;
        lhs.diagonal().array() += 1.0;
        return lhs.partialPivLu().solve(m_A * p);
    }

private:
    Matrix m_A;
    Matrix m_M;
};

struct FixedPointResult
{
    Vector p;
    int iterations = 0;
    int perron_iterations = 0;
    double residual = 0.0; // sup-norm of the dynamics at p
};

namespace detail
{

inline Vector iterate_map(const EndemicMap& H, Vector p, int& iterations)
{
    constexpr int kMaxIterations = 100000;
    for (iterations = 1; iterations <= kMaxIterations; ++iterations)
    {
        Vector next = H(p);
        const double change = (next - p).lpNorm<Eigen::Infinity>();
        p = std::move(next);
        if (change <= 1e-12)
            return p;
    }
    throw NonConvergence("endemic_fixed_point", "no convergence after 1e5 iterations");
}

} // namespace detail

/// Positive fixed point of H, iterated down from 1 and up from a small
/// multiple of the Perron vector of A F*; both limits must coincide.
inline FixedPointResult endemic_fixed_point(const Linearization& sys)
{
    const double mu = spectral_abscissa(sys.jacobian());
    if (!(mu > 0.0))
        throw NotEndemic("spectral abscissa " + std::to_string(mu) + " is not positive");

    const EndemicMap H(sys);
    FixedPointResult out;
    out.p = detail::iterate_map(H, Vector::Ones(sys.size()), out.iterations);

    const Vector u = perron_pair(H.next_generation() * sys.F).vector;
    double eps = 0.5 * u.minCoeff() / u.maxCoeff();
    bool found = false;
    for (int halving = 0; halving <= 60 && !found; ++halving, eps *= 0.5)
    {
        const Vector K = (H(eps * u) - eps * u) / eps;
        found = K.minCoeff() > 0.0;
        if (found)
            break;
    }
    if (!found)
        throw NonConvergence("endemic_fixed_point", "no epsilon with H(eps u) >= eps u");
    const Vector from_below = detail::iterate_map(H, eps * u, out.perron_iterations);
    const double gap = (from_below - out.p).lpNorm<Eigen::Infinity>();
    if (!(gap <= 1e-8))
        throw NonConvergence("endemic_fixed_point",
                             "iterates from 1 and from eps*u disagree by " + std::to_string(gap));

    if (!(out.p.minCoeff() > 0.0))
        throw NonConvergence("endemic_fixed_point", "fixed point is not strictly positive");
    out.residual = sys.rhs(out.p).lpNorm<Eigen::Infinity>();
    if (!(out.residual <= 1e-8))
        throw NonConvergence("endemic_fixed_point", "stationarity residual " + std::to_string(out.residual));
    return out;
}

inline Vector endemic_fixed_point(const MultiLayerDispersal& d, const EpidemicRates& r)
{
    return endemic_fixed_point(linearize(d, r, equilibrium_populations(d))).p;
}

enum class Regime
{
    DfeStable,
    Endemic
};

inline const char* to_string(Regime r)
{
    return r == Regime::Endemic ? "endemic" : "DFE-stable";
}

struct BlockReport
{
    std::vector<NodeLayer> coords;
    double mu = 0.0;
    double r0 = 0.0;
    Regime regime = Regime::DfeStable;
    bool boundary = false;
    std::optional<Vector> p_endemic; // over `coords`
    int iterations = 0;
    double residual = 0.0;
};

struct EquilibriumReport
{
    Vector pi; // population-scaled stationary profile
    double mu = 0.0;
    double r0 = 0.0;
    Regime regime = Regime::DfeStable;
    bool boundary = false;
    std::optional<Vector> p_endemic;
    bool reduced = false;
    std::vector<NodeLayer> transient; // non-sink coordinates (reduced analysis)
    std::vector<BlockReport> blocks;
    double stationarity_residual = 0.0;
};

/// Threshold quantities for one irreducible system.
inline BlockReport analyze_block(const Linearization& sys)
{
    BlockReport b;
    b.mu = spectral_abscissa(sys.jacobian());
    b.r0 = spectral_radius(sys.next_generation() * sys.F);
    b.boundary = std::abs(b.mu) <= kThresholdBand;
    b.regime = b.mu > kThresholdBand ? Regime::Endemic : Regime::DfeStable;
    if (!b.boundary && ((b.mu > 0.0) != (b.r0 > 1.0)))
        throw NumericalError("classify", "sign of mu (" + std::to_string(b.mu) + ") disagrees with R0 - 1 ("
                                             + std::to_string(b.r0 - 1.0) + ")");
    if (b.regime == Regime::Endemic)
    {
        auto fp = endemic_fixed_point(sys);
        b.iterations = fp.iterations;
        b.residual = fp.residual;
        b.p_endemic = std::move(fp.p);
    }
    return b;
}

inline double stationarity_residual(const MultiLayerDispersal& d, const Vector& x)
{
    double worst = 0.0;
    for (Eigen::Index a = 0; a < d.m(); ++a)
    {
        const Vector xa = x.segment(a * d.n(), d.n()) / d.population(a);
        worst = std::max(worst, (d.layer(a).matrix().transpose() * xa).lpNorm<Eigen::Infinity>());
    }
    return worst;
}

/// Equilibrium analysis for strongly connected layers.
inline EquilibriumReport classify(const MultiLayerDispersal& d, const EpidemicRates& r)
{
    r.validate(d.dim());
    const auto sc = validate_strong_connectivity(d);
    for (std::size_t a = 0; a < sc.size(); ++a)
        if (!sc[a])
            throw NonIrreducible("layer " + std::to_string(a + 1) + " is not strongly connected");
    check_layer_recovery(d, r);

    EquilibriumReport rep;
    rep.pi = equilibrium_populations(d);
    rep.stationarity_residual = stationarity_residual(d, rep.pi);
    auto block = analyze_block(linearize(d, r, rep.pi));
    for (Eigen::Index a = 0; a < d.m(); ++a)
        for (Eigen::Index i = 0; i < d.n(); ++i)
            block.coords.push_back({static_cast<int>(a), static_cast<int>(i)});
    rep.mu = block.mu;
    rep.r0 = block.r0;
    rep.regime = block.regime;
    rep.boundary = block.boundary;
    rep.p_endemic = block.p_endemic;
    rep.blocks.push_back(std::move(block));
    return rep;
}

/// Long-run populations of every layer; without an initial profile each
/// layer starts spread evenly over the patches.
inline Vector limit_populations(const MultiLayerDispersal& d, const std::optional<Vector>& x0 = std::nullopt)
{
    Vector x(d.dim());
    for (Eigen::Index a = 0; a < d.m(); ++a)
    {
        const Vector start = x0 ? Vector(x0->segment(a * d.n(), d.n()))
                                : Vector::Constant(d.n(), d.population(a) / static_cast<double>(d.n()));
        x.segment(a * d.n(), d.n()) = limit_distribution(d.layer(a), start);
    }
    return x;
}

/// Equilibrium analysis restricted to sink nodes, one report per block of
/// sink coordinates coupled through shared patches.
inline EquilibriumReport classify_reduced(const MultiLayerDispersal& d, const EpidemicRates& r,
                                          const std::optional<Vector>& x0 = std::nullopt)
{
    r.validate(d.dim());
    const auto rs = make_reduced_system(d, r);
    for (Eigen::Index a = 0; a < d.m(); ++a)
        for (const auto& sink : rs.sinks.layers[a].sinks)
        {
            bool recovers = false;
            for (int node : sink)
                recovers = recovers || r.delta(d.index(a, node)) > 0.0;
            if (!recovers)
            {
                std::string nodes;
                for (int node : sink)
                    nodes += (nodes.empty() ? "" : ",") + std::to_string(node + 1);
                throw AssumptionViolated("sink recovery", "sink {" + nodes + "} of layer " + std::to_string(a + 1)
                                                              + " has no node with positive recovery rate");
            }
        }

    EquilibriumReport rep;
    rep.reduced = true;
    rep.transient = rs.non_sink_coords;
    rep.pi = limit_populations(d, x0);
    rep.stationarity_residual = 0.0;
    for (Eigen::Index a = 0; a < d.m(); ++a)
        rep.stationarity_residual = std::max(
            rep.stationarity_residual,
            (d.layer(a).matrix().transpose() * rep.pi.segment(a * d.n(), d.n())).lpNorm<Eigen::Infinity>()
                / d.population(a));

    const auto mats = assemble_reduced(d, rs, rep.pi);
    rep.mu = -std::numeric_limits<double>::infinity();
    rep.r0 = 0.0;
    Vector p_full = Vector::Zero(d.dim());
    bool any_endemic = false;
    for (const auto& coords : rs.sinks.blocks)
    {
        std::vector<Eigen::Index> idx;
        for (const auto& c : coords)
        {
            const auto it = std::find(rs.sink_coords.begin(), rs.sink_coords.end(), c);
            idx.push_back(std::distance(rs.sink_coords.begin(), it));
        }
        const auto k = static_cast<Eigen::Index>(idx.size());
        Linearization sys{Vector(k), Vector(k), Matrix(k, k), Matrix(k, k)};
        for (Eigen::Index a = 0; a < k; ++a)
        {
            sys.beta(a) = rs.beta_bar(idx[a]);
            sys.delta(a) = rs.delta_bar(idx[a]);
            for (Eigen::Index b = 0; b < k; ++b)
            {
                sys.F(a, b) = mats.F_bar(idx[a], idx[b]);
                sys.L(a, b) = mats.L_bar(idx[a], idx[b]);
            }
        }
        auto block = analyze_block(sys);
        block.coords = coords;
        if (block.p_endemic)
        {
            any_endemic = true;
            for (Eigen::Index a = 0; a < k; ++a)
                p_full(d.index(coords[a].layer, coords[a].node)) = (*block.p_endemic)(a);
        }
        rep.mu = std::max(rep.mu, block.mu);
        rep.r0 = std::max(rep.r0, block.r0);
        rep.blocks.push_back(std::move(block));
    }
    rep.boundary = std::abs(rep.mu) <= kThresholdBand;
    rep.regime = any_endemic ? Regime::Endemic : Regime::DfeStable;
    if (any_endemic)
        rep.p_endemic = p_full;
    return rep;
}

} // namespace patchsis

#endif // PATCHSIS_EQUILIBRIA_HPP
