#ifndef PATCHSIS_MODEL_HPP
#define PATCHSIS_MODEL_HPP

#include <string>
#include <utility>
#include <vector>

#include "network.hpp"

namespace patchsis
{

/// Per (node, layer) infection and recovery rates, layer-major.
struct EpidemicRates
{
    Vector beta;
    Vector delta;

    static EpidemicRates uniform(Eigen::Index dim, double beta, double delta)
    {
        return {Vector::Constant(dim, beta), Vector::Constant(dim, delta)};
    }

    void validate(Eigen::Index dim) const
    {
        if (beta.size() != dim || delta.size() != dim)
            throw std::invalid_argument("rate vectors must have length n*m");
        if (!(beta.minCoeff() > 0.0))
            throw std::invalid_argument("infection rates must be positive");
        if (!(delta.minCoeff() >= 0.0))
            throw std::invalid_argument("recovery rates must be non-negative");
    }
};

/// Every layer needs at least one node with a positive recovery rate.
inline void check_layer_recovery(const MultiLayerDispersal& d, const EpidemicRates& r)
{
    for (Eigen::Index a = 0; a < d.m(); ++a)
        if (!(r.delta.segment(a * d.n(), d.n()).maxCoeff() > 0.0))
            throw AssumptionViolated("positive recovery",
                                     "layer " + std::to_string(a + 1) + " has no node with positive recovery rate");
}

struct SystemState
{
    Vector p; // infected fractions
    Vector x; // head counts
    double t = 0.0;
};

/// Denominators below this are treated as an empty patch.
inline double population_floor(const Vector& x)
{
    return 1e-12 * x.mean();
}

/// L(x): block diagonal, l_ii = sum_k q_ki x_k / x_i, l_ij = -q_ji x_j / x_i.
/// A row whose patch receives no inflow is zero regardless of x_i.
inline Matrix assemble_L(const MultiLayerDispersal& d, const Vector& x)
{
    const auto n = d.n();
    const double floor = population_floor(x);
    Matrix L = Matrix::Zero(d.dim(), d.dim());
    for (Eigen::Index a = 0; a < d.m(); ++a)
    {
        const Matrix& q = d.layer(a).matrix();
        const auto off = a * n;
        for (Eigen::Index i = 0; i < n; ++i)
        {
            double inflow = 0.0;
            for (Eigen::Index j = 0; j < n; ++j)
                if (j != i)
                    inflow += q(j, i) * x(off + j);
            if (inflow == 0.0)
                continue;
            const double xi = x(off + i);
            if (xi < floor)
                throw ZeroPopulation("layer " + std::to_string(a + 1) + ", node " + std::to_string(i + 1)
                                     + " is empty but receives inflow");
            for (Eigen::Index j = 0; j < n; ++j)
                if (j != i)
                    L(off + i, off + j) = -q(j, i) * x(off + j) / xi;
            L(off + i, off + i) = inflow / xi;
        }
    }
    return L;
}

/// F(x) = 1_m (x) [F^1 ... F^m], stored as the n x m grid of f_i^alpha.
class FractionGrid
{
public:
    FractionGrid() = default;
    explicit FractionGrid(Matrix fractions) : m_f(std::move(fractions)) {}

    Eigen::Index n() const { return m_f.rows(); }
    Eigen::Index m() const { return m_f.cols(); }
    double fraction(Eigen::Index node, Eigen::Index layer) const { return m_f(node, layer); }
    const Matrix& fractions() const { return m_f; }

    /// Per-node infected fraction p_avg_i = sum_sigma f_i^sigma p_i^sigma.
    Vector average(const Vector& p) const
    {
        Vector avg = Vector::Zero(n());
        for (Eigen::Index s = 0; s < m(); ++s)
            avg.array() += m_f.col(s).array() * p.segment(s * n(), n()).array();
        return avg;
    }

    /// F p, i.e. p_avg replicated in each layer block.
    Vector apply(const Vector& p) const { return average(p).replicate(m(), 1); }

    Matrix dense() const
    {
        const auto N = n() * m();
        Matrix F = Matrix::Zero(N, N);
        for (Eigen::Index a = 0; a < m(); ++a)
            for (Eigen::Index s = 0; s < m(); ++s)
                for (Eigen::Index i = 0; i < n(); ++i)
                    F(a * n() + i, s * n() + i) = m_f(i, s);
        return F;
    }

private:
    Matrix m_f;
};

inline FractionGrid assemble_F(const MultiLayerDispersal& d, const Vector& x)
{
    const auto n = d.n();
    const double floor = population_floor(x);
    Matrix f(n, d.m());
    for (Eigen::Index i = 0; i < n; ++i)
    {
        double total = 0.0;
        for (Eigen::Index s = 0; s < d.m(); ++s)
            total += x(s * n + i);
        if (total < floor)
            throw ZeroPopulation("node " + std::to_string(i + 1) + " holds no individuals");
        for (Eigen::Index s = 0; s < d.m(); ++s)
            f(i, s) = x(s * n + i) / total;
    }
    return FractionGrid(std::move(f));
}

struct StateDerivative
{
    Vector dp;
    Vector dx;
};

/// Right-hand side of the full model, evaluated componentwise:
///   dp_i = -delta_i p_i + beta_i pavg_i (1 - p_i) + sum_j q_ji x_j (p_j - p_i) / x_i
///   dx^alpha = (Q^alpha)^T x^alpha
/// Construction caches the inflow lists of every layer.
class Dynamics
{
public:
    Dynamics(MultiLayerDispersal d, EpidemicRates r) : m_d(std::move(d)), m_r(std::move(r))
    {
        m_r.validate(m_d.dim());
        const auto n = m_d.n();
        m_inflow.resize(static_cast<std::size_t>(m_d.dim()));
        for (Eigen::Index a = 0; a < m_d.m(); ++a)
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < n; ++j)
                    if (m_d.layer(a).has_edge(j, i))
                        m_inflow[a * n + i].emplace_back(a * n + j, m_d.layer(a).rate(j, i));
    }

    const MultiLayerDispersal& dispersal() const { return m_d; }
    const EpidemicRates& rates() const { return m_r; }

    void dx(const Vector& x, Vector& out) const
    {
        const auto N = m_d.dim();
        out.resize(N);
        for (Eigen::Index k = 0; k < N; ++k)
        {
            double v = 0.0;
            for (const auto& [j, q] : m_inflow[k])
                v += q * x(j);
            out(k) = v - m_nu_cache(k) * x(k);
        }
    }

    /// Infected-fraction derivative for selected coordinates only; the rest of
    /// `out` is left untouched.
    void dp(const Vector& p, const Vector& x, Vector& out, std::span<const Eigen::Index> coords) const
    {
        const auto n = m_d.n();
        const double floor = population_floor(x);
        out.resize(m_d.dim());
        for (Eigen::Index k : coords)
        {
            const Eigen::Index i = k % n;
            double total = 0.0, infected = 0.0;
            for (Eigen::Index s = 0; s < m_d.m(); ++s)
            {
                total += x(s * n + i);
                infected += x(s * n + i) * p(s * n + i);
            }
            if (total < floor)
                throw ZeroPopulation("node " + std::to_string(i + 1) + " holds no individuals");
            const double avg = infected / total;
            double v = -m_r.delta(k) * p(k) + m_r.beta(k) * avg * (1.0 - p(k));
            if (!m_inflow[k].empty())
            {
                double flow = 0.0;
                for (const auto& [j, q] : m_inflow[k])
                    flow += q * x(j) * (p(j) - p(k));
                if (x(k) < floor)
                    throw ZeroPopulation("coordinate " + std::to_string(k + 1) + " is empty but receives inflow");
                v += flow / x(k);
            }
            out(k) = v;
        }
    }

    void dp(const Vector& p, const Vector& x, Vector& out) const { dp(p, x, out, all_coords()); }

    StateDerivative operator()(const SystemState& s) const
    {
        StateDerivative der;
        dp(s.p, s.x, der.dp);
        dx(s.x, der.dx);
        return der;
    }

    std::span<const Eigen::Index> all_coords() const { return m_all; }

private:
    MultiLayerDispersal m_d;
    EpidemicRates m_r;
    std::vector<std::vector<std::pair<Eigen::Index, double>>> m_inflow;
    Vector m_nu_cache = m_d.exit_rates();
    std::vector<Eigen::Index> m_all = make_range(m_d.dim());

    static std::vector<Eigen::Index> make_range(Eigen::Index N)
    {
        std::vector<Eigen::Index> v(static_cast<std::size_t>(N));
        std::iota(v.begin(), v.end(), Eigen::Index{0});
        return v;
    }
};

inline StateDerivative full_rhs(const MultiLayerDispersal& d, const EpidemicRates& r, const SystemState& s)
{
    return Dynamics(d, r)(s);
}

/// Matrix form (BF - D - L) p - P B F p of the infected-fraction dynamics.
inline Vector p_rhs_matrix_form(const MultiLayerDispersal& d, const EpidemicRates& r, const SystemState& s)
{
    const Matrix L = assemble_L(d, s.x);
    const Vector Fp = assemble_F(d, s.x).apply(s.p);
    const Vector BFp = r.beta.cwiseProduct(Fp);
    return BFp - r.delta.cwiseProduct(s.p) - L * s.p - s.p.cwiseProduct(BFp);
}

/// Index bookkeeping between full (n*m) and sink-restricted coordinates.
struct ReducedSystem
{
    SinkStructure sinks;
    std::vector<NodeLayer> sink_coords;     // reduced order: layer-major, node ascending
    std::vector<NodeLayer> non_sink_coords; // same ordering for the complement
    std::vector<Eigen::Index> sink_index;   // full index of each reduced coordinate
    std::vector<Eigen::Index> non_sink_index;
    Vector beta_bar;
    Vector delta_bar;

    Eigen::Index size() const { return static_cast<Eigen::Index>(sink_coords.size()); }

    Vector restrict(const Vector& full) const
    {
        Vector out(size());
        for (Eigen::Index k = 0; k < size(); ++k)
            out(k) = full(sink_index[k]);
        return out;
    }

    Vector restrict_non_sink(const Vector& full) const
    {
        Vector out(static_cast<Eigen::Index>(non_sink_index.size()));
        for (Eigen::Index k = 0; k < out.size(); ++k)
            out(k) = full(non_sink_index[k]);
        return out;
    }
};

inline ReducedSystem make_reduced_system(const MultiLayerDispersal& d, const EpidemicRates& r)
{
    ReducedSystem rs;
    rs.sinks = detect_sinks(d);
    for (Eigen::Index a = 0; a < d.m(); ++a)
    {
        const auto& ls = rs.sinks.layers[a];
        for (int node : ls.sink_nodes)
        {
            rs.sink_coords.push_back({static_cast<int>(a), node});
            rs.sink_index.push_back(d.index(a, node));
        }
        for (int node : ls.non_sink_nodes)
        {
            rs.non_sink_coords.push_back({static_cast<int>(a), node});
            rs.non_sink_index.push_back(d.index(a, node));
        }
    }
    rs.beta_bar = rs.restrict(r.beta);
    rs.delta_bar = rs.restrict(r.delta);
    return rs;
}

struct ReducedMatrices
{
    Matrix L_bar; // nbar x nbar, block diagonal over layers
    Matrix L_hat; // nbar x (nm - nbar), block diagonal over layers
    Matrix F_bar; // nbar x nbar, blocks F_bar^{alpha sigma}
    Matrix F_hat; // nbar x (nm - nbar), blocks F_hat^{alpha sigma}
};

inline ReducedMatrices assemble_reduced(const MultiLayerDispersal& d, const ReducedSystem& rs, const Vector& x)
{
    const auto n = d.n();
    const auto nbar = rs.size();
    const auto nhat = static_cast<Eigen::Index>(rs.non_sink_coords.size());
    const double floor = population_floor(x);
    ReducedMatrices out{Matrix::Zero(nbar, nbar), Matrix::Zero(nbar, nhat), Matrix::Zero(nbar, nbar),
                        Matrix::Zero(nbar, nhat)};

    auto node_total = [&](int node) {
        double total = 0.0;
        for (Eigen::Index s = 0; s < d.m(); ++s)
            total += x(s * n + node);
        return total;
    };

    for (Eigen::Index r = 0; r < nbar; ++r)
    {
        const auto [a, vi] = rs.sink_coords[r];
        const Matrix& q = d.layer(a).matrix();
        const double xi = x(d.index(a, vi));
        const double total_i = node_total(vi);
        if (xi < floor || total_i < floor)
            throw ZeroPopulation("sink node " + std::to_string(vi + 1) + " of layer " + std::to_string(a + 1)
                                 + " is empty");

        double inflow = 0.0;
        for (Eigen::Index h = 0; h < n; ++h)
            if (h != vi)
                inflow += q(h, vi) * x(d.index(a, h));
        out.L_bar(r, r) = inflow / xi;

        for (Eigen::Index c = 0; c < nbar; ++c)
        {
            const auto [s, vj] = rs.sink_coords[c];
            if (s == a && vj != vi)
                out.L_bar(r, c) = -q(vj, vi) * x(d.index(a, vj)) / xi;
            if (vj == vi)
                out.F_bar(r, c) = x(d.index(s, vj)) / total_i;
        }
        for (Eigen::Index c = 0; c < nhat; ++c)
        {
            const auto [s, vj] = rs.non_sink_coords[c];
            if (s == a)
                out.L_hat(r, c) = -q(vj, vi) * x(d.index(a, vj)) / xi;
            if (vj == vi)
                out.F_hat(r, c) = x(d.index(s, vj)) / total_i;
        }
    }
    return out;
}

/// Sink-restricted dynamics:
///   dpbar = (Bbar Fbar - Dbar - Lbar) pbar - Pbar Bbar Fbar pbar + (I - Pbar) Bbar Fhat phat - Lhat phat
/// with pbar, phat read from the full state; x evolves as in the full model.
inline StateDerivative reduced_rhs(const MultiLayerDispersal& d, const EpidemicRates& r, const ReducedSystem& rs,
                                   const SystemState& s)
{
    const auto mats = assemble_reduced(d, rs, s.x);
    const Vector pbar = rs.restrict(s.p);
    const Vector phat = rs.restrict_non_sink(s.p);
    const Vector beta_bar = rs.restrict(r.beta);
    const Vector delta_bar = rs.restrict(r.delta);
    const Vector BFp = beta_bar.cwiseProduct(mats.F_bar * pbar);
    const Vector BFhat = beta_bar.cwiseProduct(mats.F_hat * phat);

    StateDerivative der;
    der.dp = BFp - delta_bar.cwiseProduct(pbar) - mats.L_bar * pbar - pbar.cwiseProduct(BFp)
             + (Vector::Ones(rs.size()) - pbar).cwiseProduct(BFhat) - mats.L_hat * phat;
    der.dx.resize(d.dim());
    for (Eigen::Index a = 0; a < d.m(); ++a)
        der.dx.segment(a * d.n(), d.n()) = d.layer(a).matrix().transpose() * s.x.segment(a * d.n(), d.n());
    return der;
}

} // namespace patchsis

#endif // PATCHSIS_MODEL_HPP
