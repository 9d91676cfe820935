#ifndef PATCHSIS_INTERVENE_HPP
#define PATCHSIS_INTERVENE_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "equilibria.hpp"
#include "gp_solver.hpp"

namespace patchsis
{

/// Single-variable cost sum_k coeff_k v^exponent_k + offset. The posynomial
/// part must have positive coefficients; the offset is a free constant.
struct CostFunction
{
    struct Term
    {
        double coeff = 1.0;
        double exponent = 1.0;
    };
    std::vector<Term> terms;
    double offset = 0.0;

    double posynomial(double v) const
    {
        double total = 0.0;
        for (const auto& t : terms)
            total += t.coeff * std::pow(v, t.exponent);
        return total;
    }

    double operator()(double v) const { return posynomial(v) + offset; }

    /// 1/v - 1/zero_at: zero at v = zero_at, growing as v shrinks.
    static CostFunction inverse(double zero_at) { return {{{1.0, -1.0}}, -1.0 / zero_at}; }
};

/// Budget-constrained choice of infection and recovery rates. Recovery costs
/// are expressed in the shifted variable delta_hat = Delta_bar + 1 - delta,
/// Delta_bar being the largest recovery upper bound.
struct InterventionProblem
{
    MultiLayerDispersal network;
    Vector beta_lower, beta_upper;
    Vector delta_lower, delta_upper;
    std::vector<CostFunction> beta_cost;      // f, one per coordinate
    std::vector<CostFunction> delta_hat_cost; // g~, one per coordinate
    double budget = 0.0;

    Eigen::Index dim() const { return network.dim(); }
    double delta_bar() const { return delta_upper.maxCoeff(); }
    double delta_hat(double delta) const { return delta_bar() + 1.0 - delta; }

    void validate() const
    {
        const auto N = dim();
        if (beta_lower.size() != N || beta_upper.size() != N || delta_lower.size() != N || delta_upper.size() != N)
            throw std::invalid_argument("rate bounds must have length n*m");
        if (static_cast<Eigen::Index>(beta_cost.size()) != N || static_cast<Eigen::Index>(delta_hat_cost.size()) != N)
            throw std::invalid_argument("one cost function per coordinate is required");
        for (Eigen::Index k = 0; k < N; ++k)
        {
            if (!(beta_lower(k) > 0.0) || !(beta_lower(k) <= beta_upper(k)))
                throw std::invalid_argument("infection bounds must satisfy 0 < lower <= upper");
            if (!(delta_lower(k) >= 0.0) || !(delta_lower(k) <= delta_upper(k)))
                throw std::invalid_argument("recovery bounds must satisfy 0 <= lower <= upper");
            for (const auto* c : {&beta_cost[k], &delta_hat_cost[k]})
                for (const auto& t : c->terms)
                    if (!(t.coeff > 0.0))
                        throw std::invalid_argument("cost terms must have positive coefficients");
        }
        if (!(budget >= 0.0))
            throw std::invalid_argument("budget must be non-negative");
    }

    double cost(const Vector& beta, const Vector& delta) const
    {
        double total = 0.0;
        for (Eigen::Index k = 0; k < dim(); ++k)
            total += beta_cost[k](beta(k)) + delta_hat_cost[k](delta_hat(delta(k)));
        return total;
    }
};

/// Nonnegative reformulation of the stability matrix:
///   mu(B F* - D - L*) = mu(B F* + D_hat + Lshift) - Delta_bar - 1 - nu_bar,
/// where Lshift has -l*_ij off the diagonal and nu_bar - nu_i on it.
struct ShiftedSystem
{
    Matrix F;                 // F*
    Matrix L;                 // L*
    Matrix shifted_laplacian; // Lshift, nonnegative
    double delta_bar = 0.0;
    double nu_bar = 0.0;

    double offset() const { return delta_bar + 1.0 + nu_bar; }

    Matrix nonnegative_matrix(const Vector& beta, const Vector& delta) const
    {
        Matrix M = beta.asDiagonal() * F + shifted_laplacian;
        M.diagonal().array() += delta_bar + 1.0 - delta.array();
        return M;
    }

    Matrix stability_matrix(const Vector& beta, const Vector& delta) const
    {
        Matrix J = beta.asDiagonal() * F - L;
        J.diagonal() -= delta;
        return J;
    }
};

inline ShiftedSystem shift_transform(const MultiLayerDispersal& d, double delta_bar)
{
    for (const auto& g : d.layers())
        if (!is_strongly_connected(g))
            throw NonIrreducible("intervention requires strongly connected layers");
    const Vector x_star = equilibrium_populations(d);
    ShiftedSystem s;
    s.F = assemble_F(d, x_star).dense();
    s.L = assemble_L(d, x_star);
    const Vector nu = d.exit_rates();
    s.nu_bar = nu.maxCoeff();
    s.delta_bar = delta_bar;
    s.shifted_laplacian = -s.L;
    s.shifted_laplacian.diagonal() = (s.nu_bar - nu.array()).matrix();
    return s;
}

struct SolverDiagnostics
{
    int outer_iterations = 0;
    int newton_iterations = 0;
    double gap = 0.0;
    double decrement = 0.0;
    bool feasible = true;
    bool degenerate = false; // budget admits a single point; no interior
    bool phase_one = false;
};

struct InterventionResult
{
    Vector beta;
    Vector delta;
    Vector u; // positive weights certifying lambda (u_0 = 1)
    double lambda = 0.0;
    double mu = 0.0;
    double budget_used = 0.0;
    double budget_unused = 0.0;
    SolverDiagnostics solver;
};

namespace detail
{

/// Bookkeeping for the log variables: [log lambda, log u_1..u_{N-1},
/// free log beta..., free log delta_hat...]. Coordinates with equal bounds are
/// folded into constants.
class GpLayout
{
public:
    GpLayout(const InterventionProblem& p, bool with_eigen_vars) : m_N(p.dim())
    {
        m_next = with_eigen_vars ? m_N : 0;
        m_beta_var.assign(static_cast<std::size_t>(m_N), -1);
        m_dhat_var.assign(static_cast<std::size_t>(m_N), -1);
        for (Eigen::Index k = 0; k < m_N; ++k)
            if (p.beta_lower(k) < p.beta_upper(k))
                m_beta_var[k] = m_next++;
        for (Eigen::Index k = 0; k < m_N; ++k)
            if (p.delta_lower(k) < p.delta_upper(k))
                m_dhat_var[k] = m_next++;
    }

    Eigen::Index variables() const { return m_next; }
    Eigen::Index lambda_var() const { return 0; }
    Eigen::Index u_var(Eigen::Index k) const { return k == 0 ? -1 : k; }
    Eigen::Index beta_var(Eigen::Index k) const { return m_beta_var[k]; }
    Eigen::Index dhat_var(Eigen::Index k) const { return m_dhat_var[k]; }

private:
    Eigen::Index m_N;
    Eigen::Index m_next = 0;
    std::vector<Eigen::Index> m_beta_var, m_dhat_var;
};

/// Accumulates monomials coeff * prod exp(e * y_var) into a LogSumExp.
class LseBuilder
{
public:
    explicit LseBuilder(Eigen::Index nvar) : m_nvar(nvar) {}

    class Term
    {
    public:
        Term(Eigen::Index nvar, double coeff) : m_row(Eigen::RowVectorXd::Zero(nvar)), m_log_coeff(std::log(coeff)) {}

        /// Multiply by v^e; v is the variable `var` or, when var < 0, the constant `fixed`.
        Term& times(Eigen::Index var, double e, double fixed = 1.0)
        {
            if (var >= 0)
                m_row(var) += e;
            else
                m_log_coeff += e * std::log(fixed);
            return *this;
        }

        Eigen::RowVectorXd m_row;
        double m_log_coeff;
    };

    Term& add(double coeff)
    {
        m_terms.emplace_back(m_nvar, coeff);
        return m_terms.back();
    }

    gp::LogSumExp build() const
    {
        Matrix a(static_cast<Eigen::Index>(m_terms.size()), m_nvar);
        Vector b(static_cast<Eigen::Index>(m_terms.size()));
        for (std::size_t k = 0; k < m_terms.size(); ++k)
        {
            a.row(static_cast<Eigen::Index>(k)) = m_terms[k].m_row;
            b(static_cast<Eigen::Index>(k)) = m_terms[k].m_log_coeff;
        }
        return {std::move(a), std::move(b)};
    }

private:
    Eigen::Index m_nvar;
    std::vector<Term> m_terms;
};

inline double budget_slack_constant(const InterventionProblem& p)
{
    double offsets = 0.0;
    for (Eigen::Index k = 0; k < p.dim(); ++k)
        offsets += p.beta_cost[k].offset + p.delta_hat_cost[k].offset;
    return p.budget - offsets;
}

/// Posynomial budget / (C - offsets) <= 1, plus box constraints on the free rates.
inline void rate_constraints(const InterventionProblem& p, const GpLayout& lay, gp::LogSumExp& budget,
                             std::vector<gp::LogSumExp>& box)
{
    const double rhs = budget_slack_constant(p);
    if (!(rhs > 0.0))
        throw Infeasible("solve_gp", "budget does not cover the constant cost offsets");
    const double dbar = p.delta_bar();
    LseBuilder b(lay.variables());
    for (Eigen::Index k = 0; k < p.dim(); ++k)
    {
        for (const auto& t : p.beta_cost[k].terms)
            b.add(t.coeff / rhs).times(lay.beta_var(k), t.exponent, p.beta_lower(k));
        for (const auto& t : p.delta_hat_cost[k].terms)
            b.add(t.coeff / rhs).times(lay.dhat_var(k), t.exponent, dbar + 1.0 - p.delta_lower(k));
    }
    budget = b.build();

    auto bound = [&](Eigen::Index var, double e, double coeff) {
        LseBuilder bb(lay.variables());
        bb.add(coeff).times(var, e);
        box.push_back(bb.build());
    };
    for (Eigen::Index k = 0; k < p.dim(); ++k)
    {
        if (const auto v = lay.beta_var(k); v >= 0)
        {
            bound(v, 1.0, 1.0 / p.beta_upper(k));
            bound(v, -1.0, p.beta_lower(k));
        }
        if (const auto v = lay.dhat_var(k); v >= 0)
        {
            bound(v, 1.0, 1.0 / (dbar + 1.0 - p.delta_lower(k)));
            bound(v, -1.0, dbar + 1.0 - p.delta_upper(k));
        }
    }
}

inline void rates_from(const InterventionProblem& p, const GpLayout& lay, const Vector& y, Vector& beta,
                       Vector& delta)
{
    const auto N = p.dim();
    const double dbar = p.delta_bar();
    beta.resize(N);
    delta.resize(N);
    for (Eigen::Index k = 0; k < N; ++k)
    {
        const auto bv = lay.beta_var(k);
        beta(k) = std::clamp(bv >= 0 ? std::exp(y(bv)) : p.beta_lower(k), p.beta_lower(k), p.beta_upper(k));
        const auto dv = lay.dhat_var(k);
        const double dhat = dv >= 0 ? std::exp(y(dv)) : dbar + 1.0 - p.delta_lower(k);
        delta(k) = std::clamp(dbar + 1.0 - dhat, p.delta_lower(k), p.delta_upper(k));
    }
}

inline InterventionResult evaluate_rates(const InterventionProblem& p, const ShiftedSystem& sys, Vector beta,
                                         Vector delta)
{
    InterventionResult r;
    r.beta = std::move(beta);
    r.delta = std::move(delta);
    const auto perron = perron_pair(sys.nonnegative_matrix(r.beta, r.delta));
    r.lambda = perron.value;
    r.u = perron.vector / perron.vector(0);
    r.mu = spectral_abscissa(sys.stability_matrix(r.beta, r.delta));
    r.budget_used = p.cost(r.beta, r.delta);
    r.budget_unused = p.budget - r.budget_used;
    return r;
}

} // namespace detail

/// Minimizes the spectral abscissa of B F* - D - L* under the budget, posed as
/// a geometric program over (lambda, u, beta, delta_hat) and solved in log
/// variables by a barrier method.
inline InterventionResult solve_gp(const InterventionProblem& p, const gp::BarrierOptions& opts = {})
{
    p.validate();
    const auto N = p.dim();
    const ShiftedSystem sys = shift_transform(p.network, p.delta_bar());
    const double dbar = p.delta_bar();

    // Phase I: a strictly feasible rate vector for the budget and the boxes.
    const detail::GpLayout rates_only(p, false);
    gp::LogSumExp budget1;
    std::vector<gp::LogSumExp> box1;
    detail::rate_constraints(p, rates_only, budget1, box1);

    Vector y_rates(rates_only.variables());
    for (Eigen::Index k = 0; k < N; ++k)
    {
        if (const auto v = rates_only.beta_var(k); v >= 0)
            y_rates(v) = 0.5 * (std::log(p.beta_lower(k)) + std::log(p.beta_upper(k)));
        if (const auto v = rates_only.dhat_var(k); v >= 0)
            y_rates(v) = 0.5 * (std::log(dbar + 1.0 - p.delta_upper(k)) + std::log(dbar + 1.0 - p.delta_lower(k)));
    }

    SolverDiagnostics diag;
    constexpr double kStrictMargin = 1e-7;
    if (!(budget1.value(y_rates) < -kStrictMargin))
    {
        diag.phase_one = true;
        gp::Objective f0{Vector::Zero(y_rates.size()), budget1};
        gp::BarrierOptions o1 = opts;
        o1.gap_tolerance = 1e-11;
        const auto r1 = gp::minimize(f0, box1, y_rates, o1,
                                     [&](const Vector& y) { return budget1.value(y) < -kStrictMargin; });
        diag.newton_iterations += r1.newton_iterations;
        y_rates = r1.y;
        const double best = budget1.value(y_rates);
        if (!r1.stopped_early)
        {
            if (best > 1e-8)
                throw Infeasible("solve_gp", "budget constraint is violated by a factor "
                                                 + std::to_string(std::exp(best))
                                                 + " at the cheapest admissible rates");
            // The budget pins the rates to (numerically) a single point.
            Vector beta, delta;
            detail::rates_from(p, rates_only, y_rates, beta, delta);
            auto res = detail::evaluate_rates(p, sys, std::move(beta), std::move(delta));
            diag.degenerate = true;
            diag.gap = r1.gap;
            diag.decrement = r1.decrement;
            res.solver = diag;
            return res;
        }
    }

    // Phase II.
    const detail::GpLayout lay(p, true);
    const auto nvar = lay.variables();
    gp::LogSumExp budget;
    std::vector<gp::LogSumExp> constraints;
    detail::rate_constraints(p, lay, budget, constraints);
    constraints.push_back(budget);

    for (Eigen::Index i = 0; i < N; ++i)
    {
        detail::LseBuilder b(nvar);
        const auto lam = lay.lambda_var();
        for (Eigen::Index j = 0; j < N; ++j)
        {
            if (sys.F(i, j) > 0.0)
            {
                auto& t = b.add(sys.F(i, j)).times(lay.beta_var(i), 1.0, p.beta_lower(i)).times(lam, -1.0);
                t.times(lay.u_var(j), 1.0).times(lay.u_var(i), -1.0);
            }
            if (j != i && sys.shifted_laplacian(i, j) > 0.0)
                b.add(sys.shifted_laplacian(i, j)).times(lam, -1.0).times(lay.u_var(j), 1.0).times(lay.u_var(i), -1.0);
        }
        b.add(1.0).times(lay.dhat_var(i), 1.0, dbar + 1.0 - p.delta_lower(i)).times(lam, -1.0);
        if (sys.shifted_laplacian(i, i) > 0.0)
            b.add(sys.shifted_laplacian(i, i)).times(lam, -1.0);
        constraints.push_back(b.build());
    }

    Vector y = Vector::Zero(nvar);
    for (Eigen::Index k = 0; k < N; ++k)
    {
        if (const auto v = rates_only.beta_var(k); v >= 0)
            y(lay.beta_var(k)) = y_rates(v);
        if (const auto v = rates_only.dhat_var(k); v >= 0)
            y(lay.dhat_var(k)) = y_rates(v);
    }
    {
        Vector beta, delta;
        detail::rates_from(p, lay, y, beta, delta);
        const double max_row = sys.nonnegative_matrix(beta, delta).rowwise().sum().maxCoeff();
        y(lay.lambda_var()) = std::log(2.0 * max_row);
    }

    gp::Objective f0{Vector::Zero(nvar), std::nullopt};
    f0.linear(lay.lambda_var()) = 1.0;
    const auto r2 = gp::minimize(f0, constraints, y, opts);

    InterventionResult res;
    detail::rates_from(p, lay, r2.y, res.beta, res.delta);
    res.lambda = std::exp(r2.y(lay.lambda_var()));
    res.u = Vector::Ones(N);
    for (Eigen::Index k = 1; k < N; ++k)
        res.u(k) = std::exp(r2.y(lay.u_var(k)));
    res.mu = res.lambda - sys.offset();
    res.budget_used = p.cost(res.beta, res.delta);
    res.budget_unused = p.budget - res.budget_used;
    diag.outer_iterations = r2.outer_iterations;
    diag.newton_iterations += r2.newton_iterations;
    diag.gap = r2.gap;
    diag.decrement = r2.decrement;
    res.solver = diag;
    return res;
}

/// Collatz-Wielandt certificate: max_i (M u)_i / u_i for the nonnegative matrix at the given rates.
inline double collatz_wielandt_ratio(const ShiftedSystem& sys, const InterventionResult& r)
{
    const Vector Mu = sys.nonnegative_matrix(r.beta, r.delta) * r.u;
    return (Mu.array() / r.u.array()).maxCoeff();
}

namespace detail
{

/// Moves a rate from its zero-cost end `free_end` towards `best_end` while
/// spending at most `amount`; returns the rate reached.
inline double spend_on(const CostFunction& cost, double free_end, double best_end, double amount)
{
    if (cost(best_end) <= amount)
        return best_end;
    if (cost(free_end) >= amount)
        return free_end;
    double lo = std::log(free_end), hi = std::log(best_end); // cost(exp(lo)) < amount < cost(exp(hi))
    for (int it = 0; it < 200; ++it)
    {
        const double mid = 0.5 * (lo + hi);
        (cost(std::exp(mid)) <= amount ? lo : hi) = mid;
    }
    return std::exp(lo);
}

} // namespace detail

/// Equal split of the budget over coordinates; each coordinate's share is
/// halved between recovery and infection resources. Recovery is served first,
/// whatever it cannot absorb rolls over to infection, and the rest stays unspent.
inline InterventionResult naive_allocation(const InterventionProblem& p)
{
    p.validate();
    const auto N = p.dim();
    const ShiftedSystem sys = shift_transform(p.network, p.delta_bar());
    const double half = p.budget / static_cast<double>(N) / 2.0;
    Vector beta(N), delta(N);
    for (Eigen::Index k = 0; k < N; ++k)
    {
        const auto& g = p.delta_hat_cost[k];
        const double dhat_free = p.delta_hat(p.delta_lower(k)), dhat_best = p.delta_hat(p.delta_upper(k));
        const double dhat = detail::spend_on(g, dhat_free, dhat_best, half);
        const double left = std::max(0.0, half - std::max(0.0, g(dhat)));
        beta(k) = detail::spend_on(p.beta_cost[k], p.beta_upper(k), p.beta_lower(k), half + left);
        delta(k) = std::clamp(p.delta_bar() + 1.0 - dhat, p.delta_lower(k), p.delta_upper(k));
    }
    auto res = detail::evaluate_rates(p, sys, std::move(beta), std::move(delta));
    res.mu = spectral_abscissa(sys.stability_matrix(res.beta, res.delta));
    return res;
}

} // namespace patchsis

#endif // PATCHSIS_INTERVENE_HPP
