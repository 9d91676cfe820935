#ifndef PATCHSIS_GP_SOLVER_HPP
#define PATCHSIS_GP_SOLVER_HPP

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace patchsis::gp
{

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// log sum_k exp(a_k^T y + b_k): a posynomial after the substitution y = log(variables).
class LogSumExp
{
public:
    LogSumExp() = default;
    LogSumExp(Matrix exponents, Vector log_coeffs) : m_a(std::move(exponents)), m_b(std::move(log_coeffs)) {}

    Eigen::Index terms() const { return m_a.rows(); }
    Eigen::Index variables() const { return m_a.cols(); }
    const Matrix& exponents() const { return m_a; }
    const Vector& log_coeffs() const { return m_b; }

    double value(const Vector& y) const
    {
        const Vector z = m_a * y + m_b;
        const double zmax = z.maxCoeff();
        return zmax + std::log((z.array() - zmax).exp().sum());
    }

    /// Value, gradient and Hessian.
    double derivatives(const Vector& y, Vector& grad, Matrix& hess) const
    {
        const Vector z = m_a * y + m_b;
        const double zmax = z.maxCoeff();
        Vector w = (z.array() - zmax).exp();
        const double total = w.sum();
        w /= total;
        grad = m_a.transpose() * w;
        hess = m_a.transpose() * w.asDiagonal() * m_a - grad * grad.transpose();
        return zmax + std::log(total);
    }

private:
    Matrix m_a;
    Vector m_b;
};

/// f0(y) = c^T y + (optional) log-sum-exp term.
struct Objective
{
    Vector linear;
    std::optional<LogSumExp> lse;

    double value(const Vector& y) const { return linear.dot(y) + (lse ? lse->value(y) : 0.0); }
};

struct BarrierOptions
{
    double t0 = 1.0;
    double t_factor = 10.0;
    double gap_tolerance = 1e-7;    // (#constraints) / t
    double newton_tolerance = 1e-8; // lambda^2 / 2
    int max_newton_per_centering = 50;
    int max_total_newton = 5000;
};

struct BarrierResult
{
    Vector y;
    int outer_iterations = 0;
    int newton_iterations = 0;
    double gap = 0.0;
    double decrement = 0.0; // last Newton decrement lambda^2 / 2
    bool stopped_early = false;
};

/// Log-barrier interior-point method for
///     minimize f0(y)  subject to  h_k(y) <= 0,
/// with every h_k a log-sum-exp. `y0` must be strictly feasible. `stop`, when
/// given, is checked after every Newton step and ends the solve early.
inline BarrierResult minimize(const Objective& f0, const std::vector<LogSumExp>& constraints, Vector y0,
                              const BarrierOptions& opts = {},
                              const std::function<bool(const Vector&)>& stop = {})
{
    const auto nvar = y0.size();
    for (const auto& h : constraints)
        if (!(h.value(y0) < 0.0))
            throw Infeasible("solve_gp", "barrier start point is not strictly feasible");

    BarrierResult res;
    res.y = std::move(y0);
    double t = opts.t0;
    const double m = static_cast<double>(constraints.size());

    auto phi = [&](const Vector& y, double tt) {
        double v = tt * f0.value(y);
        for (const auto& h : constraints)
        {
            const double hv = h.value(y);
            if (!(hv < 0.0))
                return std::numeric_limits<double>::infinity();
            v -= std::log(-hv);
        }
        return v;
    };

    Vector g_k(nvar);
    Matrix h_k(nvar, nvar);
    while (true)
    {
        ++res.outer_iterations;
        for (int it = 0; it < opts.max_newton_per_centering; ++it)
        {
            Vector grad = t * f0.linear;
            Matrix hess = Matrix::Zero(nvar, nvar);
            if (f0.lse)
            {
                f0.lse->derivatives(res.y, g_k, h_k);
                grad += t * g_k;
                hess += t * h_k;
            }
            for (const auto& h : constraints)
            {
                const double hv = h.derivatives(res.y, g_k, h_k);
                const double inv = -1.0 / hv;
                grad += inv * g_k;
                hess += inv * h_k + (inv * inv) * (g_k * g_k.transpose());
            }

            Eigen::LDLT<Matrix> ldlt(hess);
            Vector step = -ldlt.solve(grad);
            if (ldlt.info() != Eigen::Success || !step.allFinite())
            {
                const double reg = 1e-12 * (1.0 + hess.diagonal().cwiseAbs().maxCoeff());
                hess.diagonal().array() += reg;
                step = -hess.ldlt().solve(grad);
            }
            const double lambda_sq = -grad.dot(step);
            res.decrement = 0.5 * lambda_sq;
            if (res.decrement <= opts.newton_tolerance)
                break;

            const double phi0 = phi(res.y, t);
            double s = 1.0;
            Vector trial = res.y + s * step;
            while (!(phi(trial, t) <= phi0 + 0.01 * s * grad.dot(step)) && s > 1e-16)
            {
                s *= 0.5;
                trial = res.y + s * step;
            }
            if (s <= 1e-16)
                break; // no further progress at this precision
            res.y = std::move(trial);
            ++res.newton_iterations;
            if (res.newton_iterations > opts.max_total_newton)
                throw MaxIterations("solve_gp", "Newton iteration budget exhausted");
            if (stop && stop(res.y))
            {
                res.stopped_early = true;
                res.gap = m / t;
                return res;
            }
        }
        res.gap = m / t;
        if (res.gap <= opts.gap_tolerance)
            return res;
        t *= opts.t_factor;
    }
}

} // namespace patchsis::gp

#endif // PATCHSIS_GP_SOLVER_HPP
