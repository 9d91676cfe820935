#ifndef PATCHSIS_ERRORS_HPP
#define PATCHSIS_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace patchsis
{

/// Input that violates a modelling assumption (connectivity, recovery, target positivity).
class AssumptionError : public std::runtime_error
{
public:
    AssumptionError(std::string assumption, const std::string& what)
        : std::runtime_error(what), m_assumption(std::move(assumption))
    {
    }

    const std::string& assumption() const noexcept { return m_assumption; }

private:
    std::string m_assumption;
};

/// A numerical routine failed to meet its contract.
class NumericalError : public std::runtime_error
{
public:
    NumericalError(std::string operation, const std::string& what)
        : std::runtime_error(operation + ": " + what), m_operation(std::move(operation))
    {
    }

    const std::string& operation() const noexcept { return m_operation; }

private:
    std::string m_operation;
};

struct NonIrreducible : AssumptionError
{
    explicit NonIrreducible(const std::string& what) : AssumptionError("strong connectivity", what) {}
};

struct InvalidTarget : AssumptionError
{
    explicit InvalidTarget(const std::string& what) : AssumptionError("positive target", what) {}
};

struct AssumptionViolated : AssumptionError
{
    using AssumptionError::AssumptionError;
};

struct SolverFailure : NumericalError
{
    using NumericalError::NumericalError;
};

struct ZeroPopulation : NumericalError
{
    explicit ZeroPopulation(const std::string& what) : NumericalError("population", what) {}
};

struct StepTooLarge : NumericalError
{
    explicit StepTooLarge(const std::string& what) : NumericalError("integrate_ode", what) {}
};

struct StepTooCoarse : NumericalError
{
    explicit StepTooCoarse(const std::string& what) : NumericalError("simulate_stochastic", what) {}
};

struct EigenFailure : NumericalError
{
    explicit EigenFailure(const std::string& what) : NumericalError("spectral_abscissa", what) {}
};

struct NotEndemic : NumericalError
{
    explicit NotEndemic(const std::string& what) : NumericalError("endemic_fixed_point", what) {}
};

struct NonConvergence : NumericalError
{
    using NumericalError::NumericalError;
};

struct DegenerateDenominator : NumericalError
{
    explicit DegenerateDenominator(const std::string& what) : NumericalError("check_conditions", what) {}
};

struct Infeasible : NumericalError
{
    using NumericalError::NumericalError;
};

struct MaxIterations : NumericalError
{
    using NumericalError::NumericalError;
};

} // namespace patchsis

#endif // PATCHSIS_ERRORS_HPP
