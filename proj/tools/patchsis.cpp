#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "patchsis/scenario.hpp"

#ifndef PATCHSIS_VERSION
#define PATCHSIS_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace patchsis;

namespace
{

struct Options
{
    std::string command;
    std::string config;
    std::string out = "out";
    std::string mode;
    std::optional<std::uint64_t> seed;
    std::optional<int> replicas;
    std::optional<double> budget;
    std::string budget_grid;
    bool plot = false;
};

class Outputs
{
public:
    Outputs(const Options& o) : m_dir(o.out), m_opts(o) { fs::create_directories(m_dir); }

    std::ofstream open(const std::string& name)
    {
        m_files.push_back(name);
        std::ofstream f(m_dir / name);
        if (!f)
            throw std::runtime_error("cannot write " + (m_dir / name).string());
        return f;
    }

    void write_json(const std::string& name, const Json& j) { open(name) << j.dump(2) << '\n'; }

    void manifest(const Json& seeds)
    {
        Json j;
        j["command"] = m_opts.command;
        j["config"] = m_opts.config;
        j["version"] = PATCHSIS_VERSION;
        j["seeds"] = seeds;
        j["outputs"] = m_files;
        std::ofstream(m_dir / "manifest.json") << j.dump(2) << '\n';
    }

private:
    fs::path m_dir;
    const Options& m_opts;
    std::vector<std::string> m_files;
};

bool all_strongly_connected(const MultiLayerDispersal& d)
{
    for (bool b : validate_strong_connectivity(d))
        if (!b)
            return false;
    return true;
}

void write_gnuplot_trajectory(Outputs& out, const std::string& csv, const Scenario& sc)
{
    auto f = out.open("plot.gp");
    f << "set datafile separator ','\nset xlabel 't'\nset ylabel 'p'\nset key off\n";
    f << "set title '" << sc.name << "'\n";
    f << "plot '" << csv << "' using 1:4 every ::1 with dots\n";
}

int cmd_simulate(const Options& o, const Scenario& sc)
{
    Outputs out(o);
    const auto& sim = sc.simulation;
    const std::string mode = o.mode.empty() ? sim.mode : o.mode;
    Json seeds = Json::array();
    if (mode == "ode" || mode == "reduced")
    {
        OdeOptions opts;
        opts.rhs = mode == "ode" ? RhsKind::Full : RhsKind::Reduced;
        opts.step = sim.step;
        opts.record_every = sim.record_every;
        const auto traj = integrate_ode(sc.network, sc.rates, {sim.initial_p, sim.initial_x, 0.0}, sim.t_end, opts);
        auto f = out.open("trajectory.csv");
        write_csv(f, traj, sc.network.n());
        if (o.plot)
            write_gnuplot_trajectory(out, "trajectory.csv", sc);
        std::cout << "ode: " << traj.size() << " states, final mean p = " << traj.back().p.mean()
                  << ", mass drift = " << traj.max_mass_drift << '\n';
    }
    else if (mode == "stochastic")
    {
        std::vector<long long> totals;
        if (sim.counts)
            totals = *sim.counts;
        else
            for (Eigen::Index k = 0; k < sim.initial_x.size(); ++k)
                totals.push_back(std::llround(sim.initial_x(k)));
        const auto counts0 = StochasticState::from_fractions(totals, sim.initial_p);
        const std::uint64_t seed = o.seed.value_or(sim.seed);
        const int replicas = o.replicas.value_or(sim.replicas);
        StochasticOptions so;
        so.dt = sim.dt;
        so.record_every = sim.record_every;
        const auto ens = simulate_ensemble(sc.network, sc.rates, counts0, sim.t_end, seed, replicas, so);
        for (std::size_t r = 0; r < ens.size(); ++r)
        {
            auto f = out.open("trajectory_r" + std::to_string(r) + ".csv");
            f << "# replica=" << r << '\n';
            write_csv(f, ens[r], sc.network.n());
        }
        const auto mean = ensemble_mean_fraction(ens);
        auto f = out.open("ensemble_mean.csv");
        f << "# seed=" << seed << '\n' << "t,mean_p\n" << std::setprecision(12);
        for (std::size_t k = 0; k < mean.size(); ++k)
            f << ens.front().times[k] << ',' << mean[k] << '\n';
        if (o.plot)
            write_gnuplot_trajectory(out, "trajectory_r0.csv", sc);
        seeds.push_back(seed);
        std::cout << "stochastic: " << replicas << " replicas, final ensemble mean p = " << mean.back() << '\n';
    }
    else
        throw SchemaError("--mode", "expected ode, reduced or stochastic");
    out.manifest(seeds);
    return 0;
}

int cmd_analyze(const Options& o, const Scenario& sc)
{
    Outputs out(o);
    Json report;
    if (all_strongly_connected(sc.network))
    {
        const auto eq = classify(sc.network, sc.rates);
        report["equilibrium"] = to_json(eq);
        report["stability"] = to_json(check_conditions(sc.network, sc.rates));
        std::cout << "regime " << to_string(eq.regime) << ", mu = " << eq.mu << ", R0 = " << eq.r0 << '\n';
    }
    else
    {
        const auto eq = classify_reduced(sc.network, sc.rates, sc.simulation.initial_x);
        report["equilibrium"] = to_json(eq);
        report["stability"] = nullptr;
        std::cout << "reduced model: regime " << to_string(eq.regime) << ", mu = " << eq.mu << '\n';
    }
    out.write_json("report.json", report);
    out.manifest(Json::array());
    return 0;
}

int cmd_optimize(const Options& o, const Scenario& sc)
{
    if (!sc.intervention)
        throw SchemaError("intervention", "the optimize command needs an intervention section");
    Outputs out(o);
    InterventionProblem p = *sc.intervention;

    std::optional<BudgetGrid> grid = sc.budget_grid;
    if (!o.budget_grid.empty())
        grid = BudgetGrid::parse(o.budget_grid, "--budget-grid");
    if (o.budget)
    {
        p.budget = *o.budget;
        if (p.budget < 0.0)
            throw SchemaError("--budget", "budget must be non-negative");
        grid.reset();
    }

    if (!grid)
    {
        const auto gp = solve_gp(p);
        const auto naive = naive_allocation(p);
        out.write_json("result.json", {{"optimal", to_json(gp, p.budget)}, {"naive", to_json(naive, p.budget)}});
        std::cout << "C = " << p.budget << ": mu_gp = " << gp.mu << ", mu_naive = " << naive.mu << '\n';
        out.manifest(Json::array());
        return 0;
    }

    const auto budgets = grid->values();
    std::vector<InterventionResult> gp(budgets.size()), naive(budgets.size());
    parallel_for(budgets.size(), worker_count(), [&](std::size_t k) {
        InterventionProblem pk = p;
        pk.budget = budgets[k];
        gp[k] = solve_gp(pk);
        naive[k] = naive_allocation(pk);
    });
    Json results = Json::array();
    {
        auto f = out.open("sweep.csv");
        f << "C,mu_gp,mu_naive,used_gp,used_naive\n" << std::setprecision(12);
        for (std::size_t k = 0; k < budgets.size(); ++k)
        {
            f << budgets[k] << ',' << gp[k].mu << ',' << naive[k].mu << ',' << gp[k].budget_used << ','
              << naive[k].budget_used << '\n';
            results.push_back({{"optimal", to_json(gp[k], budgets[k])}, {"naive", to_json(naive[k], budgets[k])}});
        }
    }
    out.write_json("sweep.json", results);
    if (o.plot)
    {
        auto f = out.open("sweep.gp");
        f << "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'C'\n";
        f << "set multiplot layout 1,2\nset ylabel 'mu'\nplot 'sweep.csv' using 1:2 with linespoints, '' using 1:3 with linespoints\n";
        f << "set ylabel 'budget used'\nplot 'sweep.csv' using 1:4 with linespoints, '' using 1:5 with linespoints\nunset multiplot\n";
    }
    std::cout << "swept " << budgets.size() << " budgets; mu_gp at largest C = " << gp.back().mu << '\n';
    out.manifest(Json::array());
    return 0;
}

/// Invariant battery on one scenario; prints one line per check.
int cmd_verify(const Options& o, const Scenario& sc)
{
    const auto& d = sc.network;
    int failures = 0;
    auto report = [&](const std::string& name, bool ok, const std::string& detail) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << '\n';
        if (!ok)
            ++failures;
    };
    auto fmt = [](double v) {
        std::ostringstream s;
        s << std::setprecision(3) << v;
        return s.str();
    };

    const bool strong = all_strongly_connected(d);
    for (Eigen::Index a = 0; a < d.m(); ++a)
    {
        const auto& g = d.layer(a);
        Vector pi;
        if (strong)
            pi = stationary_distribution(g);
        else
            pi = limit_distribution(g, sc.simulation.initial_x.segment(a * d.n(), d.n()) / d.population(a));
        const double res = (g.matrix().transpose() * pi).cwiseAbs().maxCoeff();
        const double mass = std::abs(pi.sum() - 1.0);
        report("stationarity layer " + std::to_string(a + 1), res <= 1e-10 && mass <= 1e-12,
               "residual " + fmt(res) + ", mass error " + fmt(mass));
    }

    OdeOptions opts;
    opts.step = sc.simulation.step;
    opts.record_every = 10;
    opts.rhs = strong ? RhsKind::Full : RhsKind::Reduced;
    const double t_check = std::min(sc.simulation.t_end, 50.0);
    const auto traj = integrate_ode(d, sc.rates, {sc.simulation.initial_p, sc.simulation.initial_x, 0.0}, t_check, opts);
    double lo = 0.0, hi = 0.0;
    for (const auto& s : traj.states)
    {
        lo = std::min(lo, s.p.minCoeff());
        hi = std::max(hi, s.p.maxCoeff() - 1.0);
    }
    report("simplex invariance", traj.max_overshoot <= 1e-9, "max overshoot " + fmt(traj.max_overshoot));
    report("mass conservation", traj.max_mass_drift <= 1e-9, "relative drift " + fmt(traj.max_mass_drift));

    if (strong)
    {
        const auto eq = classify(d, sc.rates);
        const bool consistent = eq.boundary || (eq.mu > 0.0) == (eq.r0 > 1.0);
        report("threshold consistency", consistent, "mu " + fmt(eq.mu) + ", R0 " + fmt(eq.r0));
        const auto c = check_conditions(d, sc.rates);
        const bool stable = eq.mu <= 0.0;
        const bool ok = (!stable || (c.necessary1 && c.necessary2)) && (!c.sufficient3 || stable)
                        && (!c.sufficient4 || stable);
        report("stability conditions", ok, std::string("regime ") + to_string(eq.regime));
    }
    else
    {
        const auto eq = classify_reduced(d, sc.rates, sc.simulation.initial_x);
        report("reduced classification", true, std::string("regime ") + to_string(eq.regime) + ", mu " + fmt(eq.mu));
    }

    if (sc.intervention)
    {
        InterventionProblem p = *sc.intervention;
        if (sc.budget_grid)
            p.budget = sc.budget_grid->values().back();
        const auto res = solve_gp(p);
        const auto sys = shift_transform(d, p.delta_bar());
        const double ratio = collatz_wielandt_ratio(sys, res);
        const double mu_direct = spectral_abscissa(sys.stability_matrix(res.beta, res.delta));
        report("gp certificate", std::abs(ratio - res.lambda) <= 1e-6, "ratio - lambda " + fmt(ratio - res.lambda));
        report("gp round trip", std::abs(mu_direct - res.mu) <= 1e-6, "mu error " + fmt(mu_direct - res.mu));
        report("gp budget", res.budget_used <= p.budget + 1e-8, "used " + fmt(res.budget_used));
    }
    (void)o;
    std::cout << (failures == 0 ? "all checks passed" : std::to_string(failures) + " check(s) failed") << '\n';
    return failures == 0 ? 0 : 4;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Multi-layer SIS epidemics with population dispersal"};
    app.set_version_flag("--version", PATCHSIS_VERSION);
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "Scenario JSON file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", o.out, "Output directory");
    };
    auto* sim = app.add_subcommand("simulate", "Integrate or simulate a scenario");
    add_common(sim);
    sim->add_option("--mode", o.mode, "ode, reduced or stochastic")->check(CLI::IsMember({"ode", "reduced", "stochastic"}));
    sim->add_option("--seed", o.seed, "Seed for stochastic runs");
    sim->add_option("--replicas", o.replicas, "Stochastic replicas")->check(CLI::PositiveNumber);
    sim->add_flag("--plot", o.plot, "Also write a gnuplot script");
    auto* ana = app.add_subcommand("analyze", "Equilibria and stability conditions");
    add_common(ana);
    auto* opt = app.add_subcommand("optimize", "Budget-constrained intervention");
    add_common(opt);
    auto* budget_opt = opt->add_option("--budget", o.budget, "Single budget C");
    opt->add_option("--budget-grid", o.budget_grid, "Budget sweep a:b:steps")->excludes(budget_opt);
    opt->add_flag("--plot", o.plot, "Also write a gnuplot script");
    auto* ver = app.add_subcommand("verify", "Run the invariant battery on a scenario");
    add_common(ver);

    CLI11_PARSE(app, argc, argv);
    o.command = app.get_subcommands().front()->get_name();

    try
    {
        const Scenario sc = load_scenario(o.config);
        if (o.command == "simulate")
            return cmd_simulate(o, sc);
        if (o.command == "analyze")
            return cmd_analyze(o, sc);
        if (o.command == "optimize")
            return cmd_optimize(o, sc);
        return cmd_verify(o, sc);
    }
    catch (const SchemaError& e)
    {
        std::cerr << "schema error at " << e.what() << '\n';
        return 1;
    }
    catch (const AssumptionError& e)
    {
        std::cerr << "assumption violated (" << e.assumption() << "): " << e.what() << '\n';
        return 2;
    }
    catch (const NumericalError& e)
    {
        std::cerr << "numerical failure in " << e.operation() << ": " << e.what() << '\n';
        return 3;
    }
    catch (const std::invalid_argument& e)
    {
        std::cerr << "invalid input: " << e.what() << '\n';
        return 1;
    }
}
