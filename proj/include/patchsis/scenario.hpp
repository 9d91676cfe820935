#ifndef PATCHSIS_SCENARIO_HPP
#define PATCHSIS_SCENARIO_HPP

#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "equilibria.hpp"
#include "intervene.hpp"
#include "simulate.hpp"
#include "stability.hpp"

namespace patchsis
{

using Json = nlohmann::json;

/// Malformed scenario; path() names the offending JSON location.
class SchemaError : public std::runtime_error
{
public:
    SchemaError(std::string path, const std::string& what)
        : std::runtime_error(path + ": " + what), m_path(std::move(path))
    {
    }
    const std::string& path() const { return m_path; }

private:
    std::string m_path;
};

struct SimulationConfig
{
    std::string mode = "ode";
    double t_end = 100.0;
    double step = 0.01; // ODE step
    double dt = 0.01;   // stochastic step
    std::uint64_t seed = 1;
    int replicas = 1;
    int record_every = 100;
    Vector initial_p;
    Vector initial_x;
    std::optional<std::vector<long long>> counts;
};

struct BudgetGrid
{
    double from = 0.0;
    double to = 0.0;
    int steps = 0;

    std::vector<double> values() const
    {
        std::vector<double> v;
        for (int k = 0; k < steps; ++k)
            v.push_back(steps == 1 ? from : from + (to - from) * k / (steps - 1));
        return v;
    }

    /// "a:b:steps"
    static BudgetGrid parse(const std::string& text, const std::string& path)
    {
        BudgetGrid g;
        char c1 = 0, c2 = 0;
        std::istringstream in(text);
        if (!(in >> g.from >> c1 >> g.to >> c2 >> g.steps) || c1 != ':' || c2 != ':' || g.steps < 1 || !in.eof()
            || g.to < g.from)
            throw SchemaError(path, "expected a:b:steps with a <= b and steps >= 1");
        return g;
    }
};

struct Scenario
{
    std::string name;
    MultiLayerDispersal network;
    EpidemicRates rates;
    SimulationConfig simulation;
    std::optional<InterventionProblem> intervention;
    std::optional<BudgetGrid> budget_grid;
};

namespace schema
{

inline const Json& field(const Json& j, const std::string& key, const std::string& path)
{
    if (!j.is_object() || !j.contains(key))
        throw SchemaError(path + "." + key, "required field is missing");
    return j.at(key);
}

inline double number(const Json& j, const std::string& path)
{
    if (!j.is_number())
        throw SchemaError(path, "expected a number");
    return j.get<double>();
}

inline double positive(const Json& j, const std::string& path)
{
    const double v = number(j, path);
    if (!(v > 0.0))
        throw SchemaError(path, "expected a positive number");
    return v;
}

inline long long integer(const Json& j, const std::string& path)
{
    if (!j.is_number_integer())
        throw SchemaError(path, "expected an integer");
    return j.get<long long>();
}

inline std::string string(const Json& j, const std::string& path)
{
    if (!j.is_string())
        throw SchemaError(path, "expected a string");
    return j.get<std::string>();
}

inline std::string idx(const std::string& path, std::size_t k)
{
    return path + "[" + std::to_string(k) + "]";
}

/// Scalar, per-node list (n, repeated for each layer), flat per-(node, layer)
/// list (n*m, layer-major) or list of m per-layer lists.
inline Vector per_coordinate(const Json& j, Eigen::Index n, Eigen::Index m, const std::string& path)
{
    const auto N = n * m;
    if (j.is_number())
        return Vector::Constant(N, j.get<double>());
    if (!j.is_array())
        throw SchemaError(path, "expected a number or a list");
    const auto len = static_cast<Eigen::Index>(j.size());
    Vector v(N);
    if (len == m && !j.empty() && j.front().is_array())
    {
        for (Eigen::Index a = 0; a < m; ++a)
        {
            const auto& layer = j[static_cast<std::size_t>(a)];
            const auto lp = idx(path, static_cast<std::size_t>(a));
            if (!layer.is_array() || static_cast<Eigen::Index>(layer.size()) != n)
                throw SchemaError(lp, "expected a list of " + std::to_string(n) + " numbers");
            for (Eigen::Index i = 0; i < n; ++i)
                v(a * n + i) = number(layer[static_cast<std::size_t>(i)], idx(lp, static_cast<std::size_t>(i)));
        }
        return v;
    }
    if (len != n && len != N)
        throw SchemaError(path, "expected " + std::to_string(n) + " or " + std::to_string(N) + " entries");
    for (Eigen::Index k = 0; k < N; ++k)
    {
        const auto src = static_cast<std::size_t>(len == n ? k % n : k);
        v(k) = number(j[src], idx(path, src));
    }
    return v;
}

inline Adjacency edges(const Json& j, Eigen::Index n, bool directed, const std::string& path)
{
    if (!j.is_array())
        throw SchemaError(path, "expected a list of [from, to] pairs");
    Adjacency adj = Adjacency::Constant(n, n, false);
    for (std::size_t e = 0; e < j.size(); ++e)
    {
        const auto ep = idx(path, e);
        if (!j[e].is_array() || j[e].size() != 2)
            throw SchemaError(ep, "expected [from, to]");
        const auto a = integer(j[e][0], idx(ep, 0)), b = integer(j[e][1], idx(ep, 1));
        if (a < 1 || a > n || b < 1 || b > n || a == b)
            throw SchemaError(ep, "node numbers must be distinct and in 1.." + std::to_string(n));
        adj(a - 1, b - 1) = true;
        if (!directed)
            adj(b - 1, a - 1) = true;
    }
    return adj;
}

inline LayerGenerator layer(const Json& j, Eigen::Index n, const std::string& path)
{
    const auto& rates = field(j, "rates", path);
    const auto rp = path + ".rates";
    const auto kind = string(field(rates, "kind", rp), rp + ".kind");

    if (kind == "explicit")
    {
        const auto& entries = field(rates, "entries", rp);
        const auto ep = rp + ".entries";
        if (!entries.is_array())
            throw SchemaError(ep, "expected a list of [from, to, rate]");
        Matrix q = Matrix::Zero(n, n);
        for (std::size_t e = 0; e < entries.size(); ++e)
        {
            const auto p = idx(ep, e);
            if (!entries[e].is_array() || entries[e].size() != 3)
                throw SchemaError(p, "expected [from, to, rate]");
            const auto a = integer(entries[e][0], idx(p, 0)), b = integer(entries[e][1], idx(p, 1));
            if (a < 1 || a > n || b < 1 || b > n || a == b)
                throw SchemaError(p, "node numbers must be distinct and in 1.." + std::to_string(n));
            q(a - 1, b - 1) = positive(entries[e][2], idx(p, 2));
        }
        return LayerGenerator::from_rates(q);
    }

    Adjacency adj;
    if (j.contains("topology"))
    {
        const auto name = string(j.at("topology"), path + ".topology");
        try
        {
            adj = make_topology(name, n);
        }
        catch (const std::invalid_argument& e)
        {
            throw SchemaError(path + ".topology", e.what());
        }
    }
    else if (j.contains("edges"))
    {
        const bool directed = j.value("directed", false);
        adj = edges(j.at("edges"), n, directed, path + ".edges");
    }
    else
        throw SchemaError(path, "one of topology or edges is required");

    const double nu = positive(field(rates, "nu", rp), rp + ".nu");
    if (kind == "equal_split")
        return construct_equal_split_rates(adj, nu);
    if (kind == "metropolis")
    {
        Vector target = Vector::Constant(n, 1.0 / static_cast<double>(n));
        if (rates.contains("target") && !(rates.at("target").is_string() && rates.at("target") == "uniform"))
            target = per_coordinate(rates.at("target"), n, 1, rp + ".target");
        try
        {
            return construct_metropolis_rates(adj, target, nu);
        }
        catch (const std::invalid_argument& e)
        {
            throw SchemaError(rp, e.what());
        }
    }
    throw SchemaError(rp + ".kind", "expected explicit, equal_split or metropolis");
}

inline CostFunction cost(const Json& j, const std::string& path)
{
    CostFunction c;
    const auto& terms = field(j, "terms", path);
    if (!terms.is_array() || terms.empty())
        throw SchemaError(path + ".terms", "expected a non-empty list of {coeff, exponent}");
    for (std::size_t k = 0; k < terms.size(); ++k)
    {
        const auto tp = idx(path + ".terms", k);
        const double coeff = positive(field(terms[k], "coeff", tp), tp + ".coeff");
        const Json* e = nullptr;
        if (terms[k].contains("exponent"))
            e = &terms[k].at("exponent");
        else if (terms[k].contains("exponents"))
            e = &terms[k].at("exponents");
        else
            throw SchemaError(tp + ".exponent", "required field is missing");
        c.terms.push_back({coeff, number(*e, tp + ".exponent")});
    }
    if (j.contains("offset"))
        c.offset = number(j.at("offset"), path + ".offset");
    return c;
}

/// "inverse", a single {terms, offset} object applied to every coordinate,
/// or a list of n*m such objects.
inline std::vector<CostFunction> costs(const Json& j, const Vector& zero_at, const std::string& path)
{
    const auto N = static_cast<std::size_t>(zero_at.size());
    std::vector<CostFunction> out;
    if (j.is_string())
    {
        if (j != "inverse")
            throw SchemaError(path, "unknown cost preset (expected inverse)");
        for (std::size_t k = 0; k < N; ++k)
            out.push_back(CostFunction::inverse(zero_at(static_cast<Eigen::Index>(k))));
        return out;
    }
    if (j.is_object())
        return std::vector<CostFunction>(N, cost(j, path));
    if (!j.is_array() || j.size() != N)
        throw SchemaError(path, "expected a preset name, one cost object or " + std::to_string(N) + " of them");
    for (std::size_t k = 0; k < N; ++k)
        out.push_back(cost(j[k], idx(path, k)));
    return out;
}

inline std::vector<long long> counts(const Json& j, Eigen::Index n, Eigen::Index m, const std::string& path)
{
    const Vector v = per_coordinate(j, n, m, path);
    std::vector<long long> out;
    for (Eigen::Index k = 0; k < v.size(); ++k)
    {
        if (v(k) < 0.0 || v(k) != std::floor(v(k)))
            throw SchemaError(path, "counts must be non-negative integers");
        out.push_back(static_cast<long long>(v(k)));
    }
    return out;
}

} // namespace schema

inline Scenario parse_scenario(const Json& root)
{
    using namespace schema;
    Scenario sc;
    sc.name = root.value("name", std::string{"scenario"});

    const auto& net = field(root, "network", "");
    const auto& layers = field(net, "layers", "network");
    if (!layers.is_array() || layers.empty())
        throw SchemaError("network.layers", "expected a non-empty list");
    std::vector<LayerGenerator> gens;
    std::vector<double> pops;
    Eigen::Index n = 0;
    for (std::size_t a = 0; a < layers.size(); ++a)
    {
        const auto lp = idx("network.layers", a);
        const auto ln = integer(field(layers[a], "n", lp), lp + ".n");
        if (ln < 1)
            throw SchemaError(lp + ".n", "expected at least one node");
        if (a == 0)
            n = ln;
        else if (ln != n)
            throw SchemaError(lp + ".n", "node count " + std::to_string(ln) + " differs from layer 0 (" + std::to_string(n) + ")");
        gens.push_back(layer(layers[a], n, lp));
        pops.push_back(positive(field(layers[a], "population", lp), lp + ".population"));
    }
    const auto m = static_cast<Eigen::Index>(gens.size());

    const auto& rates = field(root, "rates", "");
    sc.rates.beta = per_coordinate(field(rates, "beta", "rates"), n, m, "rates.beta");
    sc.rates.delta = per_coordinate(field(rates, "delta", "rates"), n, m, "rates.delta");
    if (!(sc.rates.beta.minCoeff() > 0.0))
        throw SchemaError("rates.beta", "infection rates must be positive");
    if (!(sc.rates.delta.minCoeff() >= 0.0))
        throw SchemaError("rates.delta", "recovery rates must be non-negative");

    auto& sim = sc.simulation;
    sim.initial_p = Vector::Constant(n * m, 0.01);
    const Json empty = Json::object();
    const auto& sj = root.contains("simulation") ? root.at("simulation") : empty;
    if (sj.contains("mode"))
    {
        sim.mode = string(sj.at("mode"), "simulation.mode");
        if (sim.mode != "ode" && sim.mode != "stochastic" && sim.mode != "reduced")
            throw SchemaError("simulation.mode", "expected ode, reduced or stochastic");
    }
    if (sj.contains("t_end"))
        sim.t_end = positive(sj.at("t_end"), "simulation.t_end");
    if (sj.contains("step"))
        sim.step = positive(sj.at("step"), "simulation.step");
    if (sj.contains("dt"))
        sim.dt = positive(sj.at("dt"), "simulation.dt");
    if (sj.contains("seed"))
        sim.seed = static_cast<std::uint64_t>(integer(sj.at("seed"), "simulation.seed"));
    if (sj.contains("replicas"))
        sim.replicas = static_cast<int>(integer(sj.at("replicas"), "simulation.replicas"));
    if (sj.contains("record_every"))
        sim.record_every = static_cast<int>(integer(sj.at("record_every"), "simulation.record_every"));
    if (sim.replicas < 1 || sim.record_every < 1)
        throw SchemaError("simulation", "replicas and record_every must be at least 1");
    if (sj.contains("initial_p"))
    {
        sim.initial_p = per_coordinate(sj.at("initial_p"), n, m, "simulation.initial_p");
        if (sim.initial_p.minCoeff() < 0.0 || sim.initial_p.maxCoeff() > 1.0)
            throw SchemaError("simulation.initial_p", "fractions must lie in [0,1]");
    }
    if (sj.contains("counts"))
    {
        sim.counts = counts(sj.at("counts"), n, m, "simulation.counts");
        for (Eigen::Index a = 0; a < m; ++a)
        {
            long long total = 0;
            for (Eigen::Index i = 0; i < n; ++i)
                total += (*sim.counts)[static_cast<std::size_t>(a * n + i)];
            if (static_cast<double>(total) != pops[static_cast<std::size_t>(a)])
                throw SchemaError("simulation.counts",
                                  "layer " + std::to_string(a) + " counts sum to " + std::to_string(total)
                                      + " but the population is " + std::to_string(pops[static_cast<std::size_t>(a)]));
        }
    }

    try
    {
        sc.network = MultiLayerDispersal(std::move(gens), std::move(pops));
    }
    catch (const std::invalid_argument& e)
    {
        throw SchemaError("network", e.what());
    }

    // Initial head counts: explicit list, counts, "uniform" or (default) stationary.
    std::string x_kind = "stationary";
    if (sj.contains("initial_x"))
    {
        if (sj.at("initial_x").is_string())
            x_kind = string(sj.at("initial_x"), "simulation.initial_x");
        else
        {
            x_kind = "explicit";
            sim.initial_x = per_coordinate(sj.at("initial_x"), n, m, "simulation.initial_x");
        }
    }
    else if (sim.counts)
        x_kind = "counts";
    if (x_kind == "counts")
    {
        if (!sim.counts)
            throw SchemaError("simulation.initial_x", "counts requested but simulation.counts is absent");
        sim.initial_x.resize(n * m);
        for (Eigen::Index k = 0; k < n * m; ++k)
            sim.initial_x(k) = static_cast<double>((*sim.counts)[static_cast<std::size_t>(k)]);
    }
    else if (x_kind == "uniform" || (x_kind == "stationary" && std::ranges::count(validate_strong_connectivity(sc.network), false) > 0))
    {
        sim.initial_x.resize(n * m);
        for (Eigen::Index a = 0; a < m; ++a)
            sim.initial_x.segment(a * n, n).setConstant(sc.network.population(a) / static_cast<double>(n));
    }
    else if (x_kind == "stationary")
        sim.initial_x = equilibrium_populations(sc.network);
    else if (x_kind != "explicit")
        throw SchemaError("simulation.initial_x", "expected counts, uniform, stationary or a list");
    for (Eigen::Index a = 0; a < m; ++a)
    {
        const double N = sc.network.population(a);
        if (sim.initial_x.minCoeff() < 0.0 || std::abs(sim.initial_x.segment(a * n, n).sum() - N) > 1e-9 * N)
            throw SchemaError("simulation.initial_x",
                              "layer " + std::to_string(a) + " must be non-negative and sum to its population");
    }

    if (root.contains("intervention"))
    {
        const auto& ij = root.at("intervention");
        InterventionProblem p{sc.network, {}, {}, {}, {}, {}, {}, 0.0};
        p.beta_lower = per_coordinate(field(ij, "beta_lower", "intervention"), n, m, "intervention.beta_lower");
        p.beta_upper = per_coordinate(field(ij, "beta_upper", "intervention"), n, m, "intervention.beta_upper");
        p.delta_lower = per_coordinate(field(ij, "delta_lower", "intervention"), n, m, "intervention.delta_lower");
        p.delta_upper = per_coordinate(field(ij, "delta_upper", "intervention"), n, m, "intervention.delta_upper");
        const double dbar = p.delta_upper.maxCoeff();
        const Vector dhat_zero = (dbar + 1.0 - p.delta_lower.array()).matrix();
        p.beta_cost = costs(field(ij, "beta_cost", "intervention"), p.beta_upper, "intervention.beta_cost");
        p.delta_hat_cost = costs(field(ij, "delta_cost", "intervention"), dhat_zero, "intervention.delta_cost");
        if (ij.contains("budget"))
        {
            p.budget = number(ij.at("budget"), "intervention.budget");
            if (p.budget < 0.0)
                throw SchemaError("intervention.budget", "budget must be non-negative");
        }
        if (ij.contains("budget_grid"))
            sc.budget_grid = BudgetGrid::parse(string(ij.at("budget_grid"), "intervention.budget_grid"),
                                               "intervention.budget_grid");
        try
        {
            p.validate();
        }
        catch (const std::invalid_argument& e)
        {
            throw SchemaError("intervention", e.what());
        }
        sc.intervention = std::move(p);
    }
    return sc;
}

inline Scenario load_scenario(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw SchemaError("", "cannot open " + path);
    Json root;
    try
    {
        root = Json::parse(in);
    }
    catch (const Json::parse_error& e)
    {
        throw SchemaError("", std::string("invalid JSON: ") + e.what());
    }
    return parse_scenario(root);
}

inline Json to_json(const Vector& v)
{
    Json j = Json::array();
    for (Eigen::Index k = 0; k < v.size(); ++k)
        j.push_back(v(k));
    return j;
}

inline Json to_json(const std::vector<NodeLayer>& coords)
{
    Json j = Json::array();
    for (const auto& c : coords)
        j.push_back({{"node", c.node + 1}, {"layer", c.layer + 1}});
    return j;
}

inline Json to_json(const EquilibriumReport& r)
{
    Json j;
    j["pi"] = to_json(r.pi);
    j["mu"] = r.mu;
    j["r0"] = r.r0;
    j["regime"] = to_string(r.regime);
    j["boundary"] = r.boundary;
    j["p_endemic"] = r.p_endemic ? to_json(*r.p_endemic) : Json(nullptr);
    j["reduced"] = r.reduced;
    j["transient"] = to_json(r.transient);
    j["stationarity_residual"] = r.stationarity_residual;
    j["blocks"] = Json::array();
    for (const auto& b : r.blocks)
        j["blocks"].push_back({{"coords", to_json(b.coords)},
                               {"mu", b.mu},
                               {"r0", b.r0},
                               {"regime", to_string(b.regime)},
                               {"boundary", b.boundary},
                               {"p_endemic", b.p_endemic ? to_json(*b.p_endemic) : Json(nullptr)},
                               {"iterations", b.iterations},
                               {"residual", b.residual}});
    return j;
}

inline Json to_json(const StabilityChecklist& c)
{
    Json per_node = Json::array();
    for (bool b : c.necessary1_per_node)
        per_node.push_back(b);
    return {{"necessary1", c.necessary1},   {"necessary1_per_node", per_node}, {"necessary2", c.necessary2},
            {"sufficient3", c.sufficient3}, {"sufficient4", c.sufficient4},    {"lambda2", c.lambda2},
            {"s", c.s},                     {"s_lower", c.s_lower},            {"deficit_sum", c.deficit_sum},
            {"bound_lhs", c.bound_lhs},     {"degenerate", c.degenerate},      {"w", to_json(c.w)}};
}

inline Json to_json(const InterventionResult& r, double budget)
{
    return {{"budget", budget},
            {"beta", to_json(r.beta)},
            {"delta", to_json(r.delta)},
            {"lambda", r.lambda},
            {"mu", r.mu},
            {"budget_used", r.budget_used},
            {"budget_unused", r.budget_unused},
            {"u", to_json(r.u)},
            {"solver",
             {{"outer_iterations", r.solver.outer_iterations},
              {"newton_iterations", r.solver.newton_iterations},
              {"gap", r.solver.gap},
              {"decrement", r.solver.decrement},
              {"feasible", r.solver.feasible},
              {"degenerate", r.solver.degenerate},
              {"phase_one", r.solver.phase_one}}}};
}

} // namespace patchsis

#endif // PATCHSIS_SCENARIO_HPP
