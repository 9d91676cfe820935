#ifndef PATCHSIS_NETWORK_HPP
#define PATCHSIS_NETWORK_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"

namespace patchsis
{

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Adjacency = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// CTMC generator of one dispersal layer. Off-diagonal entries are
/// transition rates, the diagonal holds minus the exit rate of each node.
class LayerGenerator
{
public:
    LayerGenerator() = default;

    /// Builds a generator from the off-diagonal part of `rates`; the
    /// diagonal of the argument is ignored and recomputed.
    static LayerGenerator from_rates(const Matrix& rates)
    {
        if (rates.rows() != rates.cols())
            throw std::invalid_argument("generator must be square");
        LayerGenerator g;
        g.m_q = rates;
        for (Eigen::Index i = 0; i < rates.rows(); ++i)
        {
            double exit = 0.0;
            for (Eigen::Index j = 0; j < rates.cols(); ++j)
            {
                if (i == j)
                    continue;
                if (!(rates(i, j) >= 0.0) || !std::isfinite(rates(i, j)))
                    throw std::invalid_argument("transition rates must be finite and non-negative");
                exit += rates(i, j);
            }
            g.m_q(i, i) = -exit;
        }
        return g;
    }

    Eigen::Index size() const { return m_q.rows(); }
    const Matrix& matrix() const { return m_q; }
    double rate(Eigen::Index i, Eigen::Index j) const { return m_q(i, j); }
    double exit_rate(Eigen::Index i) const { return -m_q(i, i); }
    bool has_edge(Eigen::Index i, Eigen::Index j) const { return i != j && m_q(i, j) > 0.0; }

    Vector exit_rates() const { return -m_q.diagonal(); }

    /// Generator of the sub-chain on `nodes` (ordered as given). Rates leaving
    /// the subset are dropped, so for a closed class this is exact.
    LayerGenerator restricted(std::span<const int> nodes) const
    {
        const auto k = static_cast<Eigen::Index>(nodes.size());
        Matrix sub = Matrix::Zero(k, k);
        for (Eigen::Index a = 0; a < k; ++a)
            for (Eigen::Index b = 0; b < k; ++b)
                if (a != b)
                    sub(a, b) = m_q(nodes[a], nodes[b]);
        return from_rates(sub);
    }

private:
    Matrix m_q;
};

/// m dispersal layers over the same n patches, each with its total head count.
class MultiLayerDispersal
{
public:
    MultiLayerDispersal() = default;

    MultiLayerDispersal(std::vector<LayerGenerator> layers, std::vector<double> populations)
        : m_layers(std::move(layers)), m_populations(std::move(populations))
    {
        if (m_layers.empty())
            throw std::invalid_argument("at least one layer is required");
        if (m_populations.size() != m_layers.size())
            throw std::invalid_argument("one population total per layer is required");
        for (const auto& g : m_layers)
            if (g.size() != m_layers.front().size() || g.size() == 0)
                throw std::invalid_argument("all layers must share the same non-zero node count");
        for (double N : m_populations)
            if (!(N > 0.0))
                throw std::invalid_argument("layer populations must be positive");
    }

    Eigen::Index n() const { return m_layers.front().size(); }
    Eigen::Index m() const { return static_cast<Eigen::Index>(m_layers.size()); }
    Eigen::Index dim() const { return n() * m(); }

    /// Layer-major position of (layer, node): layer * n + node.
    Eigen::Index index(Eigen::Index layer, Eigen::Index node) const { return layer * n() + node; }

    const LayerGenerator& layer(Eigen::Index a) const { return m_layers[static_cast<std::size_t>(a)]; }
    const std::vector<LayerGenerator>& layers() const { return m_layers; }
    double population(Eigen::Index a) const { return m_populations[static_cast<std::size_t>(a)]; }
    const std::vector<double>& populations() const { return m_populations; }

    /// Stacked exit rates nu_i^alpha in layer-major order.
    Vector exit_rates() const
    {
        Vector nu(dim());
        for (Eigen::Index a = 0; a < m(); ++a)
            nu.segment(a * n(), n()) = layer(a).exit_rates();
        return nu;
    }

private:
    std::vector<LayerGenerator> m_layers;
    std::vector<double> m_populations;
};

struct Components
{
    std::vector<int> component; // component id per node
    int count = 0;
};

/// Strongly connected components of the digraph with an edge i->j whenever
/// q_ij > 0. Iterative Tarjan; component ids come out in reverse topological
/// order of the condensation.
inline Components strongly_connected_components(const LayerGenerator& g)
{
    const int n = static_cast<int>(g.size());
    std::vector<std::vector<int>> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (g.has_edge(i, j))
                out[i].push_back(j);

    Components result;
    result.component.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> index(static_cast<std::size_t>(n), -1), low(static_cast<std::size_t>(n), 0);
    std::vector<char> on_stack(static_cast<std::size_t>(n), 0);
    std::vector<int> stack;
    std::vector<std::pair<int, std::size_t>> call; // (node, next edge position)
    int counter = 0;

    for (int root = 0; root < n; ++root)
    {
        if (index[root] != -1)
            continue;
        call.emplace_back(root, 0);
        while (!call.empty())
        {
            auto& [v, pos] = call.back();
            if (pos == 0 && index[v] == -1)
            {
                index[v] = low[v] = counter++;
                stack.push_back(v);
                on_stack[v] = 1;
            }
            if (pos < out[v].size())
            {
                const int w = out[v][pos++];
                if (index[w] == -1)
                    call.emplace_back(w, 0);
                else if (on_stack[w])
                    low[v] = std::min(low[v], index[w]);
                continue;
            }
            if (low[v] == index[v])
            {
                int w;
                do
                {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[w] = 0;
                    result.component[w] = result.count;
                } while (w != v);
                ++result.count;
            }
            const int finished = v;
            call.pop_back();
            if (!call.empty())
            {
                const int parent = call.back().first;
                low[parent] = std::min(low[parent], low[finished]);
            }
        }
    }
    return result;
}

inline bool is_strongly_connected(const LayerGenerator& g)
{
    return g.size() > 0 && strongly_connected_components(g).count == 1;
}

inline std::vector<bool> validate_strong_connectivity(const MultiLayerDispersal& d)
{
    std::vector<bool> ok;
    ok.reserve(d.layers().size());
    for (const auto& g : d.layers())
        ok.push_back(is_strongly_connected(g));
    return ok;
}

/// Probability vector pi with Q^T pi = 0, obtained as the least-squares
/// solution of the stacked system [Q^T; 1^T] pi = [0; 1].
inline Vector stationary_distribution(const LayerGenerator& g)
{
    if (!is_strongly_connected(g))
        throw NonIrreducible("stationary_distribution requires a strongly connected generator");
    const Eigen::Index n = g.size();
    Matrix stacked(n + 1, n);
    stacked.topRows(n) = g.matrix().transpose();
    stacked.row(n).setOnes();
    Vector rhs = Vector::Zero(n + 1);
    rhs(n) = 1.0;
    Vector pi = stacked.colPivHouseholderQr().solve(rhs);
    pi /= pi.sum();

    const double residual = (g.matrix().transpose() * pi).lpNorm<Eigen::Infinity>();
    if (!(residual <= 1e-10) || !(pi.minCoeff() > 0.0))
        throw SolverFailure("stationary_distribution",
                            "residual " + std::to_string(residual) + " exceeds 1e-10 or pi not positive");
    return pi;
}

/// Sinks of one layer: closed strongly connected classes.
struct LayerSinks
{
    std::vector<std::vector<int>> sinks; // each sorted ascending
    std::vector<int> sink_nodes;         // union of sinks, ascending
    std::vector<int> non_sink_nodes;     // complement, ascending
};

struct NodeLayer
{
    int layer = 0;
    int node = 0;
    friend bool operator==(const NodeLayer&, const NodeLayer&) = default;
    friend auto operator<=>(const NodeLayer&, const NodeLayer&) = default;
};

struct SinkStructure
{
    std::vector<LayerSinks> layers;
    /// Sink (layer, node) pairs grouped into blocks that are coupled through
    /// shared patches; each block sorted layer-major.
    std::vector<std::vector<NodeLayer>> blocks;
};

inline LayerSinks layer_sinks(const LayerGenerator& g)
{
    const auto comps = strongly_connected_components(g);
    std::vector<char> has_exit(static_cast<std::size_t>(comps.count), 0);
    const auto n = g.size();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (g.has_edge(i, j) && comps.component[i] != comps.component[j])
                has_exit[comps.component[i]] = 1;

    LayerSinks ls;
    std::vector<int> slot(static_cast<std::size_t>(comps.count), -1);
    for (int i = 0; i < n; ++i)
    {
        const int c = comps.component[i];
        if (has_exit[c])
        {
            ls.non_sink_nodes.push_back(i);
            continue;
        }
        if (slot[c] < 0)
        {
            slot[c] = static_cast<int>(ls.sinks.size());
            ls.sinks.emplace_back();
        }
        ls.sinks[slot[c]].push_back(i);
        ls.sink_nodes.push_back(i);
    }
    return ls;
}

inline SinkStructure detect_sinks(const MultiLayerDispersal& d)
{
    SinkStructure s;
    for (const auto& g : d.layers())
        s.layers.push_back(layer_sinks(g));

    // union-find over all sink components of all layers
    std::vector<std::pair<int, int>> comp_ids; // (layer, sink index)
    for (int a = 0; a < static_cast<int>(s.layers.size()); ++a)
        for (int k = 0; k < static_cast<int>(s.layers[a].sinks.size()); ++k)
            comp_ids.emplace_back(a, k);
    std::vector<int> parent(comp_ids.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
        while (parent[x] != x)
            x = parent[x] = parent[parent[x]];
        return x;
    };

    std::vector<int> owner(static_cast<std::size_t>(d.n()), -1);
    for (int c = 0; c < static_cast<int>(comp_ids.size()); ++c)
    {
        const auto [a, k] = comp_ids[c];
        for (int node : s.layers[a].sinks[k])
        {
            if (owner[node] >= 0)
                parent[find(c)] = find(owner[node]);
            else
                owner[node] = c;
        }
    }

    std::vector<int> block_of(comp_ids.size(), -1);
    for (int c = 0; c < static_cast<int>(comp_ids.size()); ++c)
    {
        const int r = find(c);
        if (block_of[r] < 0)
        {
            block_of[r] = static_cast<int>(s.blocks.size());
            s.blocks.emplace_back();
        }
        const auto [a, k] = comp_ids[c];
        for (int node : s.layers[a].sinks[k])
            s.blocks[block_of[r]].push_back({a, node});
    }
    for (auto& b : s.blocks)
        std::sort(b.begin(), b.end());
    return s;
}

/// Long-run occupancy of a layer started from x0: mass in transient nodes is
/// absorbed into the sinks, and each sink spreads its mass according to its
/// own stationary distribution.
inline Vector limit_distribution(const LayerGenerator& g, const Vector& x0)
{
    const auto ls = layer_sinks(g);
    const auto n = g.size();
    Vector limit = Vector::Zero(n);

    const auto& transient = ls.non_sink_nodes;
    const auto t = static_cast<Eigen::Index>(transient.size());
    Matrix absorb; // t x (#sinks): absorption probability from transient node into sink
    if (t > 0)
    {
        Matrix qtt(t, t);
        for (Eigen::Index a = 0; a < t; ++a)
            for (Eigen::Index b = 0; b < t; ++b)
                qtt(a, b) = g.matrix()(transient[a], transient[b]);
        Matrix qts = Matrix::Zero(t, static_cast<Eigen::Index>(ls.sinks.size()));
        for (Eigen::Index a = 0; a < t; ++a)
            for (std::size_t k = 0; k < ls.sinks.size(); ++k)
                for (int node : ls.sinks[k])
                    qts(a, static_cast<Eigen::Index>(k)) += g.rate(transient[a], node);
        absorb = (-qtt).partialPivLu().solve(qts);
    }

    for (std::size_t k = 0; k < ls.sinks.size(); ++k)
    {
        const auto& nodes = ls.sinks[k];
        double mass = 0.0;
        for (int node : nodes)
            mass += x0(node);
        for (Eigen::Index a = 0; a < t; ++a)
            mass += x0(transient[a]) * absorb(a, static_cast<Eigen::Index>(k));
        const Vector pi = nodes.size() == 1 ? Vector::Ones(1) : stationary_distribution(g.restricted(nodes));
        for (std::size_t b = 0; b < nodes.size(); ++b)
            limit(nodes[b]) = mass * pi(static_cast<Eigen::Index>(b));
    }
    return limit;
}

/// Rates split equally over out-neighbours, each node leaving at total rate nu.
inline LayerGenerator construct_equal_split_rates(const Adjacency& adjacency, double nu)
{
    const auto n = adjacency.rows();
    Matrix rates = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
    {
        int deg = 0;
        for (Eigen::Index j = 0; j < n; ++j)
            deg += (i != j && adjacency(i, j)) ? 1 : 0;
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j && adjacency(i, j))
                rates(i, j) = nu / deg;
    }
    return LayerGenerator::from_rates(rates);
}

/// Metropolis-Hastings generator with the given stationary distribution.
/// Proposals are uniform over out-neighbours; the whole generator is scaled
/// so that the largest exit rate equals nu.
inline LayerGenerator construct_metropolis_rates(const Adjacency& adjacency, const Vector& target, double nu)
{
    const auto n = adjacency.rows();
    if (adjacency.cols() != n || target.size() != n)
        throw std::invalid_argument("adjacency and target dimensions disagree");
    if (!(nu > 0.0))
        throw std::invalid_argument("total rate must be positive");
    if (!(target.minCoeff() > 0.0))
        throw InvalidTarget("every target probability must be strictly positive");
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j && adjacency(i, j) != adjacency(j, i))
                throw std::invalid_argument("Metropolis-Hastings rates need a symmetric adjacency");

    std::vector<int> deg(static_cast<std::size_t>(n), 0);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            deg[i] += (i != j && adjacency(i, j)) ? 1 : 0;

    Matrix rates = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j && adjacency(i, j))
                rates(i, j) = std::min(1.0, (target(j) * deg[i]) / (target(i) * deg[j])) / deg[i];

    auto raw = LayerGenerator::from_rates(rates);
    if (!is_strongly_connected(raw))
        throw NonIrreducible("Metropolis-Hastings construction requires a strongly connected adjacency");
    const double scale = nu / raw.exit_rates().maxCoeff();
    return LayerGenerator::from_rates(rates * scale);
}

/// Named undirected topologies (edges in both directions), nodes 0..n-1.
/// line: i<->i+1; ring: line plus n-1<->0; star: 0<->i; complete: all pairs.
inline Adjacency make_topology(const std::string& name, Eigen::Index n)
{
    Adjacency adj = Adjacency::Constant(n, n, false);
    auto link = [&](Eigen::Index i, Eigen::Index j) {
        if (i != j)
            adj(i, j) = adj(j, i) = true;
    };
    if (name == "complete")
    {
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j)
                link(i, j);
    }
    else if (name == "line" || name == "ring")
    {
        for (Eigen::Index i = 0; i + 1 < n; ++i)
            link(i, i + 1);
        if (name == "ring" && n > 2)
            link(n - 1, 0);
    }
    else if (name == "star")
    {
        for (Eigen::Index i = 1; i < n; ++i)
            link(0, i);
    }
    else
    {
        throw std::invalid_argument("unknown topology '" + name + "'");
    }
    return adj;
}

} // namespace patchsis

#endif // PATCHSIS_NETWORK_HPP
