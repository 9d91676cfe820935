#ifndef PATCHSIS_SIMULATE_HPP
#define PATCHSIS_SIMULATE_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <iomanip>
#include <limits>
#include <mutex>
#include <exception>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "model.hpp"

namespace patchsis
{

struct Trajectory
{
    std::vector<double> times;
    std::vector<SystemState> states;
    std::string scheme;
    double step = 0.0;
    std::optional<std::uint64_t> seed;
    double max_mass_drift = 0.0;  // relative, worst layer over the run
    double max_overshoot = 0.0;   // largest clamped excursion of p outside [0,1]

    std::size_t size() const { return times.size(); }
    const SystemState& back() const { return states.back(); }
};

enum class RhsKind
{
    Full,
    Reduced
};

struct OdeOptions
{
    RhsKind rhs = RhsKind::Full;
    double step = 0.01;
    int record_every = 1; // store every k-th step (the final state is always stored)
};

namespace detail
{

inline double max_layer_drift(const MultiLayerDispersal& d, const Vector& x)
{
    double worst = 0.0;
    for (Eigen::Index a = 0; a < d.m(); ++a)
    {
        const double N = d.population(a);
        worst = std::max(worst, std::abs(x.segment(a * d.n(), d.n()).sum() - N) / N);
    }
    return worst;
}

} // namespace detail

/// Classic fixed-step RK4 on (p, x). With RhsKind::Reduced only the sink
/// coordinates of p evolve; the remaining entries stay at their initial value.
/// Populations are taken from the layer totals in `d`; s0.x must match them.
inline Trajectory integrate_ode(const MultiLayerDispersal& d, const EpidemicRates& r, const SystemState& s0,
                                double t_end, const OdeOptions& opts = {})
{
    if (!(opts.step > 0.0))
        throw std::invalid_argument("step must be positive");
    if (opts.record_every < 1)
        throw std::invalid_argument("record_every must be at least 1");
    const auto N = d.dim();
    if (s0.p.size() != N || s0.x.size() != N)
        throw std::invalid_argument("state vectors must have length n*m");
    if (s0.p.minCoeff() < 0.0 || s0.p.maxCoeff() > 1.0 || s0.x.minCoeff() < 0.0)
        throw std::invalid_argument("initial state must have p in [0,1] and x >= 0");

    const Dynamics dyn(d, r);
    std::optional<ReducedSystem> rs;
    if (opts.rhs == RhsKind::Reduced)
        rs = make_reduced_system(d, r);

    auto rhs = [&](const Vector& p, const Vector& x, double t, Vector& dp, Vector& dx) {
        if (!rs)
        {
            dyn.dp(p, x, dp);
            dyn.dx(x, dx);
            return;
        }
        const auto der = reduced_rhs(d, r, *rs, SystemState{p, x, t});
        dp = Vector::Zero(N);
        for (Eigen::Index k = 0; k < rs->size(); ++k)
            dp(rs->sink_index[static_cast<std::size_t>(k)]) = der.dp(k);
        dx = der.dx;
    };

    Trajectory traj;
    traj.scheme = opts.rhs == RhsKind::Full ? "rk4-full" : "rk4-reduced";
    traj.step = opts.step;
    traj.times.push_back(s0.t);
    traj.states.push_back(s0);
    traj.max_mass_drift = detail::max_layer_drift(d, s0.x);

    const auto steps = static_cast<long long>(std::ceil((t_end - s0.t) / opts.step - 1e-9));
    Vector p = s0.p, x = s0.x;
    Vector k1p, k1x, k2p, k2x, k3p, k3x, k4p, k4x;
    const double h = opts.step;
    for (long long n = 1; n <= steps; ++n)
    {
        const double t = s0.t + static_cast<double>(n - 1) * h;
        rhs(p, x, t, k1p, k1x);
        rhs(p + 0.5 * h * k1p, x + 0.5 * h * k1x, t + 0.5 * h, k2p, k2x);
        rhs(p + 0.5 * h * k2p, x + 0.5 * h * k2x, t + 0.5 * h, k3p, k3x);
        rhs(p + h * k3p, x + h * k3x, t + h, k4p, k4x);
        p += (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        x += (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);

        const double over = std::max(-p.minCoeff(), p.maxCoeff() - 1.0);
        if (over > 0.0)
        {
            if (over > 1e-9)
                throw StepTooLarge("p left [0,1] by " + std::to_string(over) + " at t = " + std::to_string(t + h));
            traj.max_overshoot = std::max(traj.max_overshoot, over);
            p = p.cwiseMax(0.0).cwiseMin(1.0);
        }
        traj.max_mass_drift = std::max(traj.max_mass_drift, detail::max_layer_drift(d, x));

        if (n % opts.record_every == 0 || n == steps)
        {
            traj.times.push_back(s0.t + static_cast<double>(n) * h);
            traj.states.push_back({p, x, traj.times.back()});
        }
    }
    return traj;
}

/// Philox4x32-10 counter-based generator. A stream is fixed by a 64-bit key
/// and a 64-bit stream id; the remaining 64 counter bits index blocks of four
/// outputs.
class Philox4x32
{
public:
    using result_type = std::uint32_t;

    Philox4x32(std::uint64_t key, std::uint64_t stream)
        : m_key{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
          m_counter{0, 0, static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)}
    {
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()()
    {
        if (m_pos == 4)
        {
            m_block = generate(m_counter, m_key);
            if (++m_counter[0] == 0)
                ++m_counter[1];
            m_pos = 0;
        }
        return m_block[m_pos++];
    }

    static std::array<std::uint32_t, 4> generate(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key)
    {
        constexpr std::uint32_t M0 = 0xD2511F53, M1 = 0xCD9E8D57;
        constexpr std::uint32_t W0 = 0x9E3779B9, W1 = 0xBB67AE85;
        for (int round = 0; round < 10; ++round)
        {
            const std::uint64_t p0 = std::uint64_t{M0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{M1} * ctr[2];
            ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
                   static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
            key[0] += W0;
            key[1] += W1;
        }
        return ctr;
    }

private:
    std::array<std::uint32_t, 2> m_key;
    std::array<std::uint32_t, 4> m_counter;
    std::array<std::uint32_t, 4> m_block{};
    int m_pos = 4;
};

/// Stream id of (replica, coordinate): replica * dim + coordinate, keyed by the seed.
inline Philox4x32 make_stream(std::uint64_t seed, std::uint64_t replica, Eigen::Index dim, Eigen::Index coord)
{
    return {seed, replica * static_cast<std::uint64_t>(dim) + static_cast<std::uint64_t>(coord)};
}

/// Integer susceptible and infected counts per (node, layer), layer-major.
struct StochasticState
{
    std::vector<long long> susceptible;
    std::vector<long long> infected;

    Eigen::Index dim() const { return static_cast<Eigen::Index>(susceptible.size()); }

    long long total(Eigen::Index k) const { return susceptible[k] + infected[k]; }

    long long layer_total(Eigen::Index layer, Eigen::Index n) const
    {
        long long s = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            s += total(layer * n + i);
        return s;
    }

    SystemState as_state(double t) const
    {
        const auto N = dim();
        SystemState s{Vector::Zero(N), Vector(N), t};
        for (Eigen::Index k = 0; k < N; ++k)
        {
            const auto tot = total(k);
            s.x(k) = static_cast<double>(tot);
            if (tot > 0)
                s.p(k) = static_cast<double>(infected[k]) / static_cast<double>(tot);
        }
        return s;
    }

    /// Head counts `totals` with round(p0 * total) infected.
    static StochasticState from_fractions(const std::vector<long long>& totals, const Vector& p0)
    {
        StochasticState s;
        for (std::size_t k = 0; k < totals.size(); ++k)
        {
            if (totals[k] < 0)
                throw std::invalid_argument("counts must be non-negative");
            const auto inf = static_cast<long long>(std::llround(p0(static_cast<Eigen::Index>(k)) * totals[k]));
            s.infected.push_back(std::clamp(inf, 0LL, totals[k]));
            s.susceptible.push_back(totals[k] - s.infected.back());
        }
        return s;
    }
};

struct StochasticOptions
{
    double dt = 0.01;
    int record_every = 1;
    std::uint64_t replica = 0;
};

inline constexpr double kMaxEventProbability = 0.2;

/// Synchronous binomial tau-leaping of the finite-population process. Each
/// step uses the pre-step state for both updates: susceptibles are infected
/// with probability beta_i pavg_i dt and infecteds recover with probability
/// delta_i dt, then every individual leaves with probability nu_i dt to a
/// neighbour drawn proportionally to q_ij.
inline Trajectory simulate_stochastic(const MultiLayerDispersal& d, const EpidemicRates& r,
                                      const StochasticState& counts0, double t_end, std::uint64_t seed,
                                      const StochasticOptions& opts = {})
{
    const auto n = d.n();
    const auto N = d.dim();
    r.validate(N);
    if (counts0.dim() != N || static_cast<Eigen::Index>(counts0.infected.size()) != N)
        throw std::invalid_argument("initial counts must have length n*m");
    if (opts.record_every < 1)
        throw std::invalid_argument("record_every must be at least 1");
    const double dt = opts.dt;
    const Vector nu = d.exit_rates();
    if (!(dt > 0.0) || nu.maxCoeff() * dt > kMaxEventProbability || r.beta.maxCoeff() * dt > kMaxEventProbability
        || r.delta.maxCoeff() * dt > kMaxEventProbability)
        throw StepTooCoarse("per-step event probabilities exceed " + std::to_string(kMaxEventProbability)
                            + " at dt = " + std::to_string(dt));

    // Destination lists per coordinate: (target coordinate, conditional weight q_ij / nu_i).
    std::vector<std::vector<std::pair<Eigen::Index, double>>> targets(static_cast<std::size_t>(N));
    for (Eigen::Index a = 0; a < d.m(); ++a)
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                if (d.layer(a).has_edge(i, j))
                    targets[a * n + i].emplace_back(a * n + j, d.layer(a).rate(i, j) / nu(a * n + i));

    std::vector<Philox4x32> rng;
    rng.reserve(static_cast<std::size_t>(N));
    for (Eigen::Index k = 0; k < N; ++k)
        rng.push_back(make_stream(seed, opts.replica, N, k));

    auto binomial = [](Philox4x32& g, long long trials, double prob) -> long long {
        if (trials <= 0 || prob <= 0.0)
            return 0;
        if (prob >= 1.0)
            return trials;
        return std::binomial_distribution<long long>(trials, prob)(g);
    };

    StochasticState cur = counts0;
    StochasticState next;
    std::vector<double> pavg(static_cast<std::size_t>(n));

    Trajectory traj;
    traj.scheme = "tau-leap";
    traj.step = dt;
    traj.seed = seed;
    traj.times.push_back(0.0);
    traj.states.push_back(cur.as_state(0.0));

    // Moves `count` individuals out of coordinate k into `dest` (one multinomial over stay/targets).
    auto disperse = [&](Philox4x32& g, Eigen::Index k, long long count, std::vector<long long>& dest) {
        long long movers = binomial(g, count, nu(k) * dt);
        dest[k] += count - movers;
        double remaining_weight = 1.0;
        const auto& tk = targets[static_cast<std::size_t>(k)];
        for (std::size_t e = 0; e < tk.size() && movers > 0; ++e)
        {
            const auto& [j, w] = tk[e];
            const long long go = e + 1 == tk.size() ? movers : binomial(g, movers, std::min(1.0, w / remaining_weight));
            dest[j] += go;
            movers -= go;
            remaining_weight -= w;
        }
    };

    const auto steps = static_cast<long long>(std::ceil(t_end / dt - 1e-9));
    for (long long step = 1; step <= steps; ++step)
    {
        for (Eigen::Index i = 0; i < n; ++i)
        {
            long long tot = 0, inf = 0;
            for (Eigen::Index a = 0; a < d.m(); ++a)
            {
                tot += cur.total(a * n + i);
                inf += cur.infected[a * n + i];
            }
            pavg[i] = tot > 0 ? static_cast<double>(inf) / static_cast<double>(tot) : 0.0;
        }
        next.susceptible.assign(static_cast<std::size_t>(N), 0);
        next.infected.assign(static_cast<std::size_t>(N), 0);
        for (Eigen::Index k = 0; k < N; ++k)
        {
            auto& g = rng[static_cast<std::size_t>(k)];
            const long long new_inf = binomial(g, cur.susceptible[k], r.beta(k) * pavg[k % n] * dt);
            const long long rec = binomial(g, cur.infected[k], r.delta(k) * dt);
            disperse(g, k, cur.susceptible[k] - new_inf, next.susceptible);
            disperse(g, k, rec, next.susceptible);
            disperse(g, k, cur.infected[k] - rec, next.infected);
            disperse(g, k, new_inf, next.infected);
        }
        std::swap(cur, next);
        if (step % opts.record_every == 0 || step == steps)
        {
            const double t = static_cast<double>(step) * dt;
            traj.times.push_back(t);
            traj.states.push_back(cur.as_state(t));
        }
    }
    return traj;
}

/// Worker count: PATCHSIS_THREADS if set and positive, else hardware concurrency.
inline unsigned worker_count()
{
    if (const char* env = std::getenv("PATCHSIS_THREADS"))
    {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0)
            return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs `count` independent jobs job(0..count-1) on up to `workers` threads.
template <class Job>
void parallel_for(std::size_t count, unsigned workers, Job&& job)
{
    workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), std::max<std::size_t>(1, count)));
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < count; i = next++)
        {
            try
            {
                job(i);
            }
            catch (...)
            {
                std::lock_guard lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < workers; ++w)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

/// Replicas 0..replicas-1 of simulate_stochastic, each on its own streams.
inline std::vector<Trajectory> simulate_ensemble(const MultiLayerDispersal& d, const EpidemicRates& r,
                                                 const StochasticState& counts0, double t_end, std::uint64_t seed,
                                                 int replicas, StochasticOptions opts = {},
                                                 unsigned workers = worker_count())
{
    std::vector<Trajectory> out(static_cast<std::size_t>(std::max(replicas, 0)));
    parallel_for(out.size(), workers, [&](std::size_t rep) {
        StochasticOptions o = opts;
        o.replica = rep;
        out[rep] = simulate_stochastic(d, r, counts0, t_end, seed, o);
    });
    return out;
}

/// Mean of p over all n*m coordinates at each stored time.
inline std::vector<double> mean_infected_fraction(const Trajectory& traj)
{
    std::vector<double> out;
    out.reserve(traj.size());
    for (const auto& s : traj.states)
        out.push_back(s.p.mean());
    return out;
}

/// Pointwise ensemble mean of mean_infected_fraction; replicas must share time grids.
inline std::vector<double> ensemble_mean_fraction(const std::vector<Trajectory>& ensemble)
{
    if (ensemble.empty())
        return {};
    std::vector<double> mean(ensemble.front().size(), 0.0);
    for (const auto& traj : ensemble)
    {
        const auto f = mean_infected_fraction(traj);
        for (std::size_t k = 0; k < mean.size(); ++k)
            mean[k] += f[k];
    }
    for (auto& v : mean)
        v /= static_cast<double>(ensemble.size());
    return mean;
}

/// CSV `t,node,layer,p,x` (1-based node and layer), 12 significant digits.
inline void write_csv(std::ostream& os, const Trajectory& traj, Eigen::Index n)
{
    if (traj.seed)
        os << "# seed=" << *traj.seed << '\n';
    os << "t,node,layer,p,x\n";
    os << std::setprecision(12);
    for (std::size_t s = 0; s < traj.size(); ++s)
    {
        const auto& st = traj.states[s];
        for (Eigen::Index k = 0; k < st.p.size(); ++k)
            os << traj.times[s] << ',' << (k % n) + 1 << ',' << (k / n) + 1 << ',' << st.p(k) << ',' << st.x(k) << '\n';
    }
}

} // namespace patchsis

#endif // PATCHSIS_SIMULATE_HPP
