#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "moo.hpp"
#include "param_space.hpp"
#include "record.hpp"
#include "rng.hpp"

namespace alloctune {

struct GAConfig {
    std::size_t population_size = 24;
    std::size_t generations = 500;
    std::uint64_t seed = 1;
    double crossover_probability = 0.9;
    double sbx_eta = 15;
    std::optional<double> mutation_probability;  // unset: 1 / number of specs
    double mutation_eta = 20;
    double budget_seconds = 0;  // 0: no wall-clock budget

    double mutation_rate(std::size_t num_specs) const {
        return mutation_probability ? *mutation_probability : 1.0 / static_cast<double>(std::max<std::size_t>(num_specs, 1));
    }

    void check() const {
        if (population_size < 4 || population_size % 2 != 0)
            throw ConfigError("population_size must be even and >= 4");
        if (generations < 1) throw ConfigError("generations must be >= 1");
        auto prob = [](double p) { return p >= 0 && p <= 1; };
        if (!prob(crossover_probability)) throw ConfigError("crossover_probability outside [0, 1]");
        if (mutation_probability && !prob(*mutation_probability))
            throw ConfigError("mutation_probability outside [0, 1]");
        if (!(sbx_eta >= 0) || !(mutation_eta >= 0)) throw ConfigError("distribution indices must be >= 0");
    }
};

inline nlohmann::json ga_config_to_json(const GAConfig& c) {
    return {{"population_size", c.population_size},
            {"generations", c.generations},
            {"seed", c.seed},
            {"crossover_probability", c.crossover_probability},
            {"sbx_eta", c.sbx_eta},
            {"mutation_probability",
             c.mutation_probability ? nlohmann::json(*c.mutation_probability) : nlohmann::json(nullptr)},
            {"mutation_eta", c.mutation_eta},
            {"budget_seconds", c.budget_seconds}};
}

inline GAConfig ga_config_from_json(const nlohmann::json& j) {
    GAConfig c;
    c.population_size = j.value("population_size", c.population_size);
    c.generations = j.value("generations", c.generations);
    c.seed = j.value("seed", c.seed);
    c.crossover_probability = j.value("crossover_probability", c.crossover_probability);
    c.sbx_eta = j.value("sbx_eta", c.sbx_eta);
    if (j.contains("mutation_probability") && !j.at("mutation_probability").is_null())
        c.mutation_probability = j.at("mutation_probability").get<double>();
    c.mutation_eta = j.value("mutation_eta", c.mutation_eta);
    c.budget_seconds = j.value("budget_seconds", c.budget_seconds);
    return c;
}

// ---------------------------------------------------------------------------
// Variation operators

namespace detail {

// Range genes are searched in log2 space when their scale is log2.
inline double to_search(const ParameterSpec& s, double v) { return s.scale == Scale::log2 ? std::log2(v) : v; }
inline double from_search(const ParameterSpec& s, double x) { return s.scale == Scale::log2 ? std::exp2(x) : x; }

/// Back to a legal in-range value: integers round half to even, then clamp.
inline double settle(const ParameterSpec& s, double v) {
    if (s.is_integral()) v = std::nearbyint(v);
    return std::clamp(v, s.lower, s.upper);
}

inline double uniform_in_range(const ParameterSpec& s, Rng& rng) {
    const double lo = to_search(s, s.lower), hi = to_search(s, s.upper);
    return settle(s, from_search(s, rng.uniform(lo, hi)));
}

}  // namespace detail

/// SBX spread factor for a uniform draw u in [0, 1).
inline double sbx_beta(double u, double eta) {
    return u <= 0.5 ? std::pow(2 * u, 1 / (eta + 1)) : std::pow(1 / (2 * (1 - u)), 1 / (eta + 1));
}

/// Spread factor when the child may move at most `room` parent-distances
/// before hitting a bound (room = 1 + 2 * gap / |p2 - p1|). The probability
/// mass beyond the bound is folded back inside; infinite room gives sbx_beta.
inline double sbx_beta_bounded(double u, double eta, double room) {
    const double alpha = 2 - std::pow(room, -(eta + 1));
    return u <= 1 / alpha ? std::pow(u * alpha, 1 / (eta + 1)) : std::pow(1 / (2 - u * alpha), 1 / (eta + 1));
}

/// Simulated binary crossover of one gene pair for draw u.
inline std::pair<double, double> sbx_pair(double p1, double p2, double u, double eta) {
    const double beta = sbx_beta(u, eta);
    return {0.5 * ((1 + beta) * p1 + (1 - beta) * p2), 0.5 * ((1 - beta) * p1 + (1 + beta) * p2)};
}

/// Bounds-aware SBX: the lower child spreads toward lo, the upper toward hi.
/// Returns (lower child, upper child).
inline std::pair<double, double> sbx_pair_bounded(double p1, double p2, double lo, double hi, double u, double eta) {
    const double y1 = std::min(p1, p2), y2 = std::max(p1, p2), d = y2 - y1;
    const double c1 = 0.5 * (y1 + y2 - sbx_beta_bounded(u, eta, 1 + 2 * (y1 - lo) / d) * d);
    const double c2 = 0.5 * (y1 + y2 + sbx_beta_bounded(u, eta, 1 + 2 * (hi - y2) / d) * d);
    return {std::clamp(c1, lo, hi), std::clamp(c2, lo, hi)};
}

/// Polynomial-mutation perturbation (fraction of the range) for draw u.
inline double polynomial_delta(double u, double eta) {
    return u < 0.5 ? std::pow(2 * u, 1 / (eta + 1)) - 1 : 1 - std::pow(2 * (1 - u), 1 / (eta + 1));
}

inline Genotype random_genotype(const ParameterSpace& space, Rng& rng) {
    Genotype g;
    g.values.reserve(space.size());
    for (const auto& s : space.specs) {
        switch (s.kind) {
            case ParamKind::categorical: g.values.push_back(static_cast<double>(rng.index(s.choices.size()))); break;
            case ParamKind::boolean: g.values.push_back(rng.coin(0.5) ? 1.0 : 0.0); break;
            default:
                if (s.sentinel && rng.coin(0.5))
                    g.values.push_back(s.sentinel->value);
                else
                    g.values.push_back(detail::uniform_in_range(s, rng));
        }
    }
    return g;
}

/// Mixed-variable crossover: bounds-aware SBX on range genes (each gene with
/// probability 1/2, children assigned to either side at random), uniform
/// exchange on categorical, boolean and sentinel-valued genes.
inline std::pair<Genotype, Genotype> crossover(const ParameterSpace& space, const Genotype& p1, const Genotype& p2,
                                               Rng& rng, const GAConfig& cfg) {
    Genotype c1 = p1, c2 = p2;
    if (!rng.coin(cfg.crossover_probability)) return {c1, c2};
    for (std::size_t i = 0; i < space.size(); ++i) {
        const auto& s = space[i];
        const bool exchange = !s.is_range() || s.is_sentinel(p1[i]) || s.is_sentinel(p2[i]);
        if (exchange) {
            if (rng.coin(0.5)) std::swap(c1[i], c2[i]);
            continue;
        }
        if (!rng.coin(0.5)) continue;
        const double x1 = detail::to_search(s, p1[i]), x2 = detail::to_search(s, p2[i]);
        const double u = rng.uniform();
        const bool flip = rng.coin(0.5);
        if (std::abs(x1 - x2) < 1e-14) continue;
        auto [y1, y2] = sbx_pair_bounded(x1, x2, detail::to_search(s, s.lower), detail::to_search(s, s.upper), u,
                                         cfg.sbx_eta);
        if (flip) std::swap(y1, y2);
        c1[i] = detail::settle(s, detail::from_search(s, y1));
        c2[i] = detail::settle(s, detail::from_search(s, y2));
    }
    return {c1, c2};
}

/// Per-gene mutation with the configured probability. Range genes get
/// polynomial mutation (in log2 space for log2 specs), categorical genes jump
/// to a different choice, booleans flip. A gene that may take a sentinel
/// toggles between the sentinel and the range half of the time.
inline Genotype mutate(const ParameterSpace& space, const Genotype& g, Rng& rng, const GAConfig& cfg) {
    Genotype out = g;
    const double pm = cfg.mutation_rate(space.size());
    for (std::size_t i = 0; i < space.size(); ++i) {
        if (!rng.coin(pm)) continue;
        const auto& s = space[i];
        switch (s.kind) {
            case ParamKind::categorical: {
                const std::size_t n = s.choices.size();
                if (n < 2) break;
                auto r = static_cast<std::size_t>(rng.index(n - 1));
                if (r >= static_cast<std::size_t>(g[i])) ++r;
                out[i] = static_cast<double>(r);
                break;
            }
            case ParamKind::boolean: out[i] = g[i] != 0 ? 0.0 : 1.0; break;
            default: {
                if (s.sentinel) {
                    if (s.is_sentinel(g[i])) {
                        out[i] = detail::uniform_in_range(s, rng);
                        break;
                    }
                    if (rng.coin(0.5)) {
                        out[i] = s.sentinel->value;
                        break;
                    }
                }
                const double lo = detail::to_search(s, s.lower), hi = detail::to_search(s, s.upper);
                if (hi <= lo) break;
                const double x = detail::to_search(s, g[i]);
                const double y = std::clamp(x + polynomial_delta(rng.uniform(), cfg.mutation_eta) * (hi - lo), lo, hi);
                out[i] = detail::settle(s, detail::from_search(s, y));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// The GA loop

/// Evaluates one generation's genotypes; returns one record per genotype in
/// input order. `generation` is informational.
using BatchEvaluator = std::function<std::vector<EvaluationRecord>(const std::vector<Genotype>&, std::size_t generation)>;

struct Member {
    Genotype genotype;
    ObjectiveVector objectives{};
    bool feasible = true;
};

/// NSGA-II over a parameter space. State after each generation is the
/// population plus the penalty tracker; random streams are derived from
/// (seed, generation, operator, individual), so a run restored from a
/// checkpoint continues exactly as an uninterrupted one would.
class Nsga2 {
public:
    enum StreamTag : std::uint64_t { init_stream = 1, select_stream = 2, cross_stream = 3, mutate_stream = 4 };

    Nsga2(ParameterSpace space, GAConfig cfg, BatchEvaluator evaluate)
        : space_(std::move(space)), cfg_(cfg), evaluate_(std::move(evaluate)) {
        cfg_.check();
        check_space(space_);
    }

    /// Called after every completed generation with that generation's new
    /// records. Returning false stops the run (it can be resumed later).
    using Observer = std::function<bool(const Nsga2&, const std::vector<EvaluationRecord>&)>;

    /// Generation 0: the default configuration plus random genotypes.
    std::vector<EvaluationRecord> initialize() {
        std::vector<Genotype> genes{default_genotype(space_)};
        for (std::size_t i = 1; i < cfg_.population_size; ++i) {
            Rng rng = Rng::stream(cfg_.seed, 0, init_stream, i);
            genes.push_back(random_genotype(space_, rng));
        }
        auto records = run_batch(genes, 0);
        population_.clear();
        for (std::size_t i = 0; i < genes.size(); ++i) population_.push_back(member_of(genes[i], records[i]));
        generation_ = 0;
        refresh_penalties();
        return records;
    }

    /// Produces, evaluates and merges one generation of offspring.
    std::vector<EvaluationRecord> step() {
        const std::size_t g = generation_ + 1;
        const auto rc = rank_and_crowd(objectives_of(population_));
        std::vector<Genotype> kids;
        for (std::size_t k = 0; k < cfg_.population_size / 2; ++k) {
            Rng s1 = Rng::stream(cfg_.seed, g, select_stream, 2 * k);
            Rng s2 = Rng::stream(cfg_.seed, g, select_stream, 2 * k + 1);
            const auto& a = population_[tournament_select(rc, s1)].genotype;
            const auto& b = population_[tournament_select(rc, s2)].genotype;
            Rng cx = Rng::stream(cfg_.seed, g, cross_stream, k);
            auto [c1, c2] = crossover(space_, a, b, cx, cfg_);
            Rng m1 = Rng::stream(cfg_.seed, g, mutate_stream, 2 * k);
            Rng m2 = Rng::stream(cfg_.seed, g, mutate_stream, 2 * k + 1);
            kids.push_back(mutate(space_, c1, m1, cfg_));
            kids.push_back(mutate(space_, c2, m2, cfg_));
        }
        auto records = run_batch(kids, g);

        std::vector<Member> pool = population_;
        for (std::size_t i = 0; i < kids.size(); ++i) pool.push_back(member_of(kids[i], records[i]));
        refresh_penalties(pool);
        const auto keep = environmental_selection(objectives_of(pool), cfg_.population_size);
        std::vector<Member> next;
        for (std::size_t i : keep) next.push_back(pool[i]);
        population_ = std::move(next);
        generation_ = g;
        return records;
    }

    /// Runs to cfg.generations (or budget / observer stop). Returns the
    /// records produced by this call, generation 0 included when it ran here.
    std::vector<EvaluationRecord> run(const Observer& observe = {}) {
        const auto start = std::chrono::steady_clock::now();
        std::vector<EvaluationRecord> archive;
        auto emit = [&](std::vector<EvaluationRecord> batch) {
            archive.insert(archive.end(), batch.begin(), batch.end());
            return !observe || observe(*this, batch);
        };
        if (population_.empty() && !emit(initialize())) return archive;
        while (generation_ < cfg_.generations) {
            if (!emit(step())) break;
            if (cfg_.budget_seconds > 0 &&
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() > cfg_.budget_seconds)
                break;
        }
        return archive;
    }

    bool finished() const { return !population_.empty() && generation_ >= cfg_.generations; }
    std::size_t generation() const { return generation_; }
    const std::vector<Member>& population() const { return population_; }
    const GAConfig& config() const { return cfg_; }
    const ParameterSpace& space() const { return space_; }
    const PenaltyTracker& penalties() const { return penalty_; }

    /// The run may be extended (e.g. a resumed campaign asking for more generations).
    void set_generations(std::size_t n) { cfg_.generations = n; }

    nlohmann::json checkpoint() const {
        nlohmann::json pop = nlohmann::json::array();
        for (const auto& m : population_)
            pop.push_back({{"genotype", m.genotype.values}, {"objectives", m.objectives}, {"feasible", m.feasible}});
        return {{"generation", generation_},
                {"config", ga_config_to_json(cfg_)},
                {"rng", {{"root_seed", cfg_.seed}, {"next_generation", generation_ + 1}}},
                {"penalty", penalty_.to_json()},
                {"population", pop}};
    }

    void restore(const nlohmann::json& j) {
        try {
            generation_ = j.at("generation").get<std::size_t>();
            penalty_ = PenaltyTracker::from_json(j.at("penalty"));
            population_.clear();
            for (const auto& m : j.at("population")) {
                Member mem;
                mem.genotype.values = m.at("genotype").get<std::vector<double>>();
                mem.objectives = m.at("objectives").get<ObjectiveVector>();
                mem.feasible = m.at("feasible").get<bool>();
                if (!is_valid(space_, mem.genotype)) throw ParseError(0, "checkpoint genotype invalid for space");
                population_.push_back(std::move(mem));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(0, std::string("malformed checkpoint: ") + e.what());
        }
        if (population_.size() != cfg_.population_size)
            throw ParseError(0, "checkpoint population size does not match the configuration");
    }

private:
    std::vector<EvaluationRecord> run_batch(const std::vector<Genotype>& genes, std::size_t g) {
        auto records = evaluate_(genes, g);
        if (records.size() != genes.size()) throw SubprocessError("evaluator returned a short batch");
        penalty_.observe(records);
        penalty_.apply(records);
        return records;
    }

    static Member member_of(const Genotype& g, const EvaluationRecord& r) {
        return {g, r.objective_vector(), r.ok()};
    }

    void refresh_penalties() { refresh_penalties(population_); }

    void refresh_penalties(std::vector<Member>& members) const {
        const auto p = penalty_.penalty();
        for (auto& m : members)
            if (!m.feasible) m.objectives = {p.peak_heap_bytes, p.wallclock_seconds};
    }

    static std::vector<ObjectiveVector> objectives_of(const std::vector<Member>& members) {
        std::vector<ObjectiveVector> out;
        out.reserve(members.size());
        for (const auto& m : members) out.push_back(m.objectives);
        return out;
    }

    ParameterSpace space_;
    GAConfig cfg_;
    BatchEvaluator evaluate_;
    std::vector<Member> population_;
    std::size_t generation_ = 0;
    PenaltyTracker penalty_;
};

/// One-call form: final population plus every record produced.
struct Nsga2Result {
    std::vector<Member> population;
    std::vector<EvaluationRecord> archive;
};

inline Nsga2Result nsga2_run(const ParameterSpace& space, BatchEvaluator evaluate, const GAConfig& cfg) {
    Nsga2 ga(space, cfg, std::move(evaluate));
    auto archive = ga.run();
    return {ga.population(), std::move(archive)};
}

}  // namespace alloctune
