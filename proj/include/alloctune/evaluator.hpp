#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "metrics.hpp"
#include "param_space.hpp"
#include "process.hpp"
#include "record.hpp"

namespace alloctune {

enum class SeedPolicy { fixed, per_repetition };

inline std::string to_string(SeedPolicy p) { return p == SeedPolicy::fixed ? "fixed" : "per-repetition"; }

inline SeedPolicy parse_seed_policy(const std::string& s) {
    if (s == "fixed") return SeedPolicy::fixed;
    if (s == "per-repetition") return SeedPolicy::per_repetition;
    throw ConfigError("unknown seed policy '" + s + "' (expected fixed or per-repetition)");
}

struct EvaluationSettings {
    std::size_t repetitions = 3;
    double timeout_seconds = 600;
    std::size_t parallelism = 1;
    SeedPolicy seed_policy = SeedPolicy::fixed;
    bool measure_instructions = false;

    void check() const {
        if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
        if (!(timeout_seconds > 0)) throw ConfigError("timeout_seconds must be > 0");
        if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
    }

    std::uint64_t seed_for(std::uint64_t seed, std::size_t rep) const {
        return seed_policy == SeedPolicy::fixed ? seed : seed + rep;
    }
};

inline nlohmann::json settings_to_json(const EvaluationSettings& s) {
    return {{"repetitions", s.repetitions},
            {"timeout_seconds", s.timeout_seconds},
            {"parallelism", s.parallelism},
            {"seed_policy", to_string(s.seed_policy)},
            {"measure_instructions", s.measure_instructions}};
}

inline EvaluationSettings settings_from_json(const nlohmann::json& j) {
    EvaluationSettings s;
    s.repetitions = j.value("repetitions", s.repetitions);
    s.timeout_seconds = j.value("timeout_seconds", s.timeout_seconds);
    s.parallelism = j.value("parallelism", s.parallelism);
    s.seed_policy = parse_seed_policy(j.value("seed_policy", std::string("fixed")));
    s.measure_instructions = j.value("measure_instructions", s.measure_instructions);
    return s;
}

/// Stable 64-bit FNV-1a digest, hex encoded.
inline std::string stable_digest(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Outcome of one repetition.
struct Measurement {
    EvalStatus status = EvalStatus::ok;
    MeasuredObjectives objectives;
    std::string detail;
};

/// Measures one repetition of the workload under `candidate` (the allocator
/// variables only) with the given workload seed and time allowance.
using MeasureFn = std::function<Measurement(const EnvMap& candidate, std::uint64_t seed, double timeout_seconds)>;

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Per-metric medians, each metric independently. Instructions only when
/// every repetition has a count.
inline MeasuredObjectives median_objectives(const std::vector<MeasuredObjectives>& reps) {
    auto pick = [&](auto field) {
        std::vector<double> v;
        for (const auto& r : reps) v.push_back(r.*field);
        return median(std::move(v));
    };
    MeasuredObjectives m;
    m.peak_heap_bytes = pick(&MeasuredObjectives::peak_heap_bytes);
    m.avg_heap_bytes = pick(&MeasuredObjectives::avg_heap_bytes);
    m.free_rate = pick(&MeasuredObjectives::free_rate);
    m.wallclock_seconds = pick(&MeasuredObjectives::wallclock_seconds);
    std::vector<double> instr;
    for (const auto& r : reps)
        if (r.instructions) instr.push_back(*r.instructions);
    if (!reps.empty() && instr.size() == reps.size()) m.instructions = median(std::move(instr));
    return m;
}

// ---------------------------------------------------------------------------
// Persistent cache

/// Append-only JSON-lines store of records keyed by candidate hash. A lookup
/// returns the most recent record for the hash. Unreadable lines are skipped
/// and reported through warnings().
class EvaluationCache {
public:
    EvaluationCache() = default;  // in-memory only

    explicit EvaluationCache(std::string path) : path_(std::move(path)) {
        std::ifstream in(path_);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                auto r = record_from_json(nlohmann::json::parse(line));
                entries_[r.candidate_hash] = std::move(r);
            } catch (const std::exception& e) {
                warnings_.push_back(path_ + ":" + std::to_string(lineno) + ": skipped corrupted cache line");
            }
        }
    }

    std::optional<EvaluationRecord> lookup(const std::string& hash) const {
        std::lock_guard lock(mu_);
        auto it = entries_.find(hash);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void store(const EvaluationRecord& r) {
        std::lock_guard lock(mu_);
        entries_[r.candidate_hash] = r;
        if (path_.empty()) return;
        std::ofstream out(path_, std::ios::app);
        if (!out) throw ConfigError("cannot append to cache '" + path_ + "'");
        out << record_to_json(r).dump() << '\n';
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return entries_.size();
    }

    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    std::string path_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, EvaluationRecord> entries_;
    std::vector<std::string> warnings_;
};

// ---------------------------------------------------------------------------
// Evaluator

/// What is being run: identity feeds the candidate hash (typically a digest
/// of the profile file contents).
struct WorkloadIdentity {
    std::string profile_path;
    std::string digest;

    static WorkloadIdentity of_file(const std::string& path) { return {path, stable_digest(read_file(path))}; }
};

class Evaluator {
public:
    Evaluator(ParameterSpace space, WorkloadIdentity workload, EvaluationSettings settings, MeasureFn measure,
              EvaluationCache* cache = nullptr)
        : space_(std::move(space)),
          workload_(std::move(workload)),
          settings_(settings),
          measure_(std::move(measure)),
          cache_(cache) {
        settings_.check();
    }

    std::string candidate_hash(const EnvMap& env, std::uint64_t seed) const {
        std::string key = "env\n";
        for (const auto& [k, v] : env) key += k + "=" + v + "\n";
        key += "preload=" + space_.preload_library.value_or("") + "\n";
        key += "workload=" + workload_.digest + "\n";
        key += "seed_policy=" + to_string(settings_.seed_policy) + "\n";
        key += "seed=" + std::to_string(seed) + "\n";
        key += "repetitions=" + std::to_string(settings_.repetitions) + "\n";
        return stable_digest(key);
    }

    EvaluationRecord evaluate(const Genotype& g, std::uint64_t seed) { return evaluate_batch({g}, seed).front(); }

    /// Records in input order. Cache hits and repeats within the batch are
    /// not re-executed; at most settings.parallelism candidates run at once.
    std::vector<EvaluationRecord> evaluate_batch(const std::vector<Genotype>& genes, std::uint64_t seed) {
        const std::size_t n = genes.size();
        std::vector<EvaluationRecord> out(n);
        std::vector<std::optional<std::size_t>> same_as(n);  // earlier index with the same hash
        std::vector<std::size_t> jobs;
        std::map<std::string, std::size_t> first;

        for (std::size_t i = 0; i < n; ++i) {
            auto& r = out[i];
            r.genotype = genes[i];
            auto violations = validate(space_, genes[i]);
            if (!violations.empty()) {
                r.status = EvalStatus::infeasible;
                r.detail = InvalidGenotype(std::move(violations)).what();
                continue;
            }
            r.env = to_env(space_, genes[i]);
            r.candidate_hash = candidate_hash(r.env, seed);
            if (auto it = first.find(r.candidate_hash); it != first.end()) {
                same_as[i] = it->second;
                continue;
            }
            first.emplace(r.candidate_hash, i);
            if (cache_) {
                if (auto hit = cache_->lookup(r.candidate_hash)) {
                    hit->genotype = genes[i];
                    r = std::move(*hit);
                    continue;
                }
            }
            jobs.push_back(i);
        }

        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) run_one(out[jobs[k]], seed);
        };
        const std::size_t threads = std::min(settings_.parallelism, jobs.size());
        if (threads <= 1) {
            worker();
        } else {
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        }
        // timeouts may be transient, so they are not remembered
        if (cache_)
            for (std::size_t i : jobs)
                if (out[i].status != EvalStatus::timeout) cache_->store(out[i]);

        for (std::size_t i = 0; i < n; ++i) {
            if (!same_as[i]) continue;
            out[i] = out[*same_as[i]];
            out[i].genotype = genes[i];
        }

        std::lock_guard lock(penalty_mu_);
        penalty_.observe(out);
        penalty_.apply(out);
        return out;
    }

    std::size_t executions() const { return executions_.load(); }

    /// When off, eval_seconds stays 0 so records are reproducible byte for
    /// byte (used with analytic stand-in measurements).
    void record_eval_time(bool on) { record_eval_time_ = on; }
    const EvaluationSettings& settings() const { return settings_; }
    const ParameterSpace& space() const { return space_; }

private:
    void run_one(EvaluationRecord& r, std::uint64_t seed) {
        ++executions_;
        const auto start = std::chrono::steady_clock::now();
        auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
        for (std::size_t rep = 0; rep < settings_.repetitions; ++rep) {
            const double left = settings_.timeout_seconds - elapsed();
            Measurement m;
            if (left <= 0) {
                m.status = EvalStatus::timeout;
                m.detail = "time budget exhausted before repetition " + std::to_string(rep);
            } else {
                try {
                    m = measure_(r.env, settings_.seed_for(seed, rep), left);
                } catch (const std::exception& e) {
                    m.status = EvalStatus::crash;
                    m.detail = e.what();
                }
            }
            if (m.status != EvalStatus::ok) {
                r.status = m.status;
                r.detail = m.detail;
                r.per_rep.clear();
                break;
            }
            r.per_rep.push_back(m.objectives);
        }
        if (r.status == EvalStatus::ok) r.objectives = median_objectives(r.per_rep);
        r.eval_seconds = record_eval_time_ ? elapsed() : 0.0;
    }

    ParameterSpace space_;
    WorkloadIdentity workload_;
    EvaluationSettings settings_;
    MeasureFn measure_;
    EvaluationCache* cache_;
    std::atomic<std::size_t> executions_{0};
    bool record_eval_time_ = true;
    std::mutex penalty_mu_;
    PenaltyTracker penalty_;
};

// ---------------------------------------------------------------------------
// Process-backed measurement

enum class HeapMode { pages, blocks };

inline HeapMode parse_heap_mode(const std::string& s) {
    if (s == "pages") return HeapMode::pages;
    if (s == "blocks") return HeapMode::blocks;
    throw ConfigError("unknown heap mode '" + s + "' (expected pages or blocks)");
}

inline std::string to_string(HeapMode m) { return m == HeapMode::pages ? "pages" : "blocks"; }

/// Command templates for the three measurement harnesses.
struct HarnessTemplates {
    std::vector<std::string> heap;
    std::vector<std::string> time;
    std::vector<std::string> instructions;

    static std::vector<std::string> default_heap(HeapMode mode) {
        if (mode == HeapMode::pages)
            return {"valgrind", "--tool=massif", "--pages-as-heap=yes", "--massif-out-file={out}", "{cmd}"};
        return {"valgrind", "--tool=massif", "--massif-out-file={out}", "{cmd}"};
    }

    static std::vector<std::string> default_time() {
        return {"bash", "-c", "TIMEFORMAT=$'real %3R\\nuser %3U\\nsys %3S'; time \"$@\"", "timer", "{cmd}"};
    }

    static std::vector<std::string> default_instructions() {
        return {"perf", "stat", "-x,", "-e", "instructions", "-o", "{out}", "{cmd}"};
    }

    static HarnessTemplates defaults(HeapMode mode = HeapMode::pages) {
        return {default_heap(mode), default_time(), default_instructions()};
    }
};

inline nlohmann::json templates_to_json(const HarnessTemplates& t) {
    return {{"heap", t.heap}, {"time", t.time}, {"instructions", t.instructions}};
}

inline HarnessTemplates templates_from_json(const nlohmann::json& j) {
    auto t = HarnessTemplates::defaults();
    if (j.contains("heap")) t.heap = j.at("heap").get<std::vector<std::string>>();
    if (j.contains("time")) t.time = j.at("time").get<std::vector<std::string>>();
    if (j.contains("instructions")) t.instructions = j.at("instructions").get<std::vector<std::string>>();
    return t;
}

/// Smallest wallclock recorded when the timer reports zero (half its 1 ms
/// resolution), keeping time objectives strictly positive.
inline constexpr double kTimerFloorSeconds = 0.0005;

/// Runs a workload command under the heap profiler, the timer and optionally
/// the instruction counter. Heap and time come from separate runs because the
/// profiler slows the process down.
struct ProcessHarness {
    HarnessTemplates templates = HarnessTemplates::defaults();
    std::vector<std::string> base_keys = default_base_keys();
    std::optional<std::string> preload_library;
    bool measure_instructions = false;
    /// Builds the measured command for a seed.
    std::function<std::vector<std::string>(std::uint64_t seed)> command;
    TemplateVars vars;  // driver/profile/touch for template expansion

    /// Full child environment: scrubbed base + candidate (+ LD_PRELOAD).
    Environment environment(const EnvMap& candidate) const {
        auto env = scrubbed_base(base_keys);
        for (const auto& [k, v] : candidate) env[k] = v;
        if (preload_library) env["LD_PRELOAD"] = *preload_library;
        return env;
    }

    Measurement operator()(const EnvMap& candidate, std::uint64_t seed, double timeout) const {
        const auto start = std::chrono::steady_clock::now();
        auto left = [&] {
            return timeout - std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        };
        TempDir dir("alloctune-eval");
        const auto env = environment(candidate);
        TemplateVars v = vars;
        v.seed = std::to_string(seed);
        v.cmd = command(seed);

        Measurement m;
        auto failed = [&](const ProcessResult& r, const char* what) {
            if (r.timed_out) {
                m.status = EvalStatus::timeout;
                m.detail = std::string(what) + " run timed out";
                return true;
            }
            if (!r.success()) {
                m.status = EvalStatus::crash;
                m.detail = std::string(what) + " run failed (" +
                           (r.term_signal ? "signal " + std::to_string(r.term_signal)
                                          : "exit " + std::to_string(r.exit_code)) +
                           "): " + last_line(r.err);
                return true;
            }
            return false;
        };

        v.out = (dir.path() / "heap.out").string();
        auto heap_run = run_process(expand_template(templates.heap, v), env, std::max(left(), 0.001));
        if (failed(heap_run, "heap profiler")) return m;
        try {
            const auto series = parse_heap_profile(read_file(v.out));
            m.objectives.peak_heap_bytes = static_cast<double>(peak_heap(series));
            m.objectives.avg_heap_bytes = avg_heap(series);
            m.objectives.free_rate = free_rate(series);
        } catch (const ParseError& e) {
            m.status = EvalStatus::crash;
            m.detail = std::string("heap profile unreadable: ") + e.what();
            return m;
        }

        v.out = (dir.path() / "time.out").string();
        auto time_run = run_process(expand_template(templates.time, v), env, std::max(left(), 0.001));
        if (failed(time_run, "timing")) return m;
        try {
            const auto wc = parse_wallclock(time_run.err + "\n" + time_run.out);
            m.objectives.wallclock_seconds = wc.below_resolution ? kTimerFloorSeconds : wc.seconds;
        } catch (const ParseError& e) {
            m.status = EvalStatus::crash;
            m.detail = std::string("timing output unreadable: ") + e.what();
            return m;
        }

        if (measure_instructions) {
            v.out = (dir.path() / "perf.out").string();
            auto perf_run = run_process(expand_template(templates.instructions, v), env, std::max(left(), 0.001));
            if (failed(perf_run, "instruction counter")) return m;
            try {
                if (auto count = parse_instruction_count(read_file(v.out)))
                    m.objectives.instructions = static_cast<double>(*count);
            } catch (const ParseError& e) {
                m.status = EvalStatus::crash;
                m.detail = std::string("counter output unreadable: ") + e.what();
                return m;
            }
        }
        return m;
    }

private:
    static std::string last_line(const std::string& s) {
        auto end = s.find_last_not_of("\n ");
        if (end == std::string::npos) return "";
        auto begin = s.rfind('\n', end);
        return s.substr(begin == std::string::npos ? 0 : begin + 1, end - (begin == std::string::npos ? 0 : begin + 1) + 1);
    }
};

/// Harness that replays a workload profile with the synthetic driver.
inline ProcessHarness driver_harness(const std::string& driver, const std::string& profile, bool touch,
                                     const ParameterSpace& space, const HarnessTemplates& templates,
                                     bool measure_instructions) {
    ProcessHarness h;
    h.templates = templates;
    h.preload_library = space.preload_library;
    h.measure_instructions = measure_instructions;
    h.vars.driver = driver;
    h.vars.profile = profile;
    h.vars.touch = touch;
    h.command = [driver, profile, touch](std::uint64_t seed) {
        std::vector<std::string> cmd{driver, profile, "--seed", std::to_string(seed)};
        if (touch) cmd.push_back("--touch");
        return cmd;
    };
    return h;
}

}  // namespace alloctune
