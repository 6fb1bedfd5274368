#pragma once

// The command-line workflow: capture -> profile -> optimize -> select ->
// validate -> report. Each command is a function so it can be driven from
// tests as well as from the alloctune executable.

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "evaluator.hpp"
#include "metrics.hpp"
#include "nsga2.hpp"
#include "param_space.hpp"
#include "pareto.hpp"
#include "process.hpp"
#include "record.hpp"
#include "workload.hpp"

namespace alloctune::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_input = 2, exit_subprocess = 3 };

/// Error carrying the process exit code it maps to.
class CommandError : public std::runtime_error {
public:
    CommandError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
    int code;
};

/// Environment variable the interposer shim reads for its output path.
inline constexpr const char* kTraceEnvVar = "ALLOCTUNE_TRACE_FILE";

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt_double(*v) : "NA"; }

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw CommandError(exit_input, "cannot write '" + p.string() + "'");
    out << text;
    if (!out.flush()) throw CommandError(exit_input, "write to '" + p.string() + "' failed");
}

/// Write to a sibling temp file then rename, so readers never see a torn file.
inline void write_atomic(const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    write_text(tmp, text);
    std::error_code ec;
    fs::rename(tmp, p, ec);
    if (ec) throw CommandError(exit_input, "cannot replace '" + p.string() + "': " + ec.message());
}

inline json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw CommandError(exit_input, "missing input '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw CommandError(exit_input, "'" + p.string() + "' is not valid JSON: " + e.what());
    }
}

/// Exclusive advisory lock held for the lifetime of the object.
class DirectoryLock {
public:
    explicit DirectoryLock(const fs::path& dir) {
        const auto path = (dir / ".lock").string();
        fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
        if (fd_ < 0) throw CommandError(exit_input, "cannot create lock file '" + path + "'");
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw CommandError(exit_input, "campaign directory '" + dir.string() + "' is in use by another process");
        }
    }
    ~DirectoryLock() {
        if (fd_ >= 0) ::close(fd_);
    }
    DirectoryLock(const DirectoryLock&) = delete;
    DirectoryLock& operator=(const DirectoryLock&) = delete;

private:
    int fd_ = -1;
};

// ---------------------------------------------------------------------------
// capture

struct CaptureOptions {
    std::string shim;
    std::string trace_out;
    std::vector<std::string> command;
};

struct CaptureResult {
    int exit_code = 0;
    std::size_t events = 0;
    std::vector<std::string> warnings;
};

/// Runs the target with the interposer preloaded. A nonzero target exit is
/// propagated; the partial trace is kept.
inline CaptureResult cmd_capture(const CaptureOptions& opt, std::ostream& log = std::cerr) {
    if (opt.command.empty()) throw CommandError(exit_usage, "capture needs a target command");
    if (!fs::exists(opt.shim)) throw CommandError(exit_input, "interposer library '" + opt.shim + "' not found");
    {
        std::ofstream probe(opt.trace_out, std::ios::trunc);
        if (!probe) throw CommandError(exit_input, "trace path '" + opt.trace_out + "' is not writable");
    }
    auto env = current_environment();
    const std::string shim = fs::absolute(opt.shim).string();
    env["LD_PRELOAD"] = env.count("LD_PRELOAD") && !env["LD_PRELOAD"].empty() ? shim + ":" + env["LD_PRELOAD"] : shim;
    env[kTraceEnvVar] = fs::absolute(opt.trace_out).string();

    const auto run = run_process(opt.command, env);
    std::cout << run.out;
    std::cerr << run.err;

    CaptureResult res;
    res.exit_code = run.success() ? 0 : (run.exit_code > 0 ? run.exit_code : exit_subprocess);
    std::ifstream in(opt.trace_out);
    try {
        res.events = parse_trace(in).size();
    } catch (const ParseError& e) {
        res.warnings.push_back(std::string("trace is not structurally valid: ") + e.what());
    }
    if (res.events == 0 && res.warnings.empty()) res.warnings.push_back("no allocation events were captured");
    if (res.exit_code != 0)
        res.warnings.push_back("target exited with status " + std::to_string(res.exit_code) +
                               "; partial trace kept");
    for (const auto& w : res.warnings) log << "warning: " << w << "\n";
    log << "captured " << res.events << " events into " << opt.trace_out << "\n";
    return res;
}

// ---------------------------------------------------------------------------
// profile

inline WorkloadProfile cmd_profile(const std::string& trace_path, std::uint64_t target_ops, const std::string& out_path,
                                   std::ostream& log = std::cout) {
    if (target_ops < 1) throw CommandError(exit_input, "total_ops >= 1 required");
    std::ifstream in(trace_path);
    if (!in) throw CommandError(exit_input, "cannot open trace '" + trace_path + "'");
    WorkloadProfile p;
    try {
        p = extract_profile(parse_trace(in), target_ops);
    } catch (const ParseError& e) {
        throw CommandError(exit_input, "trace '" + trace_path + "': " + e.what());
    }
    p.source = "trace " + fs::path(trace_path).filename().string();
    save_profile(p, out_path);
    log << "size buckets (bytes, weight):\n";
    for (const auto& b : p.size_histogram) log << "  " << b.lower << "\t" << b.weight << "\n";
    log << "free_probability " << p.free_probability << ", max_live_blocks " << p.max_live_blocks << ", total_ops "
        << p.total_ops << "\n";
    return p;
}

// ---------------------------------------------------------------------------
// optimize

struct CampaignConfig {
    std::string allocator = "glibc";
    std::string profile;
    std::optional<std::string> space_path;
    std::optional<std::string> preload_library;
    std::string driver;
    bool touch = false;
    HeapMode heap_mode = HeapMode::pages;
    HarnessTemplates templates = HarnessTemplates::defaults(HeapMode::pages);
    std::uint64_t workload_seed = 1;
    std::optional<std::string> mock;  // "analytic": closed-form stand-in objectives, no processes
    GAConfig ga;
    EvaluationSettings evaluation;
    std::string output;
};

inline json config_to_json(const CampaignConfig& c) {
    auto opt = [](const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); };
    return {{"allocator", c.allocator},
            {"profile", c.profile},
            {"space", opt(c.space_path)},
            {"preload_library", opt(c.preload_library)},
            {"driver", c.driver},
            {"touch", c.touch},
            {"heap_mode", to_string(c.heap_mode)},
            {"templates", templates_to_json(c.templates)},
            {"workload_seed", c.workload_seed},
            {"mock", opt(c.mock)},
            {"ga", ga_config_to_json(c.ga)},
            {"evaluation", settings_to_json(c.evaluation)},
            {"output", c.output}};
}

inline CampaignConfig config_from_json(const json& j) {
    CampaignConfig c;
    try {
        auto opt = [&](const char* key) -> std::optional<std::string> {
            if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
            return j.at(key).get<std::string>();
        };
        c.allocator = j.value("allocator", c.allocator);
        c.profile = j.value("profile", c.profile);
        c.space_path = opt("space");
        c.preload_library = opt("preload_library");
        c.driver = j.value("driver", c.driver);
        c.touch = j.value("touch", c.touch);
        c.heap_mode = parse_heap_mode(j.value("heap_mode", std::string("pages")));
        c.templates = HarnessTemplates::defaults(c.heap_mode);
        if (j.contains("templates")) {
            auto t = templates_from_json(j.at("templates"));
            if (j.at("templates").contains("heap")) c.templates.heap = t.heap;
            if (j.at("templates").contains("time")) c.templates.time = t.time;
            if (j.at("templates").contains("instructions")) c.templates.instructions = t.instructions;
        }
        c.workload_seed = j.value("workload_seed", c.workload_seed);
        c.mock = opt("mock");
        if (j.contains("ga")) c.ga = ga_config_from_json(j.at("ga"));
        if (j.contains("evaluation")) c.evaluation = settings_from_json(j.at("evaluation"));
        c.output = j.value("output", c.output);
    } catch (const json::exception& e) {
        throw CommandError(exit_input, std::string("malformed campaign config: ") + e.what());
    }
    return c;
}

/// Campaign identity: digest of the configuration minus its output location.
inline std::string campaign_id(const CampaignConfig& c) {
    auto j = config_to_json(c);
    j.erase("output");
    return stable_digest(j.dump());
}

inline ParameterSpace campaign_space(const CampaignConfig& c) {
    ParameterSpace sp = c.space_path ? load_space_file(*c.space_path) : builtin_space(c.allocator);
    if (c.space_path && to_string(sp.allocator) != c.allocator)
        throw ConfigError("space file is for " + to_string(sp.allocator) + " but the campaign targets " + c.allocator);
    if (c.preload_library) sp.preload_library = *c.preload_library;
    check_space(sp);
    return sp;
}

/// Closed-form objectives standing in for real measurements: each gene's
/// position u in [0, 1] along its (search-space) range pulls heap up and time
/// down, so the front is the full trade-off between the two.
inline Measurement analytic_measurement(const ParameterSpace& space, const EnvMap& env) {
    double heap = 1, time = 1, release = 0;
    for (const auto& s : space.specs) {
        const std::string& text = env.at(s.env_var);
        double u = 0;
        if (s.kind == ParamKind::categorical) {
            auto it = std::find(s.choices.begin(), s.choices.end(), text);
            u = s.choices.size() > 1 ? static_cast<double>(it - s.choices.begin()) / (s.choices.size() - 1) : 0;
        } else if (s.kind == ParamKind::boolean) {
            u = text == "1" ? 1 : 0;
        } else if (s.sentinel && text == s.sentinel->render) {
            u = 1;
        } else {
            const double v = std::stod(text);
            const double lo = s.scale == Scale::log2 ? std::log2(s.lower) : s.lower;
            const double hi = s.scale == Scale::log2 ? std::log2(s.upper) : s.upper;
            const double x = s.scale == Scale::log2 ? std::log2(v) : v;
            u = hi > lo ? (x - lo) / (hi - lo) : 0;
        }
        heap += u * u;
        time += (1 - u) * (1 - u);
        release += u / static_cast<double>(space.size());
    }
    Measurement m;
    m.objectives.peak_heap_bytes = 1e6 * heap;
    m.objectives.avg_heap_bytes = 0.5e6 * heap;
    m.objectives.free_rate = release;
    m.objectives.wallclock_seconds = time;
    return m;
}

struct CampaignPaths {
    fs::path dir;
    fs::path config() const { return dir / "config.json"; }
    fs::path log() const { return dir / "evaluations.jsonl"; }
    fs::path cache() const { return dir / "cache.jsonl"; }
    fs::path checkpoints() const { return dir / "checkpoints"; }
    fs::path front() const { return dir / "front.json"; }
    fs::path analytics() const { return dir / "analytics.json"; }
    fs::path recipes() const { return dir / "recipes"; }
    fs::path report() const { return dir / "report"; }
    fs::path checkpoint(std::size_t g) const {
        char name[32];
        std::snprintf(name, sizeof name, "gen_%05zu.json", g);
        return checkpoints() / name;
    }
};

struct LoggedRecord {
    EvaluationRecord record;
    std::size_t generation = 0;
};

inline std::vector<LoggedRecord> read_log(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw CommandError(exit_input, "missing evaluation log '" + p.string() + "'");
    std::vector<LoggedRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = json::parse(line);
            out.push_back({record_from_json(j), j.value("generation", std::size_t{0})});
        } catch (const std::exception& e) {
            throw CommandError(exit_input, p.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<EvaluationRecord> records_of(const std::vector<LoggedRecord>& log) {
    std::vector<EvaluationRecord> out;
    out.reserve(log.size());
    for (const auto& l : log) out.push_back(l.record);
    return out;
}

inline std::string log_line(const EvaluationRecord& r, std::size_t generation) {
    auto j = record_to_json(r);
    j["generation"] = generation;
    return j.dump() + "\n";
}

/// Keeps only the first `n` lines of the log (drops evaluations of a
/// generation that never reached its checkpoint).
inline void truncate_log(const fs::path& p, std::size_t n) {
    std::ifstream in(p);
    std::string kept, line;
    for (std::size_t i = 0; i < n && std::getline(in, line); ++i) kept += line + "\n";
    in.close();
    write_atomic(p, kept);
}

inline std::optional<std::size_t> latest_checkpoint(const CampaignPaths& paths) {
    if (!fs::exists(paths.checkpoints())) return std::nullopt;
    std::optional<std::size_t> best;
    for (const auto& e : fs::directory_iterator(paths.checkpoints())) {
        const auto name = e.path().filename().string();
        unsigned long g = 0;
        if (std::sscanf(name.c_str(), "gen_%lu.json", &g) == 1 && name.size() == 14 && e.path().extension() == ".json")
            best = std::max<std::size_t>(best.value_or(0), g);
    }
    return best;
}

inline json analytics_to_json(const FrontAnalytics& a) {
    return {{"hypervolume", a.hypervolume},
            {"reference_point", a.reference_point},
            {"front_size", a.front_size},
            {"span_percent", {opt_json(a.span_percent[0]), opt_json(a.span_percent[1])}},
            {"tradeoff_slope", opt_json(a.tradeoff_slope)},
            {"objectives", {"peak_heap_bytes", "wallclock_seconds"}}};
}

inline json front_to_json(const std::string& id, const std::string& allocator,
                          const std::vector<EvaluationRecord>& records, const ParetoFront& front) {
    json pts = json::array();
    for (const auto& p : front.points) {
        const auto& r = records[p.source];
        pts.push_back({{"record", p.source},
                       {"hash", r.candidate_hash},
                       {"genotype", r.genotype.values},
                       {"env", r.env},
                       {"objectives", p.objectives},
                       {"measured", objectives_to_json(r.objectives)}});
    }
    return {{"campaign", id}, {"allocator", allocator}, {"points", pts}};
}

struct OptimizeOptions {
    CampaignConfig config;
    bool resume = false;
    bool force = false;
    std::optional<std::size_t> generations_override;  // resume only
    std::optional<std::size_t> stop_after;           // stop once this generation is checkpointed
};

struct OptimizeResult {
    std::size_t generation = 0;
    bool finished = false;
    std::size_t evaluations = 0;
    std::size_t front_size = 0;
};

inline void require_file(const std::string& path, const std::string& what) {
    if (path.empty() || !fs::exists(path)) throw CommandError(exit_input, what + " '" + path + "' not found");
}

inline OptimizeResult cmd_optimize(const OptimizeOptions& opt, std::ostream& log = std::cerr) {
    CampaignPaths paths{opt.config.output};
    if (paths.dir.empty()) throw CommandError(exit_usage, "an output directory is required");

    CampaignConfig cfg = opt.config;
    const bool existing = fs::exists(paths.dir) && !fs::is_empty(paths.dir);
    if (opt.resume) {
        if (!fs::exists(paths.config()))
            throw CommandError(exit_input, "nothing to resume: '" + paths.config().string() + "' missing");
        cfg = config_from_json(read_json(paths.config()));
        cfg.output = opt.config.output;
        if (opt.generations_override) cfg.ga.generations = *opt.generations_override;
    } else if (existing && !opt.force) {
        throw CommandError(exit_input, "output directory '" + paths.dir.string() +
                                           "' is not empty (use --resume to continue or --force to overwrite)");
    }
    require_file(cfg.profile, "profile");
    if (cfg.space_path) require_file(*cfg.space_path, "space file");
    if (!cfg.mock) require_file(cfg.driver, "driver");
    cfg.ga.check();
    cfg.evaluation.check();
    ParameterSpace space;
    try {
        space = campaign_space(cfg);
        load_profile(cfg.profile);
    } catch (const std::exception& e) {
        throw CommandError(exit_input, e.what());
    }
    if (space.allocator == Allocator::tcmalloc && !cfg.mock && !fs::exists(*space.preload_library))
        throw CommandError(exit_input, "tcmalloc library '" + *space.preload_library + "' not found");
    fs::create_directories(paths.dir);
    DirectoryLock lock(paths.dir);

    if (!opt.resume && existing) {
        for (const auto& p : {paths.log(), paths.cache(), paths.front(), paths.analytics(), paths.checkpoints(),
                              paths.recipes(), paths.report()})
            fs::remove_all(p);
    }

    const std::string id = campaign_id(cfg);
    if (!opt.resume || opt.generations_override) write_atomic(paths.config(), config_to_json(cfg).dump(2) + "\n");

    EvaluationCache cache(paths.cache().string());
    for (const auto& w : cache.warnings()) log << "warning: " << w << "\n";

    MeasureFn measure;
    if (cfg.mock) {
        if (*cfg.mock != "analytic") throw CommandError(exit_usage, "unknown mock evaluator '" + *cfg.mock + "'");
        measure = [space](const EnvMap& env, std::uint64_t, double) { return analytic_measurement(space, env); };
    } else {
        auto harness = driver_harness(fs::absolute(cfg.driver).string(), fs::absolute(cfg.profile).string(), cfg.touch,
                                      space, cfg.templates, cfg.evaluation.measure_instructions);
        measure = [harness](const EnvMap& env, std::uint64_t seed, double timeout) {
            return harness(env, seed, timeout);
        };
    }
    Evaluator evaluator(space, WorkloadIdentity::of_file(cfg.profile), cfg.evaluation, measure, &cache);
    evaluator.record_eval_time(!cfg.mock);

    Nsga2 ga(space, cfg.ga, [&](const std::vector<Genotype>& genes, std::size_t) {
        return evaluator.evaluate_batch(genes, cfg.workload_seed);
    });

    std::size_t archive_size = 0;
    if (opt.resume) {
        if (auto g = latest_checkpoint(paths)) {
            const auto cp = read_json(paths.checkpoint(*g));
            try {
                ga.restore(cp.at("state"));
                archive_size = cp.at("archive_size").get<std::size_t>();
            } catch (const std::exception& e) {
                throw CommandError(exit_input, "checkpoint " + paths.checkpoint(*g).string() + ": " + e.what());
            }
            ga.set_generations(cfg.ga.generations);
            log << "resuming after generation " << *g << "\n";
        }
        if (fs::exists(paths.log()))
            truncate_log(paths.log(), archive_size);
    }
    if (!fs::exists(paths.log())) write_text(paths.log(), "");
    fs::create_directories(paths.checkpoints());

    ga.run([&](const Nsga2& state, const std::vector<EvaluationRecord>& batch) {
        {
            std::ofstream out(paths.log(), std::ios::app | std::ios::binary);
            for (const auto& r : batch) out << log_line(r, state.generation());
            if (!out.flush()) throw CommandError(exit_input, "cannot append to evaluation log");
        }
        archive_size += batch.size();
        const json cp = {{"campaign", id}, {"archive_size", archive_size}, {"state", state.checkpoint()}};
        write_atomic(paths.checkpoint(state.generation()), cp.dump(2) + "\n");
        std::size_t ok = 0;
        for (const auto& r : batch) ok += r.ok();
        log << "generation " << state.generation() << ": " << ok << "/" << batch.size() << " ok\n";
        return !(opt.stop_after && state.generation() >= *opt.stop_after);
    });

    const auto records = records_of(read_log(paths.log()));
    OptimizeResult res;
    res.generation = ga.generation();
    res.finished = ga.finished();
    res.evaluations = records.size();
    try {
        const auto front = extract_front(records);
        write_atomic(paths.front(), front_to_json(id, cfg.allocator, records, front).dump(2) + "\n");
        write_atomic(paths.analytics(), analytics_to_json(analyze(records)).dump(2) + "\n");
        res.front_size = front.size();
    } catch (const ConfigError& e) {
        log << "warning: no front written: " << e.what() << "\n";
    }
    if (!res.finished) log << "stopped after generation " << res.generation << "; continue with --resume\n";
    return res;
}

// ---------------------------------------------------------------------------
// select

inline std::string recipe_text(const std::string& role, const json& front, const json& point,
                               const std::optional<std::string>& preload) {
    std::string s = "# alloctune recipe: " + role + "\n";
    s += "# campaign: " + front.at("campaign").get<std::string>() + "\n";
    s += "# allocator: " + front.at("allocator").get<std::string>() + "\n";
    s += "# record: " + std::to_string(point.at("record").get<std::size_t>()) + " (hash " +
         point.at("hash").get<std::string>() + ")\n";
    s += "# objectives: peak_heap_bytes=" + fmt_double(point.at("objectives").at(0).get<double>()) +
         " wallclock_seconds=" + fmt_double(point.at("objectives").at(1).get<double>()) + "\n";
    if (preload) s += "LD_PRELOAD=" + *preload + "\n";
    for (const auto& [k, v] : point.at("env").items()) s += k + "=" + v.get<std::string>() + "\n";
    return s;
}

struct SelectResult {
    Representatives chosen;
    fs::path min_time, min_memory, knee;
};

inline SelectResult cmd_select(const std::string& dir) {
    CampaignPaths paths{dir};
    if (!fs::exists(paths.front())) throw CommandError(exit_input, "no front file in '" + dir + "' (run optimize)");
    const json front = read_json(paths.front());
    const auto cfg = config_from_json(read_json(paths.config()));
    std::optional<std::string> preload;
    if (!cfg.mock) {
        try {
            preload = campaign_space(cfg).preload_library;
        } catch (const std::exception& e) {
            throw CommandError(exit_input, e.what());
        }
    }

    ParetoFront pf;
    for (const auto& p : front.at("points"))
        pf.points.push_back({p.at("record").get<std::size_t>(), p.at("objectives").get<ObjectiveVector>()});
    if (pf.empty()) throw CommandError(exit_input, "front file has no points");
    SelectResult res;
    res.chosen = select_representatives(pf);
    fs::create_directories(paths.recipes());
    res.min_time = paths.recipes() / "min_time.env";
    res.min_memory = paths.recipes() / "min_memory.env";
    res.knee = paths.recipes() / "knee.env";
    write_text(res.min_time, recipe_text("min_time", front, front.at("points").at(res.chosen.min_time), preload));
    write_text(res.min_memory, recipe_text("min_memory", front, front.at("points").at(res.chosen.min_memory), preload));
    write_text(res.knee, recipe_text("knee", front, front.at("points").at(res.chosen.knee), preload));
    return res;
}

struct Recipe {
    std::string allocator;
    EnvMap env;
};

inline Recipe read_recipe(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CommandError(exit_input, "cannot open recipe '" + path + "'");
    Recipe r;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line.front() == '#') {
            const std::string key = "# allocator: ";
            if (line.starts_with(key)) r.allocator = line.substr(key.size());
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw CommandError(exit_input, path + ":" + std::to_string(lineno) + ": expected VAR=value");
        r.env[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return r;
}

// ---------------------------------------------------------------------------
// validate

struct ValidationOptions {
    std::string recipe;
    std::string baseline = "glibc";
    std::vector<std::string> command;
    std::size_t runs = 3;
    HeapMode heap_mode = HeapMode::pages;
    HarnessTemplates templates = HarnessTemplates::defaults(HeapMode::pages);
    std::optional<bool> measure_instructions;  // unset: when perf is on PATH
    std::string tcmalloc_library = kDefaultTcmallocLibrary;
    double timeout_seconds = 3600;
    std::string out;
};

/// Metrics compared by validation; for free_rate larger is better.
inline const std::vector<std::string>& validation_metrics() {
    static const std::vector<std::string> m = {"avg_heap_bytes", "free_rate", "peak_heap_bytes", "instructions",
                                               "wallclock_seconds"};
    return m;
}

inline std::optional<double> metric_of(const MeasuredObjectives& o, const std::string& name) {
    if (name == "peak_heap_bytes") return o.peak_heap_bytes;
    if (name == "avg_heap_bytes") return o.avg_heap_bytes;
    if (name == "free_rate") return o.free_rate;
    if (name == "wallclock_seconds") return o.wallclock_seconds;
    if (name == "instructions") return o.instructions;
    return std::nullopt;
}

/// Relative change below which a metric is reported as unchanged.
inline constexpr double kMinRelativeNoise = 0.01;

struct ValidationSide {
    std::vector<std::optional<MeasuredObjectives>> runs;  // nullopt: failed run
    std::vector<std::string> failures;
    std::optional<MeasuredObjectives> median;
};

struct ValidationReport {
    std::size_t runs = 0;
    ValidationSide baseline, tuned;
    std::map<std::string, std::optional<double>> delta;  // (tuned - baseline) / baseline
    std::map<std::string, double> noise;
    std::map<std::string, bool> no_change;
    bool unchanged = false;
};

inline json side_to_json(const ValidationSide& s) {
    json runs = json::array();
    for (const auto& r : s.runs) runs.push_back(r ? objectives_to_json(*r) : json(nullptr));
    return {{"runs", runs},
            {"failures", s.failures},
            {"median", s.median ? objectives_to_json(*s.median) : json(nullptr)}};
}

inline ValidationSide side_from_json(const json& j) {
    ValidationSide s;
    for (const auto& r : j.at("runs"))
        s.runs.push_back(r.is_null() ? std::nullopt : std::optional(objectives_from_json(r)));
    s.failures = j.at("failures").get<std::vector<std::string>>();
    if (!j.at("median").is_null()) s.median = objectives_from_json(j.at("median"));
    return s;
}

inline json validation_to_json(const ValidationReport& r) {
    json delta, noise, flags;
    for (const auto& [k, v] : r.delta) delta[k] = opt_json(v);
    for (const auto& [k, v] : r.noise) noise[k] = v;
    for (const auto& [k, v] : r.no_change) flags[k] = v;
    return {{"runs", r.runs},          {"baseline", side_to_json(r.baseline)},
            {"tuned", side_to_json(r.tuned)}, {"delta", delta},
            {"noise", noise},          {"no_change", flags},
            {"verdict", r.unchanged ? "no-change" : "changed"}};
}

inline ValidationReport validation_from_json(const json& j) {
    ValidationReport r;
    try {
        r.runs = j.at("runs").get<std::size_t>();
        r.baseline = side_from_json(j.at("baseline"));
        r.tuned = side_from_json(j.at("tuned"));
        for (const auto& [k, v] : j.at("delta").items())
            r.delta[k] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
        for (const auto& [k, v] : j.at("noise").items()) r.noise[k] = v.get<double>();
        for (const auto& [k, v] : j.at("no_change").items()) r.no_change[k] = v.get<bool>();
        r.unchanged = j.at("verdict").get<std::string>() == "no-change";
    } catch (const json::exception& e) {
        throw CommandError(exit_input, std::string("malformed validation report: ") + e.what());
    }
    return r;
}

/// Deltas, noise estimates and no-change flags from the per-run values.
inline void compare(ValidationReport& r) {
    auto ok_runs = [](const ValidationSide& s) {
        std::vector<MeasuredObjectives> v;
        for (const auto& x : s.runs)
            if (x) v.push_back(*x);
        return v;
    };
    const auto base = ok_runs(r.baseline), tuned = ok_runs(r.tuned);
    r.baseline.median = median_objectives(base);
    r.tuned.median = median_objectives(tuned);
    r.unchanged = true;
    for (const auto& name : validation_metrics()) {
        const auto b = metric_of(*r.baseline.median, name), t = metric_of(*r.tuned.median, name);
        // run-to-run spread within each side, relative to that side's median
        auto spread_of = [&](const std::vector<MeasuredObjectives>& side, const std::optional<double>& mid) {
            double lo = INFINITY, hi = -INFINITY;
            for (const auto& m : side)
                if (auto v = metric_of(m, name)) {
                    lo = std::min(lo, *v);
                    hi = std::max(hi, *v);
                }
            return (mid && *mid != 0 && hi >= lo) ? (hi - lo) / std::abs(*mid) : 0.0;
        };
        std::optional<double> d;
        if (b && t && *b != 0) d = (*t - *b) / *b;
        const double spread = std::max(spread_of(base, b), spread_of(tuned, t));
        r.delta[name] = d;
        r.noise[name] = std::max(kMinRelativeNoise, spread);
        const bool same = !d ? (b == t) : std::abs(*d) <= r.noise[name];
        r.no_change[name] = same;
        r.unchanged = r.unchanged && same;
    }
}

inline ValidationReport cmd_validate(const ValidationOptions& opt, std::ostream& log = std::cerr) {
    if (opt.runs == 0) throw CommandError(exit_usage, "runs must be >= 1");
    if (opt.command.empty()) throw CommandError(exit_usage, "validate needs a target command");
    const Allocator baseline = [&] {
        try {
            return parse_allocator(opt.baseline);
        } catch (const ConfigError& e) {
            throw CommandError(exit_usage, e.what());
        }
    }();
    const Recipe recipe = read_recipe(opt.recipe);
    const bool perf = opt.measure_instructions.value_or(executable_in_path(opt.templates.instructions.at(0)));

    auto harness_for = [&](std::optional<std::string> preload) {
        ProcessHarness h;
        h.templates = opt.templates;
        h.preload_library = std::move(preload);
        h.measure_instructions = perf;
        h.command = [cmd = opt.command](std::uint64_t) { return cmd; };
        return h;
    };
    const auto base_h = harness_for(baseline == Allocator::tcmalloc ? std::optional(opt.tcmalloc_library)
                                                                     : std::nullopt);
    const auto tuned_h = harness_for(std::nullopt);  // the recipe carries its own LD_PRELOAD

    ValidationReport rep;
    rep.runs = opt.runs;
    for (std::size_t i = 0; i < opt.runs; ++i) {
        for (auto* side : {&rep.baseline, &rep.tuned}) {
            const bool is_base = side == &rep.baseline;
            const auto m = is_base ? base_h({}, 0, opt.timeout_seconds) : tuned_h(recipe.env, 0, opt.timeout_seconds);
            if (m.status == EvalStatus::ok) {
                side->runs.push_back(m.objectives);
            } else {
                side->runs.push_back(std::nullopt);
                side->failures.push_back("run " + std::to_string(i) + ": " + to_string(m.status) + ": " + m.detail);
                log << "warning: " << (is_base ? "baseline " : "tuned ") << side->failures.back() << "\n";
            }
        }
    }
    auto any_ok = [](const ValidationSide& s) {
        return std::any_of(s.runs.begin(), s.runs.end(), [](const auto& r) { return r.has_value(); });
    };
    if (!any_ok(rep.baseline) || !any_ok(rep.tuned))
        throw CommandError(exit_subprocess, "validation needs at least one successful baseline and tuned run");
    compare(rep);
    if (!opt.out.empty()) write_text(opt.out, validation_to_json(rep).dump(2) + "\n");
    return rep;
}

// ---------------------------------------------------------------------------
// report

struct ReportResult {
    fs::path dir;
    std::size_t front_rows = 0;
    bool has_validation = false;
};

inline ReportResult cmd_report(const std::string& campaign_dir, const std::optional<std::string>& validation_path = {}) {
    CampaignPaths paths{campaign_dir};
    if (!fs::exists(paths.log())) throw CommandError(exit_input, "missing evaluation log '" + paths.log().string() + "'");
    if (!fs::exists(paths.config())) throw CommandError(exit_input, "missing campaign config '" + paths.config().string() + "'");
    const auto cfg = config_from_json(read_json(paths.config()));
    const auto logged = read_log(paths.log());
    const auto records = records_of(logged);
    ParetoFront front;
    FrontAnalytics an;
    try {
        front = extract_front(records);
        an = analyze(records);
    } catch (const ConfigError& e) {
        throw CommandError(exit_input, e.what());
    }

    std::optional<ValidationReport> val;
    const fs::path vpath = validation_path ? fs::path(*validation_path) : paths.dir / "validation.json";
    if (validation_path && !fs::exists(vpath)) throw CommandError(exit_input, "missing validation report '" + vpath.string() + "'");
    if (fs::exists(vpath)) val = validation_from_json(read_json(vpath));

    fs::create_directories(paths.report());
    ReportResult res{paths.report(), front.size() + 1, val.has_value()};

    // front table: one row per point plus a summary row
    std::string csv = "row,record,peak_heap_bytes,wallclock_seconds,hash\n";
    for (const auto& p : front.points)
        csv += "point," + std::to_string(p.source) + "," + fmt_double(p.objectives[0]) + "," +
               fmt_double(p.objectives[1]) + "," + records[p.source].candidate_hash + "\n";
    csv += "summary," + std::to_string(records.size()) + ",hypervolume=" + fmt_double(an.hypervolume) +
           ",reference=" + fmt_double(an.reference_point[0]) + ";" + fmt_double(an.reference_point[1]) +
           ",front_size=" + std::to_string(an.front_size) + ";span_heap_pct=" + fmt_opt(an.span_percent[0]) +
           ";span_time_pct=" + fmt_opt(an.span_percent[1]) + ";slope=" + fmt_opt(an.tradeoff_slope) + "\n";
    write_text(paths.report() / "front.csv", csv);

    // per-generation series against the final reference point
    std::string series = "generation,evaluations,front_size,hypervolume\n";
    std::vector<EvaluationRecord> upto;
    std::size_t gmax = 0;
    for (const auto& l : logged) gmax = std::max(gmax, l.generation);
    for (std::size_t g = 0, k = 0; g <= gmax; ++g) {
        while (k < logged.size() && logged[k].generation <= g) upto.push_back(logged[k++].record);
        std::size_t size = 0;
        double hv = 0;
        if (std::any_of(upto.begin(), upto.end(), [](const auto& r) { return r.ok(); })) {
            auto f = extract_front(upto);
            size = f.size();
            ParetoFront inside;
            for (const auto& p : f.points)
                if (p.objectives[0] < an.reference_point[0] && p.objectives[1] < an.reference_point[1])
                    inside.points.push_back(p);
            hv = hypervolume_2d(inside, an.reference_point);
        }
        series += std::to_string(g) + "," + std::to_string(upto.size()) + "," + std::to_string(size) + "," +
                  fmt_double(hv) + "\n";
    }
    write_text(paths.report() / "series.csv", series);

    std::string evals = "record,generation,status,peak_heap_bytes,avg_heap_bytes,free_rate,wallclock_seconds\n";
    for (std::size_t i = 0; i < logged.size(); ++i) {
        const auto& r = logged[i].record;
        evals += std::to_string(i) + "," + std::to_string(logged[i].generation) + "," + to_string(r.status) + "," +
                 fmt_double(r.objectives.peak_heap_bytes) + "," + fmt_double(r.objectives.avg_heap_bytes) + "," +
                 fmt_double(r.objectives.free_rate) + "," + fmt_double(r.objectives.wallclock_seconds) + "\n";
    }
    write_text(paths.report() / "evaluations.csv", evals);

    std::ostringstream md;
    md << "# Campaign report\n\n";
    md << "- campaign: `" << campaign_id(cfg) << "`\n- allocator: " << cfg.allocator
       << "\n- evaluations: " << records.size() << "\n- generations: " << gmax << "\n\n";
    md << "## Pareto front\n\n| record | peak heap (bytes) | wallclock (s) |\n|---:|---:|---:|\n";
    for (const auto& p : front.points)
        md << "| " << p.source << " | " << fmt_double(p.objectives[0]) << " | " << fmt_double(p.objectives[1]) << " |\n";
    md << "\n## Front analytics\n\n";
    md << "- hypervolume: " << fmt_double(an.hypervolume) << " (reference point " << fmt_double(an.reference_point[0])
       << ", " << fmt_double(an.reference_point[1]) << " = 1.1 x worst successful value per objective)\n";
    md << "- front size: " << an.front_size << "\n";
    md << "- span, peak heap: " << fmt_opt(an.span_percent[0]) << " %\n";
    md << "- span, wallclock: " << fmt_opt(an.span_percent[1]) << " %\n";
    md << "- trade-off slope (percent above front minimum, time vs heap): " << fmt_opt(an.tradeoff_slope) << "\n\n";
    md << "## Baseline vs tuned\n\n";
    if (!val) {
        md << "No validation data; run `alloctune validate --out " << (paths.dir / "validation.json").string()
           << " ...` to add this section.\n";
    } else {
        std::string vcsv = "metric,baseline_median,tuned_median,delta,no_change\n";
        md << "Medians over " << val->runs << " runs. Delta = (tuned - baseline) / baseline; negative is better except "
           << "for free rate.\n\n";
        md << "| metric | baseline | tuned | delta | verdict |\n|---|---:|---:|---:|---|\n";
        for (const std::string name : {"avg_heap_bytes", "free_rate", "peak_heap_bytes", "instructions"}) {
            const auto b = val->baseline.median ? metric_of(*val->baseline.median, name) : std::nullopt;
            const auto t = val->tuned.median ? metric_of(*val->tuned.median, name) : std::nullopt;
            const auto d = val->delta.count(name) ? val->delta.at(name) : std::nullopt;
            const bool same = val->no_change.count(name) && val->no_change.at(name);
            md << "| " << name << " | " << fmt_opt(b) << " | " << fmt_opt(t) << " | " << fmt_opt(d) << " | "
               << (same ? "no-change" : "changed") << " |\n";
            vcsv += name + "," + fmt_opt(b) + "," + fmt_opt(t) + "," + fmt_opt(d) + "," + (same ? "1" : "0") + "\n";
        }
        write_text(paths.report() / "comparison.csv", vcsv);

        std::string runs = "side,run,peak_heap_bytes,avg_heap_bytes,free_rate,instructions,wallclock_seconds\n";
        for (const auto& [name, side] : {std::pair{"baseline", &val->baseline}, std::pair{"tuned", &val->tuned}}) {
            for (std::size_t i = 0; i < side->runs.size(); ++i) {
                const auto& r = side->runs[i];
                if (!r) continue;
                runs += std::string(name) + "," + std::to_string(i) + "," + fmt_double(r->peak_heap_bytes) + "," +
                        fmt_double(r->avg_heap_bytes) + "," + fmt_double(r->free_rate) + "," +
                        fmt_opt(r->instructions) + "," + fmt_double(r->wallclock_seconds) + "\n";
            }
        }
        write_text(paths.report() / "validation_runs.csv", runs);
    }
    write_text(paths.report() / "report.md", md.str());
    return res;
}

}  // namespace alloctune::cli
