#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace alloctune {

enum class Allocator { glibc, tcmalloc };
enum class ParamKind { integer_range, continuous_range, categorical, boolean };
enum class Scale { linear, log2 };

inline std::string to_string(Allocator a) { return a == Allocator::glibc ? "glibc" : "tcmalloc"; }

inline Allocator parse_allocator(std::string_view name) {
    if (name == "glibc") return Allocator::glibc;
    if (name == "tcmalloc") return Allocator::tcmalloc;
    throw ConfigError("unknown allocator '" + std::string(name) + "' (expected glibc or tcmalloc)");
}

inline std::string to_string(ParamKind k) {
    switch (k) {
        case ParamKind::integer_range: return "integer-range";
        case ParamKind::continuous_range: return "continuous-range";
        case ParamKind::categorical: return "categorical";
        case ParamKind::boolean: return "boolean";
    }
    return "?";
}

inline ParamKind parse_kind(std::string_view s) {
    if (s == "integer-range") return ParamKind::integer_range;
    if (s == "continuous-range") return ParamKind::continuous_range;
    if (s == "categorical") return ParamKind::categorical;
    if (s == "boolean") return ParamKind::boolean;
    throw ConfigError("unknown parameter kind '" + std::string(s) + "'");
}

/// An out-of-range value a range parameter may also take, such as a heap
/// limit of "unlimited". It is a separate choice rather than a point in the
/// range so that mutation never drifts onto it by accident.
struct Sentinel {
    double value = -1;
    std::string label;   // human name, e.g. "unlimited"
    std::string render;  // what the allocator expects in the environment
};

struct ParameterSpec {
    std::string name;
    std::string env_var;
    ParamKind kind = ParamKind::integer_range;
    double lower = 0;
    double upper = 0;
    std::vector<std::string> choices;  // categorical only; genes hold the index
    double default_value = 0;
    Scale scale = Scale::linear;
    std::optional<Sentinel> sentinel;

    bool is_range() const { return kind == ParamKind::integer_range || kind == ParamKind::continuous_range; }
    bool is_integral() const { return kind != ParamKind::continuous_range; }
    bool is_sentinel(double v) const { return sentinel && v == sentinel->value; }

    /// Smallest and largest legal gene value (categorical: index bounds).
    double gene_lower() const { return kind == ParamKind::categorical ? 0.0 : kind == ParamKind::boolean ? 0.0 : lower; }
    double gene_upper() const {
        if (kind == ParamKind::categorical) return static_cast<double>(choices.size()) - 1.0;
        if (kind == ParamKind::boolean) return 1.0;
        return upper;
    }
};

struct ParameterSpace {
    Allocator allocator = Allocator::glibc;
    std::vector<ParameterSpec> specs;
    std::optional<std::string> preload_library;

    std::size_t size() const { return specs.size(); }
    const ParameterSpec& operator[](std::size_t i) const { return specs[i]; }
};

struct Genotype {
    std::vector<double> values;

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }
    friend bool operator==(const Genotype&, const Genotype&) = default;
};

using EnvMap = std::map<std::string, std::string>;

struct Violation {
    std::size_t position;
    std::string reason;
};

class InvalidGenotype : public ConfigError {
public:
    explicit InvalidGenotype(std::vector<Violation> v)
        : ConfigError(describe(v)), violations(std::move(v)) {}

    std::vector<Violation> violations;

private:
    static std::string describe(const std::vector<Violation>& v) {
        std::string s = "invalid genotype:";
        for (const auto& x : v) s += " [" + std::to_string(x.position) + "] " + x.reason + ";";
        return s;
    }
};

// ---------------------------------------------------------------------------
// Rendering

inline std::string render_integer(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
    return buf;
}

/// Plain decimal, at most 6 fractional digits, trailing zeros dropped.
inline std::string render_decimal(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string s = buf;
    if (s.find('.') != std::string::npos) {
        while (s.back() == '0') s.pop_back();
        if (s.back() == '.') s.pop_back();
    }
    if (s == "-0") s = "0";
    return s;
}

// ---------------------------------------------------------------------------
// Validation

inline void check_spec(const ParameterSpec& s) {
    auto fail = [&](const std::string& why) { throw ConfigError("parameter '" + s.name + "': " + why); };
    if (s.env_var.empty()) fail("env_var is empty");
    switch (s.kind) {
        case ParamKind::categorical: {
            if (s.choices.empty()) fail("categorical parameter without choices");
            double idx = s.default_value;
            if (idx != std::floor(idx) || idx < 0 || idx >= static_cast<double>(s.choices.size()))
                fail("default is not one of the choices");
            break;
        }
        case ParamKind::boolean:
            if (s.default_value != 0 && s.default_value != 1) fail("boolean default must be 0 or 1");
            break;
        default:
            if (!(s.lower <= s.upper)) fail("lower > upper");
            if (!s.is_sentinel(s.default_value) && !(s.lower <= s.default_value && s.default_value <= s.upper))
                fail("default outside [lower, upper]");
            if (s.scale == Scale::log2 && s.lower < 1) fail("log2 scale requires lower >= 1");
            if (s.sentinel && s.sentinel->value >= s.lower && s.sentinel->value <= s.upper)
                fail("sentinel value must lie outside the range");
            if (s.kind == ParamKind::integer_range &&
                (s.lower != std::floor(s.lower) || s.upper != std::floor(s.upper)))
                fail("integer bounds must be integral");
    }
}

/// Throws ConfigError when the space breaks a structural invariant.
inline void check_space(const ParameterSpace& space) {
    std::set<std::string> seen;
    for (const auto& s : space.specs) {
        check_spec(s);
        if (!seen.insert(s.env_var).second) throw ConfigError("duplicate env_var '" + s.env_var + "'");
    }
    if (space.specs.empty()) throw ConfigError("parameter space has no specs");
    if (space.allocator == Allocator::tcmalloc && !space.preload_library)
        throw ConfigError("tcmalloc space needs a preload library");
}

/// Every violated position with a reason; empty means valid.
inline std::vector<Violation> validate(const ParameterSpace& space, const Genotype& g) {
    std::vector<Violation> out;
    if (g.size() != space.size()) {
        out.push_back({std::min(g.size(), space.size()),
                       "length mismatch: genotype has " + std::to_string(g.size()) + " values, space has " +
                           std::to_string(space.size()) + " specs"});
    }
    const std::size_t n = std::min(g.size(), space.size());
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = space[i];
        const double v = g[i];
        if (!std::isfinite(v)) {
            out.push_back({i, "not finite"});
            continue;
        }
        if (s.is_sentinel(v)) continue;
        if (s.is_integral() && v != std::floor(v)) {
            out.push_back({i, "non-integral"});
            continue;
        }
        if (v < s.gene_lower())
            out.push_back({i, s.kind == ParamKind::categorical ? "choice index out of range" : "below lower bound"});
        else if (v > s.gene_upper())
            out.push_back({i, s.kind == ParamKind::categorical ? "choice index out of range" : "above upper bound"});
    }
    return out;
}

inline bool is_valid(const ParameterSpace& space, const Genotype& g) { return validate(space, g).empty(); }

inline Genotype default_genotype(const ParameterSpace& space) {
    Genotype g;
    g.values.reserve(space.size());
    for (const auto& s : space.specs) g.values.push_back(s.default_value);
    return g;
}

inline std::string render_value(const ParameterSpec& s, double v) {
    if (s.is_sentinel(v)) return s.sentinel->render;
    switch (s.kind) {
        case ParamKind::categorical: return s.choices.at(static_cast<std::size_t>(v));
        case ParamKind::boolean: return v != 0 ? "1" : "0";
        case ParamKind::integer_range: return render_integer(v);
        case ParamKind::continuous_range: return render_decimal(v);
    }
    return {};
}

/// Environment assignments for a genotype. Throws InvalidGenotype.
inline EnvMap to_env(const ParameterSpace& space, const Genotype& g) {
    if (auto v = validate(space, g); !v.empty()) throw InvalidGenotype(std::move(v));
    EnvMap env;
    for (std::size_t i = 0; i < space.size(); ++i) env[space[i].env_var] = render_value(space[i], g[i]);
    return env;
}

// ---------------------------------------------------------------------------
// Built-in spaces

/// Bumped whenever a bound or default in the built-in tables changes.
inline constexpr int kBuiltinTableVersion = 1;

inline constexpr double kKiB = 1024.0;
inline constexpr double kMiB = 1024.0 * 1024.0;
inline constexpr const char* kDefaultTcmallocLibrary = "/usr/lib/x86_64-linux-gnu/libtcmalloc.so.4";

namespace detail {

inline ParameterSpec int_spec(std::string name, std::string env, double lo, double hi, double def, Scale scale) {
    ParameterSpec s;
    s.name = std::move(name);
    s.env_var = std::move(env);
    s.kind = ParamKind::integer_range;
    s.lower = lo;
    s.upper = hi;
    s.default_value = def;
    s.scale = scale;
    return s;
}

}  // namespace detail

// glibc defaults are the values documented for mallopt(3) on 64-bit targets.
// mmap threshold is capped at 32 MiB because glibc ignores larger settings
// (HEAP_MAX_SIZE / 2).
inline ParameterSpace glibc_space() {
    using detail::int_spec;
    ParameterSpace sp;
    sp.allocator = Allocator::glibc;
    sp.specs = {
        int_spec("mmap_threshold", "MALLOC_MMAP_THRESHOLD_", 4 * kKiB, 32 * kMiB, 128 * kKiB, Scale::log2),
        int_spec("trim_threshold", "MALLOC_TRIM_THRESHOLD_", 4 * kKiB, 512 * kMiB, 128 * kKiB, Scale::log2),
        int_spec("top_pad", "MALLOC_TOP_PAD_", 4 * kKiB, 512 * kMiB, 128 * kKiB, Scale::log2),
        int_spec("mmap_max", "MALLOC_MMAP_MAX_", 0, 65536, 65536, Scale::linear),
        // 0 lets glibc derive the limit from the core count
        int_spec("arena_max", "MALLOC_ARENA_MAX", 0, 64, 0, Scale::linear),
        int_spec("arena_test", "MALLOC_ARENA_TEST", 1, 64, 8, Scale::linear),
    };
    return sp;
}

// gperftools TCMalloc knobs and their documented defaults.
inline ParameterSpace tcmalloc_space() {
    using detail::int_spec;
    ParameterSpace sp;
    sp.allocator = Allocator::tcmalloc;
    sp.preload_library = kDefaultTcmallocLibrary;

    ParameterSpec release;
    release.name = "release_rate";
    release.env_var = "TCMALLOC_RELEASE_RATE";
    release.kind = ParamKind::continuous_range;
    release.lower = 0;
    release.upper = 10;
    release.default_value = 1.0;

    auto thread_cache = int_spec("max_total_thread_cache_bytes", "TCMALLOC_MAX_TOTAL_THREAD_CACHE_BYTES", 4 * kKiB,
                                 512 * kMiB, 16 * kMiB, Scale::log2);

    auto heap_limit = int_spec("heap_limit_mb", "TCMALLOC_HEAP_LIMIT_MB", 16, 65536, -1, Scale::log2);
    heap_limit.sentinel = Sentinel{-1, "unlimited", "0"};

    ParameterSpec decommit;
    decommit.name = "aggressive_decommit";
    decommit.env_var = "TCMALLOC_AGGRESSIVE_DECOMMIT";
    decommit.kind = ParamKind::boolean;
    decommit.lower = 0;
    decommit.upper = 1;
    decommit.default_value = 0;

    sp.specs = {release, thread_cache, heap_limit, decommit};
    return sp;
}

inline ParameterSpace builtin_space(Allocator a) { return a == Allocator::glibc ? glibc_space() : tcmalloc_space(); }

inline ParameterSpace builtin_space(std::string_view name) { return builtin_space(parse_allocator(name)); }

// ---------------------------------------------------------------------------
// Custom space files (JSON)

inline nlohmann::json spec_to_json(const ParameterSpec& s) {
    nlohmann::json j;
    j["name"] = s.name;
    j["env_var"] = s.env_var;
    j["kind"] = to_string(s.kind);
    if (s.is_range()) {
        j["lower"] = s.lower;
        j["upper"] = s.upper;
        j["scale"] = s.scale == Scale::log2 ? "log2" : "linear";
    }
    if (s.kind == ParamKind::categorical) {
        j["choices"] = s.choices;
        j["default"] = s.choices.at(static_cast<std::size_t>(s.default_value));
    } else if (s.is_sentinel(s.default_value)) {
        j["default"] = s.sentinel->label;
    } else {
        j["default"] = s.default_value;
    }
    if (s.sentinel)
        j["sentinel"] = {{"value", s.sentinel->value}, {"label", s.sentinel->label}, {"render", s.sentinel->render}};
    return j;
}

inline ParameterSpec spec_from_json(const nlohmann::json& j) {
    ParameterSpec s;
    try {
        s.name = j.at("name").get<std::string>();
        s.env_var = j.at("env_var").get<std::string>();
        s.kind = parse_kind(j.at("kind").get<std::string>());
        const std::string scale = j.value("scale", "linear");
        if (scale == "log2")
            s.scale = Scale::log2;
        else if (scale != "linear")
            throw ConfigError("parameter '" + s.name + "': unknown scale '" + scale + "'");
        if (j.contains("sentinel")) {
            const auto& sj = j.at("sentinel");
            s.sentinel = Sentinel{sj.at("value").get<double>(), sj.at("label").get<std::string>(),
                                  sj.at("render").get<std::string>()};
        }
        const auto& def = j.at("default");
        switch (s.kind) {
            case ParamKind::categorical: {
                s.choices = j.at("choices").get<std::vector<std::string>>();
                const std::string d = def.is_string() ? def.get<std::string>() : def.dump();
                auto it = std::find(s.choices.begin(), s.choices.end(), d);
                s.default_value = it == s.choices.end() ? -1.0 : static_cast<double>(it - s.choices.begin());
                break;
            }
            case ParamKind::boolean:
                s.lower = 0;
                s.upper = 1;
                s.default_value = def.is_boolean() ? (def.get<bool>() ? 1.0 : 0.0) : def.get<double>();
                break;
            default:
                s.lower = j.at("lower").get<double>();
                s.upper = j.at("upper").get<double>();
                if (def.is_string()) {
                    if (!s.sentinel || def.get<std::string>() != s.sentinel->label)
                        throw ConfigError("parameter '" + s.name + "': string default must name the sentinel");
                    s.default_value = s.sentinel->value;
                } else {
                    s.default_value = def.get<double>();
                }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed parameter spec: ") + e.what());
    }
    check_spec(s);
    return s;
}

inline nlohmann::json space_to_json(const ParameterSpace& sp) {
    nlohmann::json j;
    j["allocator"] = to_string(sp.allocator);
    j["preload_library"] = sp.preload_library ? nlohmann::json(*sp.preload_library) : nlohmann::json(nullptr);
    j["specs"] = nlohmann::json::array();
    for (const auto& s : sp.specs) j["specs"].push_back(spec_to_json(s));
    return j;
}

inline ParameterSpace space_from_json(const nlohmann::json& j) {
    ParameterSpace sp;
    try {
        sp.allocator = parse_allocator(j.at("allocator").get<std::string>());
        if (j.contains("preload_library") && !j.at("preload_library").is_null())
            sp.preload_library = j.at("preload_library").get<std::string>();
        for (const auto& s : j.at("specs")) sp.specs.push_back(spec_from_json(s));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed parameter space: ") + e.what());
    }
    check_space(sp);
    return sp;
}

inline ParameterSpace load_space_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open space file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("space file '" + path + "': " + e.what());
    }
    return space_from_json(j);
}

inline nlohmann::json genotype_to_json(const Genotype& g) { return g.values; }

inline Genotype genotype_from_json(const nlohmann::json& j) { return Genotype{j.get<std::vector<double>>()}; }

}  // namespace alloctune
