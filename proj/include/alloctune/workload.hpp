#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace alloctune {

// ---------------------------------------------------------------------------
// Trace events
//
// One event per line:
//   A <id> <size>            allocate
//   F <id>                   free
//   R <old_id> <id> <size>   reallocate old_id into a new block id

struct TraceEvent {
    enum class Op : char { allocate = 'A', release = 'F', reallocate = 'R' };

    Op op = Op::allocate;
    std::uint64_t id = 0;
    std::uint64_t size = 0;
    std::uint64_t old_id = 0;

    static TraceEvent alloc(std::uint64_t id, std::uint64_t size) { return {Op::allocate, id, size, 0}; }
    static TraceEvent free(std::uint64_t id) { return {Op::release, id, 0, 0}; }
    static TraceEvent realloc(std::uint64_t old_id, std::uint64_t id, std::uint64_t size) {
        return {Op::reallocate, id, size, old_id};
    }

    friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

inline bool parse_u64(std::string_view s, std::uint64_t& out) {
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace detail

/// Parses and structurally checks a trace. Blank lines are ignored.
inline std::vector<TraceEvent> parse_trace(std::istream& in) {
    std::vector<TraceEvent> events;
    std::unordered_map<std::uint64_t, bool> issued;  // id -> still live
    std::string line;
    std::size_t lineno = 0;

    auto take_new_id = [&](std::uint64_t id) {
        if (!issued.emplace(id, true).second) throw ParseError(lineno, "id " + std::to_string(id) + " issued twice");
    };
    auto retire = [&](std::uint64_t id, const char* what) {
        auto it = issued.find(id);
        if (it == issued.end()) throw ParseError(lineno, std::string(what) + " of unknown id " + std::to_string(id));
        if (!it->second) throw ParseError(lineno, std::string(what) + " of already-freed id " + std::to_string(id));
        it->second = false;
    };

    while (std::getline(in, line)) {
        ++lineno;
        auto f = detail::split_ws(line);
        if (f.empty()) continue;
        std::uint64_t a = 0, b = 0, c = 0;
        if (f[0] == "A" && f.size() == 3 && detail::parse_u64(f[1], a) && detail::parse_u64(f[2], b)) {
            take_new_id(a);
            events.push_back(TraceEvent::alloc(a, b));
        } else if (f[0] == "F" && f.size() == 2 && detail::parse_u64(f[1], a)) {
            retire(a, "free");
            events.push_back(TraceEvent::free(a));
        } else if (f[0] == "R" && f.size() == 4 && detail::parse_u64(f[1], a) && detail::parse_u64(f[2], b) &&
                   detail::parse_u64(f[3], c)) {
            retire(a, "realloc");
            take_new_id(b);
            events.push_back(TraceEvent::realloc(a, b, c));
        } else {
            throw ParseError(lineno, "malformed trace line '" + line + "'");
        }
    }
    return events;
}

inline std::vector<TraceEvent> parse_trace(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_trace(in);
}

inline std::string serialize_trace(const std::vector<TraceEvent>& events) {
    std::string out;
    for (const auto& e : events) {
        switch (e.op) {
            case TraceEvent::Op::allocate:
                out += "A " + std::to_string(e.id) + " " + std::to_string(e.size) + "\n";
                break;
            case TraceEvent::Op::release: out += "F " + std::to_string(e.id) + "\n"; break;
            case TraceEvent::Op::reallocate:
                out += "R " + std::to_string(e.old_id) + " " + std::to_string(e.id) + " " + std::to_string(e.size) +
                       "\n";
                break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Workload profile

struct Bucket {
    std::uint64_t lower = 0;  // 0 or a power of two
    double weight = 0;

    friend bool operator==(const Bucket&, const Bucket&) = default;
};

struct WorkloadProfile {
    std::uint64_t total_ops = 1;
    std::vector<Bucket> size_histogram;
    double free_probability = 0;
    std::vector<Bucket> lifetime_histogram;
    std::uint64_t max_live_blocks = 1;
    std::string source;

    friend bool operator==(const WorkloadProfile&, const WorkloadProfile&) = default;
};

/// Log2 bucket lower bound: 0 for 0, otherwise the largest power of two <= x.
inline std::uint64_t log2_bucket(std::uint64_t x) { return x == 0 ? 0 : std::bit_floor(x); }

inline void check_histogram(const std::vector<Bucket>& h, const char* name) {
    if (h.empty()) throw ParseError(0, std::string(name) + " is empty");
    double sum = 0;
    std::uint64_t prev = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto& b = h[i];
        if (!(b.weight >= 0)) throw ParseError(0, std::string(name) + " has a negative weight");
        if (b.lower != 0 && !std::has_single_bit(b.lower))
            throw ParseError(0, std::string(name) + " bucket " + std::to_string(b.lower) + " is not a power of two");
        if (i > 0 && b.lower <= prev) throw ParseError(0, std::string(name) + " buckets must be strictly ascending");
        prev = b.lower;
        sum += b.weight;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ParseError(0, std::string(name) + " weights do not sum to 1");
}

/// Throws ParseError naming the first broken invariant.
inline void check_profile(const WorkloadProfile& p) {
    if (p.total_ops < 1) throw ParseError(0, "total_ops >= 1 required");
    if (p.max_live_blocks < 1) throw ParseError(0, "max_live_blocks >= 1 required");
    if (!(p.free_probability >= 0 && p.free_probability <= 1)) throw ParseError(0, "free_probability outside [0, 1]");
    check_histogram(p.size_histogram, "size_histogram");
    check_histogram(p.lifetime_histogram, "lifetime_histogram");
}

namespace detail {

inline std::vector<Bucket> normalize(const std::vector<std::pair<std::uint64_t, std::uint64_t>>& counts) {
    std::uint64_t total = 0;
    for (auto [_, c] : counts) total += c;
    std::vector<Bucket> out;
    for (auto [lower, c] : counts) out.push_back({lower, static_cast<double>(c) / static_cast<double>(total)});
    return out;
}

}  // namespace detail

/// Distills a structurally valid trace into a profile. Blocks still live at
/// the end of the trace count as released there when building the lifetime
/// histogram.
inline WorkloadProfile extract_profile(const std::vector<TraceEvent>& events, std::uint64_t target_ops) {
    if (events.empty()) throw ParseError(0, "cannot build a profile from an empty trace");
    if (target_ops < 1) throw ParseError(0, "total_ops >= 1 required");

    std::map<std::uint64_t, std::uint64_t> sizes;
    std::map<std::uint64_t, std::uint64_t> lifetimes;
    std::unordered_map<std::uint64_t, std::uint64_t> born;  // live id -> event position
    std::uint64_t releases = 0, live = 0, max_live = 0;

    auto end_life = [&](std::uint64_t id, std::uint64_t pos) {
        auto it = born.find(id);
        ++lifetimes[log2_bucket(pos - it->second)];
        born.erase(it);
    };

    for (std::uint64_t pos = 0; pos < events.size(); ++pos) {
        const auto& e = events[pos];
        switch (e.op) {
            case TraceEvent::Op::allocate:
                ++sizes[log2_bucket(e.size)];
                born[e.id] = pos;
                ++live;
                break;
            case TraceEvent::Op::release:
                end_life(e.id, pos);
                ++releases;
                --live;
                break;
            case TraceEvent::Op::reallocate:
                end_life(e.old_id, pos);
                ++sizes[log2_bucket(e.size)];
                born[e.id] = pos;
                ++releases;
                break;
        }
        max_live = std::max(max_live, live);
    }
    const std::uint64_t end = events.size();
    std::vector<std::uint64_t> remaining;
    for (auto& [id, _] : born) remaining.push_back(id);
    for (auto id : remaining) end_life(id, end);

    WorkloadProfile p;
    p.total_ops = target_ops;
    p.size_histogram = detail::normalize({sizes.begin(), sizes.end()});
    p.lifetime_histogram = detail::normalize({lifetimes.begin(), lifetimes.end()});
    p.free_probability = static_cast<double>(releases) / static_cast<double>(events.size());
    p.max_live_blocks = std::max<std::uint64_t>(max_live, 1);
    return p;
}

// ---------------------------------------------------------------------------
// Profile files (JSON)

inline nlohmann::json profile_to_json(const WorkloadProfile& p) {
    auto hist = [](const std::vector<Bucket>& h) {
        auto a = nlohmann::json::array();
        for (const auto& b : h) a.push_back({b.lower, b.weight});
        return a;
    };
    return {{"total_ops", p.total_ops},
            {"size_histogram", hist(p.size_histogram)},
            {"free_probability", p.free_probability},
            {"lifetime_histogram", hist(p.lifetime_histogram)},
            {"max_live_blocks", p.max_live_blocks},
            {"source", p.source}};
}

inline WorkloadProfile profile_from_json(const nlohmann::json& j) {
    WorkloadProfile p;
    try {
        auto hist = [](const nlohmann::json& a) {
            std::vector<Bucket> h;
            for (const auto& row : a) h.push_back({row.at(0).get<std::uint64_t>(), row.at(1).get<double>()});
            return h;
        };
        p.total_ops = j.at("total_ops").get<std::uint64_t>();
        p.size_histogram = hist(j.at("size_histogram"));
        p.free_probability = j.at("free_probability").get<double>();
        p.lifetime_histogram = hist(j.at("lifetime_histogram"));
        p.max_live_blocks = j.at("max_live_blocks").get<std::uint64_t>();
        p.source = j.value("source", "");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, std::string("malformed profile: ") + e.what());
    }
    check_profile(p);
    return p;
}

inline WorkloadProfile load_profile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(0, "cannot open profile '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, "profile '" + path + "': " + e.what());
    }
    return profile_from_json(j);
}

inline void save_profile(const WorkloadProfile& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write profile '" + path + "'");
    out << profile_to_json(p).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Synthetic schedule

struct SynthOp {
    enum class Kind : char { allocate = 'a', release = 'f' };

    Kind kind = Kind::allocate;
    std::uint32_t slot = 0;  // index into a table of max_live_blocks slots
    std::uint64_t size = 0;  // allocate only

    friend bool operator==(const SynthOp&, const SynthOp&) = default;
};

/// Streams the synthetic schedule for (profile, seed) one operation at a
/// time. All storage is sized by max_live_blocks up front, never by
/// total_ops, so a replaying process does not grow its own heap as it runs.
class ScheduleGenerator {
public:
    ScheduleGenerator(const WorkloadProfile& profile, std::uint64_t seed)
        : total_ops_(profile.total_ops),
          free_probability_(profile.free_probability),
          rng_(seed),
          live_(profile.max_live_blocks),
          spare_(profile.max_live_blocks) {
        check_profile(profile);
        double acc = 0;
        for (const auto& b : profile.size_histogram) {
            acc += b.weight;
            lowers_.push_back(b.lower);
            cumulative_.push_back(acc);
        }
        for (std::size_t i = 0; i < spare_.size(); ++i)
            spare_[i] = static_cast<std::uint32_t>(spare_.size() - 1 - i);
    }

    /// Writes the next operation; false once the schedule (including the
    /// closing drain) is exhausted.
    bool next(SynthOp& op) {
        if (allocated_ < total_ops_) {
            const bool must_alloc = live_count_ == 0;
            const bool must_free = live_count_ == live_.size();
            if (must_alloc || (!must_free && !rng_.coin(free_probability_))) {
                op = allocate();
                return true;
            }
        }
        if (live_count_ == 0) return false;
        op = release();
        return true;
    }

    std::size_t live_blocks() const { return live_count_; }
    std::size_t capacity() const { return live_.size(); }

private:
    SynthOp allocate() {
        const double u = rng_.uniform() * cumulative_.back();
        std::size_t b = std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin();
        if (b >= lowers_.size()) b = lowers_.size() - 1;
        // zero-weight buckets can only be hit through rounding at the top end
        while (b > 0 && cumulative_[b] == cumulative_[b - 1]) --b;
        const std::uint64_t lower = lowers_[b];
        const std::uint64_t size = lower == 0 ? 0 : lower + rng_.index(lower);

        const std::uint32_t slot = spare_.pop();
        live_[live_count_++] = slot;
        ++allocated_;
        return {SynthOp::Kind::allocate, slot, size};
    }

    SynthOp release() {
        const std::size_t k = static_cast<std::size_t>(rng_.index(live_count_));
        const std::uint32_t slot = live_[k];
        live_[k] = live_[--live_count_];
        spare_.push(slot);
        return {SynthOp::Kind::release, slot, 0};
    }

    // fixed-capacity stack over a preallocated vector
    struct SlotStack {
        explicit SlotStack(std::size_t cap) : data(cap), n(cap) {}
        std::uint32_t& operator[](std::size_t i) { return data[i]; }
        std::size_t size() const { return n; }
        std::uint32_t pop() { return data[--n]; }
        void push(std::uint32_t v) { data[n++] = v; }
        std::vector<std::uint32_t> data;
        std::size_t n;
    };

    std::uint64_t total_ops_;
    double free_probability_;
    Rng rng_;
    std::vector<std::uint64_t> lowers_;
    std::vector<double> cumulative_;
    std::vector<std::uint32_t> live_;
    std::size_t live_count_ = 0;
    SlotStack spare_;
    std::uint64_t allocated_ = 0;
};

inline std::vector<SynthOp> synth_schedule(const WorkloadProfile& profile, std::uint64_t seed) {
    ScheduleGenerator gen(profile, seed);
    std::vector<SynthOp> ops;
    ops.reserve(2 * profile.total_ops);
    SynthOp op;
    while (gen.next(op)) ops.push_back(op);
    return ops;
}

inline std::string serialize_schedule(const std::vector<SynthOp>& ops) {
    std::string out;
    for (const auto& op : ops) {
        out += static_cast<char>(op.kind);
        out += ' ' + std::to_string(op.slot);
        if (op.kind == SynthOp::Kind::allocate) out += ' ' + std::to_string(op.size);
        out += '\n';
    }
    return out;
}

/// Largest sum of live block sizes at any point of the schedule.
inline std::uint64_t schedule_max_live_bytes(const std::vector<SynthOp>& ops, std::size_t slots) {
    std::vector<std::uint64_t> held(slots, 0);
    std::uint64_t live = 0, peak = 0;
    for (const auto& op : ops) {
        if (op.kind == SynthOp::Kind::allocate) {
            held[op.slot] = op.size;
            live += op.size;
            peak = std::max(peak, live);
        } else {
            live -= held[op.slot];
            held[op.slot] = 0;
        }
    }
    return peak;
}

}  // namespace alloctune
