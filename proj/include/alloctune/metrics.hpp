#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace alloctune {

struct HeapSnapshot {
    std::uint64_t time = 0;
    std::uint64_t heap_bytes = 0;
    std::uint64_t extra_bytes = 0;

    std::uint64_t total() const { return heap_bytes + extra_bytes; }
};

/// Heap-size samples in profiler order. Times never decrease; the profiler
/// repeats a timestamp when it duplicates a snapshot as the detailed peak.
struct HeapSeries {
    std::vector<HeapSnapshot> snapshots;
    std::string time_unit;
};

struct MeasuredObjectives {
    double peak_heap_bytes = 0;
    double avg_heap_bytes = 0;
    double free_rate = 0;
    double wallclock_seconds = 0;
    std::optional<double> instructions;

    friend bool operator==(const MeasuredObjectives&, const MeasuredObjectives&) = default;
};

namespace detail {

inline std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.push_back(line);
        if (nl == text.size()) break;
        start = nl + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

inline std::optional<std::uint64_t> to_u64(std::string_view s) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline std::optional<double> to_double(std::string_view s) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// massif-style heap profile

/// Parses the snapshot text written by valgrind --tool=massif. Detailed heap
/// trees are skipped. Throws ParseError with a line number.
inline HeapSeries parse_heap_profile(std::string_view text) {
    if (detail::trim(text).find_first_not_of(" \t\r\n") == std::string_view::npos)
        throw ParseError(0, "no snapshots");

    HeapSeries series;
    bool have_unit = false;
    bool in_tree = false;
    struct Pending {
        std::size_t line = 0;
        std::optional<std::uint64_t> time, heap, extra;
    };
    std::optional<Pending> cur;

    auto finish = [&]() {
        if (!cur) return;
        if (!cur->time || !cur->heap || !cur->extra)
            throw ParseError(cur->line, "snapshot lacks time=, mem_heap_B= or mem_heap_extra_B=");
        if (!series.snapshots.empty() && *cur->time < series.snapshots.back().time)
            throw ParseError(cur->line, "snapshot time goes backwards");
        series.snapshots.push_back({*cur->time, *cur->heap, *cur->extra});
        cur.reset();
    };

    const auto lines = detail::lines_of(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t lineno = i + 1;
        const std::string_view line = lines[i];
        if (line.empty() || line.front() == '#') continue;

        const auto eq = line.find('=');
        const auto colon = line.find(':');
        if (line.starts_with("snapshot=")) {
            if (!have_unit) throw ParseError(lineno, "missing header (desc:/cmd:/time_unit:) before first snapshot");
            finish();
            if (!detail::to_u64(line.substr(9))) throw ParseError(lineno, "non-numeric snapshot index");
            cur = Pending{lineno, {}, {}, {}};
            in_tree = false;
            continue;
        }
        if (in_tree) continue;
        if (!cur) {
            if (colon != std::string_view::npos && (eq == std::string_view::npos || colon < eq)) {
                const auto key = line.substr(0, colon);
                if (key == "time_unit") {
                    series.time_unit = std::string(detail::trim(line.substr(colon + 1)));
                    have_unit = true;
                }
                continue;
            }
            throw ParseError(lineno, "unexpected line outside a snapshot");
        }
        if (eq == std::string_view::npos) throw ParseError(lineno, "expected key=value inside snapshot");
        const auto key = line.substr(0, eq);
        const auto value = line.substr(eq + 1);
        auto number = [&]() {
            auto v = detail::to_u64(value);
            if (!v) throw ParseError(lineno, "non-numeric value for " + std::string(key));
            return *v;
        };
        if (key == "time")
            cur->time = number();
        else if (key == "mem_heap_B")
            cur->heap = number();
        else if (key == "mem_heap_extra_B")
            cur->extra = number();
        else if (key == "mem_stacks_B")
            number();
        else if (key == "heap_tree")
            in_tree = true;
    }
    finish();
    if (series.snapshots.empty()) throw ParseError(0, "no snapshots");
    return series;
}

/// Maximum of heap + extra bytes.
inline std::uint64_t peak_heap(const HeapSeries& s) {
    std::uint64_t peak = 0;
    for (const auto& x : s.snapshots) peak = std::max(peak, x.total());
    return peak;
}

/// Time-weighted mean with each value held until the next snapshot.
inline double avg_heap(const HeapSeries& s) {
    const auto& v = s.snapshots;
    if (v.size() == 1) return static_cast<double>(v[0].total());
    const double span = static_cast<double>(v.back().time - v.front().time);
    if (span == 0) {
        double sum = 0;
        for (const auto& x : v) sum += static_cast<double>(x.total());
        return sum / static_cast<double>(v.size());
    }
    double area = 0;
    for (std::size_t i = 0; i + 1 < v.size(); ++i)
        area += static_cast<double>(v[i].total()) * static_cast<double>(v[i + 1].time - v[i].time);
    return area / span;
}

/// Released bytes between consecutive snapshots over the bytes held at the
/// start of each step.
inline double free_rate(const HeapSeries& s) {
    const auto& v = s.snapshots;
    double released = 0, held = 0;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        const double a = static_cast<double>(v[i].total());
        const double b = static_cast<double>(v[i + 1].total());
        released += std::max(0.0, a - b);
        held += a;
    }
    return held == 0 ? 0.0 : released / held;
}

// ---------------------------------------------------------------------------
// perf stat -x output

/// Value of the instructions counter row; nullopt when perf reports
/// "<not counted>" or "<not supported>".
inline std::optional<std::uint64_t> parse_instruction_count(std::string_view text, char sep = ',') {
    const auto lines = detail::lines_of(text);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line = detail::trim(lines[i]);
        if (line.empty() || line.front() == '#') continue;
        std::vector<std::string_view> fields;
        std::size_t start = 0;
        while (true) {
            const auto p = line.find(sep, start);
            fields.push_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
            if (p == std::string_view::npos) break;
            start = p + 1;
        }
        if (fields.size() < 3) continue;
        const auto event = detail::trim(fields[2]);
        if (event != "instructions" && !event.starts_with("instructions:")) continue;
        const auto value = detail::trim(fields[0]);
        if (value.starts_with("<not")) return std::nullopt;
        if (auto v = detail::to_u64(value)) return *v;
        if (auto d = detail::to_double(value); d && *d >= 0) return static_cast<std::uint64_t>(*d);
        throw ParseError(i + 1, "non-numeric instructions value '" + std::string(value) + "'");
    }
    throw ParseError(0, "no instructions row");
}

// ---------------------------------------------------------------------------
// POSIX time output

struct WallClock {
    double seconds = 0;
    bool below_resolution = false;
};

/// Reads the "real <seconds>" line of `time -p` style output. Other lines
/// (the timed command's own stderr) are ignored.
inline WallClock parse_wallclock(std::string_view text) {
    for (auto line : detail::lines_of(text)) {
        line = detail::trim(line);
        if (!line.starts_with("real")) continue;
        auto rest = detail::trim(line.substr(4));
        if (rest.size() == line.size() - 4) continue;  // "realize..." etc.
        if (auto v = detail::to_double(rest); v && *v >= 0) return {*v, *v == 0};
    }
    throw ParseError(0, "no 'real <seconds>' line in timing output");
}

// ---------------------------------------------------------------------------

inline nlohmann::json objectives_to_json(const MeasuredObjectives& m) {
    return {{"peak_heap_bytes", m.peak_heap_bytes},
            {"avg_heap_bytes", m.avg_heap_bytes},
            {"free_rate", m.free_rate},
            {"wallclock_seconds", m.wallclock_seconds},
            {"instructions", m.instructions ? nlohmann::json(*m.instructions) : nlohmann::json(nullptr)}};
}

inline MeasuredObjectives objectives_from_json(const nlohmann::json& j) {
    MeasuredObjectives m;
    m.peak_heap_bytes = j.at("peak_heap_bytes").get<double>();
    m.avg_heap_bytes = j.at("avg_heap_bytes").get<double>();
    m.free_rate = j.at("free_rate").get<double>();
    m.wallclock_seconds = j.at("wallclock_seconds").get<double>();
    if (j.contains("instructions") && !j.at("instructions").is_null())
        m.instructions = j.at("instructions").get<double>();
    return m;
}

}  // namespace alloctune
