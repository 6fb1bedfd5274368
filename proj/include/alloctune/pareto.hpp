#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "moo.hpp"
#include "record.hpp"

namespace alloctune {

struct FrontPoint {
    std::size_t source = 0;  // index of the record in the archive it came from
    ObjectiveVector objectives{};
};

/// Mutually non-dominated points, strictly ascending in the first objective.
struct ParetoFront {
    std::vector<FrontPoint> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

/// Non-dominated subset of `pts`; exact duplicates keep their first occurrence.
inline ParetoFront pareto_front(std::span<const ObjectiveVector> pts) {
    std::vector<std::size_t> order(pts.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return pts[a][0] != pts[b][0] ? pts[a][0] < pts[b][0] : pts[a][1] < pts[b][1];
    });
    ParetoFront f;
    double best_second = std::numeric_limits<double>::infinity();
    for (std::size_t i : order) {
        if (pts[i][1] < best_second) {
            f.points.push_back({i, pts[i]});
            best_second = pts[i][1];
        }
    }
    return f;
}

/// Pareto front of the ok records; sources index into `records`.
inline ParetoFront extract_front(std::span<const EvaluationRecord> records) {
    std::vector<ObjectiveVector> pts;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].ok()) continue;
        pts.push_back(records[i].objective_vector());
        idx.push_back(i);
    }
    if (pts.empty()) throw ConfigError("no successful evaluations to build a front from");
    auto f = pareto_front(pts);
    for (auto& p : f.points) p.source = idx[p.source];
    return f;
}

inline std::string format_point(const ObjectiveVector& p) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "(%.17g, %.17g)", p[0], p[1]);
    return buf;
}

/// Exact dominated area between the front and `ref` (minimization).
inline double hypervolume_2d(std::span<const FrontPoint> front, const ObjectiveVector& ref) {
    std::vector<ObjectiveVector> pts;
    for (const auto& p : front) {
        if (!(p.objectives[0] < ref[0] && p.objectives[1] < ref[1]))
            throw ConfigError("front point " + format_point(p.objectives) +
                              " does not strictly dominate the reference point " + format_point(ref));
        pts.push_back(p.objectives);
    }
    std::sort(pts.begin(), pts.end());
    double area = 0, ceiling = ref[1];
    for (const auto& p : pts) {
        if (p[1] >= ceiling) continue;
        area += (ref[0] - p[0]) * (ceiling - p[1]);
        ceiling = p[1];
    }
    return area;
}

inline double hypervolume_2d(const ParetoFront& front, const ObjectiveVector& ref) {
    return hypervolume_2d(std::span<const FrontPoint>(front.points), ref);
}

/// 1.1 x the per-objective worst value among ok records.
inline ObjectiveVector reference_point(std::span<const EvaluationRecord> records) {
    ObjectiveVector worst{0, 0};
    bool any = false;
    for (const auto& r : records) {
        if (!r.ok()) continue;
        const auto v = r.objective_vector();
        worst = {std::max(worst[0], v[0]), std::max(worst[1], v[1])};
        any = true;
    }
    if (!any) throw ConfigError("no successful evaluations to place a reference point");
    return {1.1 * worst[0], 1.1 * worst[1]};
}

/// Per objective: 100 * (max - min) / min. Undefined (nullopt) when min is 0.
inline std::array<std::optional<double>, 2> spans(const ParetoFront& front) {
    std::array<std::optional<double>, 2> out;
    for (std::size_t k = 0; k < 2; ++k) {
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& p : front.points) {
            lo = std::min(lo, p.objectives[k]);
            hi = std::max(hi, p.objectives[k]);
        }
        if (front.size() <= 1 || hi == lo)
            out[k] = 0.0;
        else if (lo != 0)
            out[k] = 100.0 * (hi - lo) / lo;
    }
    return out;
}

/// Least-squares slope of the second objective against the first, both as
/// percent above their front minimum. Undefined for fewer than two points.
inline std::optional<double> tradeoff_slope(const ParetoFront& front) {
    if (front.size() < 2) return std::nullopt;
    double lo0 = std::numeric_limits<double>::infinity(), lo1 = lo0;
    for (const auto& p : front.points) {
        lo0 = std::min(lo0, p.objectives[0]);
        lo1 = std::min(lo1, p.objectives[1]);
    }
    if (lo0 == 0 || lo1 == 0) return std::nullopt;
    const double n = static_cast<double>(front.size());
    double mx = 0, my = 0;
    std::vector<double> xs, ys;
    for (const auto& p : front.points) {
        xs.push_back(100.0 * (p.objectives[0] - lo0) / lo0);
        ys.push_back(100.0 * (p.objectives[1] - lo1) / lo1);
        mx += xs.back();
        my += ys.back();
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    if (sxx == 0) return std::nullopt;
    return sxy / sxx;
}

/// Indices into front.points.
struct Representatives {
    std::size_t min_time = 0;
    std::size_t min_memory = 0;
    std::size_t knee = 0;
};

/// The two single-objective extremes plus the knee: the point farthest from
/// the line through the extremes in min-max normalized objective space. Ties
/// go to the point nearest (0.5, 0.5), then to the lower index.
inline Representatives select_representatives(const ParetoFront& front) {
    if (front.empty()) throw ConfigError("empty front");
    const auto& pts = front.points;
    Representatives r;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i].objectives[0] < pts[r.min_memory].objectives[0]) r.min_memory = i;
        if (pts[i].objectives[1] < pts[r.min_time].objectives[1]) r.min_time = i;
    }
    double lo[2], range[2];
    for (std::size_t k = 0; k < 2; ++k) {
        double a = std::numeric_limits<double>::infinity(), b = -a;
        for (const auto& p : pts) {
            a = std::min(a, p.objectives[k]);
            b = std::max(b, p.objectives[k]);
        }
        lo[k] = a;
        range[k] = b - a;
    }
    auto norm = [&](std::size_t i) {
        std::array<double, 2> v{};
        for (std::size_t k = 0; k < 2; ++k) v[k] = range[k] > 0 ? (pts[i].objectives[k] - lo[k]) / range[k] : 0.0;
        return v;
    };
    const auto a = norm(r.min_memory), b = norm(r.min_time);
    const double dx = b[0] - a[0], dy = b[1] - a[1];
    const double len = std::hypot(dx, dy);

    constexpr double tie = 1e-12;
    double best_dist = -1, best_mid = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto p = norm(i);
        const double dist = len > 0 ? std::abs(dx * (p[1] - a[1]) - dy * (p[0] - a[0])) / len : 0.0;
        const double mid = std::hypot(p[0] - 0.5, p[1] - 0.5);
        if (dist > best_dist + tie || (std::abs(dist - best_dist) <= tie && mid < best_mid)) {
            best_dist = dist;
            best_mid = mid;
            r.knee = i;
        }
    }
    return r;
}

struct FrontAnalytics {
    double hypervolume = 0;
    ObjectiveVector reference_point{};
    std::size_t front_size = 0;
    std::array<std::optional<double>, 2> span_percent;
    std::optional<double> tradeoff_slope;
};

/// Analytics of an archive's front. Front points that do not strictly
/// dominate the reference point contribute no area.
inline FrontAnalytics analyze(std::span<const EvaluationRecord> records) {
    FrontAnalytics a;
    const auto front = extract_front(records);
    a.reference_point = reference_point(records);
    ParetoFront inside;
    for (const auto& p : front.points)
        if (p.objectives[0] < a.reference_point[0] && p.objectives[1] < a.reference_point[1])
            inside.points.push_back(p);
    a.hypervolume = hypervolume_2d(inside, a.reference_point);
    a.front_size = front.size();
    a.span_percent = spans(front);
    a.tradeoff_slope = tradeoff_slope(front);
    return a;
}

}  // namespace alloctune
