#pragma once

// NSGA-II building blocks: dominance, fast non-dominated sorting, crowding
// distance, crowded-comparison tournament and (mu + lambda) survivor selection.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "record.hpp"
#include "rng.hpp"

namespace alloctune {

/// Minimization dominance: no worse everywhere, strictly better somewhere.
inline bool dominates(const ObjectiveVector& a, const ObjectiveVector& b) {
    bool strictly = false;
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (a[k] > b[k]) return false;
        if (a[k] < b[k]) strictly = true;
    }
    return strictly;
}

using Front = std::vector<std::size_t>;

/// Fronts of indices, best first; indices ascend within each front.
inline std::vector<Front> non_dominated_sort(std::span<const ObjectiveVector> pts) {
    const std::size_t n = pts.size();
    std::vector<std::vector<std::size_t>> dominated_by(n);
    std::vector<std::size_t> dom_count(n, 0);
    std::vector<Front> fronts(1);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (dominates(pts[i], pts[j])) {
                dominated_by[i].push_back(j);
                ++dom_count[j];
            } else if (dominates(pts[j], pts[i])) {
                dominated_by[j].push_back(i);
                ++dom_count[i];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i)
        if (dom_count[i] == 0) fronts[0].push_back(i);
    while (!fronts.back().empty()) {
        Front next;
        for (std::size_t i : fronts.back())
            for (std::size_t j : dominated_by[i])
                if (--dom_count[j] == 0) next.push_back(j);
        std::sort(next.begin(), next.end());
        fronts.push_back(std::move(next));
    }
    fronts.pop_back();
    return fronts;
}

/// Crowding distance of each point of one front, in input order.
inline std::vector<double> crowding_distance(std::span<const ObjectiveVector> front) {
    const std::size_t n = front.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> d(n, 0.0);
    if (n <= 2) {
        std::fill(d.begin(), d.end(), inf);
        return d;
    }
    std::vector<std::size_t> order(n);
    for (std::size_t k = 0; k < front[0].size(); ++k) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return front[a][k] < front[b][k]; });
        d[order.front()] = inf;
        d[order.back()] = inf;
        const double range = front[order.back()][k] - front[order.front()][k];
        if (range <= 0) continue;
        for (std::size_t i = 1; i + 1 < n; ++i)
            d[order[i]] += (front[order[i + 1]][k] - front[order[i - 1]][k]) / range;
    }
    return d;
}

/// Rank (front index) and crowding distance for every point.
struct RankCrowding {
    std::vector<std::size_t> rank;
    std::vector<double> crowding;
};

inline RankCrowding rank_and_crowd(std::span<const ObjectiveVector> pts) {
    RankCrowding rc{std::vector<std::size_t>(pts.size()), std::vector<double>(pts.size())};
    const auto fronts = non_dominated_sort(pts);
    for (std::size_t f = 0; f < fronts.size(); ++f) {
        std::vector<ObjectiveVector> sub;
        for (std::size_t i : fronts[f]) sub.push_back(pts[i]);
        const auto cd = crowding_distance(sub);
        for (std::size_t k = 0; k < fronts[f].size(); ++k) {
            rc.rank[fronts[f][k]] = f;
            rc.crowding[fronts[f][k]] = cd[k];
        }
    }
    return rc;
}

/// Crowded comparison of two contestants: lower rank wins, then larger
/// crowding; a full tie is settled by a coin flip.
inline std::size_t crowded_winner(std::size_t a, std::size_t b, const RankCrowding& rc, Rng& rng) {
    if (rc.rank[a] != rc.rank[b]) return rc.rank[a] < rc.rank[b] ? a : b;
    if (rc.crowding[a] != rc.crowding[b]) return rc.crowding[a] > rc.crowding[b] ? a : b;
    return rng.coin(0.5) ? a : b;
}

/// Binary tournament over two distinct random members (one member: itself).
inline std::size_t tournament_select(const RankCrowding& rc, Rng& rng) {
    const std::size_t n = rc.rank.size();
    if (n == 1) return 0;
    const std::size_t a = rng.index(n);
    std::size_t b = rng.index(n - 1);
    if (b >= a) ++b;
    return crowded_winner(a, b, rc, rng);
}

/// Indices of the `keep` survivors of the merged parent+offspring pool: whole
/// fronts first, the last admitted front truncated by descending crowding
/// (ties to the lower index).
inline std::vector<std::size_t> environmental_selection(std::span<const ObjectiveVector> pool, std::size_t keep) {
    std::vector<std::size_t> out;
    for (const auto& front : non_dominated_sort(pool)) {
        if (out.size() + front.size() <= keep) {
            out.insert(out.end(), front.begin(), front.end());
            if (out.size() == keep) break;
            continue;
        }
        std::vector<ObjectiveVector> sub;
        for (std::size_t i : front) sub.push_back(pool[i]);
        const auto cd = crowding_distance(sub);
        std::vector<std::size_t> order(front.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cd[a] > cd[b]; });
        for (std::size_t k = 0; out.size() < keep; ++k) out.push_back(front[order[k]]);
        break;
    }
    return out;
}

}  // namespace alloctune
