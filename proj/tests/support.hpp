#pragma once

// Shared helpers for the unit tests and the acceptance suite.

#include <cmath>
#include <string>
#include <vector>

#include <alloctune/nsga2.hpp>
#include <alloctune/pareto.hpp>

namespace alloctune::testing {

inline ParameterSpec continuous(std::string name, double lo, double hi, double def) {
    ParameterSpec s;
    s.env_var = name;
    s.name = std::move(name);
    s.kind = ParamKind::continuous_range;
    s.lower = lo;
    s.upper = hi;
    s.default_value = def;
    return s;
}

inline ParameterSpec integer(std::string name, double lo, double hi, double def) {
    ParameterSpec s = continuous(std::move(name), lo, hi, def);
    s.kind = ParamKind::integer_range;
    return s;
}

/// n continuous genes in [0, 1].
inline ParameterSpace zdt1_space(std::size_t n = 30) {
    ParameterSpace sp;
    for (std::size_t i = 0; i < n; ++i) sp.specs.push_back(continuous("X" + std::to_string(i), 0, 1, 0.5));
    return sp;
}

inline ObjectiveVector zdt1(const Genotype& x) {
    double s = 0;
    for (std::size_t i = 1; i < x.size(); ++i) s += x[i];
    const double g = 1 + 9 * s / static_cast<double>(x.size() - 1);
    return {x[0], g * (1 - std::sqrt(x[0] / g))};
}

inline EvaluationRecord record_of(const Genotype& g, const ObjectiveVector& o) {
    EvaluationRecord r;
    r.genotype = g;
    r.objectives.peak_heap_bytes = o[0];
    r.objectives.avg_heap_bytes = o[0];
    r.objectives.wallclock_seconds = o[1];
    return r;
}

/// Batch evaluator that applies `f` to each genotype.
template <class F>
BatchEvaluator function_evaluator(F f) {
    return [f](const std::vector<Genotype>& genes, std::size_t) {
        std::vector<EvaluationRecord> out;
        for (const auto& g : genes) out.push_back(record_of(g, f(g)));
        return out;
    };
}

/// Indices of the points no other point dominates, by pairwise comparison.
inline std::vector<std::size_t> brute_force_nondominated(const std::vector<ObjectiveVector>& pts) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        bool dominated = false;
        for (std::size_t j = 0; j < pts.size() && !dominated; ++j)
            dominated = pts[j][0] <= pts[i][0] && pts[j][1] <= pts[i][1] &&
                        (pts[j][0] < pts[i][0] || pts[j][1] < pts[i][1]);
        if (!dominated) out.push_back(i);
    }
    return out;
}

/// Area of the union of boxes [p, ref] by inclusion-exclusion over subsets.
inline double inclusion_exclusion_hv(const std::vector<ObjectiveVector>& pts, const ObjectiveVector& ref) {
    const std::size_t n = pts.size();
    double total = 0;
    for (std::size_t mask = 1; mask < (std::size_t{1} << n); ++mask) {
        double x = -INFINITY, y = -INFINITY;
        int bits = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1) {
                x = std::max(x, pts[i][0]);
                y = std::max(y, pts[i][1]);
                ++bits;
            }
        const double box = std::max(0.0, ref[0] - x) * std::max(0.0, ref[1] - y);
        total += bits % 2 ? box : -box;
    }
    return total;
}

/// Hypervolume of the non-dominated part of `pts` with respect to `ref`,
/// ignoring points outside the reference box.
inline double front_hypervolume(const std::vector<ObjectiveVector>& pts, const ObjectiveVector& ref) {
    std::vector<ObjectiveVector> inside;
    for (const auto& p : pts)
        if (p[0] < ref[0] && p[1] < ref[1]) inside.push_back(p);
    if (inside.empty()) return 0;
    return hypervolume_2d(pareto_front(inside), ref);
}

}  // namespace alloctune::testing
