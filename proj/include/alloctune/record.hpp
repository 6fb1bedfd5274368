#pragma once

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "metrics.hpp"
#include "param_space.hpp"

namespace alloctune {

/// (peak heap bytes, wallclock seconds), both minimized.
using ObjectiveVector = std::array<double, 2>;

enum class EvalStatus { ok, timeout, crash, infeasible };

inline std::string to_string(EvalStatus s) {
    switch (s) {
        case EvalStatus::ok: return "ok";
        case EvalStatus::timeout: return "timeout";
        case EvalStatus::crash: return "crash";
        case EvalStatus::infeasible: return "infeasible";
    }
    return "?";
}

inline EvalStatus parse_status(const std::string& s) {
    if (s == "ok") return EvalStatus::ok;
    if (s == "timeout") return EvalStatus::timeout;
    if (s == "crash") return EvalStatus::crash;
    if (s == "infeasible") return EvalStatus::infeasible;
    throw ParseError(0, "unknown status '" + s + "'");
}

struct EvaluationRecord {
    Genotype genotype;
    EnvMap env;
    MeasuredObjectives objectives;
    std::vector<MeasuredObjectives> per_rep;
    EvalStatus status = EvalStatus::ok;
    std::string candidate_hash;
    double eval_seconds = 0;
    std::string detail;  // failure reason, empty when ok

    bool ok() const { return status == EvalStatus::ok; }
    ObjectiveVector objective_vector() const { return {objectives.peak_heap_bytes, objectives.wallclock_seconds}; }

    friend bool operator==(const EvaluationRecord&, const EvaluationRecord&) = default;
};

inline nlohmann::json record_to_json(const EvaluationRecord& r) {
    nlohmann::json reps = nlohmann::json::array();
    for (const auto& m : r.per_rep) reps.push_back(objectives_to_json(m));
    return {{"hash", r.candidate_hash},     {"status", to_string(r.status)},
            {"genotype", r.genotype.values}, {"env", r.env},
            {"objectives", objectives_to_json(r.objectives)},
            {"per_rep", reps},              {"eval_seconds", r.eval_seconds},
            {"detail", r.detail}};
}

inline EvaluationRecord record_from_json(const nlohmann::json& j) {
    EvaluationRecord r;
    try {
        r.candidate_hash = j.at("hash").get<std::string>();
        r.status = parse_status(j.at("status").get<std::string>());
        r.genotype.values = j.at("genotype").get<std::vector<double>>();
        r.env = j.at("env").get<EnvMap>();
        r.objectives = objectives_from_json(j.at("objectives"));
        for (const auto& m : j.at("per_rep")) r.per_rep.push_back(objectives_from_json(m));
        r.eval_seconds = j.value("eval_seconds", 0.0);
        r.detail = j.value("detail", "");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(0, std::string("malformed evaluation record: ") + e.what());
    }
    return r;
}

/// Death-penalty objectives: twice the worst feasible value seen so far per
/// objective. Update once per generation so penalties do not depend on the
/// order in which evaluations finish.
class PenaltyTracker {
public:
    /// Used until any feasible value has been seen.
    static constexpr double kUnseen = 1e30;

    void observe(const MeasuredObjectives& m) {
        worst_peak_ = std::max(worst_peak_, m.peak_heap_bytes);
        worst_avg_ = std::max(worst_avg_, m.avg_heap_bytes);
        worst_time_ = std::max(worst_time_, m.wallclock_seconds);
        seen_ = true;
    }

    void observe(const std::vector<EvaluationRecord>& batch) {
        for (const auto& r : batch)
            if (r.ok()) observe(r.objectives);
    }

    MeasuredObjectives penalty() const {
        MeasuredObjectives m;
        m.peak_heap_bytes = scaled(worst_peak_);
        m.avg_heap_bytes = scaled(worst_avg_);
        m.wallclock_seconds = scaled(worst_time_);
        m.free_rate = 0;
        return m;
    }

    void apply(std::vector<EvaluationRecord>& batch) const {
        for (auto& r : batch)
            if (!r.ok()) r.objectives = penalty();
    }

    nlohmann::json to_json() const {
        return {{"seen", seen_}, {"worst", {worst_peak_, worst_avg_, worst_time_}}};
    }

    static PenaltyTracker from_json(const nlohmann::json& j) {
        PenaltyTracker t;
        t.seen_ = j.at("seen").get<bool>();
        t.worst_peak_ = j.at("worst").at(0).get<double>();
        t.worst_avg_ = j.at("worst").at(1).get<double>();
        t.worst_time_ = j.at("worst").at(2).get<double>();
        return t;
    }

private:
    double scaled(double worst) const {
        if (!seen_) return kUnseen;
        return worst > 0 ? 2 * worst : 1.0;
    }

    bool seen_ = false;
    double worst_peak_ = 0, worst_avg_ = 0, worst_time_ = 0;
};

}  // namespace alloctune
