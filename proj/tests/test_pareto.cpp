#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include <alloctune/pareto.hpp>

#include "support.hpp"

using namespace alloctune;
using namespace alloctune::testing;

namespace {

ParetoFront front_of(const std::vector<ObjectiveVector>& pts) { return pareto_front(pts); }

std::vector<EvaluationRecord> records_of(const std::vector<ObjectiveVector>& pts) {
    std::vector<EvaluationRecord> out;
    for (const auto& p : pts) out.push_back(record_of({}, p));
    return out;
}

std::vector<ObjectiveVector> objectives(const ParetoFront& f) {
    std::vector<ObjectiveVector> out;
    for (const auto& p : f.points) out.push_back(p.objectives);
    return out;
}

// Mutually non-dominated random front of up to `n` points inside (0, 1)^2.
std::vector<ObjectiveVector> random_front(Rng& rng, std::size_t n) {
    std::vector<ObjectiveVector> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)});
    return objectives(pareto_front(pts));
}

}  // namespace

TEST(ExtractFront, Examples) {
    const auto f = extract_front(records_of({{1, 2}, {2, 1}, {2, 2}}));
    EXPECT_EQ(objectives(f), (std::vector<ObjectiveVector>{{1, 2}, {2, 1}}));
    EXPECT_EQ(f.points[0].source, 0u);
    EXPECT_EQ(f.points[1].source, 1u);

    const auto one = extract_front(records_of({{5, 5}}));
    EXPECT_EQ(one.size(), 1u);
}

TEST(ExtractFront, FailedRecordsIgnored) {
    auto recs = records_of({{1, 1}, {3, 0.5}, {4, 0.25}});
    recs[0].status = EvalStatus::crash;
    const auto f = extract_front(recs);
    ASSERT_EQ(f.size(), 2u);
    EXPECT_EQ(f.points[0].source, 1u);
    EXPECT_EQ(f.points[1].source, 2u);
    for (auto& r : recs) r.status = EvalStatus::timeout;
    EXPECT_THROW(extract_front(recs), ConfigError);
    EXPECT_THROW(extract_front(std::vector<EvaluationRecord>{}), ConfigError);
}

TEST(ExtractFront, DuplicatesKeepFirst) {
    const auto f = extract_front(records_of({{2, 2}, {1, 3}, {2, 2}, {1, 3}}));
    ASSERT_EQ(f.size(), 2u);
    EXPECT_EQ(f.points[0].source, 1u);
    EXPECT_EQ(f.points[1].source, 0u);
}

// Property: the front is the brute-force non-dominated set (deduplicated),
// sorted strictly by the first objective, and appending dominated records
// changes nothing.
TEST(ParetoProperty, FrontMatchesBruteForce) {
    Rng rng(88);
    for (int t = 0; t < 300; ++t) {
        std::vector<ObjectiveVector> pts;
        const auto n = 1 + rng.index(80);
        const auto grid = 2 + rng.index(30);
        for (std::uint64_t i = 0; i < n; ++i)
            pts.push_back({static_cast<double>(rng.index(grid)), static_cast<double>(rng.index(grid))});
        const auto f = front_of(pts);

        std::vector<ObjectiveVector> expect;
        for (std::size_t i : brute_force_nondominated(pts))
            if (std::find(expect.begin(), expect.end(), pts[i]) == expect.end()) expect.push_back(pts[i]);
        std::sort(expect.begin(), expect.end());
        ASSERT_EQ(objectives(f), expect);
        for (std::size_t i = 1; i < f.size(); ++i) {
            ASSERT_LT(f.points[i - 1].objectives[0], f.points[i].objectives[0]);
            ASSERT_GT(f.points[i - 1].objectives[1], f.points[i].objectives[1]);
        }

        auto more = pts;
        for (int k = 0; k < 10; ++k) {
            const auto& p = f.points[rng.index(f.size())].objectives;
            more.push_back({p[0] + 1 + static_cast<double>(rng.index(5)), p[1] + static_cast<double>(rng.index(5))});
        }
        ASSERT_EQ(objectives(front_of(more)), objectives(f));
    }
}

TEST(Hypervolume, Examples) {
    EXPECT_DOUBLE_EQ(hypervolume_2d(front_of({{1, 2}, {2, 1}}), {3, 3}), 3.0);
    EXPECT_DOUBLE_EQ(hypervolume_2d(front_of({{1, 1}}), {2, 2}), 1.0);
    EXPECT_EQ(hypervolume_2d(ParetoFront{}, {2, 2}), 0.0);
}

TEST(Hypervolume, ErrorNamesThePoint) {
    EXPECT_THROW(hypervolume_2d(front_of({{1, 2}, {2, 1}}), {2, 2}), ConfigError);
    try {
        hypervolume_2d(front_of({{1, 1.5}, {2, 1}}), {2, 2});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("(2, 1)"), std::string::npos) << e.what();
    }
}

// Hand grid count: every unit cell of [0, 6)^2 dominated by some point.
TEST(Hypervolume, GridBruteForce) {
    const std::vector<ObjectiveVector> pts = {{0, 5}, {1, 3}, {3, 2}, {4, 0}};
    int cells = 0;
    for (int x = 0; x < 6; ++x)
        for (int y = 0; y < 6; ++y)
            for (const auto& p : pts)
                if (p[0] <= x && p[1] <= y) {
                    ++cells;
                    break;
                }
    EXPECT_EQ(hypervolume_2d(front_of(pts), {6, 6}), static_cast<double>(cells));
}

// Property: agreement with inclusion-exclusion and permutation invariance.
TEST(ParetoProperty, HypervolumeMatchesInclusionExclusion) {
    Rng rng(1234);
    for (int t = 0; t < 200; ++t) {
        auto pts = random_front(rng, 1 + rng.index(12));
        const ObjectiveVector ref{1, 1};
        const double hv = hypervolume_2d(front_of(pts), ref);
        ASSERT_NEAR(hv, inclusion_exclusion_hv(pts, ref), 1e-9);
        std::vector<FrontPoint> shuffled;
        for (std::size_t i = 0; i < pts.size(); ++i) shuffled.push_back({i, pts[i]});
        for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.index(i)]);
        ASSERT_EQ(hypervolume_2d(std::span<const FrontPoint>(shuffled), ref), hv);
    }
}

// Property: within three standard errors of a Monte-Carlo estimate.
TEST(ParetoProperty, HypervolumeMatchesMonteCarlo) {
    Rng rng(4321);
    int outside = 0;
    for (int t = 0; t < 50; ++t) {
        const auto pts = random_front(rng, 1 + rng.index(20));
        const double hv = hypervolume_2d(front_of(pts), {1, 1});
        const int n = 100000;
        int hits = 0;
        for (int k = 0; k < n; ++k) {
            const double x = rng.uniform(), y = rng.uniform();
            for (const auto& p : pts)
                if (p[0] <= x && p[1] <= y) {
                    ++hits;
                    break;
                }
        }
        const double est = static_cast<double>(hits) / n;
        const double se = std::sqrt(est * (1 - est) / n);
        outside += std::abs(est - hv) > 3 * se;
    }
    // three-sigma misses happen with probability ~0.3% each
    EXPECT_LE(outside, 1);
}

TEST(ReferencePoint, WorstTimesOnePointOne) {
    auto recs = records_of({{10, 1}, {5, 4}, {100, 100}});
    recs[2].status = EvalStatus::crash;
    const auto ref = reference_point(recs);
    EXPECT_DOUBLE_EQ(ref[0], 11.0);
    EXPECT_DOUBLE_EQ(ref[1], 4.4);
}

TEST(Spans, Examples) {
    const auto s = spans(front_of({{100, 200}, {101, 198}}));
    EXPECT_DOUBLE_EQ(*s[0], 1.0);
    EXPECT_DOUBLE_EQ(*s[1], 100.0 * 2.0 / 198.0);
    EXPECT_NEAR(*s[1], 1.0101, 1e-4);
    const auto single = spans(front_of({{3, 4}}));
    EXPECT_EQ(single[0], 0.0);
    EXPECT_EQ(single[1], 0.0);
    ParetoFront flat;
    flat.points = {{0, {1, 5}}, {1, {2, 5}}};
    EXPECT_EQ(spans(flat)[1], 0.0);
    const auto zero = spans(front_of({{0, 2}, {1, 1}}));
    EXPECT_FALSE(zero[0].has_value());
    EXPECT_TRUE(zero[1].has_value());
}

TEST(TradeoffSlope, TwoPointExamples) {
    EXPECT_DOUBLE_EQ(*tradeoff_slope(front_of({{100, 110}, {110, 100}})), -1.0);
    // x: 0 and 1 percent; y: 100 * 3 / 297 and 0 percent
    EXPECT_DOUBLE_EQ(*tradeoff_slope(front_of({{100, 300}, {101, 297}})), -100.0 * 3.0 / 297.0);
    EXPECT_FALSE(tradeoff_slope(front_of({{1, 1}})).has_value());
}

TEST(TradeoffSlope, LeastSquaresOnThreePoints) {
    // percent coordinates (0, 20), (10, 5), (20, 0): slope = Sxy / Sxx
    const auto slope = tradeoff_slope(front_of({{100, 120}, {110, 105}, {120, 100}}));
    const double xs[] = {0, 10, 20}, ys[] = {20, 5, 0};
    const double mx = 10, my = 25.0 / 3.0;
    double sxy = 0, sxx = 0;
    for (int i = 0; i < 3; ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    EXPECT_NEAR(*slope, sxy / sxx, 1e-12);
    EXPECT_LE(*slope, 0.0);
}

TEST(Representatives, KneeByPerpendicularDistance) {
    const auto f = front_of({{0, 1}, {0.2, 0.2}, {1, 0}});
    const auto r = select_representatives(f);
    EXPECT_EQ(r.min_memory, 0u);
    EXPECT_EQ(r.min_time, 2u);
    EXPECT_EQ(r.knee, 1u);
    EXPECT_NEAR(std::abs(0.2 + 0.2 - 1) / std::sqrt(2.0), 0.424, 1e-3);
}

TEST(Representatives, CollinearTieGoesToMidpoint) {
    const auto r = select_representatives(front_of({{0, 1}, {0.25, 0.75}, {0.5, 0.5}, {1, 0}}));
    EXPECT_EQ(r.knee, 2u);
}

TEST(Representatives, SingletonCollapses) {
    const auto r = select_representatives(front_of({{4, 4}}));
    EXPECT_EQ(r.min_time, 0u);
    EXPECT_EQ(r.min_memory, 0u);
    EXPECT_EQ(r.knee, 0u);
    EXPECT_THROW(select_representatives(ParetoFront{}), ConfigError);
}

// Property: positive per-objective scaling does not change the choices.
TEST(ParetoProperty, RepresentativesScaleInvariant) {
    Rng rng(55);
    for (int t = 0; t < 300; ++t) {
        const auto pts = random_front(rng, 1 + rng.index(15));
        const double a = std::exp2(rng.uniform(-10, 30)), b = std::exp2(rng.uniform(-10, 10));
        std::vector<ObjectiveVector> scaled;
        for (const auto& p : pts) scaled.push_back({a * p[0], b * p[1]});
        const auto r1 = select_representatives(front_of(pts)), r2 = select_representatives(front_of(scaled));
        ASSERT_EQ(r1.min_time, r2.min_time);
        ASSERT_EQ(r1.min_memory, r2.min_memory);
        ASSERT_EQ(r1.knee, r2.knee);
    }
}

TEST(Analyze, CombinesTheAnalytics) {
    auto recs = records_of({{100, 110}, {110, 100}, {120, 120}});
    const auto a = analyze(recs);
    EXPECT_EQ(a.front_size, 2u);
    EXPECT_DOUBLE_EQ(a.reference_point[0], 132.0);
    EXPECT_DOUBLE_EQ(a.reference_point[1], 132.0);
    EXPECT_DOUBLE_EQ(a.hypervolume, hypervolume_2d(extract_front(recs), a.reference_point));
    EXPECT_DOUBLE_EQ(*a.tradeoff_slope, -1.0);
    EXPECT_DOUBLE_EQ(*a.span_percent[0], 10.0);
}
