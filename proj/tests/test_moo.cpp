#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include <alloctune/moo.hpp>

using namespace alloctune;

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

// Peels fronts by repeatedly taking the points no remaining point dominates.
std::vector<Front> brute_force_fronts(const std::vector<ObjectiveVector>& pts) {
    std::vector<Front> out;
    std::vector<bool> gone(pts.size(), false);
    std::size_t left = pts.size();
    while (left > 0) {
        Front f;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (gone[i]) continue;
            bool dominated = false;
            for (std::size_t j = 0; j < pts.size() && !dominated; ++j)
                if (!gone[j] && j != i && pts[j][0] <= pts[i][0] && pts[j][1] <= pts[i][1] &&
                    (pts[j][0] < pts[i][0] || pts[j][1] < pts[i][1]))
                    dominated = true;
            if (!dominated) f.push_back(i);
        }
        for (std::size_t i : f) gone[i] = true;
        left -= f.size();
        out.push_back(f);
    }
    return out;
}

std::vector<ObjectiveVector> random_points(Rng& rng, std::size_t n, std::uint64_t grid) {
    std::vector<ObjectiveVector> pts;
    for (std::size_t i = 0; i < n; ++i)
        pts.push_back({static_cast<double>(rng.index(grid)), static_cast<double>(rng.index(grid))});
    return pts;
}

}  // namespace

TEST(Dominates, Examples) {
    EXPECT_TRUE(dominates({1, 1}, {2, 2}));
    EXPECT_FALSE(dominates({2, 2}, {1, 1}));
    EXPECT_FALSE(dominates({1, 2}, {2, 1}));
    EXPECT_FALSE(dominates({2, 1}, {1, 2}));
    EXPECT_FALSE(dominates({1, 1}, {1, 1}));
    EXPECT_TRUE(dominates({1, 1}, {1, 2}));
}

TEST(NonDominatedSort, Examples) {
    const std::vector<ObjectiveVector> pts = {{1, 5}, {2, 3}, {3, 4}, {4, 1}};
    EXPECT_EQ(non_dominated_sort(pts), (std::vector<Front>{{0, 1, 3}, {2}}));
    EXPECT_EQ(non_dominated_sort(pts), brute_force_fronts(pts));

    const std::vector<ObjectiveVector> same(5, {3, 3});
    EXPECT_EQ(non_dominated_sort(same), (std::vector<Front>{{0, 1, 2, 3, 4}}));

    const std::vector<ObjectiveVector> chain = {{1, 1}, {2, 2}, {3, 3}};
    EXPECT_EQ(non_dominated_sort(chain), (std::vector<Front>{{0}, {1}, {2}}));

    const std::vector<ObjectiveVector> rev = {{3, 3}, {2, 2}, {1, 1}};
    EXPECT_EQ(non_dominated_sort(rev), (std::vector<Front>{{2}, {1}, {0}}));
}

// Property: agreement with the peeling oracle; every index appears once.
TEST(MooProperty, SortMatchesBruteForce) {
    Rng rng(314);
    for (int t = 0; t < 100; ++t) {
        const auto n = 1 + rng.index(200);
        const auto pts = random_points(rng, n, 2 + rng.index(40));
        const auto fronts = non_dominated_sort(pts);
        ASSERT_EQ(fronts, brute_force_fronts(pts));
        std::set<std::size_t> seen;
        for (const auto& f : fronts)
            for (std::size_t i : f) ASSERT_TRUE(seen.insert(i).second);
        ASSERT_EQ(seen.size(), n);
    }
}

TEST(CrowdingDistance, HandEvaluated) {
    const std::vector<ObjectiveVector> f = {{1, 5}, {2, 3}, {4, 1}};
    const auto d = crowding_distance(f);
    EXPECT_EQ(d[0], inf);
    EXPECT_DOUBLE_EQ(d[1], 2.0);
    EXPECT_EQ(d[2], inf);
}

TEST(CrowdingDistance, InteriorSums) {
    // first objective range 10, second range 8
    const std::vector<ObjectiveVector> f = {{0, 8}, {3, 5}, {4, 2}, {10, 0}};
    const auto d = crowding_distance(f);
    EXPECT_EQ(d[0], inf);
    EXPECT_DOUBLE_EQ(d[1], (4.0 - 0.0) / 10.0 + (8.0 - 2.0) / 8.0);
    EXPECT_DOUBLE_EQ(d[2], (10.0 - 3.0) / 10.0 + (5.0 - 0.0) / 8.0);
    EXPECT_EQ(d[3], inf);
}

TEST(CrowdingDistance, SmallAndFlatFronts) {
    EXPECT_EQ(crowding_distance(std::vector<ObjectiveVector>{{1, 2}, {2, 1}}), (std::vector<double>{inf, inf}));
    EXPECT_EQ(crowding_distance(std::vector<ObjectiveVector>{{1, 2}}), (std::vector<double>{inf}));
    const auto d = crowding_distance(std::vector<ObjectiveVector>{{7, 7}, {7, 7}, {7, 7}, {7, 7}});
    EXPECT_EQ(d[1], 0.0);
    EXPECT_EQ(d[2], 0.0);
}

TEST(CrowdedComparison, RankThenCrowding) {
    RankCrowding rc{{0, 1, 0, 0}, {1.0, inf, inf, 1.0}};
    Rng rng(1);
    EXPECT_EQ(crowded_winner(0, 1, rc, rng), 0u);
    EXPECT_EQ(crowded_winner(1, 0, rc, rng), 0u);
    EXPECT_EQ(crowded_winner(0, 2, rc, rng), 2u);
    EXPECT_EQ(crowded_winner(2, 0, rc, rng), 2u);
}

TEST(CrowdedComparison, FullTieIsDecidedByRng) {
    RankCrowding rc{{0, 0}, {1.0, 1.0}};
    int first = 0;
    for (std::uint64_t s = 0; s < 400; ++s) {
        Rng a(s), b(s);
        const auto w = crowded_winner(0, 1, rc, a);
        EXPECT_EQ(w, crowded_winner(0, 1, rc, b));
        first += w == 0;
    }
    EXPECT_GT(first, 150);
    EXPECT_LT(first, 250);
}

// With two members the contestants must be those two, so the better one
// always wins.
TEST(Tournament, ContestantsAreDistinct) {
    RankCrowding rc{{1, 0}, {inf, inf}};
    Rng rng(9);
    for (int i = 0; i < 200; ++i) EXPECT_EQ(tournament_select(rc, rng), 1u);
    RankCrowding one{{0}, {inf}};
    EXPECT_EQ(tournament_select(one, rng), 0u);
}

TEST(Tournament, WorstNeverWinsAgainstOthers) {
    RankCrowding rc{{0, 1, 2, 3, 4}, {inf, inf, inf, inf, inf}};
    Rng rng(4);
    std::vector<int> wins(5, 0);
    for (int i = 0; i < 2000; ++i) ++wins[tournament_select(rc, rng)];
    EXPECT_EQ(wins[4], 0);
    EXPECT_GT(wins[0], wins[1]);
    EXPECT_GT(wins[1], wins[2]);
}

TEST(EnvironmentalSelection, FillsByFrontThenCrowding) {
    // front 0: 0,1,2,3 (interior 1 and 2); front 1: 4
    const std::vector<ObjectiveVector> pool = {{0, 10}, {4, 6}, {5, 5}, {10, 0}, {11, 11}};
    EXPECT_EQ(environmental_selection(pool, 5), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
    EXPECT_EQ(environmental_selection(pool, 4), (std::vector<std::size_t>{0, 1, 2, 3}));
    const auto three = environmental_selection(pool, 3);
    // boundaries first; then the larger crowding of 1 (0.5 + 0.5) vs 2 (0.6 + 0.6)
    EXPECT_EQ(three, (std::vector<std::size_t>{0, 3, 2}));
}

TEST(EnvironmentalSelection, CrowdingTieGoesToLowerIndex) {
    const std::vector<ObjectiveVector> pool = {{0, 4}, {1, 3}, {2, 2}, {3, 1}, {4, 0}};
    EXPECT_EQ(environmental_selection(pool, 3), (std::vector<std::size_t>{0, 4, 1}));
}

// Property: no discarded point dominates a kept one, and the survivor count
// is exact.
TEST(MooProperty, SelectionKeepsDominators) {
    Rng rng(77);
    for (int t = 0; t < 300; ++t) {
        const auto n = 2 + rng.index(60);
        const auto pool = random_points(rng, n, 2 + rng.index(20));
        const auto keep = 1 + rng.index(n);
        const auto kept = environmental_selection(pool, keep);
        ASSERT_EQ(kept.size(), keep);
        std::vector<bool> in(n, false);
        for (std::size_t i : kept) {
            ASSERT_FALSE(in[i]);
            in[i] = true;
        }
        for (std::size_t d = 0; d < n; ++d) {
            if (in[d]) continue;
            for (std::size_t k : kept) ASSERT_FALSE(dominates(pool[d], pool[k])) << "trial " << t;
        }
    }
}
