#include <gtest/gtest.h>

#include <map>
#include <set>

#include <alloctune/process.hpp>
#include <alloctune/workload.hpp>

using namespace alloctune;

namespace {

WorkloadProfile make_profile(std::vector<Bucket> sizes, double free_p, std::uint64_t ops, std::uint64_t max_live) {
    WorkloadProfile p;
    p.total_ops = ops;
    p.size_histogram = std::move(sizes);
    p.free_probability = free_p;
    p.lifetime_histogram = {{1, 1.0}};
    p.max_live_blocks = max_live;
    return p;
}

// Largest power of two not above x, by repeated doubling.
std::uint64_t floor_pow2(std::uint64_t x) {
    if (x == 0) return 0;
    std::uint64_t p = 1;
    while (p <= x / 2) p *= 2;
    return p;
}

}  // namespace

TEST(ParseTrace, AllocThenFree) {
    const auto ev = parse_trace("A 1 100\nF 1");
    ASSERT_EQ(ev.size(), 2u);
    EXPECT_EQ(ev[0], TraceEvent::alloc(1, 100));
    EXPECT_EQ(ev[1], TraceEvent::free(1));
}

TEST(ParseTrace, TwoAllocsOneFree) {
    const auto ev = parse_trace("A 1 16\nA 2 32\nF 1\n");
    ASSERT_EQ(ev.size(), 3u);
    EXPECT_EQ(ev[0].size, 16u);
    EXPECT_EQ(ev[1].size, 32u);
    EXPECT_EQ(ev[2].op, TraceEvent::Op::release);
}

TEST(ParseTrace, DanglingFreeNamesLineOne) {
    try {
        parse_trace("F 7");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 1u);
        EXPECT_NE(std::string(e.what()).find("line 1"), std::string::npos);
    }
}

TEST(ParseTrace, StructuralErrors) {
    auto line_of = [](const char* text) -> std::size_t {
        try {
            parse_trace(text);
        } catch (const ParseError& e) {
            return e.line();
        }
        return 0;
    };
    EXPECT_EQ(line_of("A 1 8\nF 1\nF 1\n"), 3u);     // double free
    EXPECT_EQ(line_of("A 1 8\nA 1 8\n"), 2u);        // reused id
    EXPECT_EQ(line_of("A 1 8\nR 2 3 16\n"), 2u);     // realloc of unknown id
    EXPECT_EQ(line_of("A 1 8\n\nX 1\n"), 3u);        // unknown op, blank line counted
    EXPECT_EQ(line_of("A 1 -8\n"), 1u);              // negative size
    EXPECT_EQ(line_of("A 1\n"), 1u);                 // missing field
    EXPECT_EQ(line_of("A 1 8 9\n"), 1u);             // extra field
}

TEST(ParseTrace, ZeroSizeAndRealloc) {
    const auto ev = parse_trace("A 1 0\nR 1 2 64\nF 2\n");
    ASSERT_EQ(ev.size(), 3u);
    EXPECT_EQ(ev[0].size, 0u);
    EXPECT_EQ(ev[1], TraceEvent::realloc(1, 2, 64));
}

TEST(ParseTrace, SerializeRoundTrip) {
    const std::vector<TraceEvent> ev = {TraceEvent::alloc(1, 16), TraceEvent::alloc(2, 0), TraceEvent::realloc(1, 3, 99),
                                        TraceEvent::free(2), TraceEvent::free(3)};
    EXPECT_EQ(serialize_trace(ev), "A 1 16\nA 2 0\nR 1 3 99\nF 2\nF 3\n");
    EXPECT_EQ(parse_trace(serialize_trace(ev)), ev);
}

// Property: random valid traces survive serialize -> parse unchanged, and
// releases never outnumber allocations at any prefix.
TEST(WorkloadProperty, TraceRoundTripAndPrefixBalance) {
    Rng rng(99);
    for (int t = 0; t < 200; ++t) {
        std::vector<TraceEvent> ev;
        std::vector<std::uint64_t> live;
        std::uint64_t next = 1;
        const auto n = 1 + rng.index(60);
        for (std::uint64_t i = 0; i < n; ++i) {
            const auto r = rng.index(3);
            if (r == 0 || live.empty()) {
                ev.push_back(TraceEvent::alloc(next, rng.index(5000)));
                live.push_back(next++);
            } else {
                const auto k = rng.index(live.size());
                const auto id = live[k];
                if (r == 1) {
                    ev.push_back(TraceEvent::free(id));
                    live.erase(live.begin() + static_cast<long>(k));
                } else {
                    ev.push_back(TraceEvent::realloc(id, next, rng.index(5000)));
                    live[k] = next++;
                }
            }
        }
        ASSERT_EQ(parse_trace(serialize_trace(ev)), ev);
        std::uint64_t outs = 0, ins = 0;
        for (const auto& e : ev) {
            ins += e.op != TraceEvent::Op::release;
            outs += e.op != TraceEvent::Op::allocate;
            ASSERT_LE(outs, ins);
        }
    }
}

TEST(ExtractProfile, SizesCountedByHand) {
    const auto p = extract_profile(parse_trace("A 1 16\nA 2 16\nA 3 32\n"), 100);
    ASSERT_EQ(p.size_histogram.size(), 2u);
    EXPECT_EQ(p.size_histogram[0].lower, 16u);
    EXPECT_DOUBLE_EQ(p.size_histogram[0].weight, 2.0 / 3.0);
    EXPECT_EQ(p.size_histogram[1].lower, 32u);
    EXPECT_DOUBLE_EQ(p.size_histogram[1].weight, 1.0 / 3.0);
    EXPECT_EQ(p.free_probability, 0.0);
    EXPECT_EQ(p.total_ops, 100u);
    EXPECT_EQ(p.max_live_blocks, 3u);
}

TEST(ExtractProfile, AllocFreeLifetime) {
    const auto p = extract_profile(parse_trace("A 1 8\nF 1\n"), 10);
    EXPECT_DOUBLE_EQ(p.free_probability, 0.5);
    ASSERT_EQ(p.lifetime_histogram.size(), 1u);
    EXPECT_EQ(p.lifetime_histogram[0].lower, 1u);
    EXPECT_EQ(p.lifetime_histogram[0].weight, 1.0);
}

TEST(ExtractProfile, SingleEvent) {
    for (std::uint64_t s : {0u, 1u, 4096u}) {
        const auto p = extract_profile({TraceEvent::alloc(1, s)}, 1);
        EXPECT_EQ(p.max_live_blocks, 1u);
        EXPECT_NO_THROW(check_profile(p));
    }
}

TEST(ExtractProfile, ReallocCountsAsReleaseAndSize) {
    // positions: A1@0 A2@1 R1->3@2 F2@3 F3@4
    const auto p = extract_profile(parse_trace("A 1 100\nA 2 200\nR 1 3 300\nF 2\nF 3\n"), 5);
    EXPECT_DOUBLE_EQ(p.free_probability, 3.0 / 5.0);
    EXPECT_EQ(p.max_live_blocks, 2u);
    // sizes 100 -> 64, 200 -> 128, 300 -> 256
    ASSERT_EQ(p.size_histogram.size(), 3u);
    EXPECT_EQ(p.size_histogram[2].lower, 256u);
    // lifetimes: id1 2, id2 2, id3 2
    ASSERT_EQ(p.lifetime_histogram.size(), 1u);
    EXPECT_EQ(p.lifetime_histogram[0].lower, 2u);
}

TEST(ExtractProfile, Errors) {
    EXPECT_THROW(extract_profile({}, 10), ParseError);
    try {
        extract_profile({TraceEvent::alloc(1, 8)}, 0);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("total_ops >= 1"), std::string::npos);
    }
}

TEST(ProfileFile, RoundTripAndValidation) {
    TempDir dir;
    auto p = extract_profile(parse_trace("A 1 16\nA 2 5000\nF 1\nA 3 70\n"), 1234);
    p.source = "unit";
    const auto path = (dir.path() / "p.json").string();
    save_profile(p, path);
    EXPECT_EQ(load_profile(path), p);

    auto j = profile_to_json(p);
    j["size_histogram"][0][1] = 0.9;  // weights no longer sum to 1
    EXPECT_THROW(profile_from_json(j), ParseError);
    j = profile_to_json(p);
    j["size_histogram"][0][0] = 24;
    EXPECT_THROW(profile_from_json(j), ParseError);
    j = profile_to_json(p);
    j["free_probability"] = 1.5;
    EXPECT_THROW(profile_from_json(j), ParseError);
    j = profile_to_json(p);
    j.erase("max_live_blocks");
    EXPECT_THROW(profile_from_json(j), ParseError);
    EXPECT_THROW(load_profile((dir.path() / "none.json").string()), ParseError);
}

TEST(SynthSchedule, Deterministic) {
    const auto p = make_profile({{16, 0.5}, {1024, 0.5}}, 0.4, 500, 20);
    EXPECT_EQ(serialize_schedule(synth_schedule(p, 7)), serialize_schedule(synth_schedule(p, 7)));
    EXPECT_NE(serialize_schedule(synth_schedule(p, 7)), serialize_schedule(synth_schedule(p, 8)));
}

TEST(SynthSchedule, NoFreesThenDrain) {
    const auto ops = synth_schedule(make_profile({{16, 1.0}}, 0.0, 10, 10), 1);
    ASSERT_EQ(ops.size(), 20u);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(ops[i].kind, SynthOp::Kind::allocate);
    for (std::size_t i = 10; i < 20; ++i) EXPECT_EQ(ops[i].kind, SynthOp::Kind::release);
}

TEST(SynthSchedule, SingleBucketSizesStayInBucket) {
    const auto ops = synth_schedule(make_profile({{16, 1.0}}, 0.5, 5000, 50), 3);
    std::set<std::uint64_t> seen;
    for (const auto& op : ops)
        if (op.kind == SynthOp::Kind::allocate) {
            ASSERT_GE(op.size, 16u);
            ASSERT_LE(op.size, 31u);
            seen.insert(op.size);
        }
    EXPECT_EQ(seen.size(), 16u);  // every size in [16, 31] turns up
}

TEST(SynthSchedule, ZeroBucketGivesZeroSize) {
    for (const auto& op : synth_schedule(make_profile({{0, 1.0}}, 0.5, 100, 5), 3)) {
        if (op.kind == SynthOp::Kind::allocate) {
            EXPECT_EQ(op.size, 0u);
        }
    }
}

TEST(SynthSchedule, MaxLiveBytesOfFixedSizes) {
    // 4096-byte bucket, draws in [4096, 8191]; no frees before the cap
    const auto ops = synth_schedule(make_profile({{4096, 1.0}}, 0.0, 5, 5), 11);
    std::uint64_t sum = 0;
    for (const auto& op : ops)
        if (op.kind == SynthOp::Kind::allocate) sum += op.size;
    EXPECT_EQ(schedule_max_live_bytes(ops, 5), sum);
}

// Property: allocate count, live-set bounds, slot discipline and drain.
TEST(WorkloadProperty, ScheduleInvariants) {
    Rng rng(5);
    for (int t = 0; t < 100; ++t) {
        const double fp = rng.uniform();
        const std::uint64_t ops_n = 1 + rng.index(3000), cap = 1 + rng.index(64);
        const auto p = make_profile({{8, 0.25}, {64, 0.25}, {512, 0.5}}, fp, ops_n, cap);
        const auto ops = synth_schedule(p, rng.next());
        std::vector<bool> used(cap, false);
        std::uint64_t allocs = 0, live = 0;
        for (const auto& op : ops) {
            ASSERT_LT(op.slot, cap);
            if (op.kind == SynthOp::Kind::allocate) {
                ASSERT_FALSE(used[op.slot]);
                used[op.slot] = true;
                ++allocs;
                ++live;
            } else {
                ASSERT_TRUE(used[op.slot]);
                used[op.slot] = false;
                --live;
            }
            ASSERT_LE(live, cap);
        }
        EXPECT_EQ(allocs, ops_n);
        EXPECT_EQ(live, 0u);
    }
}

// Property: realized bucket frequencies track the histogram
// (chi-squared distance below 0.05 for 10^4 allocations).
TEST(WorkloadProperty, SizeHistogramFidelity) {
    const std::vector<Bucket> hist = {{16, 0.1}, {256, 0.2}, {4096, 0.3}, {65536, 0.4}};
    for (std::uint64_t seed : {1u, 2u, 3u, 42u}) {
        const auto ops = synth_schedule(make_profile(hist, 0.5, 10000, 100), seed);
        std::map<std::uint64_t, double> count;
        double n = 0;
        for (const auto& op : ops)
            if (op.kind == SynthOp::Kind::allocate) {
                count[floor_pow2(op.size)] += 1;
                n += 1;
            }
        double chi2 = 0;
        for (const auto& b : hist) {
            const double obs = count[b.lower] / n;
            chi2 += (obs - b.weight) * (obs - b.weight) / b.weight;
        }
        EXPECT_LT(chi2, 0.05) << "seed " << seed;
        EXPECT_EQ(count.size(), hist.size());
    }
}

// Property: the realized fraction of free steps approaches free_probability
// while the cap is not binding.
TEST(WorkloadProperty, FreeFractionTracksProfile) {
    for (double fp : {0.2, 0.45}) {
        const auto ops = synth_schedule(make_profile({{32, 1.0}}, fp, 20000, 100000), 9);
        // count frees before the closing drain (the last allocate)
        std::size_t last_alloc = 0;
        for (std::size_t i = 0; i < ops.size(); ++i)
            if (ops[i].kind == SynthOp::Kind::allocate) last_alloc = i;
        double frees = 0;
        for (std::size_t i = 0; i <= last_alloc; ++i) frees += ops[i].kind == SynthOp::Kind::release;
        EXPECT_NEAR(frees / static_cast<double>(last_alloc + 1), fp, 0.02);
    }
}
