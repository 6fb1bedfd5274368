// Replays the synthetic schedule of a workload profile against the C
// library heap, so that allocator tunables and preloaded allocators apply.
//
//   alloctune-driver <profile> --seed N [--touch] [--page-size B]

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>
#include <vector>

#include <alloctune/workload.hpp>

namespace {

int usage(const char* msg) {
    std::fprintf(stderr, "alloctune-driver: %s\nusage: alloctune-driver <profile> --seed N [--touch] [--page-size B]\n",
                 msg);
    return 1;
}

bool parse_number(const char* s, std::uint64_t& out) {
    if (!s || !*s) return false;
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(s, &end, 10);
    if (errno != 0 || *end != '\0' || s[0] == '-') return false;
    out = v;
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    const char* profile_path = nullptr;
    std::uint64_t seed = 0, page = 4096;
    bool have_seed = false, touch = false;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--seed") {
            if (i + 1 >= argc || !parse_number(argv[++i], seed)) return usage("--seed needs a decimal number");
            have_seed = true;
        } else if (a == "--touch") {
            touch = true;
        } else if (a == "--page-size") {
            if (i + 1 >= argc || !parse_number(argv[++i], page) || page == 0)
                return usage("--page-size needs a positive number");
        } else if (!a.empty() && a[0] == '-') {
            return usage(("unknown option " + a).c_str());
        } else if (!profile_path) {
            profile_path = argv[i];
        } else {
            return usage("more than one profile given");
        }
    }
    if (!profile_path) return usage("missing profile path");
    if (!have_seed) return usage("missing --seed");

    alloctune::WorkloadProfile profile;
    try {
        profile = alloctune::load_profile(profile_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "alloctune-driver: %s\n", e.what());
        return 2;
    }

    // All bookkeeping is sized here, before the first scheduled allocation.
    alloctune::ScheduleGenerator gen(profile, seed);
    std::vector<void*> slots(profile.max_live_blocks, nullptr);
    std::vector<std::uint64_t> sizes(profile.max_live_blocks, 0);

    std::uint64_t ops = 0, allocs = 0, live = 0, max_live = 0;
    alloctune::SynthOp op;
    while (gen.next(op)) {
        ++ops;
        if (op.kind == alloctune::SynthOp::Kind::allocate) {
            void* p = std::malloc(op.size);
            if (!p && op.size != 0) {
                std::fprintf(stderr, "alloctune-driver: allocation of %llu bytes failed\n",
                             static_cast<unsigned long long>(op.size));
                return 3;
            }
            if (touch) {
                auto* bytes = static_cast<volatile unsigned char*>(p);
                for (std::uint64_t off = 0; off < op.size; off += page) bytes[off] = 1;
            }
            slots[op.slot] = p;
            sizes[op.slot] = op.size;
            ++allocs;
            live += op.size;
            if (live > max_live) max_live = live;
        } else {
            std::free(slots[op.slot]);
            slots[op.slot] = nullptr;
            live -= sizes[op.slot];
            sizes[op.slot] = 0;
        }
    }
    std::printf("ops=%llu allocs=%llu max_live_bytes=%llu\n", static_cast<unsigned long long>(ops),
                static_cast<unsigned long long>(allocs), static_cast<unsigned long long>(max_live));
    return 0;
}
