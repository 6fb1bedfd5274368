/* Stands in for the workload driver and the measurement tools in evaluator
 * tests. Behavior is steered by the candidate environment:
 *   STUB_HEAP_LIMIT=N   exit 3 when STUB_PEAK exceeds N
 *   STUB_SLEEP=S        sleep S seconds first
 *   STUB_CRASH=1        abort()
 * Modes (argv[1]):
 *   heap <out>          write a massif file whose peak is STUB_PEAK (default 1000)
 *   time                print a bash-style time report on stderr
 *   perf <out>          write a perf stat -x, file with STUB_INSTR instructions
 */
#include <signal.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <unistd.h>

static long env_long(const char* name, long dflt) {
    const char* v = getenv(name);
    return v && *v ? atol(v) : dflt;
}

int main(int argc, char** argv) {
    if (argc < 2) return 1;
    if (getenv("STUB_SLEEP")) usleep((useconds_t)(atof(getenv("STUB_SLEEP")) * 1e6));
    if (env_long("STUB_CRASH", 0)) abort();
    long peak = env_long("STUB_PEAK", 1000);
    long limit = env_long("STUB_HEAP_LIMIT", 0);
    if (limit > 0 && peak > limit) {
        fprintf(stderr, "allocation of %ld bytes failed\n", peak);
        return 3;
    }
    if (strcmp(argv[1], "heap") == 0 && argc >= 3) {
        FILE* f = fopen(argv[2], "w");
        if (!f) return 2;
        fprintf(f, "desc: (none)\ncmd: stub\ntime_unit: i\n");
        long heap[] = {0, peak, peak / 2, 0};
        for (int i = 0; i < 4; ++i)
            fprintf(f, "#-----------\nsnapshot=%d\n#-----------\ntime=%d\nmem_heap_B=%ld\nmem_heap_extra_B=0\n"
                       "mem_stacks_B=0\nheap_tree=empty\n", i, i * 10, heap[i]);
        fclose(f);
        return 0;
    }
    if (strcmp(argv[1], "time") == 0) {
        fprintf(stderr, "\nreal\t%s\nuser\t0.001\nsys\t0.000\n", getenv("STUB_REAL") ? getenv("STUB_REAL") : "0.250");
        return 0;
    }
    if (strcmp(argv[1], "perf") == 0 && argc >= 3) {
        FILE* f = fopen(argv[2], "w");
        if (!f) return 2;
        fprintf(f, "# started on Thu Jan  1 00:00:00 1970\n\n%ld,,instructions:u,1000000,100.00,,\n",
                env_long("STUB_INSTR", 123456));
        fclose(f);
        return 0;
    }
    return 1;
}
