#include <iostream>

#include <CLI11.hpp>

#include <alloctune/campaign.hpp>

namespace cli = alloctune::cli;

namespace {

std::string fs_abs(const std::string& p) { return std::filesystem::absolute(p).lexically_normal().string(); }

alloctune::HarnessTemplates templates_with(alloctune::HeapMode mode, const std::string& heap, const std::string& time,
                                           const std::string& instructions) {
    auto t = alloctune::HarnessTemplates::defaults(mode);
    if (!heap.empty()) t.heap = alloctune::split_command(heap);
    if (!time.empty()) t.time = alloctune::split_command(time);
    if (!instructions.empty()) t.instructions = alloctune::split_command(instructions);
    return t;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-objective allocator parameter tuner"};
    app.require_subcommand(1);

    // capture
    cli::CaptureOptions cap;
    auto* capture = app.add_subcommand("capture", "Record the allocation trace of a command");
    capture->add_option("--shim", cap.shim, "Interposer shared library")->required();
    capture->add_option("-o,--out", cap.trace_out, "Trace output path")->required();
    capture->add_option("command", cap.command, "Target command (after --)")->required();

    // profile
    std::string trace_in, profile_out;
    std::uint64_t target_ops = 0;
    auto* profile = app.add_subcommand("profile", "Distill a trace into a workload profile");
    profile->add_option("trace", trace_in, "Trace file")->required();
    profile->add_option("--ops", target_ops, "Allocations the synthetic workload performs")->required();
    profile->add_option("-o,--out", profile_out, "Profile output path")->required();

    // optimize
    cli::OptimizeOptions opt;
    std::string config_file, heap_mode = "pages", heap_tpl, time_tpl, instr_tpl, seed_policy = "fixed", mock;
    std::string space_file, preload;
    std::size_t generations = 0, stop_after = 0;
    auto* optimize = app.add_subcommand("optimize", "Search the allocator parameter space");
    optimize->add_option("--config", config_file, "Campaign config (JSON); flags override its fields");
    optimize->add_option("-o,--out", opt.config.output, "Campaign directory")->required();
    optimize->add_option("--allocator", opt.config.allocator, "glibc or tcmalloc");
    optimize->add_option("--profile", opt.config.profile, "Workload profile");
    optimize->add_option("--space", space_file, "Custom parameter space (JSON)");
    optimize->add_option("--preload", preload, "Allocator library to preload (tcmalloc)");
    optimize->add_option("--driver", opt.config.driver, "Synthetic workload driver executable");
    optimize->add_flag("--touch", opt.config.touch, "Driver writes one byte per page of each block");
    optimize->add_option("--heap-mode", heap_mode, "pages or blocks")->check(CLI::IsMember({"pages", "blocks"}));
    optimize->add_option("--heap-cmd", heap_tpl, "Heap profiler command template");
    optimize->add_option("--time-cmd", time_tpl, "Timer command template");
    optimize->add_option("--instr-cmd", instr_tpl, "Instruction counter command template");
    optimize->add_option("--workload-seed", opt.config.workload_seed, "Driver seed");
    optimize->add_option("--population", opt.config.ga.population_size, "Population size");
    optimize->add_option("--generations", generations, "Generations after the initial one");
    optimize->add_option("--seed", opt.config.ga.seed, "GA seed");
    optimize->add_option("--crossover-prob", opt.config.ga.crossover_probability, "SBX probability per pair");
    optimize->add_option("--sbx-eta", opt.config.ga.sbx_eta, "SBX distribution index");
    optimize->add_option("--mutation-prob", opt.config.ga.mutation_probability, "Per-gene mutation probability");
    optimize->add_option("--mutation-eta", opt.config.ga.mutation_eta, "Polynomial mutation distribution index");
    optimize->add_option("--budget", opt.config.ga.budget_seconds, "Wallclock budget in seconds (0: none)");
    optimize->add_option("--repetitions", opt.config.evaluation.repetitions, "Runs per candidate");
    optimize->add_option("--timeout", opt.config.evaluation.timeout_seconds, "Seconds per candidate");
    optimize->add_option("-j,--parallel", opt.config.evaluation.parallelism, "Concurrent evaluations");
    optimize->add_option("--seed-policy", seed_policy, "fixed or per-repetition")
        ->check(CLI::IsMember({"fixed", "per-repetition"}));
    optimize->add_flag("--instructions", opt.config.evaluation.measure_instructions, "Also count instructions");
    optimize->add_option("--mock", mock, "Closed-form evaluator instead of processes")
        ->check(CLI::IsMember({"analytic"}));
    optimize->add_flag("--resume", opt.resume, "Continue from the latest checkpoint");
    optimize->add_flag("--force", opt.force, "Overwrite an existing campaign directory");
    optimize->add_option("--stop-after-generation", stop_after, "Stop once this generation is checkpointed");

    // select
    std::string select_dir;
    auto* select = app.add_subcommand("select", "Write min-time, min-memory and knee recipes");
    select->add_option("campaign", select_dir, "Campaign directory")->required();

    // validate
    cli::ValidationOptions val;
    std::string val_heap_mode = "pages", vheap_tpl, vtime_tpl, vinstr_tpl;
    bool with_instr = false, without_instr = false;
    auto* validate = app.add_subcommand("validate", "Compare a recipe against a baseline on a real command");
    validate->add_option("recipe", val.recipe, "Recipe file")->required();
    validate->add_option("--baseline", val.baseline, "Baseline allocator (its defaults)");
    validate->add_option("--runs", val.runs, "Runs per side");
    validate->add_option("--heap-mode", val_heap_mode, "pages or blocks")->check(CLI::IsMember({"pages", "blocks"}));
    validate->add_option("--heap-cmd", vheap_tpl, "Heap profiler command template");
    validate->add_option("--time-cmd", vtime_tpl, "Timer command template");
    validate->add_option("--instr-cmd", vinstr_tpl, "Instruction counter command template");
    validate->add_flag("--instructions", with_instr, "Count instructions");
    validate->add_flag("--no-instructions", without_instr, "Do not count instructions");
    validate->add_option("--tcmalloc-library", val.tcmalloc_library, "Library for a tcmalloc baseline");
    validate->add_option("--timeout", val.timeout_seconds, "Seconds per run");
    validate->add_option("-o,--out", val.out, "Validation report output (JSON)");
    validate->add_option("command", val.command, "Target command (after --)")->required();

    // report
    std::string report_dir, validation_file;
    auto* report = app.add_subcommand("report", "Write CSV and markdown reports for a campaign");
    report->add_option("campaign", report_dir, "Campaign directory")->required();
    report->add_option("--validation", validation_file, "Validation report (default: <campaign>/validation.json)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cli::exit_usage;
    }

    try {
        if (*capture) {
            return cli::cmd_capture(cap).exit_code;
        }
        if (*profile) {
            cli::cmd_profile(trace_in, target_ops, profile_out);
            return cli::exit_ok;
        }
        if (*optimize) {
            if (!config_file.empty()) {
                auto base = cli::config_from_json(cli::read_json(config_file));
                // explicit flags win over the config file
                for (auto* o : optimize->get_options()) {
                    if (o->count() == 0) continue;
                    const auto n = o->get_name();
                    if (n == "--allocator") base.allocator = opt.config.allocator;
                    if (n == "--profile") base.profile = opt.config.profile;
                    if (n == "--driver") base.driver = opt.config.driver;
                    if (n == "--touch") base.touch = opt.config.touch;
                    if (n == "--workload-seed") base.workload_seed = opt.config.workload_seed;
                    if (n == "--population") base.ga.population_size = opt.config.ga.population_size;
                    if (n == "--seed") base.ga.seed = opt.config.ga.seed;
                    if (n == "--crossover-prob") base.ga.crossover_probability = opt.config.ga.crossover_probability;
                    if (n == "--sbx-eta") base.ga.sbx_eta = opt.config.ga.sbx_eta;
                    if (n == "--mutation-prob") base.ga.mutation_probability = opt.config.ga.mutation_probability;
                    if (n == "--mutation-eta") base.ga.mutation_eta = opt.config.ga.mutation_eta;
                    if (n == "--budget") base.ga.budget_seconds = opt.config.ga.budget_seconds;
                    if (n == "--repetitions") base.evaluation.repetitions = opt.config.evaluation.repetitions;
                    if (n == "--timeout") base.evaluation.timeout_seconds = opt.config.evaluation.timeout_seconds;
                    if (n == "--parallel") base.evaluation.parallelism = opt.config.evaluation.parallelism;
                    if (n == "--instructions")
                        base.evaluation.measure_instructions = opt.config.evaluation.measure_instructions;
                }
                base.output = opt.config.output;
                opt.config = base;
            }
            auto& c = opt.config;
            if (!space_file.empty()) c.space_path = fs_abs(space_file);
            if (!preload.empty()) c.preload_library = preload;
            if (!mock.empty()) c.mock = mock;
            if (optimize->count("--heap-mode") || config_file.empty()) c.heap_mode = alloctune::parse_heap_mode(heap_mode);
            if (config_file.empty() || !heap_tpl.empty() || !time_tpl.empty() || !instr_tpl.empty() ||
                optimize->count("--heap-mode")) {
                auto t = templates_with(c.heap_mode, heap_tpl, time_tpl, instr_tpl);
                if (!config_file.empty()) {
                    if (heap_tpl.empty() && !optimize->count("--heap-mode")) t.heap = c.templates.heap;
                    if (time_tpl.empty()) t.time = c.templates.time;
                    if (instr_tpl.empty()) t.instructions = c.templates.instructions;
                }
                c.templates = t;
            }
            if (optimize->count("--seed-policy") || config_file.empty())
                c.evaluation.seed_policy = alloctune::parse_seed_policy(seed_policy);
            if (optimize->count("--generations")) {
                c.ga.generations = generations;
                opt.generations_override = generations;
            }
            if (optimize->count("--stop-after-generation")) opt.stop_after = stop_after;
            if (!c.profile.empty()) c.profile = fs_abs(c.profile);
            if (!c.driver.empty()) c.driver = fs_abs(c.driver);
            const auto res = cli::cmd_optimize(opt);
            std::cout << "generation " << res.generation << (res.finished ? " (finished)" : " (stopped)") << ", "
                      << res.evaluations << " evaluations, front size " << res.front_size << "\n";
            return cli::exit_ok;
        }
        if (*select) {
            const auto r = cli::cmd_select(select_dir);
            std::cout << r.min_time.string() << "\n" << r.min_memory.string() << "\n" << r.knee.string() << "\n";
            return cli::exit_ok;
        }
        if (*validate) {
            if (with_instr && without_instr) throw cli::CommandError(cli::exit_usage, "conflicting instruction flags");
            if (with_instr) val.measure_instructions = true;
            if (without_instr) val.measure_instructions = false;
            val.heap_mode = alloctune::parse_heap_mode(val_heap_mode);
            val.templates = templates_with(val.heap_mode, vheap_tpl, vtime_tpl, vinstr_tpl);
            const auto rep = cli::cmd_validate(val);
            if (val.out.empty()) std::cout << cli::validation_to_json(rep).dump(2) << "\n";
            std::cout << "verdict: " << (rep.unchanged ? "no-change" : "changed") << "\n";
            return cli::exit_ok;
        }
        if (*report) {
            const auto r = cli::cmd_report(report_dir, validation_file.empty() ? std::nullopt
                                                                              : std::optional(validation_file));
            std::cout << "wrote " << r.dir.string() << "\n";
            return cli::exit_ok;
        }
    } catch (const cli::CommandError& e) {
        std::cerr << "alloctune: " << e.what() << "\n";
        return e.code;
    } catch (const alloctune::ParseError& e) {
        std::cerr << "alloctune: " << e.what() << "\n";
        return cli::exit_input;
    } catch (const alloctune::ConfigError& e) {
        std::cerr << "alloctune: " << e.what() << "\n";
        return cli::exit_input;
    } catch (const alloctune::SubprocessError& e) {
        std::cerr << "alloctune: " << e.what() << "\n";
        return cli::exit_subprocess;
    } catch (const std::exception& e) {
        std::cerr << "alloctune: " << e.what() << "\n";
        return cli::exit_input;
    }
    return cli::exit_usage;
}
