// shadow-attn: offline profiling, single-layer runs, baseline benches and
// schedule planning for sparse attention.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "shadow_attn/documents.hpp"
#include "shadow_attn/experiment.hpp"

namespace fs = std::filesystem;
using namespace shadow_attn;

namespace {

struct GlobalOptions {
    std::optional<fs::path> config;
    std::optional<std::uint64_t> seed;
    std::optional<double> ratio;
    std::optional<std::size_t> buckets;
    std::optional<double> step;
    std::optional<std::string> selection;
    std::optional<std::string> lane;
    std::optional<fs::path> out;
};

std::size_t per_axis_from_total(std::size_t total) {
    const auto side = std::size_t(std::llround(std::sqrt(double(total))));
    if (side * side != total || side % 2 == 0)
        throw ValidationError("--buckets must be an odd perfect square (1, 9, 25, ...), got " + std::to_string(total));
    return side;
}

ExperimentConfig load_config(const GlobalOptions& g) {
    ExperimentConfig c = g.config ? parse_config(read_text_file(*g.config)) : ExperimentConfig{};
    if (g.seed)
        c.seed = *g.seed;
    if (g.ratio)
        c.global_ratio = *g.ratio;
    if (g.buckets)
        c.buckets_per_axis = per_axis_from_total(*g.buckets);
    if (g.step)
        c.bucket_step = *g.step;
    if (g.selection)
        c.selection = parse_selection_mode(*g.selection);
    if (g.lane)
        c.lanes = parse_lane_model(*g.lane);
    c.validate();
    return c;
}

// Writes to <out>/<name> when --out is set, otherwise to stdout.
void emit(const GlobalOptions& g, const std::string& name, const std::string& text) {
    if (!g.out) {
        std::cout << text;
        return;
    }
    fs::create_directories(*g.out);
    write_text_file(*g.out / name, text);
    std::cerr << "wrote " << (*g.out / name).string() << "\n";
}

void cmd_allocate(const GlobalOptions& g, const std::optional<fs::path>& importance) {
    const ExperimentConfig c = load_config(g);
    const ImportanceTable table = importance ? parse_importance_table(read_text_file(*importance))
                                             : synthetic_importance_table(c.model.layers, c.model.q_heads, c.seed);
    const HeadBudget budget = allocate_ratios(table, c.global_ratio, c.clamp_threshold);
    for (std::size_t h : budget.capped_heads)
        std::cerr << "warning: head " << h << " asked for ratio " << budget.uncapped[h]
                  << " and was capped at 1; the global ratio is not met\n";
    emit(g, "budget.json", format_head_budget(budget));
}

void cmd_buckets(const GlobalOptions& g, const std::optional<fs::path>& stats, const std::vector<double>& center) {
    const ExperimentConfig c = load_config(g);
    BucketGrid grid;
    if (stats)
        grid = build_grid(mean_scales(parse_scale_stats(read_text_file(*stats))), c.bucket_step, c.buckets_per_axis);
    else if (!center.empty())
        grid = build_grid({center.at(0), center.at(1)}, c.bucket_step, c.buckets_per_axis);
    else
        grid = calibrate_grid(c);
    emit(g, "grid.json", format_bucket_grid(grid));
}

struct RunInputs {
    std::optional<fs::path> importance, budget, grid, q, k, v;
    std::optional<std::string> baseline;
};

ExperimentConfig with_inputs(ExperimentConfig c, const RunInputs& in) {
    if (in.importance)
        c.importance_file = in.importance;
    if (in.budget)
        c.budget_file = in.budget;
    if (in.grid)
        c.grid_file = in.grid;
    if (in.q || in.k || in.v) {
        c.q_file = in.q;
        c.k_file = in.k;
        c.v_file = in.v;
    }
    if (in.baseline)
        c.baseline = parse_baseline(*in.baseline);
    c.validate();
    return c;
}

void report_out(const GlobalOptions& g, const Report& r) {
    std::cout << format_report_text(r);
    if (g.out)
        std::cerr << "wrote " << write_report(r, *g.out).string() << "\n";
}

void cmd_plan(const GlobalOptions& g, const std::optional<fs::path>& profile_path, bool bruteforce) {
    const ExperimentConfig c = load_config(g);
    CostProfile profile;
    std::vector<std::size_t> head_buckets;
    if (profile_path) {
        ProfileDocument doc = parse_cost_profile(read_text_file(*profile_path));
        profile = std::move(doc.profile);
        if (doc.head_buckets) {
            head_buckets = *doc.head_buckets;
        } else {
            head_buckets.resize(profile.heads.size());
            std::iota(head_buckets.begin(), head_buckets.end(), 0);
        }
    } else {
        const Report r = run_experiment(c);
        profile = shadow_profile(c, r.head_ratios);
        head_buckets = r.head_buckets;
    }
    const auto groups = form_groups(head_buckets);
    const Schedule greedy = plan_greedy(groups, profile, c.lanes);
    const SimulationResult sim = simulate(greedy, profile);

    std::cout << "lanes        " << to_string(c.lanes) << "\n"
              << "groups       " << groups.size() << "\n"
              << "greedy       " << greedy.makespan << " ms\n"
              << "serialized   " << serialized_time(groups, profile) << " ms\n";
    if (bruteforce)
        std::cout << "exhaustive   " << plan_bruteforce(groups, profile, c.lanes).makespan << " ms\n";
    std::cout << "estimation   " << 100.0 * sim.estimation_fraction << " % of busy time\n"
              << "cpu idle     " << sim.cpu_idle << " ms\n";
    emit(g, "schedule.json", format_schedule(greedy));
    if (g.out)
        emit(g, "events.csv", format_events_csv(sim.events));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse attention with low-precision estimation and pipelined scheduling"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--config", g.config, "Experiment config (JSON, version 1)")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Seed for synthetic workloads");
    app.add_option("--ratio", g.ratio, "Global sparsity ratio in (0, 1]");
    app.add_option("--buckets", g.buckets, "Total bucket count, an odd square");
    app.add_option("--step", g.step, "Bucket step sigma in (0, 1)");
    app.add_option("--selection", g.selection, "Top-k granularity")->check(CLI::IsMember({"row", "head"}));
    app.add_option("--lane", g.lane, "Pipeline lane model")->check(CLI::IsMember({"three-clock", "single"}));
    app.add_option("--out", g.out, "Output directory");

    std::optional<fs::path> importance;
    auto* allocate = app.add_subcommand("allocate", "Head-specific sparsity ratios from an importance table");
    allocate->add_option("--importance", importance, "Importance table; synthetic when omitted")
        ->check(CLI::ExistingFile);

    std::optional<fs::path> stats;
    std::vector<double> center;
    auto* buckets = app.add_subcommand("buckets", "Scale bucket grid from calibration statistics");
    auto* stats_opt = buckets->add_option("--stats", stats, "Observed scale pairs")->check(CLI::ExistingFile);
    buckets->add_option("--center", center, "Grid center LAMBDA_Q LAMBDA_K")->expected(2)->excludes(stats_opt);

    RunInputs run_inputs;
    auto add_run_options = [&](CLI::App* sub) {
        sub->add_option("--importance", run_inputs.importance, "Importance table")->check(CLI::ExistingFile);
        sub->add_option("--budget", run_inputs.budget, "Head budget file")->check(CLI::ExistingFile);
        sub->add_option("--grid", run_inputs.grid, "Bucket grid file")->check(CLI::ExistingFile);
        sub->add_option("--q", run_inputs.q, "Query tensor file")->check(CLI::ExistingFile);
        sub->add_option("--k", run_inputs.k, "Key tensor file")->check(CLI::ExistingFile);
        sub->add_option("--v", run_inputs.v, "Value tensor file")->check(CLI::ExistingFile);
    };
    auto* run = app.add_subcommand("run", "One layer through the sparse pipeline next to the float oracle");
    add_run_options(run);
    run->add_option("--baseline", run_inputs.baseline, "Path to execute")
        ->check(CLI::IsMember({"full", "sparse", "block_sparse", "npu_full", "shadow"}));
    auto* bench = app.add_subcommand("bench", "Latency and error of every baseline");
    add_run_options(bench);

    std::optional<fs::path> profile;
    bool bruteforce = false;
    auto* plan = app.add_subcommand("plan", "Schedule fused groups across the accelerator and CPU lanes");
    plan->add_option("--profile", profile, "Cost profile; derived from a run when omitted")->check(CLI::ExistingFile);
    plan->add_flag("--bruteforce", bruteforce, "Also search every order");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*allocate)
            cmd_allocate(g, importance);
        else if (*buckets)
            cmd_buckets(g, stats, center);
        else if (*run)
            report_out(g, run_experiment(with_inputs(load_config(g), run_inputs)));
        else if (*bench)
            report_out(g, bench_experiment(with_inputs(load_config(g), run_inputs)));
        else if (*plan)
            cmd_plan(g, profile, bruteforce);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const ScheduleInvalid& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
