// Command-line driver for the pinching-antenna optimization experiments.
//
// Subcommands:
//   run      solve a single experiment point (sweep axes are ignored)
//   sweep    run the sweep configured via sweep_param / sweep_values
//   compare  run two solvers on identical seeds and emit paired rows
//
// Exit status: 0 on success, 2 on configuration errors, 3 when every
// produced row is infeasible.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "passopt/harness.hpp"

namespace {

struct Overrides {
    std::optional<std::string> config;
    std::optional<std::string> algo;
    std::optional<std::string> out;
    std::optional<std::string> format;
    std::optional<std::uint64_t> seed;
    std::optional<int> trials;
    std::optional<int> workers;
};

void add_common_flags(CLI::App* cmd, Overrides& o, bool with_algo) {
    cmd->add_option("--config", o.config, "configuration file with key = value lines");
    if (with_algo) cmd->add_option("--algo", o.algo, "solver: mmpdd, psozf or fixed");
    cmd->add_option("--seed", o.seed, "master seed");
    cmd->add_option("--out", o.out, "output path (default: stdout)");
    cmd->add_option("--format", o.format, "output format: csv or json");
    cmd->add_option("--trials", o.trials, "trials per sweep point");
    cmd->add_option("--workers", o.workers, "concurrent worker threads");
}

passopt::ExperimentSpec build_spec(const Overrides& o) {
    passopt::ExperimentSpec spec;
    if (o.config) spec = passopt::load_config_file(*o.config, spec);
    if (o.algo) spec.algo = *o.algo;
    if (o.seed) spec.seed = *o.seed;
    if (o.out) spec.out_path = *o.out;
    if (o.format) spec.format = *o.format;
    if (o.trials) spec.trials = *o.trials;
    if (o.workers) spec.workers = *o.workers;
    return spec;
}

int emit_and_status(const std::vector<passopt::ResultRow>& rows, const passopt::ExperimentSpec& spec) {
    if (spec.out_path.empty()) {
        passopt::emit_results(rows, spec, std::cout);
    } else {
        std::ofstream os(spec.out_path);
        if (!os) throw passopt::ConfigError("cannot open output path '" + spec.out_path + "'");
        passopt::emit_results(rows, spec, os);
    }
    const bool any_feasible =
        std::any_of(rows.begin(), rows.end(), [](const passopt::ResultRow& r) { return r.feasible; });
    if (!rows.empty() && !any_feasible) return 3;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint antenna-placement, beamforming and power-allocation experiments"};
    app.require_subcommand(1);

    Overrides run_o, sweep_o, cmp_o;
    std::vector<std::string> cmp_algos;

    CLI::App* cmd_run = app.add_subcommand("run", "solve a single experiment point");
    add_common_flags(cmd_run, run_o, true);
    CLI::App* cmd_sweep = app.add_subcommand("sweep", "run the configured parameter sweep");
    add_common_flags(cmd_sweep, sweep_o, true);
    CLI::App* cmd_cmp = app.add_subcommand("compare", "run two solvers on identical scenarios");
    add_common_flags(cmd_cmp, cmp_o, false);
    cmd_cmp->add_option("--algo", cmp_algos, "two solvers to pair (default: mmpdd psozf)")
        ->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (cmd_run->parsed()) {
            passopt::ExperimentSpec spec = build_spec(run_o);
            spec.sweep_param.clear();
            spec.sweep_values.clear();
            const auto rows = passopt::run_experiment(spec);
            return emit_and_status(rows, spec);
        }
        if (cmd_sweep->parsed()) {
            const passopt::ExperimentSpec spec = build_spec(sweep_o);
            if (spec.sweep_param.empty())
                throw passopt::ConfigError("sweep: config must set sweep_param and sweep_values");
            const auto rows = passopt::run_experiment(spec);
            return emit_and_status(rows, spec);
        }
        passopt::ExperimentSpec spec = build_spec(cmp_o);
        spec.sweep_param.clear();
        spec.sweep_values.clear();
        std::vector<std::string> algos = cmp_algos;
        if (algos.empty()) algos = {"mmpdd", "psozf"};
        if (algos.size() != 2) throw passopt::ConfigError("compare: exactly two --algo values expected");
        std::vector<std::vector<passopt::ResultRow>> per;
        for (const auto& a : algos) {
            passopt::ExperimentSpec s2 = spec;
            s2.algo = a;
            per.push_back(passopt::run_experiment(s2));
        }
        std::vector<passopt::ResultRow> rows;
        rows.reserve(per[0].size() * 2);
        for (std::size_t i = 0; i < per[0].size(); ++i) {
            rows.push_back(per[0][i]);
            rows.push_back(per[1][i]);
        }
        return emit_and_status(rows, spec);
    } catch (const passopt::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
