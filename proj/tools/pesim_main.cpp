#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pesim/reference.hpp"
#include "pesim/scenario.hpp"
#include "pesim/selftest.hpp"

namespace {

std::vector<double> parse_tolerances(const std::string& list) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < list.size()) {
        std::size_t comma = list.find(',', pos);
        if (comma == std::string::npos) comma = list.size();
        out.push_back(std::stod(list.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

std::vector<std::string> parse_names(const std::string& list) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < list.size()) {
        std::size_t comma = list.find(',', pos);
        if (comma == std::string::npos) comma = list.size();
        out.push_back(list.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pesim - hybrid piecewise-linear / nonlinear circuit simulator"};
    app.require_subcommand(1);

    std::string scenario_path, solver, out_path = "out.csv";
    double rel_tol = -1.0, abs_tol = -1.0, t_end = -1.0;

    CLI::App* run = app.add_subcommand("run", "simulate a scenario and write waveforms");
    run->add_option("scenario", scenario_path, "scenario JSON file")->required();
    run->add_option("--solver", solver, "taylor | dp45 | bs23 (default: scenario setting)");
    run->add_option("--reltol", rel_tol, "relative tolerance override");
    run->add_option("--abstol", abs_tol, "absolute tolerance override");
    run->add_option("--tend", t_end, "simulation end time override (s)");
    run->add_option("--out", out_path, "output CSV path (stats go to <out>.stats.json)");

    std::string tolerances = "1e-3,1e-4,1e-5,1e-6,1e-7";
    std::string solvers = "taylor,dp45,bs23";
    std::string bench_out = "bench";
    CLI::App* bench_cmd = app.add_subcommand("bench", "work-precision sweep across solvers");
    bench_cmd->add_option("scenario", scenario_path, "scenario JSON file")->required();
    bench_cmd->add_option("--tolerances", tolerances, "comma-separated rel_tol list");
    bench_cmd->add_option("--solvers", solvers, "comma-separated solver list");
    bench_cmd->add_option("--out", bench_out, "report path prefix (.json/.csv appended)");

    bool inject_fault = false;
    CLI::App* selftest_cmd = app.add_subcommand("selftest", "run the invariant battery");
    selftest_cmd->add_flag("--inject-stencil-fault", inject_fault,
                           "perturb a stencil weight (negative control)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            pesim::BuiltScenario built = pesim::load_and_build(scenario_path);
            if (!solver.empty()) built.solver = solver;
            if (rel_tol > 0) built.run.controller.rel_tol = rel_tol;
            if (abs_tol > 0) built.run.controller.abs_tol = abs_tol;
            if (t_end > 0) built.run.t_end = built.run.t_begin + t_end;
            auto [wave, stats] = pesim::run_solver(built.solver, built.run);
            pesim::write_csv(wave, out_path);
            pesim::write_stats_json(stats, out_path + ".stats.json");
            std::printf("%s: %ld steps (%ld rejected), %ld f-evals, avg order %.2f, %.1f ms\n",
                        stats.solver.c_str(), stats.accepted, stats.rejected, stats.f_evals,
                        stats.avg_order, stats.wall_ms);
            return 0;
        }
        if (*bench_cmd) {
            pesim::BuiltScenario built = pesim::load_and_build(scenario_path);
            pesim::BenchReport report =
                pesim::bench(built.run, parse_tolerances(tolerances), parse_names(solvers));
            pesim::write_bench_json(report, bench_out + ".json");
            pesim::write_bench_csv(report, bench_out + ".csv");
            for (const auto& c : report.cells)
                std::printf("%-7s rel_tol=%-8.1e steps=%-7ld f=%-8ld order=%.2f err=%.3e%s\n",
                            c.solver.c_str(), c.rel_tol, c.steps, c.f_evals, c.avg_order,
                            c.err_rel, c.failed ? (" FAILED: " + c.error).c_str() : "");
            return 0;
        }
        if (*selftest_cmd) return pesim::run_selftest(inject_fault) == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
