#pragma once

#include <string>
#include <vector>

#include "pesim/integrator.hpp"

namespace pesim {

/// Dormand-Prince 5(4) with FSAL and PI step control, sharing the hybrid
/// system, event truncation and recorder grid with the flexible integrator.
/// Events break the FSAL reuse, so event-truncated steps cost seven fresh
/// evaluations.
std::pair<Waveform, RunStats> rk45_dp(const SimulationRun& run);

/// Bogacki-Shampine 3(2), same framework.
std::pair<Waveform, RunStats> rk23_bs(const SimulationRun& run);

/// One raw Dormand-Prince step (no controller); returns the 5th-order result.
Eigen::VectorXd dp45_single_step(
    const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& f, double t,
    const Eigen::VectorXd& y, double h);

/// One raw Bogacki-Shampine step; returns the 3rd-order result.
Eigen::VectorXd bs23_single_step(
    const std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>& f, double t,
    const Eigen::VectorXd& y, double h);

/// Mean relative deviation between waveforms: per signal, the average over
/// sim sample points of |y_sim - y_ref| / max(|y_ref|, abs_tol) with the
/// reference linearly interpolated onto the sim grid; then averaged over
/// signals. Normalized by the reference only (not symmetric).
double relative_error(const Waveform& sim, const Waveform& ref, double abs_tol);

struct BenchCell {
    std::string solver;
    double rel_tol = 0.0;
    long steps = 0;
    long f_evals = 0;
    double avg_order = 0.0;
    double wall_ms = 0.0;
    double err_rel = 0.0;
    bool failed = false;
    std::string error;
};

struct BenchReport {
    std::vector<BenchCell> cells;
    double reference_rel_tol = 1e-10;
};

/// Work-precision sweep: every (solver, tolerance) pair runs the same
/// schedule; achieved error is measured against a DP45 reference at
/// rel_tol 1e-10. Cell failures are recorded, not fatal.
BenchReport bench(const SimulationRun& base, const std::vector<double>& rel_tols,
                  const std::vector<std::string>& solvers, double metric_abs_tol = 1e-9);

void write_bench_json(const BenchReport& report, const std::string& path);
void write_bench_csv(const BenchReport& report, const std::string& path);

/// Dispatch by solver name: "taylor", "dp45" or "bs23".
std::pair<Waveform, RunStats> run_solver(const std::string& solver,
                                         const SimulationRun& run);

}  // namespace pesim
