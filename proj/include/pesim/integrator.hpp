#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pesim/hybrid.hpp"
#include "pesim/waveform.hpp"

namespace pesim {

/// Everything needed to run one simulation.
struct SimulationRun {
    const HybridSystem* system = nullptr;
    EventSchedule schedule;  // normalized, times within [t_begin, t_end)
    StepController controller;
    double t_begin = 0.0;
    double t_end = 0.0;
    double output_period = 0.0;
    std::vector<std::string> record;  // signal names; empty records all states
    Eigen::VectorXd x1_0;
    Eigen::VectorXd x_nl_0;
    std::uint64_t initial_topology = 0;
};

struct RunStats {
    std::string solver = "taylor";
    long accepted = 0;
    long rejected = 0;
    long f_evals = 0;
    long g_evals = 0;
    long loop_iterations = 0;
    std::map<int, long> order_histogram;
    double avg_order = 0.0;
    double wall_ms = 0.0;
    double max_event_state_jump = 0.0;
    double max_event_loop_residual = 0.0;
};

/// Differentiation-step choice: h_k = Tok / max(||x_nl'||_inf, ||x1'||_inf);
/// when both norms are below 1e-12 the system is quiescent and h_max is
/// returned. Throws BlowupError on non-finite derivatives.
double diff_step(double tok, const Eigen::VectorXd& x_nl_dot,
                 const Eigen::VectorXd& x1_dot, double h_max);

/// Flexible Taylor integration: per step the algebraic loop is solved, the
/// differentiation step chosen, the decoupling cascade deepened while raising
/// the order pays off (never beyond the distance to the next scheduled event),
/// and the state advanced by the truncated Taylor polynomial. Events are hit
/// exactly; states pass through them unchanged. Dense output on the recorder
/// grid comes from the step polynomials.
std::pair<Waveform, RunStats> integrate(const SimulationRun& run);

/// One fixed-order, fixed-step Taylor step with adaptivity disabled:
/// cascade to order q with differentiation step h_diff, then advance by
/// h_step. For convergence studies.
std::pair<Eigen::VectorXd, Eigen::VectorXd> taylor_fixed_step(
    const HybridSystem& sys, std::uint64_t topology_key, double t,
    const Eigen::VectorXd& x1, const Eigen::VectorXd& x_nl, int q, double h_step,
    double h_diff, int stencil_q_max = 5);

/// Resolve recorder signal names against a system; empty selects all states.
struct SignalSelection {
    enum class Kind { PwlState, NlState, Sensor, Output } kind;
    int index;
    std::string name;
};
std::vector<SignalSelection> resolve_signals(const HybridSystem& sys,
                                             const std::vector<std::string>& names);

}  // namespace pesim
