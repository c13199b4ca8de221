#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pesim/sources.hpp"
#include "pesim/taylor.hpp"

namespace pesim {

/// State-space matrices of the PWL part for one switch permutation:
///   x1'  = A x1 + B1 u1 + B2 y_nl
///   u_nl = C x1 + D1 u1 + D2 y_nl
struct TopologyMatrices {
    Eigen::MatrixXd A, B1, B2, C, D1, D2;

    void validate(Eigen::Index n1, Eigen::Index l1, Eigen::Index l_nl,
                  Eigen::Index m_nl) const;
};

/// Smooth nonlinear part in state-equation form: x_nl' = f(x_nl, u_nl),
/// y_nl = g(x_nl, u_nl). Multiple components are concatenated into one
/// block-diagonal f/g before reaching this interface.
struct NonlinearBlock {
    int n_states = 0;   // n_nl
    int n_inputs = 0;   // l_nl
    int n_outputs = 0;  // m_nl
    std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& u)> f;
    std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& u)> g;
    /// true when g varies with u_nl, i.e. an algebraic loop is possible
    bool depends_on_input = false;

    bool empty() const { return n_states == 0 && n_outputs == 0 && n_inputs == 0; }
};

/// Concatenate several blocks into one (block-diagonal f, stacked g).
NonlinearBlock concatenate_blocks(std::vector<NonlinearBlock> blocks);

/// Provider of per-topology matrices, keyed by the switch bitmask.
class TopologyProvider {
public:
    virtual ~TopologyProvider() = default;
    virtual const TopologyMatrices& get(std::uint64_t switch_state) const = 0;
};

/// Fixed matrices regardless of key (systems without switches, tests).
std::shared_ptr<TopologyProvider> make_static_provider(TopologyMatrices m);

/// The whole hybrid system: PWL matrices per topology, independent sources,
/// and the concatenated nonlinear block, plus signal names for recording.
struct HybridSystem {
    Eigen::Index n1 = 0;  // PWL states
    Eigen::Index l1 = 0;  // independent sources
    NonlinearBlock block;
    SourceBank sources;
    std::shared_ptr<TopologyProvider> topology;

    std::vector<std::string> pwl_state_names;  // n1
    std::vector<std::string> nl_state_names;   // n_nl
    std::vector<std::string> sensor_names;     // l_nl
    std::vector<std::string> output_names;     // m_nl

    const TopologyMatrices& matrices(std::uint64_t key) const { return topology->get(key); }
    Eigen::Index n_nl() const { return block.n_states; }
};

struct HybridState {
    double t = 0.0;
    Eigen::VectorXd x1;
    Eigen::VectorXd x_nl;
    std::uint64_t topology_key = 0;
};

/// Evaluation counters shared across an integration run.
struct EvalCounters {
    long f_evals = 0;
    long g_evals = 0;
    long loop_iterations = 0;
};

struct LoopOptions {
    double tol_abs = 1e-10;   // residual tolerance is tol_abs * (1 + ||y||_inf)
    int max_iterations = 50;
};

struct LoopResult {
    Eigen::VectorXd y_nl;
    Eigen::VectorXd u_nl;
    double residual = 0.0;
    int iterations = 0;
};

/// Newton workspace; the finite-difference Jacobian is reused across the
/// sample points of one cascade and refreshed on slow convergence.
class LoopSolver {
public:
    explicit LoopSolver(LoopOptions opts = {}) : opts_(opts) {}

    /// Solve y = g(x_nl, u), u = C x1 + D1 u1 + D2 y to residual
    /// inf-norm <= tol_abs*(1+||y||). Direct single pass when g does not
    /// depend on u_nl or D2 is zero. Throws LoopError on no convergence.
    LoopResult solve(const Eigen::VectorXd& x_nl, const Eigen::VectorXd& x1,
                     const Eigen::VectorXd& u1, const TopologyMatrices& mats,
                     const NonlinearBlock& block, EvalCounters& counters,
                     const std::optional<Eigen::VectorXd>& warm_start = std::nullopt,
                     double tol_override = 0.0);

    void invalidate_jacobian() { jacobian_valid_ = false; }

private:
    LoopOptions opts_;
    Eigen::MatrixXd jacobian_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
    bool jacobian_valid_ = false;
};

/// One-shot convenience wrapper around LoopSolver::solve.
LoopResult solve_algebraic_loop(const Eigen::VectorXd& x_nl, const Eigen::VectorXd& x1,
                                const Eigen::VectorXd& u1, const TopologyMatrices& mats,
                                const NonlinearBlock& block,
                                const std::optional<Eigen::VectorXd>& warm_start = std::nullopt);

struct FirstDerivatives {
    Eigen::VectorXd x_nl_dot;
    Eigen::VectorXd x1_dot;
    Eigen::VectorXd y_nl;
    Eigen::VectorXd u_nl;
};

/// Order-0 stage: solve the loop at t0, then one f evaluation and one matrix
/// recursion. Exactly one f evaluation (the order-0 identity operator).
FirstDerivatives first_derivatives(const HybridState& state, const HybridSystem& sys,
                                   LoopSolver& loop, EvalCounters& counters);

/// Everything the decoupling cascade produces at one expansion point:
/// normalized Taylor coefficients of the states to order q and of the
/// interface variables to order q-1.
struct DerivativeSet {
    TaylorCoefficients x1;                 // order q
    TaylorCoefficients x_nl;               // order q
    std::vector<Eigen::VectorXd> u_nl;     // order q-1
    std::vector<Eigen::VectorXd> y_nl;     // order q-1
    std::vector<Eigen::VectorXd> u1;       // order q-1 (source coefficients used)
    double h = 0.0;                        // differentiation step
};

/// The decoupling cascade: iterate stages i = 0..q-1; per stage the i-th
/// stencil is applied to g-hat along the polynomial paths (loop solve per
/// fresh sample, warm-started from the y polynomial), u_nl^(i) follows from
/// the output relation, then the i-th stencil on f and the matrix recursion
/// produce the order-(i+1) state coefficients. The center sample of every
/// stencil reuses the stage-0 values, so with default stencils the f-eval
/// count is exactly 1 + 4(q-1).
///
/// u1_coeffs must hold source coefficients to order >= q-1.
/// Throws CascadeError carrying the failing order on a loop failure or a
/// non-finite derivative.
DerivativeSet derivative_cascade(const HybridState& state, const HybridSystem& sys,
                                 const TopologyMatrices& mats, int q, double h,
                                 const std::vector<Eigen::VectorXd>& u1_coeffs,
                                 int stencil_q_max, LoopSolver& loop,
                                 EvalCounters& counters,
                                 const FirstDerivatives* stage0 = nullptr);

/// Grow an existing cascade result by one stage (incremental deepening used
/// by the integrator's order selection). `ds` must have been produced by
/// derivative_cascade with the same inputs.
void cascade_extend(DerivativeSet& ds, const HybridState& state, const HybridSystem& sys,
                    const TopologyMatrices& mats,
                    const std::vector<Eigen::VectorXd>& u1_coeffs, int stencil_q_max,
                    LoopSolver& loop, EvalCounters& counters);

}  // namespace pesim
