#include "pesim/hybrid.hpp"

#include <cmath>

#include "pesim/stencil.hpp"

namespace pesim {

void TopologyMatrices::validate(Eigen::Index n1, Eigen::Index l1, Eigen::Index l_nl,
                                Eigen::Index m_nl) const {
    auto check = [](const Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c,
                    const char* name) {
        if (m.rows() != r || m.cols() != c)
            throw SimError(std::string("topology matrix ") + name + " has shape " +
                           std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                           ", expected " + std::to_string(r) + "x" + std::to_string(c));
    };
    check(A, n1, n1, "A");
    check(B1, n1, l1, "B1");
    check(B2, n1, m_nl, "B2");
    check(C, l_nl, n1, "C");
    check(D1, l_nl, l1, "D1");
    check(D2, l_nl, m_nl, "D2");
}

NonlinearBlock concatenate_blocks(std::vector<NonlinearBlock> blocks) {
    if (blocks.empty()) return {};
    if (blocks.size() == 1) return std::move(blocks.front());

    NonlinearBlock out;
    bool depends = false;
    struct Slice {
        int x0, nx, u0, nu, y0, ny;
    };
    std::vector<Slice> slices;
    for (const auto& b : blocks) {
        slices.push_back({out.n_states, b.n_states, out.n_inputs, b.n_inputs,
                          out.n_outputs, b.n_outputs});
        out.n_states += b.n_states;
        out.n_inputs += b.n_inputs;
        out.n_outputs += b.n_outputs;
        depends = depends || b.depends_on_input;
    }
    out.depends_on_input = depends;
    auto shared = std::make_shared<std::vector<NonlinearBlock>>(std::move(blocks));
    auto slc = std::make_shared<std::vector<Slice>>(std::move(slices));

    out.f = [shared, slc, nx = out.n_states](const Eigen::VectorXd& x,
                                             const Eigen::VectorXd& u) {
        Eigen::VectorXd dx(nx);
        for (std::size_t i = 0; i < shared->size(); ++i) {
            const auto& s = (*slc)[i];
            dx.segment(s.x0, s.nx) =
                (*shared)[i].f(x.segment(s.x0, s.nx), u.segment(s.u0, s.nu));
        }
        return dx;
    };
    out.g = [shared, slc, ny = out.n_outputs](const Eigen::VectorXd& x,
                                              const Eigen::VectorXd& u) {
        Eigen::VectorXd y(ny);
        for (std::size_t i = 0; i < shared->size(); ++i) {
            const auto& s = (*slc)[i];
            y.segment(s.y0, s.ny) =
                (*shared)[i].g(x.segment(s.x0, s.nx), u.segment(s.u0, s.nu));
        }
        return y;
    };
    return out;
}

namespace {

class StaticProvider : public TopologyProvider {
public:
    explicit StaticProvider(TopologyMatrices m) : mats_(std::move(m)) {}
    const TopologyMatrices& get(std::uint64_t) const override { return mats_; }

private:
    TopologyMatrices mats_;
};

}  // namespace

std::shared_ptr<TopologyProvider> make_static_provider(TopologyMatrices m) {
    return std::make_shared<StaticProvider>(std::move(m));
}

LoopResult LoopSolver::solve(const Eigen::VectorXd& x_nl, const Eigen::VectorXd& x1,
                             const Eigen::VectorXd& u1, const TopologyMatrices& mats,
                             const NonlinearBlock& block, EvalCounters& counters,
                             const std::optional<Eigen::VectorXd>& warm_start,
                             double tol_override) {
    const int m = block.n_outputs;
    auto u_of = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
        return mats.C * x1 + mats.D1 * u1 + mats.D2 * y;
    };
    if (m == 0) return {Eigen::VectorXd(0), u_of(Eigen::VectorXd(0)), 0.0, 0};

    const double tol_abs = opts_.tol_abs;

    if (!block.depends_on_input) {
        // g never reads u_nl: a single pass is exact
        Eigen::VectorXd y = block.g(x_nl, u_of(Eigen::VectorXd::Zero(m)));
        ++counters.g_evals;
        return {y, u_of(y), 0.0, 0};
    }
    if (mats.D2.size() == 0 || mats.D2.isZero(0.0)) {
        Eigen::VectorXd u = u_of(Eigen::VectorXd::Zero(m));
        Eigen::VectorXd y = block.g(x_nl, u);
        ++counters.g_evals;
        return {y, u_of(y), 0.0, 0};
    }

    auto residual = [&](const Eigen::VectorXd& y) -> Eigen::VectorXd {
        ++counters.g_evals;
        return y - block.g(x_nl, u_of(y));
    };

    Eigen::VectorXd y = warm_start ? *warm_start
                                   : block.g(x_nl, u_of(Eigen::VectorXd::Zero(m)));
    if (!warm_start) ++counters.g_evals;
    Eigen::VectorXd r = residual(y);

    // tol_override is an absolute residual bound (event re-solves); the
    // default tolerance scales with the output magnitude
    auto tolerance = [&](const Eigen::VectorXd& yy) {
        return tol_override > 0.0 ? tol_override
                                  : tol_abs * (1.0 + yy.cwiseAbs().maxCoeff());
    };

    int refreshes = 0;
    for (int it = 0; it < opts_.max_iterations; ++it) {
        const double rnorm = r.cwiseAbs().maxCoeff();
        if (!std::isfinite(rnorm)) throw LoopError("non-finite loop residual", rnorm);
        if (rnorm <= tolerance(y)) return {y, u_of(y), rnorm, it};

        if (!jacobian_valid_) {
            jacobian_.resize(m, m);
            for (int j = 0; j < m; ++j) {
                const double delta = std::sqrt(2.2e-16) * (1.0 + std::abs(y(j)));
                Eigen::VectorXd yp = y;
                yp(j) += delta;
                jacobian_.col(j) = (residual(yp) - r) / delta;
            }
            lu_.compute(jacobian_);
            jacobian_valid_ = true;
        }

        ++counters.loop_iterations;
        const Eigen::VectorXd dy = lu_.solve(r);
        double lambda = 1.0;
        bool accepted = false;
        for (int half = 0; half < 8; ++half) {
            Eigen::VectorXd y_trial = y - lambda * dy;
            Eigen::VectorXd r_trial = residual(y_trial);
            if (r_trial.cwiseAbs().maxCoeff() < rnorm || !std::isfinite(rnorm)) {
                y = std::move(y_trial);
                r = std::move(r_trial);
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            if (refreshes++ < 2) {
                jacobian_valid_ = false;  // stale Jacobian, rebuild and retry
                continue;
            }
            throw LoopError("algebraic loop: damped Newton stalled",
                            r.cwiseAbs().maxCoeff());
        }
    }
    const double rnorm = r.cwiseAbs().maxCoeff();
    if (rnorm <= tolerance(y)) return {y, u_of(y), rnorm, opts_.max_iterations};
    throw LoopError("algebraic loop did not converge within max iterations", rnorm);
}

LoopResult solve_algebraic_loop(const Eigen::VectorXd& x_nl, const Eigen::VectorXd& x1,
                                const Eigen::VectorXd& u1, const TopologyMatrices& mats,
                                const NonlinearBlock& block,
                                const std::optional<Eigen::VectorXd>& warm_start) {
    LoopSolver solver;
    EvalCounters counters;
    return solver.solve(x_nl, x1, u1, mats, block, counters, warm_start);
}

FirstDerivatives first_derivatives(const HybridState& state, const HybridSystem& sys,
                                   LoopSolver& loop, EvalCounters& counters) {
    const TopologyMatrices& mats = sys.matrices(state.topology_key);
    const Eigen::VectorXd u1 = sys.sources.values(state.t, Side::Right);
    LoopResult lr = loop.solve(state.x_nl, state.x1, u1, mats, sys.block, counters);

    FirstDerivatives fd;
    fd.y_nl = lr.y_nl;
    fd.u_nl = lr.u_nl;
    if (sys.block.n_states > 0) {
        fd.x_nl_dot = sys.block.f(state.x_nl, lr.u_nl);
        ++counters.f_evals;
    } else {
        fd.x_nl_dot.resize(0);
    }
    fd.x1_dot = mats.A * state.x1 + mats.B1 * u1 + mats.B2 * lr.y_nl;
    return fd;
}

namespace {

Eigen::VectorXd eval_coeffs(const std::vector<Eigen::VectorXd>& c, double dt, int up_to) {
    Eigen::VectorXd acc = c[static_cast<std::size_t>(up_to)];
    for (int k = up_to - 1; k >= 0; --k) acc = c[static_cast<std::size_t>(k)] + dt * acc;
    return acc;
}

// One cascade stage i >= 1: produces y_nl^(i), u_nl^(i) and the order-(i+1)
// state coefficients. The stencil's center sample is the stage-0 value.
void run_stage(DerivativeSet& ds, const HybridSystem& sys, const TopologyMatrices& mats,
               const std::vector<Eigen::VectorXd>& u1c, int stencil_q_max,
               LoopSolver& loop, EvalCounters& counters) {
    const int i = static_cast<int>(ds.y_nl.size());
    if (static_cast<int>(u1c.size()) < i + 1)
        throw SimError("cascade stage needs source coefficients to order i");

    const NonlinearBlock& block = sys.block;
    const bool has_nl_states = block.n_states > 0;
    const bool has_outputs = block.n_outputs > 0;
    const double h = ds.h;
    const double hi = std::pow(h, i);
    const StencilOperator& op = default_stencil(i, stencil_q_max);

    // step 1: i-th derivative of y_nl by the stencil on g-hat along the paths
    Eigen::VectorXd cy = Eigen::VectorXd::Zero(block.n_outputs);
    if (has_outputs) {
        Eigen::VectorXd scaled = Eigen::VectorXd::Zero(block.n_outputs);
        for (int j = 0; j < op.size(); ++j) {
            const double w = op.weights[j];
            if (w == 0.0) continue;
            const double cnode = op.nodes[j];
            if (cnode == 0.0) {
                scaled += w * ds.y_nl[0];
                continue;
            }
            const double ts = cnode * h;
            Eigen::VectorXd x_nl_s = has_nl_states
                                         ? eval_coeffs(ds.x_nl.coeffs, ts, i)
                                         : Eigen::VectorXd(0);
            Eigen::VectorXd x1_s = eval_coeffs(ds.x1.coeffs, ts, i);
            Eigen::VectorXd u1_s = eval_coeffs(u1c, ts, i);
            Eigen::VectorXd warm = eval_coeffs(ds.y_nl, ts, i - 1);
            try {
                LoopResult lr = loop.solve(x_nl_s, x1_s, u1_s, mats, block, counters, warm);
                scaled += w * lr.y_nl;
            } catch (const LoopError& e) {
                throw CascadeError(std::string("loop failure at stencil sample: ") +
                                       e.what(),
                                   i);
            }
        }
        cy = scaled / (hi * factorial(i));
        if (!cy.allFinite()) throw CascadeError("non-finite output derivative", i);
    }
    ds.y_nl.push_back(cy);

    // step 2: u_nl^(i) from the output relation (normalized coefficients obey
    // the same constant-matrix relation)
    Eigen::VectorXd cu = mats.C * ds.x1.coeffs[static_cast<std::size_t>(i)] +
                         mats.D1 * u1c[static_cast<std::size_t>(i)] + mats.D2 * cy;
    ds.u_nl.push_back(cu);

    // step 3: order-(i+1) state coefficients; stencil on f for the nonlinear
    // part, exact matrix recursion for the PWL part
    if (has_nl_states) {
        Eigen::VectorXd scaled = Eigen::VectorXd::Zero(block.n_states);
        for (int j = 0; j < op.size(); ++j) {
            const double w = op.weights[j];
            if (w == 0.0) continue;
            const double cnode = op.nodes[j];
            if (cnode == 0.0) {
                scaled += w * ds.x_nl.coeffs[1];  // c_1 is exactly f(x0, u0)
                continue;
            }
            const double ts = cnode * h;
            Eigen::VectorXd x_nl_s = eval_coeffs(ds.x_nl.coeffs, ts, i);
            Eigen::VectorXd u_nl_s = eval_coeffs(ds.u_nl, ts, i);
            scaled += w * block.f(x_nl_s, u_nl_s);
            ++counters.f_evals;
        }
        Eigen::VectorXd cx = scaled / (hi * factorial(i + 1));
        if (!cx.allFinite())
            throw CascadeError("non-finite state derivative of the nonlinear part", i);
        ds.x_nl.coeffs.push_back(std::move(cx));
    } else {
        ds.x_nl.coeffs.emplace_back(0);
    }
    // x1^(i+1) = A x1^(i) + B1 u1^(i) + B2 y^(i), then normalize by (i+1)
    Eigen::VectorXd cx1 = (mats.A * ds.x1.coeffs[static_cast<std::size_t>(i)] +
                           mats.B1 * u1c[static_cast<std::size_t>(i)] + mats.B2 * cy) /
                          (i + 1.0);
    if (!cx1.allFinite())
        throw CascadeError("non-finite state derivative of the PWL part", i);
    ds.x1.coeffs.push_back(std::move(cx1));
}

}  // namespace

void cascade_extend(DerivativeSet& ds, const HybridState&, const HybridSystem& sys,
                    const TopologyMatrices& mats,
                    const std::vector<Eigen::VectorXd>& u1_coeffs, int stencil_q_max,
                    LoopSolver& loop, EvalCounters& counters) {
    run_stage(ds, sys, mats, u1_coeffs, stencil_q_max, loop, counters);
}

DerivativeSet derivative_cascade(const HybridState& state, const HybridSystem& sys,
                                 const TopologyMatrices& mats, int q, double h,
                                 const std::vector<Eigen::VectorXd>& u1_coeffs,
                                 int stencil_q_max, LoopSolver& loop,
                                 EvalCounters& counters, const FirstDerivatives* stage0) {
    if (q < 1) throw SimError("cascade order must be at least 1");
    if (!(h > 0.0)) throw SimError("cascade differentiation step must be positive");
    if (static_cast<int>(u1_coeffs.size()) < q)
        throw SimError("cascade needs source coefficients to order q-1");

    DerivativeSet ds;
    ds.h = h;
    ds.u1 = u1_coeffs;
    ds.x1.t0 = state.t;
    ds.x_nl.t0 = state.t;

    FirstDerivatives local;
    if (!stage0) {
        local = first_derivatives(state, sys, loop, counters);
        stage0 = &local;
    }
    // stage 0: the identity operator on the known point values
    ds.x1.coeffs = {state.x1, stage0->x1_dot};
    ds.x_nl.coeffs = {state.x_nl, stage0->x_nl_dot};
    ds.y_nl = {stage0->y_nl};
    ds.u_nl = {stage0->u_nl};

    for (int i = 1; i < q; ++i)
        run_stage(ds, sys, mats, u1_coeffs, stencil_q_max, loop, counters);
    return ds;
}

}  // namespace pesim
