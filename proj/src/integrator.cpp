#include "pesim/integrator.hpp"

#include <chrono>
#include <cmath>

#include "pesim/stencil.hpp"

namespace pesim {

double diff_step(double tok, const Eigen::VectorXd& x_nl_dot,
                 const Eigen::VectorXd& x1_dot, double h_max) {
    if (!(tok > 0.0)) throw SimError("diff_step requires Tok > 0");
    const double n_nl = x_nl_dot.size() ? x_nl_dot.cwiseAbs().maxCoeff() : 0.0;
    const double n_1 = x1_dot.size() ? x1_dot.cwiseAbs().maxCoeff() : 0.0;
    const double norm = std::max(n_nl, n_1);
    if (!std::isfinite(norm)) throw BlowupError("non-finite first derivatives");
    if (norm < 1e-12) return h_max;  // quiescent system
    return std::min(tok / norm, h_max);
}

std::vector<SignalSelection> resolve_signals(const HybridSystem& sys,
                                             const std::vector<std::string>& names) {
    std::vector<SignalSelection> sel;
    auto resolve_one = [&](const std::string& n) {
        for (std::size_t i = 0; i < sys.pwl_state_names.size(); ++i)
            if (sys.pwl_state_names[i] == n)
                return SignalSelection{SignalSelection::Kind::PwlState, static_cast<int>(i), n};
        for (std::size_t i = 0; i < sys.nl_state_names.size(); ++i)
            if (sys.nl_state_names[i] == n)
                return SignalSelection{SignalSelection::Kind::NlState, static_cast<int>(i), n};
        for (std::size_t i = 0; i < sys.sensor_names.size(); ++i)
            if (sys.sensor_names[i] == n)
                return SignalSelection{SignalSelection::Kind::Sensor, static_cast<int>(i), n};
        for (std::size_t i = 0; i < sys.output_names.size(); ++i)
            if (sys.output_names[i] == n)
                return SignalSelection{SignalSelection::Kind::Output, static_cast<int>(i), n};
        throw SimError("unknown recorder signal '" + n + "'");
    };
    if (names.empty()) {
        for (std::size_t i = 0; i < sys.pwl_state_names.size(); ++i)
            sel.push_back({SignalSelection::Kind::PwlState, static_cast<int>(i),
                           sys.pwl_state_names[i]});
        for (std::size_t i = 0; i < sys.nl_state_names.size(); ++i)
            sel.push_back({SignalSelection::Kind::NlState, static_cast<int>(i),
                           sys.nl_state_names[i]});
    } else {
        for (const auto& n : names) sel.push_back(resolve_one(n));
    }
    return sel;
}

namespace {

Eigen::VectorXd eval_coeff_list(const std::vector<Eigen::VectorXd>& c, double dt) {
    Eigen::VectorXd acc = c.back();
    for (int k = static_cast<int>(c.size()) - 2; k >= 0; --k)
        acc = c[static_cast<std::size_t>(k)] + dt * acc;
    return acc;
}

// per-step nonlinear evaluation cost at order q (Table-style accounting)
double cascade_cost(const HybridSystem& sys, int q, int q_max) {
    if (sys.block.n_states == 0) return q;  // matrix recursions only
    double cost = 1.0;
    for (int i = 1; i < q; ++i) cost += default_stencil(i, q_max).size() - 1;
    return cost;
}

struct RowWriter {
    std::vector<SignalSelection> selection;
    Waveform* wave;

    void emit(double t, const Eigen::VectorXd& x1, const Eigen::VectorXd& x_nl,
              const Eigen::VectorXd& u_nl, const Eigen::VectorXd& y_nl) {
        wave->time.push_back(t);
        for (std::size_t i = 0; i < selection.size(); ++i) {
            const auto& s = selection[i];
            double v = 0.0;
            switch (s.kind) {
                case SignalSelection::Kind::PwlState: v = x1(s.index); break;
                case SignalSelection::Kind::NlState: v = x_nl(s.index); break;
                case SignalSelection::Kind::Sensor: v = u_nl(s.index); break;
                case SignalSelection::Kind::Output: v = y_nl(s.index); break;
            }
            wave->columns[i].push_back(v);
        }
    }
};

double combined_norm(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.size() ? a.cwiseAbs().maxCoeff() : 0.0;
    const double nb = b.size() ? b.cwiseAbs().maxCoeff() : 0.0;
    return std::max(na, nb);
}

}  // namespace

std::pair<Waveform, RunStats> integrate(const SimulationRun& run) {
    const auto wall_start = std::chrono::steady_clock::now();
    if (!run.system) throw SimError("simulation run has no system");
    const HybridSystem& sys = *run.system;
    StepController ctrl = run.controller;
    ctrl.validate();
    if (!(run.t_end > run.t_begin)) throw SimError("degenerate time span");
    if (!(run.output_period > 0.0)) throw SimError("output period must be positive");

    RunStats stats;
    Waveform wave;
    RowWriter writer{resolve_signals(sys, run.record), &wave};
    for (const auto& s : writer.selection) wave.names.push_back(s.name);
    wave.columns.resize(wave.names.size());

    HybridState st;
    st.t = run.t_begin;
    st.x1 = run.x1_0;
    st.x_nl = run.x_nl_0;
    st.topology_key = run.initial_topology;

    // events strictly inside the span plus any exactly at the start
    std::size_t next_event = 0;
    const auto& events = run.schedule.events;
    while (next_event < events.size() && events[next_event].time <= run.t_begin) {
        if (events[next_event].time == run.t_begin) {
            st.topology_key = (st.topology_key & ~events[next_event].clear_mask) |
                              events[next_event].set_mask;
        }
        ++next_event;
    }

    LoopSolver loop;
    EvalCounters counters;
    const TopologyMatrices* mats = &sys.matrices(st.topology_key);
    FirstDerivatives stage0 = first_derivatives(st, sys, loop, counters);
    writer.emit(st.t, st.x1, st.x_nl, stage0.u_nl, stage0.y_nl);

    const double noise_exp = std::pow(2.22e-16, 1.0 / (ctrl.q_max + 1.0));
    long grid_next = 1;  // recorder grid index; row 0 emitted above
    double last_emitted = st.t;
    const long max_steps = 20'000'000;

    while (st.t < run.t_end) {
        if (stats.accepted + stats.rejected > max_steps)
            throw StiffnessError("step limit exceeded; system too stiff for this method");

        const bool next_is_event =
            next_event < events.size() && events[next_event].time < run.t_end;
        const double t_next = next_is_event ? events[next_event].time : run.t_end;
        const double h_cap = t_next - st.t;

        const double state_norm = combined_norm(st.x1, st.x_nl);
        const double tok = ctrl.tolerance_for(state_norm);

        // Differentiation step: the tolerance-based choice with a roundoff
        // floor (high-order stencils on a too-small h read pure noise), then
        // capped so stencil samples stay within the current interval.
        double h_k = diff_step(tok, stage0.x_nl_dot, stage0.x1_dot, ctrl.h_max);
        const double deriv_norm = combined_norm(stage0.x1_dot, stage0.x_nl_dot);
        if (deriv_norm > 1e-12)
            h_k = std::max(h_k, noise_exp * std::max(state_norm, 1.0) / deriv_norm);
        h_k = std::min(h_k, h_cap / 4.0);
        h_k = std::max(h_k, 1e-300);

        const std::vector<Eigen::VectorXd> u1c =
            sys.sources.coefficients(st.t, ctrl.q_max - 1, Side::Right);

        // Incremental cascade: deepen while raising the order pays off.
        DerivativeSet ds = derivative_cascade(st, sys, *mats, 1, h_k, u1c, ctrl.q_max,
                                              loop, counters, &stage0);
        int q_sel = -1;
        double h_sel = 0.0;
        int best_q = -1;
        double best_h = 0.0, best_score = -1.0;
        int strikes = 0;
        for (int d = 2; d <= ctrl.q_max; ++d) {
            cascade_extend(ds, st, sys, *mats, u1c, ctrl.q_max, loop, counters);
            if (d < ctrl.q_min) continue;
            const double norm_cd = combined_norm(ds.x1.coeffs[static_cast<std::size_t>(d)],
                                                 ds.x_nl.coeffs[static_cast<std::size_t>(d)]);
            if (!std::isfinite(norm_cd))
                throw BlowupError("non-finite Taylor coefficient at t=" +
                                  std::to_string(st.t));
            const double h_d = ctrl.safety * max_step_for_order(d, norm_cd, tok);
            if (h_d >= h_cap) {
                q_sel = d;  // event-capped: no deeper order can lengthen the step
                h_sel = h_cap;
                break;
            }
            const double score = h_d / cascade_cost(sys, d, ctrl.q_max);
            if (score > best_score) {
                best_score = score;
                best_q = d;
                best_h = h_d;
                strikes = 0;
            } else if (++strikes >= 2) {
                break;
            }
        }
        if (q_sel < 0) {
            q_sel = best_q;
            h_sel = std::min(best_h, h_cap);
        }

        bool boundary = (h_cap - h_sel) <= 1e-12 * std::max(h_cap, std::abs(t_next));
        if (boundary) h_sel = h_cap;

        // Advance; on a too-large post-hoc defect, halve and re-advance from
        // the stored coefficients (no new cascade).
        Eigen::VectorXd x1_new, x_nl_new;
        FirstDerivatives stage0_new;
        bool have_stage0_new = false;
        for (;;) {
            if (!boundary &&
                (h_sel < ctrl.h_min || h_sel < 4.0 * 2.22e-16 * std::max(std::abs(st.t), 1.0)))
                throw StiffnessError(
                    "step size driven below h_min at t=" + std::to_string(st.t) +
                    "; the system is too stiff for this method");
            x1_new = eval_poly(ds.x1, h_sel, q_sel);
            x_nl_new = sys.block.n_states ? eval_poly(ds.x_nl, h_sel, q_sel)
                                          : Eigen::VectorXd(0);
            if (!x1_new.allFinite() || !x_nl_new.allFinite())
                throw BlowupError("non-finite state after step at t=" + std::to_string(st.t));
            if (boundary) break;  // a priori bound holds, step was event-capped

            // next-step first derivatives double as the defect estimate
            HybridState trial{st.t + h_sel, x1_new, x_nl_new, st.topology_key};
            stage0_new = first_derivatives(trial, sys, loop, counters);
            have_stage0_new = true;
            const double defect =
                std::max(combined_norm(stage0_new.x1_dot -
                                           eval_poly_derivative(ds.x1, h_sel, q_sel),
                                       Eigen::VectorXd()),
                         sys.block.n_states
                             ? combined_norm(stage0_new.x_nl_dot -
                                                 eval_poly_derivative(ds.x_nl, h_sel, q_sel),
                                             Eigen::VectorXd())
                             : 0.0);
            const double err_est = defect * h_sel / (q_sel + 1.0);
            if (err_est <= tok) break;
            ++stats.rejected;
            have_stage0_new = false;
            h_sel *= 0.5;
        }

        const double t_new = boundary ? t_next : st.t + h_sel;
        ++stats.accepted;
        ++stats.order_histogram[q_sel];

        // dense output on the recorder grid inside (t, t_new]
        const double grid_tol = 1e-9 * run.output_period;
        for (;; ++grid_next) {
            const double tg = run.t_begin + grid_next * run.output_period;
            if (tg > t_new + grid_tol || tg > run.t_end + grid_tol) break;
            const double dt = tg - st.t;
            writer.emit(tg, eval_poly(ds.x1, dt, q_sel),
                        sys.block.n_states ? eval_poly(ds.x_nl, dt, q_sel)
                                           : Eigen::VectorXd(0),
                        eval_coeff_list(ds.u_nl, dt), eval_coeff_list(ds.y_nl, dt));
            last_emitted = tg;
        }
        // terminate with a sample exactly at t_end even off the grid
        if (boundary && !next_is_event && last_emitted < run.t_end - grid_tol) {
            const double dt = run.t_end - st.t;
            writer.emit(run.t_end, eval_poly(ds.x1, dt, q_sel),
                        sys.block.n_states ? eval_poly(ds.x_nl, dt, q_sel)
                                           : Eigen::VectorXd(0),
                        eval_coeff_list(ds.u_nl, dt), eval_coeff_list(ds.y_nl, dt));
            last_emitted = run.t_end;
        }

        st.t = t_new;
        st.x1 = std::move(x1_new);
        st.x_nl = std::move(x_nl_new);

        if (boundary && next_is_event) {
            const auto& ev = events[next_event];
            const Eigen::VectorXd x1_before = st.x1;
            const Eigen::VectorXd x_nl_before = st.x_nl;
            st.topology_key = (st.topology_key & ~ev.clear_mask) | ev.set_mask;
            ++next_event;
            mats = &sys.matrices(st.topology_key);
            loop.invalidate_jacobian();
            // state continuity across the event, loop re-solved to a tight
            // residual under the new topology
            stats.max_event_state_jump =
                std::max(stats.max_event_state_jump,
                         std::max(combined_norm(st.x1 - x1_before, Eigen::VectorXd()),
                                  combined_norm(st.x_nl - x_nl_before, Eigen::VectorXd())));
            const Eigen::VectorXd u1 = sys.sources.values(st.t, Side::Right);
            LoopResult lr = loop.solve(st.x_nl, st.x1, u1, *mats, sys.block, counters,
                                       std::nullopt, 1e-11);
            stats.max_event_loop_residual =
                std::max(stats.max_event_loop_residual, lr.residual);
            stage0.y_nl = lr.y_nl;
            stage0.u_nl = lr.u_nl;
            if (sys.block.n_states) {
                stage0.x_nl_dot = sys.block.f(st.x_nl, lr.u_nl);
                ++counters.f_evals;
            }
            stage0.x1_dot = mats->A * st.x1 + mats->B1 * u1 + mats->B2 * lr.y_nl;
        } else if (have_stage0_new) {
            stage0 = std::move(stage0_new);
        } else if (st.t < run.t_end) {
            stage0 = first_derivatives(st, sys, loop, counters);
        }
    }

    stats.f_evals = counters.f_evals;
    stats.g_evals = counters.g_evals;
    stats.loop_iterations = counters.loop_iterations;
    double order_sum = 0.0;
    for (const auto& [q, n] : stats.order_histogram) order_sum += q * static_cast<double>(n);
    stats.avg_order = stats.accepted ? order_sum / static_cast<double>(stats.accepted) : 0.0;
    stats.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - wall_start)
                        .count();
    wave.validate();
    return {std::move(wave), std::move(stats)};
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> taylor_fixed_step(
    const HybridSystem& sys, std::uint64_t topology_key, double t,
    const Eigen::VectorXd& x1, const Eigen::VectorXd& x_nl, int q, double h_step,
    double h_diff, int stencil_q_max) {
    HybridState st{t, x1, x_nl, topology_key};
    LoopSolver loop;
    EvalCounters counters;
    const TopologyMatrices& mats = sys.matrices(topology_key);
    const auto u1c = sys.sources.coefficients(t, std::max(q - 1, 0), Side::Right);
    DerivativeSet ds = derivative_cascade(st, sys, mats, q, h_diff, u1c, stencil_q_max,
                                          loop, counters);
    Eigen::VectorXd x1_new = eval_poly(ds.x1, h_step, q);
    Eigen::VectorXd x_nl_new =
        sys.block.n_states ? eval_poly(ds.x_nl, h_step, q) : Eigen::VectorXd(0);
    return {std::move(x1_new), std::move(x_nl_new)};
}

}  // namespace pesim
