#include "pesim/reference.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

namespace pesim {

namespace {

// Dormand-Prince 5(4) tableau
constexpr double dp_c[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double dp_a[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
};
constexpr double dp_b4[7] = {5179.0 / 57600, 0.0,           7571.0 / 16695, 393.0 / 640,
                             -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};
// dense-output weights of the 4th-order continuous extension
constexpr double dp_d[7] = {-12715105075.0 / 11282082432.0,
                            0.0,
                            87487479700.0 / 32700410799.0,
                            -10690763975.0 / 1880347072.0,
                            701980252875.0 / 199316789632.0,
                            -1453857185.0 / 822651844.0,
                            69997945.0 / 29380423.0};

// Bogacki-Shampine 3(2) tableau
constexpr double bs_c[4] = {0.0, 1.0 / 2, 3.0 / 4, 1.0};
constexpr double bs_a[4][3] = {
    {},
    {1.0 / 2},
    {0.0, 3.0 / 4},
    {2.0 / 9, 1.0 / 3, 4.0 / 9},
};
constexpr double bs_b2[4] = {7.0 / 24, 1.0 / 4, 1.0 / 3, 1.0 / 8};

using Rhs = std::function<Eigen::VectorXd(double, const Eigen::VectorXd&)>;

Eigen::VectorXd generic_step(const Rhs& f, double t, const Eigen::VectorXd& y, double h,
                             int stages, const double c[], const double a[][6],
                             std::vector<Eigen::VectorXd>& k) {
    k.resize(static_cast<std::size_t>(stages));
    k[0] = f(t, y);
    for (int s = 1; s < stages; ++s) {
        Eigen::VectorXd ys = y;
        for (int j = 0; j < s; ++j)
            if (a[s][j] != 0.0) ys += h * a[s][j] * k[static_cast<std::size_t>(j)];
        k[static_cast<std::size_t>(s)] = f(t + c[s] * h, ys);
    }
    Eigen::VectorXd y1 = y;
    for (int j = 0; j < stages - 1; ++j)
        if (a[stages - 1][j] != 0.0)
            y1 += h * a[stages - 1][j] * k[static_cast<std::size_t>(j)];
    return y1;
}

}  // namespace

Eigen::VectorXd dp45_single_step(const Rhs& f, double t, const Eigen::VectorXd& y,
                                 double h) {
    std::vector<Eigen::VectorXd> k;
    return generic_step(f, t, y, h, 7, dp_c, dp_a, k);
}

Eigen::VectorXd bs23_single_step(const Rhs& f, double t, const Eigen::VectorXd& y,
                                 double h) {
    std::vector<Eigen::VectorXd> k;
    k.resize(4);
    k[0] = f(t, y);
    for (int s = 1; s < 4; ++s) {
        Eigen::VectorXd ys = y;
        for (int j = 0; j < s; ++j)
            if (bs_a[s][j] != 0.0) ys += h * bs_a[s][j] * k[static_cast<std::size_t>(j)];
        k[static_cast<std::size_t>(s)] = f(t + bs_c[s] * h, ys);
    }
    Eigen::VectorXd y1 = y;
    for (int j = 0; j < 3; ++j) y1 += h * bs_a[3][j] * k[static_cast<std::size_t>(j)];
    return y1;
}

namespace {

struct RkMethod {
    const char* name;
    int stages;
    int order;          // propagating order (h exponent in the controller)
    const double* c;
    const double (*a)[6];
    const double* b_low;
};

// embedded RK runner for the hybrid system: the combined state is
// z = [x1; x_nl]; every derivative evaluation solves the algebraic loop
std::pair<Waveform, RunStats> run_embedded(const SimulationRun& run, const RkMethod& mth) {
    const auto wall_start = std::chrono::steady_clock::now();
    if (!run.system) throw SimError("simulation run has no system");
    const HybridSystem& sys = *run.system;
    StepController ctrl = run.controller;
    ctrl.validate();
    if (!(run.t_end > run.t_begin)) throw SimError("degenerate time span");
    if (!(run.output_period > 0.0)) throw SimError("output period must be positive");

    const Eigen::Index n1 = run.x1_0.size();
    const Eigen::Index nn = run.x_nl_0.size();

    RunStats stats;
    stats.solver = mth.name;
    Waveform wave;
    auto selection = resolve_signals(sys, run.record);
    for (const auto& s : selection) wave.names.push_back(s.name);
    wave.columns.resize(wave.names.size());

    LoopSolver loop;
    EvalCounters counters;
    std::uint64_t key = run.initial_topology;

    std::size_t next_event = 0;
    const auto& events = run.schedule.events;
    while (next_event < events.size() && events[next_event].time <= run.t_begin) {
        if (events[next_event].time == run.t_begin)
            key = (key & ~events[next_event].clear_mask) | events[next_event].set_mask;
        ++next_event;
    }

    // interface values captured by the most recent RHS evaluation, reused by
    // the recorder (current state, current topology)
    Eigen::VectorXd last_u, last_y;
    auto rhs = [&](double t, const Eigen::VectorXd& z) -> Eigen::VectorXd {
        HybridState s{t, z.head(n1), z.tail(nn), key};
        FirstDerivatives fd = first_derivatives(s, sys, loop, counters);
        last_u = fd.u_nl;
        last_y = fd.y_nl;
        Eigen::VectorXd dz(n1 + nn);
        dz.head(n1) = fd.x1_dot;
        dz.tail(nn) = fd.x_nl_dot;
        return dz;
    };

    auto emit = [&](double t, const Eigen::VectorXd& z, const Eigen::VectorXd& u,
                    const Eigen::VectorXd& y) {
        wave.time.push_back(t);
        for (std::size_t i = 0; i < selection.size(); ++i) {
            const auto& s = selection[i];
            double v = 0.0;
            switch (s.kind) {
                case SignalSelection::Kind::PwlState: v = z(s.index); break;
                case SignalSelection::Kind::NlState: v = z(n1 + s.index); break;
                case SignalSelection::Kind::Sensor: v = u(s.index); break;
                case SignalSelection::Kind::Output: v = y(s.index); break;
            }
            wave.columns[i].push_back(v);
        }
    };

    double t = run.t_begin;
    Eigen::VectorXd z(n1 + nn);
    z.head(n1) = run.x1_0;
    z.tail(nn) = run.x_nl_0;

    std::vector<Eigen::VectorXd> k(static_cast<std::size_t>(mth.stages));
    k[0] = rhs(t, z);
    emit(t, z, last_u, last_y);

    auto scaled_err_norm = [&](const Eigen::VectorXd& e, const Eigen::VectorXd& y0,
                               const Eigen::VectorXd& y1) {
        double m = 0.0;
        for (Eigen::Index i = 0; i < e.size(); ++i) {
            const double sc =
                ctrl.abs_tol + ctrl.rel_tol * std::max(std::abs(y0(i)), std::abs(y1(i)));
            m = std::max(m, std::abs(e(i)) / sc);
        }
        return m;
    };

    // deterministic initial step from the derivative magnitude
    double h;
    {
        const double d0 = std::max(z.cwiseAbs().maxCoeff(), ctrl.abs_tol);
        const double d1 = k[0].cwiseAbs().maxCoeff();
        h = d1 > 1e-12 ? 0.01 * d0 / d1 : 1e-6;
        h = std::min(h, run.t_end - run.t_begin);
        if (next_event < events.size()) h = std::min(h, events[next_event].time - t);
        h = std::max(h, ctrl.h_min);
    }

    double err_old = 1.0;
    long grid_next = 1;
    double last_emitted = t;
    const double grid_tol = 1e-9 * run.output_period;
    const long max_steps = 20'000'000;
    const double expo = 1.0 / mth.order;

    while (t < run.t_end) {
        if (stats.accepted + stats.rejected > max_steps)
            throw StiffnessError("step limit exceeded");
        const bool next_is_event =
            next_event < events.size() && events[next_event].time < run.t_end;
        const double t_next = next_is_event ? events[next_event].time : run.t_end;
        const double h_cap = t_next - t;
        bool boundary = h >= h_cap * (1.0 - 1e-12);
        if (boundary) h = h_cap;
        if (!boundary && (h < ctrl.h_min || h < 4.0 * 2.22e-16 * std::max(std::abs(t), 1.0)))
            throw StiffnessError("RK step size below h_min at t=" + std::to_string(t));

        // stages 2..s (k[0] is FSAL-reused or fresh after events)
        for (int s = 1; s < mth.stages; ++s) {
            Eigen::VectorXd ys = z;
            for (int j = 0; j < s; ++j)
                if (mth.a[s][j] != 0.0) ys += h * mth.a[s][j] * k[static_cast<std::size_t>(j)];
            k[static_cast<std::size_t>(s)] = rhs(t + mth.c[s] * h, ys);
        }
        Eigen::VectorXd z1 = z;
        for (int j = 0; j < mth.stages - 1; ++j)
            if (mth.a[mth.stages - 1][j] != 0.0)
                z1 += h * mth.a[mth.stages - 1][j] * k[static_cast<std::size_t>(j)];
        Eigen::VectorXd z_low = z;
        for (int j = 0; j < mth.stages; ++j)
            if (mth.b_low[j] != 0.0) z_low += h * mth.b_low[j] * k[static_cast<std::size_t>(j)];

        if (!z1.allFinite()) throw BlowupError("non-finite RK state at t=" + std::to_string(t));
        const double err = scaled_err_norm(z1 - z_low, z, z1);

        if (err <= 1.0) {
            const double t_new = boundary ? t_next : t + h;
            ++stats.accepted;
            ++stats.order_histogram[mth.order];

            // dense output; the last stage derivative doubles as f(t_new, z1)
            const Eigen::VectorXd& k_end = k[static_cast<std::size_t>(mth.stages - 1)];
            for (;; ++grid_next) {
                const double tg = run.t_begin + grid_next * run.output_period;
                if (tg > t_new + grid_tol || tg > run.t_end + grid_tol) break;
                const double theta = (tg - t) / h;
                Eigen::VectorXd zg;
                if (mth.stages == 7) {
                    // 4th-order continuous extension of Dormand-Prince
                    Eigen::VectorXd ydiff = z1 - z;
                    Eigen::VectorXd bspl = h * k[0] - ydiff;
                    Eigen::VectorXd r5 = Eigen::VectorXd::Zero(z.size());
                    for (int j = 0; j < 7; ++j)
                        if (dp_d[j] != 0.0) r5 += dp_d[j] * k[static_cast<std::size_t>(j)];
                    r5 *= h;
                    Eigen::VectorXd r4 = ydiff - h * k_end - bspl;
                    zg = z + theta * (ydiff + (1.0 - theta) *
                                                   (bspl + theta * (r4 + (1.0 - theta) * r5)));
                } else {
                    // cubic Hermite on (z, k1, z1, k_end)
                    const double t2 = theta * theta, t3 = t2 * theta;
                    zg = (2 * t3 - 3 * t2 + 1) * z + (t3 - 2 * t2 + theta) * h * k[0] +
                         (-2 * t3 + 3 * t2) * z1 + (t3 - t2) * h * k_end;
                }
                Eigen::VectorXd ug, yg;
                {
                    HybridState s{tg, zg.head(n1), zg.tail(nn), key};
                    LoopResult lr = loop.solve(s.x_nl, s.x1, sys.sources.values(tg),
                                               sys.matrices(key), sys.block, counters);
                    ug = lr.u_nl;
                    yg = lr.y_nl;
                }
                emit(tg, zg, ug, yg);
                last_emitted = tg;
            }
            if (boundary && !next_is_event && last_emitted < run.t_end - grid_tol) {
                HybridState s{run.t_end, z1.head(n1), z1.tail(nn), key};
                LoopResult lr = loop.solve(s.x_nl, s.x1, sys.sources.values(run.t_end),
                                           sys.matrices(key), sys.block, counters);
                emit(run.t_end, z1, lr.u_nl, lr.y_nl);
                last_emitted = run.t_end;
            }

            t = t_new;
            z = std::move(z1);

            if (boundary && next_is_event) {
                const auto& ev = events[next_event];
                key = (key & ~ev.clear_mask) | ev.set_mask;
                ++next_event;
                loop.invalidate_jacobian();
                {
                    LoopResult lr = loop.solve(z.tail(nn), z.head(n1),
                                               sys.sources.values(t, Side::Right),
                                               sys.matrices(key), sys.block, counters,
                                               std::nullopt, 1e-11);
                    stats.max_event_loop_residual =
                        std::max(stats.max_event_loop_residual, lr.residual);
                }
                k[0] = rhs(t, z);  // FSAL broken: fresh evaluation under the new topology
            } else {
                k[0] = k[static_cast<std::size_t>(mth.stages - 1)];  // FSAL
            }

            const double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.7 * expo) *
                               std::pow(err_old, 0.4 * expo);
            err_old = std::max(err, 1e-10);
            h *= std::clamp(fac, 0.2, 5.0);
            h = std::min(h, ctrl.h_max);
        } else {
            ++stats.rejected;
            boundary = false;
            h *= std::clamp(0.9 * std::pow(err, -expo), 0.2, 1.0);
        }
    }

    stats.f_evals = counters.f_evals;
    stats.g_evals = counters.g_evals;
    stats.loop_iterations = counters.loop_iterations;
    stats.avg_order = mth.order;
    stats.wall_ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - wall_start)
                        .count();
    wave.validate();
    return {std::move(wave), std::move(stats)};
}

}  // namespace

std::pair<Waveform, RunStats> rk45_dp(const SimulationRun& run) {
    RkMethod m{"dp45", 7, 5, dp_c, dp_a, dp_b4};
    return run_embedded(run, m);
}

std::pair<Waveform, RunStats> rk23_bs(const SimulationRun& run) {
    static const double bs_a6[4][6] = {
        {},
        {1.0 / 2},
        {0.0, 3.0 / 4},
        {2.0 / 9, 1.0 / 3, 4.0 / 9},
    };
    RkMethod m{"bs23", 4, 3, bs_c, bs_a6, bs_b2};
    return run_embedded(run, m);
}

double relative_error(const Waveform& sim, const Waveform& ref, double abs_tol) {
    if (sim.names.empty()) throw SimError("relative_error: no signals");
    if (sim.time.empty() || ref.time.empty()) throw SimError("relative_error: empty waveform");
    if (sim.time.front() < ref.time.front() - 1e-12 ||
        sim.time.back() > ref.time.back() + 1e-12)
        throw SimError("relative_error: sim span not covered by the reference");

    double total = 0.0;
    for (std::size_t s = 0; s < sim.names.size(); ++s) {
        const int rc = ref.column_index(sim.names[s]);
        if (rc < 0) throw SimError("relative_error: reference lacks signal '" + sim.names[s] + "'");
        double acc = 0.0;
        for (std::size_t i = 0; i < sim.rows(); ++i) {
            const double tr = std::clamp(sim.time[i], ref.time.front(), ref.time.back());
            const double yr = ref.interpolate(rc, tr);
            const double ys = sim.columns[s][i];
            acc += std::abs(ys - yr) / std::max(std::abs(yr), abs_tol);
        }
        total += acc / static_cast<double>(sim.rows());
    }
    return total / static_cast<double>(sim.names.size());
}

std::pair<Waveform, RunStats> run_solver(const std::string& solver,
                                         const SimulationRun& run) {
    if (solver == "taylor") return integrate(run);
    if (solver == "dp45") return rk45_dp(run);
    if (solver == "bs23") return rk23_bs(run);
    throw SimError("unknown solver '" + solver + "'");
}

BenchReport bench(const SimulationRun& base, const std::vector<double>& rel_tols,
                  const std::vector<std::string>& solvers, double metric_abs_tol) {
    BenchReport report;

    SimulationRun ref_run = base;
    ref_run.controller.rel_tol = report.reference_rel_tol;
    ref_run.controller.abs_tol = 1e-12;
    Waveform ref = rk45_dp(ref_run).first;

    for (const auto& solver : solvers) {
        for (double tol : rel_tols) {
            BenchCell cell;
            cell.solver = solver;
            cell.rel_tol = tol;
            try {
                SimulationRun r = base;
                r.controller.rel_tol = tol;
                auto [wave, stats] = run_solver(solver, r);
                cell.steps = stats.accepted;
                cell.f_evals = stats.f_evals;
                cell.avg_order = stats.avg_order;
                cell.wall_ms = stats.wall_ms;
                cell.err_rel = relative_error(wave, ref, metric_abs_tol);
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.error = e.what();
            }
            report.cells.push_back(std::move(cell));
        }
    }
    return report;
}

void write_bench_json(const BenchReport& report, const std::string& path) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& c : report.cells) {
        nlohmann::json row{{"solver", c.solver},   {"rel_tol", c.rel_tol},
                           {"steps", c.steps},     {"f_evals", c.f_evals},
                           {"avg_order", c.avg_order}, {"wall_ms", c.wall_ms},
                           {"err_rel", c.err_rel}};
        if (c.failed) row["error"] = c.error;
        arr.push_back(std::move(row));
    }
    nlohmann::json doc{{"reference_rel_tol", report.reference_rel_tol}, {"cells", arr}};
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw SimError("cannot open '" + path + "' for writing");
    const std::string text = doc.dump(2);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fputc('\n', f);
    std::fclose(f);
}

void write_bench_csv(const BenchReport& report, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw SimError("cannot open '" + path + "' for writing");
    std::fputs("solver,rel_tol,steps,f_evals,avg_order,wall_ms,err_rel,error\n", f);
    for (const auto& c : report.cells)
        std::fprintf(f, "%s,%.17g,%ld,%ld,%.17g,%.17g,%.17g,%s\n", c.solver.c_str(),
                     c.rel_tol, c.steps, c.f_evals, c.avg_order, c.wall_ms, c.err_rel,
                     c.failed ? c.error.c_str() : "");
    std::fclose(f);
}

}  // namespace pesim
