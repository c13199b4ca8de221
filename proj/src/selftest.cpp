#include "pesim/selftest.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <random>

#include "pesim/circuit.hpp"
#include "pesim/integrator.hpp"
#include "pesim/models.hpp"
#include "pesim/reference.hpp"
#include "pesim/stencil.hpp"

namespace pesim {

namespace {

bool stencil_moments_hold(const StencilOperator& op, double tol) {
    for (int m = 0; m < op.derivative_order + op.accuracy_order; ++m) {
        double mu = 0.0;
        for (int j = 0; j < op.size(); ++j)
            mu += op.weights[j] * std::pow(op.nodes[j], m) / factorial(m);
        const double expect = m == op.derivative_order ? 1.0 : 0.0;
        if (std::abs(mu - expect) > tol) return false;
    }
    return true;
}

// PV current source charging an RC bus: the one-nonlinear-block test system
struct PvRc {
    std::shared_ptr<HybridSystem> system;
    SimulationRun run;

    PvRc() {
        Netlist nl;
        nl.resistors.push_back({"R1", "bus", "0", 10.0});
        nl.capacitors.push_back({"C1", "bus", "0", 100e-6, 2.0});
        std::vector<InputBinding> ins;
        InputBinding v_sense;
        v_sense.kind = InputBinding::Kind::VoltageSensor;
        v_sense.name = "Vbus";
        v_sense.pos = "bus";
        v_sense.neg = "0";
        ins.push_back(v_sense);
        InputBinding sun{InputBinding::Kind::SourceFeed, "pv.S", "", "", "", 0, 1.0};
        InputBinding temp{InputBinding::Kind::SourceFeed, "pv.T", "", "", "", 1, 1.0};
        ins.push_back(sun);
        ins.push_back(temp);
        std::vector<OutputBinding> outs;
        outs.push_back({OutputBinding::Kind::CurrentPort, "P1", "0", "bus"});

        auto compiler = std::make_shared<CircuitCompiler>(nl, ins, outs, 2);
        system = std::make_shared<HybridSystem>();
        system->n1 = 1;
        system->l1 = 2;
        system->block = make_pv_block(PvParams{});
        SourceWaveform s0;
        s0.kind = SourceWaveform::Kind::Dc;
        s0.name = "sun";
        s0.value = 800.0;
        SourceWaveform s1;
        s1.kind = SourceWaveform::Kind::Dc;
        s1.name = "temp";
        s1.value = 298.15;
        system->sources.add(s0);
        system->sources.add(s1);
        system->topology = std::make_shared<TopologyCache>(compiler);
        system->pwl_state_names = compiler->state_names();
        system->nl_state_names = {"pv.I_m"};
        system->sensor_names = {"Vbus", "pv.S", "pv.T"};
        system->output_names = {"pv.I"};

        run.system = system.get();
        run.t_begin = 0.0;
        run.t_end = 2e-4;
        run.output_period = 2e-5;
        run.x1_0 = compiler->initial_state();
        run.x_nl_0 = Eigen::VectorXd::Zero(1);
    }
};

}  // namespace

int run_selftest(bool inject_stencil_fault) {
    int failures = 0;
    auto report = [&](const char* name, bool ok) {
        std::printf("[%s] %s\n", ok ? "PASS" : "FAIL", name);
        if (!ok) ++failures;
    };

    // stencil moment conditions (optionally fault-injected as a negative control)
    {
        bool ok = true;
        for (int i = 0; i <= 4; ++i) {
            StencilOperator op = default_stencil(i, 5);
            if (inject_stencil_fault && i == 2 && !op.weights.empty())
                op.weights[0] += 1e-6;
            ok = ok && stencil_moments_hold(op, 1e-12);
        }
        report("stencil moment conditions", ok);
    }

    {
        auto w3 = generate_weights(std::vector<double>{-1, 0, 1}, 1);
        auto w4 = generate_weights(std::vector<double>{-1.5, -0.5, 0.5, 1.5}, 1);
        const bool ok = std::abs(w3.weights[0] + 0.5) < 1e-13 &&
                        std::abs(w3.weights[2] - 0.5) < 1e-13 &&
                        std::abs(w4.weights[0] - 1.0 / 24) < 1e-13 &&
                        std::abs(w4.weights[1] + 27.0 / 24) < 1e-13;
        report("classic difference weights", ok);
    }

    // convergence of the default i=2 stencil on exp(t); the fit uses only
    // pairs safely above the roundoff floor of the scaled difference
    {
        const StencilOperator& op = default_stencil(2, 5);
        std::vector<double> errs;
        for (int k = 0; k < 4; ++k) {
            const double h = 1e-1 * std::pow(0.5, k);
            std::vector<double> samples;
            for (double c : op.nodes) samples.push_back(std::exp(c * h));
            errs.push_back(std::abs(apply_scaled(op, samples) / (h * h) - 1.0));
        }
        double sum = 0.0;
        int n = 0;
        for (std::size_t k = 0; k + 1 < errs.size(); ++k)
            if (errs[k] > 1e-9 && errs[k + 1] > 1e-9) {
                sum += std::log2(errs[k] / errs[k + 1]);
                ++n;
            }
        report("stencil convergence order",
               n > 0 && sum / n >= op.accuracy_order - 0.3);
    }

    // Taylor step on x' = lambda x equals the truncated exponential
    {
        std::mt19937 rng(12345);
        std::uniform_real_distribution<double> mag(0.1, 2.0), ang(0.0, 6.283185307179586);
        bool ok = true;
        for (int trial = 0; trial < 20; ++trial) {
            const double r = mag(rng), th = ang(rng);
            const std::complex<double> lam(r * std::cos(th), r * std::sin(th));
            TopologyMatrices M;
            M.A.resize(2, 2);
            M.A << lam.real(), -lam.imag(), lam.imag(), lam.real();
            M.B1.resize(2, 0);
            M.B2.resize(2, 0);
            M.C.resize(0, 2);
            M.D1.resize(0, 0);
            M.D2.resize(0, 0);
            HybridSystem sys;
            sys.n1 = 2;
            sys.l1 = 0;
            sys.topology = make_static_provider(M);
            HybridState st{0.0, (Eigen::VectorXd(2) << 1.0, 0.0).finished(),
                           Eigen::VectorXd(0), 0};
            LoopSolver loop;
            EvalCounters counters;
            const int q = 2 + trial % 4;
            auto ds = derivative_cascade(st, sys, M, q, 1e-3, {Eigen::VectorXd(0),
                                          Eigen::VectorXd(0), Eigen::VectorXd(0),
                                          Eigen::VectorXd(0), Eigen::VectorXd(0)},
                                         5, loop, counters);
            const Eigen::VectorXd got = advance_state(ds.x1, 1.0, q);
            std::complex<double> expect(0.0, 0.0), term(1.0, 0.0);
            for (int k = 0; k <= q; ++k) {
                expect += term;
                term *= lam / static_cast<double>(k + 1);
            }
            ok = ok && std::abs(got(0) - expect.real()) < 1e-12 &&
                 std::abs(got(1) - expect.imag()) < 1e-12;
        }
        report("linear stability identity", ok);
    }

    // PWL-only cascade equals the matrix-power recursion
    {
        TopologyMatrices M;
        M.A.resize(2, 2);
        M.A << 0.0, 1e4, -1e3, -50.0;  // source-free RLC
        M.B1.resize(2, 0);
        M.B2.resize(2, 0);
        M.C.resize(0, 2);
        M.D1.resize(0, 0);
        M.D2.resize(0, 0);
        HybridSystem sys;
        sys.n1 = 2;
        sys.l1 = 0;
        sys.topology = make_static_provider(M);
        HybridState st{0.0, (Eigen::VectorXd(2) << 1.0, -0.5).finished(),
                       Eigen::VectorXd(0), 0};
        LoopSolver loop;
        EvalCounters counters;
        auto ds = derivative_cascade(st, sys, M, 5, 1e-6,
                                     std::vector<Eigen::VectorXd>(6, Eigen::VectorXd(0)), 5,
                                     loop, counters);
        bool ok = true;
        Eigen::VectorXd power = st.x1;
        for (int k = 1; k <= 5; ++k) {
            power = (M.A * power).eval();
            const Eigen::VectorXd expect = power / factorial(k);
            const double rel = (ds.x1.coeffs[static_cast<std::size_t>(k)] - expect)
                                   .cwiseAbs()
                                   .maxCoeff() /
                               expect.cwiseAbs().maxCoeff();
            ok = ok && rel < 1e-12;
        }
        report("PWL cascade exactness", ok);
    }

    // per-step evaluation counts at forced orders
    {
        PvRc pvrc;
        bool ok = true;
        for (int q : {5, 3}) {
            SimulationRun r = pvrc.run;
            r.controller.rel_tol = 1e-6;
            r.controller.abs_tol = 1e-9;
            r.controller.q_min = q;
            r.controller.q_max = q;
            auto [wave, stats] = integrate(r);
            const long expected = (1 + 4 * (q - 1)) * stats.accepted;
            ok = ok && stats.rejected == 0 && stats.f_evals == expected;
        }
        report("per-step cost counts", ok);
    }

    // relative-error metric examples
    {
        Waveform ref, sim;
        ref.time = {0.0, 1.0};
        ref.names = {"y"};
        ref.columns = {{1.0, 1.0}};
        sim = ref;
        sim.columns = {{1.1, 0.9}};
        const double e1 = relative_error(sim, ref, 1e-6);
        Waveform zref = ref, zsim = ref;
        zref.columns = {{0.0, 0.0}};
        zsim.columns = {{1e-7, -1e-7}};
        const double e2 = relative_error(zsim, zref, 1e-6);
        const double e0 = relative_error(ref, ref, 1e-6);
        report("relative-error metric", std::abs(e1 - 0.1) < 1e-12 &&
                                            std::abs(e2 - 0.1) < 1e-12 && e0 == 0.0);
    }

    // model spot checks
    {
        BatteryParams bp;
        std::mt19937 rng(7);
        std::uniform_real_distribution<double> cdist(0.0, 0.9 * bp.q_cap);
        bool ok = true;
        for (int k = 0; k < 100; ++k) {
            const double c = cdist(rng);
            BatteryParams d = bp, ch = bp;
            (void)d;
            (void)ch;
            const double f1 = battery_voltage(bp, c, 1e-30);
            const double f2 = battery_voltage(bp, c, -1e-30);
            ok = ok && std::abs(f1 - f2) < 1e-12 * std::abs(f1);
        }
        PvParams pv;
        const double v_sc = -pv.i_sc0 * pv.r_s * pv.n_cells;  // makes v_d = 0
        ok = ok && std::abs(pv_rate(pv, pv.i_sc0, pv.s_standard, pv.t_ref, v_sc)) < 1e-9;
        MotorParams mp;
        Eigen::Matrix<double, 5, 1> origin = Eigen::Matrix<double, 5, 1>::Zero();
        ok = ok && motor_rates(mp, origin, 0.0, 0.0).cwiseAbs().maxCoeff() == 0.0;
        report("model equilibria and continuity", ok);
    }

    // determinism
    {
        PvRc pvrc;
        SimulationRun r = pvrc.run;
        r.controller.rel_tol = 1e-7;
        auto [w1, s1] = integrate(r);
        auto [w2, s2] = integrate(r);
        bool ok = w1.time == w2.time && s1.accepted == s2.accepted &&
                  s1.f_evals == s2.f_evals;
        for (std::size_t c = 0; ok && c < w1.columns.size(); ++c)
            ok = w1.columns[c] == w2.columns[c];
        report("determinism", ok);
    }

    std::printf("%d check(s) failed\n", failures);
    return failures;
}

}  // namespace pesim
