#include "pesim/models.hpp"

#include <cmath>

namespace pesim {

void PvParams::validate() const {
    if (!(t_d > 0.0)) throw SimError("PV t_d must be positive");
    if (!(r_s > 0.0) || !(r_sh > 0.0)) throw SimError("PV R_s and R_sh must be positive");
    if (!(n_cells >= 1.0)) throw SimError("PV needs at least one cell");
}

double pv_diode_voltage(const PvParams& p, double i_m, double v_port) {
    const double r_par = p.r_s * p.r_sh / (p.r_s + p.r_sh);
    return r_par * i_m + v_port * p.r_sh / (p.n_cells * (p.r_s + p.r_sh));
}

double pv_rate(const PvParams& p, double i_m, double s, double t_kelvin, double v_port,
               bool* saturated) {
    if (saturated) *saturated = false;
    if (!(t_kelvin > 0.0)) throw SimError("PV temperature must be positive");

    const double v_d = pv_diode_voltage(p, i_m, v_port);
    auto clamp_exp_arg = [&](double a) {
        if (a > 500.0) {
            if (saturated) *saturated = true;
            return 500.0;
        }
        return a;
    };
    const double band_arg =
        clamp_exp_arg((p.q_e * p.e_g / (p.ideality * p.k_b)) * (1.0 / p.t_ref - 1.0 / t_kelvin));
    const double diode_arg = clamp_exp_arg(p.q_e * v_d / (p.ideality * p.k_b * t_kelvin));
    const double ratio = t_kelvin / p.t_ref;
    const double diode_current =
        p.i_s0 * ratio * ratio * ratio * std::exp(band_arg) * std::expm1(diode_arg);
    return (p.i_sc0 * (s / p.s_standard) + p.c_t * (t_kelvin - p.t_ref) - diode_current -
            i_m) /
           p.t_d;
}

void BatteryParams::validate() const {
    if (!(q_cap > 0.0)) throw SimError("battery capacity must be positive");
    if (!(t_lp > 0.0)) throw SimError("battery current filter time constant must be positive");
}

double battery_voltage(const BatteryParams& p, double c, double i_star) {
    if (c < 0.0 || c > 0.95 * p.q_cap)
        throw SimError("battery capacity state outside the model validity band");
    const double common =
        p.e0 - p.k_pol * p.q_cap / (p.q_cap - c) * c + p.a_exp * std::exp(-p.b_exp * c);
    if (i_star > 0.0)  // discharge
        return common - p.k_pol * p.q_cap / (p.q_cap - c) * i_star;
    if (i_star < 0.0)  // charge
        return common - p.k_pol * p.q_cap / (0.1 * p.q_cap + c) * i_star;
    return common;
}

BatteryRates battery_fg(const BatteryParams& p, double c, double i_star, double i_out) {
    BatteryRates r;
    r.dc_dt = i_out;
    r.distar_dt = p.verbatim_sign ? (i_star - i_out) / p.t_lp : (i_out - i_star) / p.t_lp;
    r.e_batt = battery_voltage(p, c, i_star);
    return r;
}

void MotorParams::validate() const {
    if (!(r_s > 0.0) || !(r_r > 0.0)) throw SimError("motor resistances must be positive");
    if (!(l_m > 0.0) || !(l_s > 0.0) || !(l_r > 0.0))
        throw SimError("motor inductances must be positive");
    if (!(inertia > 0.0)) throw SimError("motor inertia must be positive");
    const double sigma = leakage();
    if (!(sigma > 0.0 && sigma < 1.0))
        throw SimError("motor leakage coefficient must lie in (0,1)");
}

Eigen::Matrix<double, 5, 1> motor_rates(const MotorParams& p,
                                        const Eigen::Matrix<double, 5, 1>& x,
                                        double u_sd, double u_sq) {
    const double i_sd = x(0), i_sq = x(1), psi_rd = x(2), psi_rq = x(3), w2 = x(4);
    const double t_r = p.rotor_time_constant();
    const double sigma = p.leakage();
    const double k_flux = p.l_m / (sigma * p.l_s * p.l_r * t_r);
    const double k_speed = p.l_m / (sigma * p.l_s * p.l_r);
    const double k_stator =
        (p.r_s * p.l_r * p.l_r + p.r_r * p.l_s * p.l_s) / (sigma * p.l_s * p.l_r * p.l_r);
    const double k_input = 1.0 / (sigma * p.l_s);

    Eigen::Matrix<double, 5, 1> dx;
    dx(0) = k_flux * psi_rd + k_speed * w2 * psi_rq - k_stator * i_sd + k_input * u_sd;
    dx(1) = k_flux * psi_rq - k_speed * w2 * psi_rd - k_stator * i_sq + k_input * u_sq;
    dx(2) = -psi_rd / t_r - w2 * psi_rq + (p.l_m / t_r) * i_sd;
    dx(3) = -psi_rq / t_r + w2 * psi_rd + (p.l_m / t_r) * i_sq;
    dx(4) = p.torque_sign * (p.pole_pairs * p.pole_pairs * p.l_m / (p.inertia * p.l_r)) *
                (i_sq * psi_rd - i_sd * psi_rq) -
            (p.pole_pairs / p.inertia) * p.load_torque;
    return dx;
}

std::array<double, 2> clarke(const std::array<double, 3>& abc) {
    return {(2.0 * abc[0] - abc[1] - abc[2]) / 3.0,
            (abc[1] - abc[2]) / 1.7320508075688772935};
}

std::array<double, 3> clarke_inverse(const std::array<double, 2>& ab) {
    const double half_sqrt3 = 0.86602540378443864676;
    return {ab[0], -0.5 * ab[0] + half_sqrt3 * ab[1], -0.5 * ab[0] - half_sqrt3 * ab[1]};
}

NonlinearBlock make_pv_block(const PvParams& params) {
    params.validate();
    NonlinearBlock b;
    b.n_states = 1;
    b.n_inputs = 3;  // V, S, T
    b.n_outputs = 1; // I_m
    b.depends_on_input = false;  // output is the state itself
    b.f = [params](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        Eigen::VectorXd dx(1);
        dx(0) = pv_rate(params, x(0), u(1), u(2), u(0));
        return dx;
    };
    b.g = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
        Eigen::VectorXd y(1);
        y(0) = x(0);
        return y;
    };
    return b;
}

NonlinearBlock make_battery_block(const BatteryParams& params) {
    params.validate();
    NonlinearBlock b;
    b.n_states = 2;  // c, i*
    b.n_inputs = 1;  // i_out
    b.n_outputs = 1; // E_Batt
    b.depends_on_input = false;
    b.f = [params](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        const BatteryRates r = battery_fg(params, x(0), x(1), u(0));
        Eigen::VectorXd dx(2);
        dx << r.dc_dt, r.distar_dt;
        return dx;
    };
    b.g = [params](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
        Eigen::VectorXd y(1);
        y(0) = battery_voltage(params, x(0), x(1));
        return y;
    };
    return b;
}

NonlinearBlock make_motor_block(const MotorParams& params) {
    params.validate();
    NonlinearBlock b;
    b.n_states = 5;
    b.n_inputs = 3;  // phase voltages
    b.n_outputs = 3; // phase currents
    b.depends_on_input = false;
    b.f = [params](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        const auto ab = clarke({u(0), u(1), u(2)});
        Eigen::Matrix<double, 5, 1> xs = x;
        Eigen::VectorXd dx = motor_rates(params, xs, ab[0], ab[1]);
        return dx;
    };
    b.g = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
        const auto abc = clarke_inverse({x(0), x(1)});
        Eigen::VectorXd y(3);
        y << abc[0], abc[1], abc[2];
        return y;
    };
    return b;
}

}  // namespace pesim
