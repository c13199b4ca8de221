#pragma once

#include <array>

#include "pesim/hybrid.hpp"

namespace pesim {

/// Single-diode PV array with a lagged controlled current source. State: I_m.
/// Inputs: S (W/m^2), T (K), V (port voltage). Output: I_m.
struct PvParams {
    double n_cells = 36;        // N_s
    double s_standard = 1000.0; // S_0, W/m^2
    double t_ref = 298.15;      // K
    double r_s = 0.01;          // Ohm per cell
    double r_sh = 100.0;        // Ohm per cell
    double i_s0 = 1e-9;         // A, diode saturation current at t_ref
    double i_sc0 = 5.0;         // A, short-circuit current at standard conditions
    double e_g = 1.12;          // eV, band energy
    double ideality = 1.3;      // A (emission coefficient)
    double c_t = 1e-3;          // A/K, temperature coefficient
    double k_s = 0.0;           // listed by the model, not used by any equation
    double t_d = 1e-4;          // s, current-source lag
    double q_e = 1.602176634e-19;  // C
    double k_b = 1.380649e-23;     // J/K

    void validate() const;
};

/// dI_m/dt of the PV array. Throws SimError for T <= 0; exponent arguments
/// are clamped at 500 and `saturated`, when given, reports the clamp.
double pv_rate(const PvParams& p, double i_m, double s, double t_kelvin, double v_port,
               bool* saturated = nullptr);

/// Per-cell diode voltage used inside pv_rate.
double pv_diode_voltage(const PvParams& p, double i_m, double v_port);

/// Polarization battery with low-pass filtered current. States: c (extracted
/// capacity, Ah-equivalent in coulomb-consistent units), i* (filtered
/// current). Input: i_out (A, discharge positive). Output: E_Batt (V).
struct BatteryParams {
    double e0 = 12.0;    // V
    double k_pol = 0.01; // polarization constant
    double q_cap = 10.0; // capacity
    double a_exp = 1.0;  // V, exponential voltage
    double b_exp = 0.5;  // 1/capacity, exponential coefficient
    double t_lp = 0.02;  // s, low-pass time constant of i*
    bool verbatim_sign = false;  // keep the printed (i* - i_out)/T filter

    void validate() const;
};

struct BatteryRates {
    double dc_dt = 0.0;
    double distar_dt = 0.0;
    double e_batt = 0.0;
};

/// Battery state derivatives and output voltage. Throws SimError when c is
/// outside [0, 0.95 Q] (model validity band).
BatteryRates battery_fg(const BatteryParams& p, double c, double i_star, double i_out);

/// Output voltage alone (the f1/f2 branch on the sign of i*).
double battery_voltage(const BatteryParams& p, double c, double i_star);

/// Squirrel-cage induction motor in the stationary two-axis frame.
/// States: i_sd, i_sq, psi_rd, psi_rq, omega2. Inputs: u_sd, u_sq.
struct MotorParams {
    double r_s = 1.5;     // Ohm
    double r_r = 1.2;     // Ohm
    double l_m = 0.23;    // H
    double l_s = 0.24;    // H
    double l_r = 0.24;    // H
    double pole_pairs = 2.0;
    double inertia = 0.02;   // kg m^2
    double load_torque = 0.0;
    double torque_sign = 1.0;  // -1 reproduces the printed rotor equation sign

    double rotor_time_constant() const { return l_r / r_r; }
    double leakage() const { return (l_s * l_r - l_m * l_m) / (l_s * l_r); }
    void validate() const;
};

/// The five motor state equations.
Eigen::Matrix<double, 5, 1> motor_rates(const MotorParams& p,
                                        const Eigen::Matrix<double, 5, 1>& state,
                                        double u_sd, double u_sq);

/// Amplitude-invariant Clarke transform and its balanced inverse.
std::array<double, 2> clarke(const std::array<double, 3>& abc);
std::array<double, 3> clarke_inverse(const std::array<double, 2>& alpha_beta);

// NonlinearBlock adapters used by the scenario layer. Input/output slot
// orders: PV (V, S, T) -> (I); battery (i_out) -> (E); motor
// (u_a, u_b, u_c) -> (i_a, i_b, i_c) through the Clarke transform.
NonlinearBlock make_pv_block(const PvParams& p);
NonlinearBlock make_battery_block(const BatteryParams& p);
NonlinearBlock make_motor_block(const MotorParams& p);

}  // namespace pesim
