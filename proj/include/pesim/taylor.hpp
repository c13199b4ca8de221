#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "pesim/common.hpp"

namespace pesim {

/// Normalized Taylor coefficients of a vector trajectory at t0:
/// coeffs[k] = x^(k)(t0) / k!, k = 0..order.
struct TaylorCoefficients {
    double t0 = 0.0;
    std::vector<Eigen::VectorXd> coeffs;

    int order() const { return static_cast<int>(coeffs.size()) - 1; }
    Eigen::Index dim() const { return coeffs.empty() ? 0 : coeffs.front().size(); }
};

/// Tolerances and order/step bounds of the flexible integrator.
struct StepController {
    double rel_tol = 1e-6;
    double abs_tol = 1e-9;
    int q_min = 2;      // first-order stepping is impractical, see diff-step choice
    int q_max = 5;
    double safety = 0.8;
    double h_min = 1e-15;
    double h_max = 1e3;

    void validate() const;

    /// Mixed per-step error tolerance Tok = abs_tol + rel_tol * ||x||_inf.
    double tolerance_for(const Eigen::VectorXd& x) const;
    double tolerance_for(double state_norm_inf) const;
};

/// Horner evaluation of sum_{k<=up_to} coeffs[k] * dt^k.
Eigen::VectorXd eval_poly(const TaylorCoefficients& tc, double dt, int up_to);

/// Derivative of the truncated polynomial: sum_{1<=k<=up_to} k*coeffs[k]*dt^(k-1).
Eigen::VectorXd eval_poly_derivative(const TaylorCoefficients& tc, double dt, int up_to);

/// Taylor step: x(t0 + h_step) truncated at order q (identical to eval_poly).
Eigen::VectorXd advance_state(const TaylorCoefficients& tc, double h_step, int q);

/// Truncation-error estimate of a q-th order step,
/// e = (norm_xq / q!)^((q+1)/q) * h_step^(q+1); zero when norm_xq is zero.
double truncation_error(int q, double norm_xq, double h_step);

/// Largest step meeting tolerance Tok at order q, before the safety factor:
/// the inversion of the truncation-error formula. norm_cq = ||x^(q)||_inf / q!.
/// Returns +inf when norm_cq == 0.
double max_step_for_order(int q, double norm_cq, double tok);

struct OrderStepChoice {
    int q = 0;
    double h_step = 0.0;
};

/// Scan q in [q_min, q_max]; per order, h_q = safety * Tok^(1/(q+1)) *
/// (q!/||x^(q)||)^(1/q) clipped to [h_min, h_cap]; return the q maximizing
/// h_q / cost_per_order(q) (ties to the lower order). Requires tc.order >=
/// ctrl.q_max. Throws BlowupError when every derivative norm is non-finite.
OrderStepChoice select_order_and_step(const TaylorCoefficients& tc,
                                      const StepController& ctrl,
                                      const std::function<double(int)>& cost_per_order,
                                      double h_cap);

}  // namespace pesim
