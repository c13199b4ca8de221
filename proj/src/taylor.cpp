#include "pesim/taylor.hpp"

#include <cmath>
#include <limits>

namespace pesim {

void StepController::validate() const {
    if (q_min < 2 || q_min > q_max) throw SimError("require 2 <= q_min <= q_max");
    if (safety <= 0.0 || safety > 1.0) throw SimError("require 0 < safety <= 1");
    if (h_min <= 0.0 || h_min > h_max) throw SimError("require 0 < h_min <= h_max");
    if (rel_tol < 0.0 || abs_tol < 0.0 || (rel_tol == 0.0 && abs_tol == 0.0))
        throw SimError("tolerances must be non-negative and not both zero");
}

double StepController::tolerance_for(double state_norm_inf) const {
    return abs_tol + rel_tol * state_norm_inf;
}

double StepController::tolerance_for(const Eigen::VectorXd& x) const {
    return tolerance_for(x.size() ? x.cwiseAbs().maxCoeff() : 0.0);
}

Eigen::VectorXd eval_poly(const TaylorCoefficients& tc, double dt, int up_to) {
    if (up_to < 0 || up_to > tc.order()) throw SimError("eval_poly order out of range");
    if (!std::isfinite(dt)) throw SimError("eval_poly requires finite dt");
    Eigen::VectorXd acc = tc.coeffs[static_cast<std::size_t>(up_to)];
    for (int k = up_to - 1; k >= 0; --k)
        acc = tc.coeffs[static_cast<std::size_t>(k)] + dt * acc;
    return acc;
}

Eigen::VectorXd eval_poly_derivative(const TaylorCoefficients& tc, double dt, int up_to) {
    if (up_to < 0 || up_to > tc.order()) throw SimError("eval_poly order out of range");
    if (up_to == 0) return Eigen::VectorXd::Zero(tc.dim());
    Eigen::VectorXd acc = up_to * tc.coeffs[static_cast<std::size_t>(up_to)];
    for (int k = up_to - 1; k >= 1; --k)
        acc = k * tc.coeffs[static_cast<std::size_t>(k)] + dt * acc;
    return acc;
}

Eigen::VectorXd advance_state(const TaylorCoefficients& tc, double h_step, int q) {
    return eval_poly(tc, h_step, q);
}

double truncation_error(int q, double norm_xq, double h_step) {
    if (q < 1) throw SimError("truncation_error requires q >= 1");
    if (norm_xq < 0.0) throw SimError("truncation_error requires a non-negative norm");
    if (norm_xq == 0.0) return 0.0;
    const double base = norm_xq / factorial(q);
    return std::pow(base, (q + 1.0) / q) * std::pow(h_step, q + 1.0);
}

double max_step_for_order(int q, double norm_cq, double tok) {
    if (norm_cq == 0.0) return std::numeric_limits<double>::infinity();
    // invert e = norm_cq^((q+1)/q) * h^(q+1) <= tok
    return std::pow(tok, 1.0 / (q + 1.0)) * std::pow(norm_cq, -1.0 / q);
}

OrderStepChoice select_order_and_step(const TaylorCoefficients& tc,
                                      const StepController& ctrl,
                                      const std::function<double(int)>& cost_per_order,
                                      double h_cap) {
    ctrl.validate();
    if (tc.order() < ctrl.q_max)
        throw SimError("select_order_and_step needs coefficients up to q_max");
    if (!(h_cap > 0.0)) throw SimError("select_order_and_step requires h_cap > 0");

    const double tok = ctrl.tolerance_for(tc.coeffs[0]);

    OrderStepChoice best;
    double best_score = -1.0;
    bool any_finite = false;
    for (int q = ctrl.q_min; q <= ctrl.q_max; ++q) {
        const double norm_cq = tc.coeffs[static_cast<std::size_t>(q)].size()
                                   ? tc.coeffs[static_cast<std::size_t>(q)].cwiseAbs().maxCoeff()
                                   : 0.0;
        if (!std::isfinite(norm_cq)) continue;
        any_finite = true;
        double h_q = ctrl.safety * max_step_for_order(q, norm_cq, tok);
        h_q = std::min(h_q, h_cap);
        h_q = std::max(h_q, ctrl.h_min);
        const double score = h_q / cost_per_order(q);
        if (score > best_score) {
            best_score = score;
            best = {q, h_q};
        }
    }
    if (!any_finite) throw BlowupError("all derivative norms non-finite in order selection");
    return best;
}

}  // namespace pesim
