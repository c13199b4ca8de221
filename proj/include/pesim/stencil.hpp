#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pesim/common.hpp"

namespace pesim {

/// Central finite-difference operator: dimensionless nodes c_j and weights w_j
/// such that  sum_j w_j * u(t0 + c_j*h)  ~=  h^i * u^(i)(t0).
struct StencilOperator {
    int derivative_order = 0;      ///< i
    std::vector<double> nodes;     ///< sample offsets c_j (distinct)
    std::vector<double> weights;   ///< dimensionless weights w_j
    int accuracy_order = 0;        ///< measured p: moment conditions hold for m < i + p

    int size() const { return static_cast<int>(nodes.size()); }
};

/// Solve the Taylor-moment system  sum_j w_j c_j^m / m! = delta(m,i),
/// m = 0..n-1, for arbitrary distinct nodes. accuracy_order is measured by a
/// monomial exactness sweep, not assumed (symmetry bonuses depend on parity).
/// Throws StencilError on duplicate nodes or derivative_order >= node count.
StencilOperator generate_weights(std::span<const double> nodes, int derivative_order);

/// Stencil used by the derivative cascade at stage i for a given q_max.
/// i = 0 is the single-node identity operator. i >= 1 uses the symmetric
/// family {0, +-1/2, +-3/2, ...}: the center sample is free inside the cascade
/// (the stage-0 value), so fresh evaluations per stage are size()-1 = 4 with
/// the default width, and the measured scaled accuracy i + p >= q_max.
/// Results are cached; returned references stay valid for program lifetime.
const StencilOperator& default_stencil(int derivative_order, int q_max);

/// Apply the operator to one sample vector per node:
/// returns sum_j w_j * samples[j], the estimate of h^i * f^(i)(t0).
/// Throws SimError on a count/dimension mismatch.
Eigen::VectorXd apply_scaled(const StencilOperator& op,
                             std::span<const Eigen::VectorXd> samples);

/// Scalar convenience overload.
double apply_scaled(const StencilOperator& op, std::span<const double> samples);

}  // namespace pesim
