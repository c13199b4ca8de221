#include "pesim/stencil.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>

namespace pesim {

double factorial(int k) {
    static const std::array<double, 171> table = [] {
        std::array<double, 171> t{};
        t[0] = 1.0;
        for (int i = 1; i <= 170; ++i) t[i] = t[i - 1] * i;
        return t;
    }();
    if (k < 0 || k > 170) throw SimError("factorial argument out of range");
    return table[static_cast<std::size_t>(k)];
}

namespace {

// First m >= n at which the moment condition sum w c^m/m! = delta(m,i) fails,
// relative to the magnitude of the summands. Capped so the identity stencil
// (exact at every order) terminates.
int measure_accuracy(const std::vector<double>& nodes, const std::vector<double>& w, int i) {
    const int n = static_cast<int>(nodes.size());
    const int m_cap = i + 20;
    for (int m = n; m <= m_cap; ++m) {
        double mu = 0.0, mag = 0.0;
        for (int j = 0; j < n; ++j) {
            const double term = w[j] * std::pow(nodes[j], m) / factorial(m);
            mu += term;
            mag += std::abs(term);
        }
        if (std::abs(mu) > 1e-9 * std::max(1.0, mag)) return m - i;
    }
    return m_cap + 1 - i;
}

}  // namespace

StencilOperator generate_weights(std::span<const double> nodes, int derivative_order) {
    const int n = static_cast<int>(nodes.size());
    if (derivative_order < 0) throw StencilError("derivative order must be non-negative");
    if (derivative_order >= n)
        throw StencilError("stencil needs more nodes than the derivative order (got " +
                           std::to_string(n) + " nodes for order " +
                           std::to_string(derivative_order) + ")");
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b)
            if (nodes[a] == nodes[b])
                throw StencilError("duplicate stencil node " + std::to_string(nodes[a]));

    Eigen::MatrixXd V(n, n);
    for (int m = 0; m < n; ++m)
        for (int j = 0; j < n; ++j) V(m, j) = std::pow(nodes[j], m) / factorial(m);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs(derivative_order) = 1.0;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(V);
    if (!lu.isInvertible()) throw StencilError("singular moment system");
    Eigen::VectorXd w = lu.solve(rhs);

    StencilOperator op;
    op.derivative_order = derivative_order;
    op.nodes.assign(nodes.begin(), nodes.end());
    op.weights.assign(w.data(), w.data() + n);
    // snap tiny weights produced by symmetric cancellation to exact zero
    const double wmax = w.cwiseAbs().maxCoeff();
    for (double& wj : op.weights)
        if (std::abs(wj) < 1e-13 * wmax) wj = 0.0;
    op.accuracy_order = measure_accuracy(op.nodes, op.weights, derivative_order);
    return op;
}

const StencilOperator& default_stencil(int derivative_order, int q_max) {
    if (derivative_order < 0 || derivative_order > q_max - 1)
        throw StencilError("default stencil order " + std::to_string(derivative_order) +
                           " out of range for q_max " + std::to_string(q_max));

    static std::mutex mtx;
    static std::map<std::pair<int, int>, StencilOperator> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto key = std::make_pair(derivative_order, q_max);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    StencilOperator op;
    if (derivative_order == 0) {
        op.derivative_order = 0;
        op.nodes = {0.0};
        op.weights = {1.0};
        op.accuracy_order = measure_accuracy(op.nodes, op.weights, 0);
    } else {
        // widen by half-integer pairs until the scaled truncation order
        // i + p reaches q_max; 2 pairs (4 fresh samples) suffice for q_max <= 6
        for (int pairs = 2;; ++pairs) {
            std::vector<double> nodes{0.0};
            for (int j = 1; j <= pairs; ++j) {
                nodes.push_back(-(2.0 * j - 1.0) / 2.0);
                nodes.push_back(+(2.0 * j - 1.0) / 2.0);
            }
            std::sort(nodes.begin(), nodes.end());
            if (derivative_order >= static_cast<int>(nodes.size())) continue;
            op = generate_weights(nodes, derivative_order);
            if (derivative_order + op.accuracy_order >= q_max) break;
            if (pairs > 16) throw StencilError("stencil widening failed to converge");
        }
    }
    return cache.emplace(key, std::move(op)).first->second;
}

Eigen::VectorXd apply_scaled(const StencilOperator& op,
                             std::span<const Eigen::VectorXd> samples) {
    if (static_cast<int>(samples.size()) != op.size())
        throw SimError("stencil expects one sample per node");
    const Eigen::Index dim = samples[0].size();
    for (const auto& s : samples)
        if (s.size() != dim) throw SimError("stencil samples have mismatched dimensions");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
    for (int j = 0; j < op.size(); ++j)
        if (op.weights[j] != 0.0) acc += op.weights[j] * samples[j];
    return acc;
}

double apply_scaled(const StencilOperator& op, std::span<const double> samples) {
    if (static_cast<int>(samples.size()) != op.size())
        throw SimError("stencil expects one sample per node");
    double acc = 0.0;
    for (int j = 0; j < op.size(); ++j) acc += op.weights[j] * samples[j];
    return acc;
}

}  // namespace pesim
