#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pesim/stencil.hpp"

using namespace pesim;

namespace {

// independent brute-force solver for the Taylor-moment system (plain Gaussian
// elimination), used as the oracle for generated weights
std::vector<double> brute_force_weights(std::vector<double> nodes, int i) {
    const int n = static_cast<int>(nodes.size());
    std::vector<std::vector<double>> aug(n, std::vector<double>(n + 1, 0.0));
    for (int m = 0; m < n; ++m) {
        double mfac = 1.0;
        for (int k = 2; k <= m; ++k) mfac *= k;
        for (int j = 0; j < n; ++j) aug[m][j] = std::pow(nodes[j], m) / mfac;
        aug[m][n] = (m == i) ? 1.0 : 0.0;
    }
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(aug[r][col]) > std::abs(aug[piv][col])) piv = r;
        std::swap(aug[col], aug[piv]);
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = aug[r][col] / aug[col][col];
            for (int c = col; c <= n; ++c) aug[r][c] -= f * aug[col][c];
        }
    }
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j)
        w[static_cast<std::size_t>(j)] = aug[j][n] / aug[j][j];
    return w;
}

double moment(const StencilOperator& op, int m) {
    double mu = 0.0;
    for (int j = 0; j < op.size(); ++j)
        mu += op.weights[static_cast<std::size_t>(j)] *
              std::pow(op.nodes[static_cast<std::size_t>(j)], m) / factorial(m);
    return mu;
}

}  // namespace

TEST_CASE("classic central differences") {
    auto d1 = generate_weights(std::vector<double>{-1, 0, 1}, 1);
    CHECK(d1.weights[0] == doctest::Approx(-0.5).epsilon(1e-13));
    CHECK(d1.weights[1] == doctest::Approx(0.0).epsilon(1e-13));
    CHECK(d1.weights[2] == doctest::Approx(0.5).epsilon(1e-13));
    CHECK(d1.accuracy_order == 2);

    auto d2 = generate_weights(std::vector<double>{-1, 0, 1}, 2);
    CHECK(d2.weights[0] == doctest::Approx(1.0));
    CHECK(d2.weights[1] == doctest::Approx(-2.0));
    CHECK(d2.weights[2] == doctest::Approx(1.0));
    CHECK(d2.accuracy_order == 2);  // symmetry bonus
}

TEST_CASE("four-node first derivative matches the brute-force moment solve") {
    const std::vector<double> nodes{-1.5, -0.5, 0.5, 1.5};
    auto op = generate_weights(nodes, 1);
    auto oracle = brute_force_weights(nodes, 1);
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(op.weights[j] == doctest::Approx(oracle[j]).epsilon(1e-12));
    // the known closed form
    CHECK(op.weights[0] == doctest::Approx(1.0 / 24));
    CHECK(op.weights[1] == doctest::Approx(-27.0 / 24));
    CHECK(op.weights[2] == doctest::Approx(27.0 / 24));
    CHECK(op.weights[3] == doctest::Approx(-1.0 / 24));
}

TEST_CASE("moment conditions hold through the measured accuracy range") {
    for (int q_max = 3; q_max <= 6; ++q_max)
        for (int i = 0; i < q_max; ++i) {
            const StencilOperator& op = default_stencil(i, q_max);
            CHECK(i + op.accuracy_order >= q_max);
            for (int m = 0; m < op.derivative_order + op.accuracy_order; ++m)
                CHECK(std::abs(moment(op, m) - (m == i ? 1.0 : 0.0)) < 1e-12);
        }
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(generate_weights(std::vector<double>{0.0, 0.0, 1.0}, 1), StencilError);
    CHECK_THROWS_AS(generate_weights(std::vector<double>{-1.0, 1.0}, 2), StencilError);
    CHECK_THROWS_AS(default_stencil(5, 5), StencilError);
    CHECK_THROWS_AS(default_stencil(-1, 5), StencilError);
}

TEST_CASE("identity stencil") {
    const StencilOperator& op = default_stencil(0, 5);
    REQUIRE(op.size() == 1);
    CHECK(op.nodes[0] == 0.0);
    CHECK(op.weights[0] == 1.0);
    Eigen::VectorXd v(2);
    v << 3.0, -4.0;
    std::vector<Eigen::VectorXd> samples{v};
    CHECK((apply_scaled(op, samples) - v).norm() == 0.0);
}

TEST_CASE("default family reuses the center sample and matches the 4-node form") {
    // odd orders have an exactly zero center weight (the 4-node stencil)
    const StencilOperator& d1 = default_stencil(1, 5);
    REQUIRE(d1.size() == 5);
    int center = -1;
    for (int j = 0; j < d1.size(); ++j)
        if (d1.nodes[static_cast<std::size_t>(j)] == 0.0) center = j;
    REQUIRE(center >= 0);
    CHECK(d1.weights[static_cast<std::size_t>(center)] == 0.0);
    CHECK(d1.size() - 1 == 4);  // fresh evaluations per cascade stage
    CHECK(d1.weights[0] == doctest::Approx(1.0 / 24));
    CHECK(d1.weights[1] == doctest::Approx(-27.0 / 24));
    CHECK(d1.weights[3] == doctest::Approx(27.0 / 24));
    CHECK(d1.weights[4] == doctest::Approx(-1.0 / 24));

    // the fourth derivative stays solvable on the same five nodes
    const StencilOperator& d4 = default_stencil(4, 5);
    CHECK(d4.size() == 5);
    CHECK(4 + d4.accuracy_order >= 5);
}

TEST_CASE("apply_scaled on polynomial samples") {
    auto d1 = generate_weights(std::vector<double>{-1, 0, 1}, 1);
    auto d2 = generate_weights(std::vector<double>{-1, 0, 1}, 2);
    const double h = 0.1;
    std::vector<double> lin, quad;
    for (double c : d1.nodes) {
        lin.push_back(c * h);            // u(t) = t
        quad.push_back(c * h * c * h);   // u(t) = t^2
    }
    CHECK(apply_scaled(d1, lin) == doctest::Approx(0.1).epsilon(1e-12));    // h * u'
    CHECK(apply_scaled(d2, quad) == doctest::Approx(0.02).epsilon(1e-12));  // h^2 * u''
}

TEST_CASE("monomial exactness across the accuracy range") {
    for (int i = 1; i <= 4; ++i) {
        const StencilOperator& op = default_stencil(i, 5);
        const double h = 0.37;
        for (int m = 0; m < op.derivative_order + op.accuracy_order; ++m) {
            std::vector<double> samples;
            for (double c : op.nodes) samples.push_back(std::pow(c * h, m));
            // h^i * (d^i/dt^i t^m)|0 is m! h^i when m == i, else 0
            const double expect = (m == i) ? factorial(m) * std::pow(h, i) : 0.0;
            const double scale = std::max(1.0, std::abs(expect));
            CHECK(std::abs(apply_scaled(op, samples) - expect) < 1e-11 * scale);
        }
    }
}

TEST_CASE("convergence order on exp(t)") {
    for (int i : {1, 2, 3}) {
        const StencilOperator& op = default_stencil(i, 5);
        std::vector<double> errs;
        for (int k = 0; k < 4; ++k) {
            const double h = 1e-1 * std::pow(0.5, k);
            std::vector<double> samples;
            for (double c : op.nodes) samples.push_back(std::exp(c * h));
            errs.push_back(std::abs(apply_scaled(op, samples) / std::pow(h, i) - 1.0));
        }
        double sum = 0.0;
        int n = 0;
        for (std::size_t k = 0; k + 1 < errs.size(); ++k)
            if (errs[k] > 1e-9 && errs[k + 1] > 1e-9) {
                sum += std::log2(errs[k] / errs[k + 1]);
                ++n;
            }
        REQUIRE(n > 0);
        CHECK(sum / n >= op.accuracy_order - 0.3);
    }
}

TEST_CASE("linearity of apply_scaled") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    const StencilOperator& op = default_stencil(2, 5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Eigen::VectorXd> f, g, mix;
        const double a = dist(rng), b = dist(rng);
        for (int j = 0; j < op.size(); ++j) {
            Eigen::VectorXd fv(3), gv(3);
            for (int r = 0; r < 3; ++r) {
                fv(r) = dist(rng);
                gv(r) = dist(rng);
            }
            f.push_back(fv);
            g.push_back(gv);
            mix.push_back(a * fv + b * gv);
        }
        const Eigen::VectorXd lhs = apply_scaled(op, mix);
        const Eigen::VectorXd rhs = a * apply_scaled(op, f) + b * apply_scaled(op, g);
        CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12 * (1.0 + rhs.cwiseAbs().maxCoeff()));
    }
}
