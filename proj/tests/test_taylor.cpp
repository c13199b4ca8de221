#include <doctest.h>

#include <cmath>
#include <random>

#include "pesim/taylor.hpp"

using namespace pesim;

namespace {

TaylorCoefficients scalar_tc(std::initializer_list<double> cs) {
    TaylorCoefficients tc;
    for (double c : cs) {
        Eigen::VectorXd v(1);
        v << c;
        tc.coeffs.push_back(v);
    }
    return tc;
}

double cost_table(int q) { return 1.0 + 4.0 * (q - 1); }

}  // namespace

TEST_CASE("eval_poly") {
    auto tc = scalar_tc({1.0, 1.0, 0.5});
    CHECK(eval_poly(tc, 0.1, 2)(0) == doctest::Approx(1.105).epsilon(1e-14));
    CHECK(eval_poly(tc, 0.0, 2)(0) == 1.0);

    // x(t) = 1/(1-t): all normalized coefficients are 1
    auto geo = scalar_tc({1, 1, 1, 1, 1});
    CHECK(eval_poly(geo, 0.5, 4)(0) == doctest::Approx(1.9375).epsilon(1e-15));

    CHECK_THROWS_AS(eval_poly(tc, 0.1, 3), SimError);
    CHECK_THROWS_AS(eval_poly(tc, 0.1, -1), SimError);
}

TEST_CASE("advance_state equals the truncated exponential on x' = lambda x") {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> dist(-3.0, 3.0);
    for (int trial = 0; trial < 10; ++trial) {
        const double lam = dist(rng), x0 = dist(rng), h = 0.3;
        TaylorCoefficients tc;
        double c = x0;
        for (int k = 0; k <= 6; ++k) {
            Eigen::VectorXd v(1);
            v << c;
            tc.coeffs.push_back(v);
            c *= lam / (k + 1);
        }
        double expect = 0.0, term = x0;
        for (int k = 0; k <= 5; ++k) {
            expect += term * std::pow(h, k);
            term *= lam / (k + 1);
        }
        CHECK(advance_state(tc, h, 5)(0) == doctest::Approx(expect).epsilon(1e-14));
        CHECK(advance_state(tc, 0.0, 5)(0) == x0);
    }
}

TEST_CASE("advance_state reproduces the harmonic oscillator closed form") {
    // x'' = -x as a 2-state system, exact coefficient recursion c_{k} = A^k x0 / k!
    Eigen::Matrix2d A;
    A << 0, 1, -1, 0;
    TaylorCoefficients tc;
    Eigen::Vector2d x0(1.0, 0.0);
    Eigen::Vector2d p = x0;
    for (int k = 0; k <= 5; ++k) {
        tc.coeffs.push_back(p);
        p = (A * p / (k + 1)).eval();
    }
    const double h = 0.01;
    const Eigen::VectorXd got = advance_state(tc, h, 5);
    CHECK(std::abs(got(0) - std::cos(h)) < 1e-11);
    CHECK(std::abs(got(1) + std::sin(h)) < 1e-11);
}

TEST_CASE("truncation_error") {
    CHECK(truncation_error(2, 2.0, 0.1) == doctest::Approx(1e-3).epsilon(1e-14));
    CHECK(truncation_error(3, 6.0, 0.01) == doctest::Approx(1e-8).epsilon(1e-12));
    CHECK(truncation_error(4, 0.0, 0.1) == 0.0);
    CHECK_THROWS_AS(truncation_error(0, 1.0, 0.1), SimError);
    CHECK_THROWS_AS(truncation_error(2, -1.0, 0.1), SimError);
}

TEST_CASE("select_order_and_step on a linear trajectory returns q_min at the cap") {
    TaylorCoefficients tc = scalar_tc({5.0, 2.0, 0.0, 0.0, 0.0, 0.0});
    StepController ctrl;
    ctrl.rel_tol = 1e-6;
    ctrl.abs_tol = 1e-9;
    auto choice = select_order_and_step(tc, ctrl, cost_table, 0.25);
    CHECK(choice.q == ctrl.q_min);
    CHECK(choice.h_step == 0.25);
}

TEST_CASE("select_order_and_step inverts the truncation error") {
    // Tok = 1e-3, q = 2, ||x^(2)|| = 2, safety = 1 -> h_2 = (1e-3)^(1/3) = 0.1
    StepController ctrl;
    ctrl.abs_tol = 1e-3;
    ctrl.rel_tol = 0.0;
    ctrl.safety = 1.0;
    ctrl.q_min = 2;
    ctrl.q_max = 2;
    TaylorCoefficients tc = scalar_tc({0.0, 0.3, 1.0});  // c2 = 1 -> ||x^(2)|| = 2
    auto choice = select_order_and_step(tc, ctrl, cost_table, 1e9);
    CHECK(choice.q == 2);
    CHECK(choice.h_step == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("selected pair respects the tolerance (exp coefficients)") {
    StepController ctrl;
    ctrl.rel_tol = 0.0;
    ctrl.abs_tol = 1e-9;
    TaylorCoefficients tc;
    for (int k = 0; k <= 5; ++k) {
        Eigen::VectorXd v(1);
        v << 1.0 / factorial(k);  // exp(t) at t0 = 0
        tc.coeffs.push_back(v);
    }
    auto choice = select_order_and_step(tc, ctrl, cost_table, 10.0);
    const double norm_q = factorial(choice.q) *
                          tc.coeffs[static_cast<std::size_t>(choice.q)].cwiseAbs().maxCoeff();
    CHECK(truncation_error(choice.q, norm_q, choice.h_step) <= 1e-9 * (1 + 1e-12));
    CHECK(choice.q >= ctrl.q_min);
    CHECK(choice.q <= ctrl.q_max);
}

TEST_CASE("selected pair respects the tolerance on random coefficient tables") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> mag(-4.0, 2.0);
    StepController ctrl;
    ctrl.rel_tol = 1e-6;
    ctrl.abs_tol = 1e-10;
    for (int trial = 0; trial < 50; ++trial) {
        TaylorCoefficients tc;
        for (int k = 0; k <= 5; ++k) {
            Eigen::VectorXd v(2);
            v << std::pow(10.0, mag(rng)), std::pow(10.0, mag(rng));
            tc.coeffs.push_back(v);
        }
        const double tok = ctrl.tolerance_for(tc.coeffs[0]);
        auto choice = select_order_and_step(tc, ctrl, cost_table, 2.0);
        const double norm_q = factorial(choice.q) *
                              tc.coeffs[static_cast<std::size_t>(choice.q)].cwiseAbs().maxCoeff();
        CHECK(truncation_error(choice.q, norm_q, choice.h_step) <= tok * (1 + 1e-12));
        CHECK(choice.q >= ctrl.q_min);
        CHECK(choice.q <= ctrl.q_max);
    }
}

TEST_CASE("controller validation") {
    StepController bad;
    bad.q_min = 1;
    CHECK_THROWS_AS(bad.validate(), SimError);
    bad = StepController{};
    bad.safety = 1.5;
    CHECK_THROWS_AS(bad.validate(), SimError);
    bad = StepController{};
    bad.h_min = 0.0;
    CHECK_THROWS_AS(bad.validate(), SimError);
}
