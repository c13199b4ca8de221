#include <doctest.h>

#include <cmath>
#include <random>

#include "pesim/sources.hpp"

using namespace pesim;

namespace {
constexpr double kPi = 3.14159265358979323846;
}

TEST_CASE("dc derivatives") {
    SourceWaveform s;
    s.kind = SourceWaveform::Kind::Dc;
    s.value = 5.0;
    std::vector<double> c;
    source_derivatives(s, 1.7, 3, c);
    CHECK(c == std::vector<double>{5.0, 0.0, 0.0, 0.0});
}

TEST_CASE("sine derivatives at omega = 1") {
    SourceWaveform s;
    s.kind = SourceWaveform::Kind::Sine;
    s.tones.push_back({1.0, 1.0 / (2.0 * kPi), 0.0});  // omega = 1
    std::vector<double> c;
    source_derivatives(s, 0.0, 2, c);
    CHECK(c[0] == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(c[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(c[2]) < 1e-12);
}

TEST_CASE("harmonic stack is the sum of single tones") {
    SourceWaveform both;
    both.kind = SourceWaveform::Kind::Sine;
    both.tones.push_back({2.0, 50.0, 0.3});
    both.tones.push_back({0.5, 150.0, -1.0});
    SourceWaveform first = both, third = both;
    first.tones = {both.tones[0]};
    third.tones = {both.tones[1]};
    std::vector<double> cb, c1, c3;
    const double t = 0.0123;
    source_derivatives(both, t, 5, cb);
    source_derivatives(first, t, 5, c1);
    source_derivatives(third, t, 5, c3);
    for (int k = 0; k <= 5; ++k)
        CHECK(cb[static_cast<std::size_t>(k)] ==
              doctest::Approx(c1[static_cast<std::size_t>(k)] +
                              c3[static_cast<std::size_t>(k)])
                  .epsilon(1e-12));
}

TEST_CASE("sine satisfies its own second-order identity") {
    // second-derivative coefficient = -(2 pi f)^2 * value coefficient / 2
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> tdist(-1.0, 1.0);
    SourceWaveform s;
    s.kind = SourceWaveform::Kind::Sine;
    s.tones.push_back({3.0, 60.0, 0.7});
    const double w = 2.0 * kPi * 60.0;
    for (int trial = 0; trial < 25; ++trial) {
        const double t = tdist(rng);
        std::vector<double> c;
        source_derivatives(s, t, 2, c);
        CHECK(c[2] == doctest::Approx(-w * w * c[0] / 2.0).epsilon(1e-10));
    }
}

TEST_CASE("step sources evaluate one-sided and reject the boundary") {
    SourceWaveform s;
    s.kind = SourceWaveform::Kind::Step;
    s.before = 1.0;
    s.after = 2.0;
    s.step_time = 0.5;
    CHECK(source_value(s, 0.4) == 1.0);
    CHECK(source_value(s, 0.6) == 2.0);
    CHECK(source_value(s, 0.5, Side::Right) == 2.0);
    CHECK(source_value(s, 0.5, Side::Left) == 1.0);
    std::vector<double> c;
    CHECK_THROWS_AS(source_derivatives(s, 0.5, 2, c), EventBoundaryError);
    source_derivatives(s, 0.25, 2, c);  // open interval: plain dc
    CHECK(c == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("source bank breakpoints") {
    SourceBank bank;
    SourceWaveform s;
    s.kind = SourceWaveform::Kind::Step;
    s.step_time = 0.3;
    bank.add(s);
    s.step_time = 0.9;
    bank.add(s);
    auto b = bank.breakpoints(0.0, 1.0);
    CHECK(b == std::vector<double>{0.3, 0.9});
    CHECK(bank.breakpoints(0.4, 0.8).empty());
}

TEST_CASE("pwm event times, constant duty") {
    auto sched = pwm_schedule(10e3, [](double) { return 0.25; }, 0.0, 200e-6, 0, 1);
    REQUIRE(sched.events.size() == 4);
    CHECK(sched.events[0].time == doctest::Approx(0.0));
    CHECK(sched.events[1].time == doctest::Approx(25e-6));
    CHECK(sched.events[2].time == doctest::Approx(100e-6));
    CHECK(sched.events[3].time == doctest::Approx(125e-6));
    // close main/open complement, then the reverse
    CHECK(sched.events[0].set_mask == 0b01);
    CHECK(sched.events[0].clear_mask == 0b10);
    CHECK(sched.events[1].set_mask == 0b10);
    CHECK(sched.events[1].clear_mask == 0b01);
}

TEST_CASE("pwm degenerate duties") {
    auto none = pwm_schedule(10e3, [](double) { return 0.0; }, 0.0, 1e-3, 0);
    CHECK(none.events.empty());
    auto full = pwm_schedule(10e3, [](double) { return 1.0; }, 0.0, 3e-4, 0);
    // on-events only, one per period
    CHECK(full.events.size() == 3);
    for (const auto& e : full.events) CHECK(e.set_mask == 1);
    CHECK_THROWS_AS(pwm_schedule(10e3, [](double) { return 1.2; }, 0.0, 1e-3, 0),
                    SimError);
}

TEST_CASE("sinusoidally modulated pwm matches a brute-force sampler") {
    const double f = 2e3, t_end = 5e-3;
    auto duty = [](double t) { return 0.5 + 0.4 * std::sin(2.0 * kPi * 50.0 * t); };
    auto sched = pwm_schedule(f, duty, 0.0, t_end, 3);

    // independent per-period sampling
    std::vector<double> expect;
    const double period = 1.0 / f;
    for (int k = 0; k * period < t_end; ++k) {
        const double t_on = k * period;
        const double d = duty(t_on);
        expect.push_back(t_on);
        if (d < 1.0 && t_on + d * period < t_end) expect.push_back(t_on + d * period);
    }
    REQUIRE(sched.events.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(sched.events[i].time == doctest::Approx(expect[i]).epsilon(1e-14));
}

TEST_CASE("schedules merge simultaneous gate changes and stay sorted") {
    EventSchedule sched;
    sched.events.push_back({2e-3, 0b001, 0});
    sched.events.push_back({1e-3, 0b010, 0});
    sched.events.push_back({2e-3, 0b100, 0b010});
    sched.normalize();
    REQUIRE(sched.events.size() == 2);
    CHECK(sched.events[0].time == 1e-3);
    CHECK(sched.events[1].set_mask == 0b101);
    CHECK(sched.events[1].clear_mask == 0b010);
    for (std::size_t i = 1; i < sched.events.size(); ++i)
        CHECK(sched.events[i].time > sched.events[i - 1].time);

    EventSchedule bad;
    bad.events.push_back({1e-3, 0b1, 0});
    bad.events.push_back({1e-3, 0, 0b1});
    CHECK_THROWS_AS(bad.normalize(), SimError);
}
