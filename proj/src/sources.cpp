#include "pesim/sources.hpp"

#include <algorithm>
#include <cmath>

namespace pesim {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

void SourceWaveform::validate() const {
    if (kind == Kind::Sine) {
        for (const auto& tone : tones)
            if (!(tone.frequency_hz > 0.0))
                throw SimError("sine source '" + name + "' needs frequency > 0");
    }
}

double source_value(const SourceWaveform& s, double t, Side side) {
    switch (s.kind) {
        case SourceWaveform::Kind::Dc:
            return s.value;
        case SourceWaveform::Kind::Sine: {
            double v = s.offset;
            for (const auto& tone : s.tones)
                v += tone.amplitude * std::sin(kTwoPi * tone.frequency_hz * t + tone.phase_rad);
            return v;
        }
        case SourceWaveform::Kind::Step:
            if (t < s.step_time) return s.before;
            if (t > s.step_time) return s.after;
            return side == Side::Right ? s.after : s.before;
    }
    throw SimError("unreachable source kind");
}

void source_derivatives(const SourceWaveform& s, double t, int order,
                        std::vector<double>& out, Side side, bool check_boundary) {
    out.assign(static_cast<std::size_t>(order) + 1, 0.0);
    switch (s.kind) {
        case SourceWaveform::Kind::Dc:
            out[0] = s.value;
            return;
        case SourceWaveform::Kind::Sine: {
            out[0] = s.offset;
            for (const auto& tone : s.tones) {
                const double omega = kTwoPi * tone.frequency_hz;
                const double arg = omega * t + tone.phase_rad;
                double omega_k = 1.0;
                for (int k = 0; k <= order; ++k) {
                    // d^k/dt^k A sin(wt+phi) = A w^k sin(wt+phi+k*pi/2)
                    out[static_cast<std::size_t>(k)] +=
                        tone.amplitude * omega_k *
                        std::sin(arg + k * 1.5707963267948966) / factorial(k);
                    omega_k *= omega;
                }
            }
            return;
        }
        case SourceWaveform::Kind::Step:
            if (check_boundary && t == s.step_time)
                throw EventBoundaryError("source '" + s.name +
                                         "' evaluated exactly at its step discontinuity");
            out[0] = source_value(s, t, side);
            return;
    }
}

void source_derivatives(const SourceWaveform& s, double t, int order,
                        std::vector<double>& out) {
    source_derivatives(s, t, order, out, Side::Right, /*check_boundary=*/true);
}

Eigen::VectorXd SourceBank::values(double t, Side side) const {
    Eigen::VectorXd v(size());
    for (int i = 0; i < size(); ++i) v(i) = source_value(waveforms_[static_cast<std::size_t>(i)], t, side);
    return v;
}

std::vector<Eigen::VectorXd> SourceBank::coefficients(double t, int order, Side side,
                                                      bool check_boundary) const {
    std::vector<Eigen::VectorXd> coeffs(static_cast<std::size_t>(order) + 1,
                                        Eigen::VectorXd::Zero(size()));
    std::vector<double> scratch;
    for (int i = 0; i < size(); ++i) {
        source_derivatives(waveforms_[static_cast<std::size_t>(i)], t, order, scratch, side,
                           check_boundary);
        for (int k = 0; k <= order; ++k)
            coeffs[static_cast<std::size_t>(k)](i) = scratch[static_cast<std::size_t>(k)];
    }
    return coeffs;
}

std::vector<double> SourceBank::breakpoints(double t_begin, double t_end) const {
    std::vector<double> times;
    for (const auto& s : waveforms_)
        if (s.kind == SourceWaveform::Kind::Step && s.step_time > t_begin &&
            s.step_time < t_end)
            times.push_back(s.step_time);
    std::sort(times.begin(), times.end());
    return times;
}

std::vector<Eigen::VectorXd> u1_derivatives(const SourceBank& bank, double t, int order) {
    return bank.coefficients(t, order, Side::Right, /*check_boundary=*/true);
}

void EventSchedule::normalize() {
    std::stable_sort(events.begin(), events.end(),
                     [](const GateEvent& a, const GateEvent& b) { return a.time < b.time; });
    std::vector<GateEvent> merged;
    for (const auto& e : events) {
        if (!merged.empty() && merged.back().time == e.time) {
            merged.back().set_mask |= e.set_mask;
            merged.back().clear_mask |= e.clear_mask;
        } else {
            merged.push_back(e);
        }
    }
    for (const auto& e : merged)
        if (e.set_mask & e.clear_mask)
            throw SimError("event at t=" + std::to_string(e.time) +
                           " both closes and opens the same switch");
    events = std::move(merged);
}

void EventSchedule::append(const EventSchedule& other) {
    events.insert(events.end(), other.events.begin(), other.events.end());
}

EventSchedule pwm_schedule(double carrier_freq_hz,
                           const std::function<double(double)>& duty,
                           double t_begin, double t_end,
                           int switch_index, int complement_index) {
    if (!(carrier_freq_hz > 0.0)) throw SimError("PWM carrier frequency must be positive");
    if (switch_index < 0 || switch_index >= 64 || complement_index >= 64)
        throw SimError("PWM switch index out of bitmask range");

    const double period = 1.0 / carrier_freq_hz;
    EventSchedule sched;
    if (t_end - t_begin < period && log_level() >= 1)
        std::fputs("pesim: PWM span shorter than one carrier period, schedule may be empty\n",
                   stderr);

    const std::uint64_t main_bit = std::uint64_t{1} << switch_index;
    const std::uint64_t comp_bit =
        complement_index >= 0 ? std::uint64_t{1} << complement_index : 0;

    for (long k = 0;; ++k) {
        const double t_on = t_begin + k * period;
        if (t_on >= t_end) break;
        const double d = duty(t_on);
        if (!(d >= 0.0 && d <= 1.0))
            throw SimError("PWM duty " + std::to_string(d) + " outside [0,1] at t=" +
                           std::to_string(t_on));
        if (d == 0.0) continue;  // switch stays open for the whole period
        sched.events.push_back({t_on, main_bit, comp_bit});
        const double t_off = t_on + d * period;
        if (d < 1.0 && t_off < t_end)
            sched.events.push_back({t_off, comp_bit, main_bit});
    }
    sched.normalize();
    return sched;
}

}  // namespace pesim
