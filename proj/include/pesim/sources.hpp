#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pesim/common.hpp"

namespace pesim {

/// Independent source waveform with analytic derivatives of arbitrary order.
/// Piecewise-smooth kinds (step) register integration breakpoints so every
/// integration interval sees a smooth waveform.
struct SourceWaveform {
    enum class Kind { Dc, Sine, Step };

    struct Tone {
        double amplitude = 0.0;
        double frequency_hz = 0.0;
        double phase_rad = 0.0;
    };

    Kind kind = Kind::Dc;
    std::string name;

    // dc
    double value = 0.0;
    // sine: offset + fundamental + harmonics (all explicit tones)
    double offset = 0.0;
    std::vector<Tone> tones;
    // step
    double before = 0.0;
    double after = 0.0;
    double step_time = 0.0;

    void validate() const;
};

enum class Side { Left, Right };

/// Waveform value at t; step sources evaluate one-sided at their breakpoint.
double source_value(const SourceWaveform& s, double t, Side side = Side::Right);

/// Normalized derivative coefficients c_k = u^(k)(t)/k!, k = 0..order.
/// Throws EventBoundaryError when t sits exactly on a step discontinuity
/// (public contract; pass a Side to evaluate one-sided limits instead).
void source_derivatives(const SourceWaveform& s, double t, int order,
                        std::vector<double>& out);
void source_derivatives(const SourceWaveform& s, double t, int order,
                        std::vector<double>& out, Side side, bool check_boundary);

/// The u_1 vector of a hybrid system: one waveform per independent source.
class SourceBank {
public:
    void add(SourceWaveform s) { waveforms_.push_back(std::move(s)); }
    int size() const { return static_cast<int>(waveforms_.size()); }
    const SourceWaveform& at(int i) const { return waveforms_[static_cast<std::size_t>(i)]; }

    Eigen::VectorXd values(double t, Side side = Side::Right) const;

    /// Normalized coefficient vectors of u_1 to the given order (order+1 entries).
    std::vector<Eigen::VectorXd> coefficients(double t, int order,
                                              Side side = Side::Right,
                                              bool check_boundary = false) const;

    /// Breakpoint times of step sources inside (t_begin, t_end).
    std::vector<double> breakpoints(double t_begin, double t_end) const;

private:
    std::vector<SourceWaveform> waveforms_;
};

/// Public operation contract: coefficients with the boundary check enabled.
std::vector<Eigen::VectorXd> u1_derivatives(const SourceBank& bank, double t, int order);

/// One scheduled discontinuity: gate changes (switch bitmask set/clear) and/or
/// a plain integration breakpoint (both masks zero, e.g. a source step).
struct GateEvent {
    double time = 0.0;
    std::uint64_t set_mask = 0;
    std::uint64_t clear_mask = 0;
};

/// Time-sorted, duplicate-free event list; simultaneous gate changes are
/// merged into one bitmask delta.
struct EventSchedule {
    std::vector<GateEvent> events;

    /// Sort by time and merge equal times. Throws SimError if a merged event
    /// both sets and clears the same switch.
    void normalize();

    void append(const EventSchedule& other);
};

/// Regular-sampled PWM: duty is sampled once per carrier period T = 1/f;
/// each period emits a close of `switch_index` at the period start and an open
/// at start + duty*T. `complement_index` < 0 means no complementary switch;
/// otherwise it receives inverted gates with zero dead time. duty(t) must stay
/// in [0,1]; duty 0 emits no events for the period (switch stays open), duty 1
/// emits no off-event.
EventSchedule pwm_schedule(double carrier_freq_hz,
                           const std::function<double(double)>& duty,
                           double t_begin, double t_end,
                           int switch_index, int complement_index = -1);

}  // namespace pesim
