#pragma once

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace pesim {

/// Base class for all simulator errors.
class SimError : public std::runtime_error {
public:
    explicit SimError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed stencil request (duplicate nodes, order out of range, ...).
class StencilError : public SimError {
public:
    using SimError::SimError;
};

/// Netlist could not be compiled into state-space form.
class CompileError : public SimError {
public:
    using SimError::SimError;
};

/// Algebraic-loop solve did not converge.
class LoopError : public SimError {
public:
    LoopError(const std::string& what, double residual)
        : SimError(what), residual(residual) {}
    double residual;
};

/// Derivative cascade failed (loop failure or non-finite value at some order).
class CascadeError : public SimError {
public:
    CascadeError(const std::string& what, int order) : SimError(what), order(order) {}
    int order;
};

/// Non-finite state or derivative encountered.
class BlowupError : public SimError {
public:
    using SimError::SimError;
};

/// Step size forced below h_min; the system is too stiff for this method.
class StiffnessError : public SimError {
public:
    using SimError::SimError;
};

/// Scenario file violates the schema.
class ScenarioError : public SimError {
public:
    using SimError::SimError;
};

/// Waveform evaluation requested exactly at a source discontinuity.
class EventBoundaryError : public SimError {
public:
    using SimError::SimError;
};

// Log verbosity from the PESIM_LOG environment variable: 0 quiet (default),
// 1 info, 2 debug.
inline int log_level() {
    static const int level = [] {
        const char* v = std::getenv("PESIM_LOG");
        if (!v) return 0;
        std::string s(v);
        if (s == "debug" || s == "2") return 2;
        if (s == "info" || s == "1") return 1;
        return 0;
    }();
    return level;
}

/// k! as a double, valid for 0 <= k <= 170.
double factorial(int k);

}  // namespace pesim
