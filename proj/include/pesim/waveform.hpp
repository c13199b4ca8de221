#pragma once

#include <string>
#include <vector>

#include "pesim/common.hpp"

namespace pesim {

/// Uniform-grid recording of named signals against time.
struct Waveform {
    std::vector<double> time;
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;  // one per name, same length as time

    std::size_t rows() const { return time.size(); }
    int column_index(const std::string& name) const;  // -1 when absent

    /// Linear interpolation of one signal; `t` must lie within the span.
    double interpolate(int column, double t) const;

    void validate() const;  // strictly increasing times, equal column lengths
};

/// CSV with a `time,<signal...>` header and 17-significant-digit values, so a
/// read-back reproduces the doubles bit-exactly.
void write_csv(const Waveform& w, const std::string& path);
Waveform read_csv(const std::string& path);

}  // namespace pesim
