#include "pesim/waveform.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace pesim {

int Waveform::column_index(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    return -1;
}

void Waveform::validate() const {
    for (std::size_t i = 1; i < time.size(); ++i)
        if (!(time[i] > time[i - 1]))
            throw SimError("waveform times must be strictly increasing");
    if (columns.size() != names.size())
        throw SimError("waveform has mismatched names and columns");
    for (const auto& c : columns)
        if (c.size() != time.size()) throw SimError("waveform column length mismatch");
}

double Waveform::interpolate(int column, double t) const {
    const auto& col = columns[static_cast<std::size_t>(column)];
    if (time.empty()) throw SimError("empty waveform");
    if (t < time.front() || t > time.back())
        throw SimError("interpolation time outside the waveform span");
    auto it = std::lower_bound(time.begin(), time.end(), t);
    if (it == time.begin()) return col.front();
    const std::size_t hi = static_cast<std::size_t>(it - time.begin());
    if (time[hi] == t) return col[hi];
    const std::size_t lo = hi - 1;
    const double w = (t - time[lo]) / (time[hi] - time[lo]);
    return col[lo] + w * (col[hi] - col[lo]);
}

void write_csv(const Waveform& w, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw SimError("cannot open '" + path + "' for writing");
    std::fputs("time", f);
    for (const auto& n : w.names) std::fprintf(f, ",%s", n.c_str());
    std::fputc('\n', f);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        std::fprintf(f, "%.17g", w.time[r]);
        for (const auto& c : w.columns) std::fprintf(f, ",%.17g", c[r]);
        std::fputc('\n', f);
    }
    std::fclose(f);
}

Waveform read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SimError("cannot open '" + path + "'");
    Waveform w;
    std::string line;
    if (!std::getline(in, line)) throw SimError("empty CSV '" + path + "'");
    {
        std::stringstream header(line);
        std::string field;
        bool first = true;
        while (std::getline(header, field, ',')) {
            if (first) {
                if (field != "time") throw SimError("CSV must start with a time column");
                first = false;
            } else {
                w.names.push_back(field);
            }
        }
    }
    w.columns.resize(w.names.size());
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream row(line);
        std::string field;
        std::size_t i = 0;
        while (std::getline(row, field, ',')) {
            const double v = std::strtod(field.c_str(), nullptr);
            if (i == 0)
                w.time.push_back(v);
            else if (i - 1 < w.columns.size())
                w.columns[i - 1].push_back(v);
            ++i;
        }
        if (i != w.names.size() + 1)
            throw SimError("CSV row with wrong field count in '" + path + "'");
    }
    w.validate();
    return w;
}

}  // namespace pesim
