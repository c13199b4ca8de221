#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "pesim/hybrid.hpp"

namespace pesim {

/// Switched-circuit netlist. Node names are free strings; "0", "gnd" and
/// "GND" denote ground. Switches get dense bitmask positions in declaration
/// order. States are capacitor voltages (declaration order) followed by
/// inductor currents.
struct Netlist {
    struct Resistor {
        std::string name, pos, neg;
        double resistance = 0.0;
    };
    struct Capacitor {
        std::string name, pos, neg;
        double capacitance = 0.0;
        double initial_voltage = 0.0;
    };
    struct Inductor {
        std::string name, pos, neg;
        double inductance = 0.0;
        double initial_current = 0.0;
    };
    struct VSource {
        std::string name, pos, neg;
        int source = -1;  // index into the SourceBank
    };
    struct ISource {
        std::string name, pos, neg;
        int source = -1;  // positive current flows pos -> neg through the element
    };
    struct Switch {
        std::string name, pos, neg;
        double r_on = 1e-3;
        double r_off = 1e6;
        bool initially_closed = false;
    };

    std::vector<Resistor> resistors;
    std::vector<Capacitor> capacitors;
    std::vector<Inductor> inductors;
    std::vector<VSource> vsources;
    std::vector<ISource> isources;
    std::vector<Switch> switches;

    int switch_count() const { return static_cast<int>(switches.size()); }
    int state_count() const {
        return static_cast<int>(capacitors.size() + inductors.size());
    }
    std::uint64_t initial_switch_state() const;

    /// Positive element values, dense switch indices, every node reachable
    /// from ground. Throws CompileError.
    void validate() const;
};

/// Where one u_nl element comes from.
struct InputBinding {
    enum class Kind { VoltageSensor, CurrentSensor, SourceFeed } kind;
    std::string name;     // sensor name (reporting)
    std::string pos, neg; // voltage sensor nodes
    std::string element;  // current sensor target element
    int source = -1;      // SourceFeed: index into the SourceBank
    double scale = 1.0;
};

/// Where one y_nl element goes: a controlled source between two nodes.
struct OutputBinding {
    enum class Kind { VoltagePort, CurrentPort } kind;
    std::string name;
    std::string pos, neg;  // current ports: positive y flows pos -> neg through the port
};

/// Compiles the netlist plus interface bindings into per-topology state-space
/// matrices by modified nodal analysis: C/L become companion sources, switches
/// stamp as two-valued resistors, and the algebraic nodal unknowns are
/// eliminated by a dense LU solve. State dimension and ordering are identical
/// across all topologies.
class CircuitCompiler {
public:
    CircuitCompiler(Netlist netlist, std::vector<InputBinding> inputs,
                    std::vector<OutputBinding> outputs, int n_sources);

    TopologyMatrices compile(std::uint64_t switch_state) const;

    const Netlist& netlist() const { return netlist_; }
    int n_states() const { return netlist_.state_count(); }
    Eigen::VectorXd initial_state() const;
    std::vector<std::string> state_names() const;

private:
    Netlist netlist_;
    std::vector<InputBinding> inputs_;
    std::vector<OutputBinding> outputs_;
    int n_sources_;

    std::vector<std::string> node_names_;             // non-ground nodes
    std::map<std::string, int> node_index_;           // name -> index, ground = -1
    int n_nodes_ = 0;
    int n_vbranch_ = 0;
    std::map<std::string, int> vbranch_of_element_;   // caps/vsources/vports
    int node_of(const std::string& name) const;
};

/// Compile-on-miss cache of TopologyMatrices, keyed by switch bitmask.
class TopologyCache : public TopologyProvider {
public:
    explicit TopologyCache(std::shared_ptr<const CircuitCompiler> compiler)
        : compiler_(std::move(compiler)) {}

    const TopologyMatrices& get(std::uint64_t switch_state) const override;

private:
    std::shared_ptr<const CircuitCompiler> compiler_;
    mutable std::mutex mutex_;
    mutable std::map<std::uint64_t, TopologyMatrices> cache_;
};

}  // namespace pesim
