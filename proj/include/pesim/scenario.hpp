#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pesim/circuit.hpp"
#include "pesim/integrator.hpp"
#include "pesim/models.hpp"

namespace pesim {

/// A fully validated scenario file: netlist, interface declarations,
/// nonlinear blocks, source waveforms, gate schedules and solver settings.
struct Scenario {
    struct SensorDecl {
        std::string name;
        bool voltage = true;
        std::string pos, neg;   // voltage kind
        std::string element;    // current kind
        double scale = 1.0;
    };
    struct PortDecl {
        std::string name;
        bool voltage = true;
        std::string pos, neg;
    };
    struct BlockDecl {
        std::string name;
        std::string model;  // pv_array | battery | induction_motor
        nlohmann::json params;
        std::map<std::string, double> initial_state;
        std::map<std::string, std::string> inputs;   // slot -> "sensor:X" | "source:X"
        std::map<std::string, std::string> outputs;  // slot -> "port:X"
    };
    struct DutySpec {
        bool constant = true;
        double value = 0.5;                      // const kind
        double offset = 0.5, amplitude = 0.0;    // sine kind
        double frequency_hz = 0.0, phase_rad = 0.0;
        double operator()(double t) const;
    };
    struct PwmDecl {
        std::string switch_name;
        std::string complement;  // empty: none
        double carrier_hz = 0.0;
        DutySpec duty;
    };
    struct ExplicitEvent {
        double time = 0.0;
        std::vector<std::string> set, clear;
    };

    int schema_version = 1;
    std::string name;
    Netlist netlist;
    std::vector<SensorDecl> sensors;
    std::vector<PortDecl> ports;
    std::vector<std::string> source_names;
    SourceBank sources;
    std::vector<BlockDecl> blocks;
    std::vector<PwmDecl> pwm;
    std::vector<ExplicitEvent> events;

    std::string solver = "taylor";
    StepController controller;
    double t_begin = 0.0, t_end = 0.0;
    double output_period = 0.0;
    std::vector<std::string> record;
};

/// Parse and validate a scenario JSON file. Errors name the offending field.
Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const nlohmann::json& doc, const std::string& origin);

/// Canonical re-serialization with all defaults materialized (golden tests).
nlohmann::json canonical_json(const Scenario& sc);

/// A scenario turned into a runnable system. `run.system` points into
/// `system`; keep this object alive while running.
struct BuiltScenario {
    std::shared_ptr<HybridSystem> system;
    SimulationRun run;
    std::string solver;
};

BuiltScenario build_system(const Scenario& sc);

/// Convenience: load + build.
BuiltScenario load_and_build(const std::string& path);

void write_stats_json(const RunStats& stats, const std::string& path);

}  // namespace pesim
