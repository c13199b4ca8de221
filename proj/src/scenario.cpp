#include "pesim/scenario.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace pesim {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
    throw ScenarioError(path + ": " + msg);
}

const json& need(const json& j, const char* key, const std::string& path) {
    if (!j.contains(key)) fail(path, std::string("missing field '") + key + "'");
    return j.at(key);
}

double need_num(const json& j, const char* key, const std::string& path) {
    const json& v = need(j, key, path);
    if (!v.is_number()) fail(path + "." + key, "expected a number");
    return v.get<double>();
}

std::string need_str(const json& j, const char* key, const std::string& path) {
    const json& v = need(j, key, path);
    if (!v.is_string()) fail(path + "." + key, "expected a string");
    return v.get<std::string>();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& path) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) fail(path, "unknown field '" + it.key() + "'");
    }
}

std::pair<std::string, std::string> need_nodes(const json& j, const std::string& path) {
    const json& v = need(j, "nodes", path);
    if (!v.is_array() || v.size() != 2 || !v[0].is_string() || !v[1].is_string())
        fail(path + ".nodes", "expected [\"pos\",\"neg\"]");
    return {v[0].get<std::string>(), v[1].get<std::string>()};
}

struct ModelInfo {
    std::vector<std::string> inputs, outputs, states;
};

const std::map<std::string, ModelInfo>& model_registry() {
    static const std::map<std::string, ModelInfo> reg = {
        {"pv_array", {{"V", "S", "T"}, {"I"}, {"I_m"}}},
        {"battery", {{"i_out"}, {"E"}, {"c", "i_star"}}},
        {"induction_motor",
         {{"u_a", "u_b", "u_c"},
          {"i_a", "i_b", "i_c"},
          {"i_sd", "i_sq", "psi_rd", "psi_rq", "omega2"}}},
    };
    return reg;
}

PvParams parse_pv_params(const json& p, const std::string& path) {
    check_keys(p,
               {"n_cells", "s_standard", "t_ref", "r_s", "r_sh", "i_s0", "i_sc0", "e_g",
                "ideality", "c_t", "k_s", "t_d", "q_e", "k_b"},
               path);
    PvParams v;
    v.n_cells = p.value("n_cells", v.n_cells);
    v.s_standard = p.value("s_standard", v.s_standard);
    v.t_ref = p.value("t_ref", v.t_ref);
    v.r_s = p.value("r_s", v.r_s);
    v.r_sh = p.value("r_sh", v.r_sh);
    v.i_s0 = p.value("i_s0", v.i_s0);
    v.i_sc0 = p.value("i_sc0", v.i_sc0);
    v.e_g = p.value("e_g", v.e_g);
    v.ideality = p.value("ideality", v.ideality);
    v.c_t = p.value("c_t", v.c_t);
    v.k_s = p.value("k_s", v.k_s);
    v.t_d = p.value("t_d", v.t_d);
    return v;
}

BatteryParams parse_battery_params(const json& p, const std::string& path) {
    check_keys(p, {"e0", "k_pol", "q_cap", "a_exp", "b_exp", "t_lp", "verbatim_sign"},
               path);
    BatteryParams v;
    v.e0 = p.value("e0", v.e0);
    v.k_pol = p.value("k_pol", v.k_pol);
    v.q_cap = p.value("q_cap", v.q_cap);
    v.a_exp = p.value("a_exp", v.a_exp);
    v.b_exp = p.value("b_exp", v.b_exp);
    v.t_lp = p.value("t_lp", v.t_lp);
    v.verbatim_sign = p.value("verbatim_sign", v.verbatim_sign);
    return v;
}

MotorParams parse_motor_params(const json& p, const std::string& path) {
    check_keys(p,
               {"r_s", "r_r", "l_m", "l_s", "l_r", "pole_pairs", "inertia", "load_torque",
                "torque_sign"},
               path);
    MotorParams v;
    v.r_s = p.value("r_s", v.r_s);
    v.r_r = p.value("r_r", v.r_r);
    v.l_m = p.value("l_m", v.l_m);
    v.l_s = p.value("l_s", v.l_s);
    v.l_r = p.value("l_r", v.l_r);
    v.pole_pairs = p.value("pole_pairs", v.pole_pairs);
    v.inertia = p.value("inertia", v.inertia);
    v.load_torque = p.value("load_torque", v.load_torque);
    v.torque_sign = p.value("torque_sign", v.torque_sign);
    return v;
}

}  // namespace

double Scenario::DutySpec::operator()(double t) const {
    if (constant) return value;
    return offset + amplitude * std::sin(6.283185307179586 * frequency_hz * t + phase_rad);
}

Scenario parse_scenario(const json& doc, const std::string& origin) {
    Scenario sc;
    check_keys(doc,
               {"schema_version", "name", "netlist", "sources", "blocks", "pwm", "events",
                "solver", "t_span", "output_period", "record"},
               origin);
    if (!doc.contains("schema_version")) fail(origin, "missing field 'schema_version'");
    sc.schema_version = doc.at("schema_version").get<int>();
    if (sc.schema_version != 1) fail(origin + ".schema_version", "unsupported version");
    sc.name = doc.value("name", std::string{});

    // sources first: elements refer to them by name
    std::map<std::string, int> source_index;
    if (doc.contains("sources")) {
        const json& arr = doc.at("sources");
        if (!arr.is_array()) fail(origin + ".sources", "expected an array");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = origin + ".sources[" + std::to_string(i) + "]";
            const json& s = arr[i];
            SourceWaveform w;
            w.name = need_str(s, "name", path);
            const std::string kind = need_str(s, "kind", path);
            if (kind == "dc") {
                check_keys(s, {"name", "kind", "value"}, path);
                w.kind = SourceWaveform::Kind::Dc;
                w.value = need_num(s, "value", path);
            } else if (kind == "sine") {
                check_keys(s, {"name", "kind", "offset", "amplitude", "frequency_hz",
                               "phase_rad", "harmonics"},
                           path);
                w.kind = SourceWaveform::Kind::Sine;
                w.offset = s.value("offset", 0.0);
                SourceWaveform::Tone fundamental;
                fundamental.amplitude = need_num(s, "amplitude", path);
                fundamental.frequency_hz = need_num(s, "frequency_hz", path);
                fundamental.phase_rad = s.value("phase_rad", 0.0);
                w.tones.push_back(fundamental);
                if (s.contains("harmonics"))
                    for (std::size_t h = 0; h < s.at("harmonics").size(); ++h) {
                        const std::string hp = path + ".harmonics[" + std::to_string(h) + "]";
                        const json& t = s.at("harmonics")[h];
                        check_keys(t, {"amplitude", "frequency_hz", "phase_rad"}, hp);
                        w.tones.push_back({need_num(t, "amplitude", hp),
                                           need_num(t, "frequency_hz", hp),
                                           t.value("phase_rad", 0.0)});
                    }
            } else if (kind == "step") {
                check_keys(s, {"name", "kind", "before", "after", "at"}, path);
                w.kind = SourceWaveform::Kind::Step;
                w.before = need_num(s, "before", path);
                w.after = need_num(s, "after", path);
                w.step_time = need_num(s, "at", path);
            } else {
                fail(path + ".kind", "unknown source kind '" + kind + "'");
            }
            w.validate();
            if (source_index.count(w.name)) fail(path, "duplicate source '" + w.name + "'");
            source_index[w.name] = sc.sources.size();
            sc.source_names.push_back(w.name);
            sc.sources.add(std::move(w));
        }
    }

    // netlist elements (sensors/ports collected as interface declarations)
    {
        const json& nl = need(doc, "netlist", origin);
        check_keys(nl, {"elements"}, origin + ".netlist");
        const json& arr = need(nl, "elements", origin + ".netlist");
        if (!arr.is_array()) fail(origin + ".netlist.elements", "expected an array");
        std::set<std::string> names;
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = origin + ".netlist.elements[" + std::to_string(i) + "]";
            const json& e = arr[i];
            const std::string type = need_str(e, "type", path);
            const std::string name = need_str(e, "name", path);
            if (!names.insert(name).second) fail(path, "duplicate element '" + name + "'");
            if (type == "resistor") {
                check_keys(e, {"type", "name", "nodes", "resistance"}, path);
                auto [p, n] = need_nodes(e, path);
                sc.netlist.resistors.push_back({name, p, n, need_num(e, "resistance", path)});
            } else if (type == "capacitor") {
                check_keys(e, {"type", "name", "nodes", "capacitance", "initial_voltage"},
                           path);
                auto [p, n] = need_nodes(e, path);
                sc.netlist.capacitors.push_back({name, p, n,
                                                 need_num(e, "capacitance", path),
                                                 e.value("initial_voltage", 0.0)});
            } else if (type == "inductor") {
                check_keys(e, {"type", "name", "nodes", "inductance", "initial_current"},
                           path);
                auto [p, n] = need_nodes(e, path);
                sc.netlist.inductors.push_back({name, p, n, need_num(e, "inductance", path),
                                                e.value("initial_current", 0.0)});
            } else if (type == "vsource" || type == "isource") {
                check_keys(e, {"type", "name", "nodes", "source"}, path);
                auto [p, n] = need_nodes(e, path);
                const std::string src = need_str(e, "source", path);
                auto it = source_index.find(src);
                if (it == source_index.end())
                    fail(path + ".source", "unknown source '" + src + "'");
                if (type == "vsource")
                    sc.netlist.vsources.push_back({name, p, n, it->second});
                else
                    sc.netlist.isources.push_back({name, p, n, it->second});
            } else if (type == "switch") {
                check_keys(e, {"type", "name", "nodes", "r_on", "r_off", "initially_closed"},
                           path);
                auto [p, n] = need_nodes(e, path);
                sc.netlist.switches.push_back({name, p, n, e.value("r_on", 1e-3),
                                               e.value("r_off", 1e6),
                                               e.value("initially_closed", false)});
            } else if (type == "port") {
                check_keys(e, {"type", "name", "nodes", "kind"}, path);
                auto [p, n] = need_nodes(e, path);
                const std::string kind = need_str(e, "kind", path);
                if (kind != "voltage" && kind != "current")
                    fail(path + ".kind", "port kind must be voltage or current");
                sc.ports.push_back({name, kind == "voltage", p, n});
            } else if (type == "sensor") {
                check_keys(e, {"type", "name", "nodes", "kind", "element", "scale"}, path);
                const std::string kind = need_str(e, "kind", path);
                Scenario::SensorDecl s;
                s.name = name;
                s.scale = e.value("scale", 1.0);
                if (kind == "voltage") {
                    auto [p, n] = need_nodes(e, path);
                    s.voltage = true;
                    s.pos = p;
                    s.neg = n;
                } else if (kind == "current") {
                    s.voltage = false;
                    s.element = need_str(e, "element", path);
                } else {
                    fail(path + ".kind", "sensor kind must be voltage or current");
                }
                sc.sensors.push_back(std::move(s));
            } else {
                fail(path + ".type", "unknown element type '" + type + "'");
            }
        }
    }

    // nonlinear blocks
    if (doc.contains("blocks")) {
        const json& arr = doc.at("blocks");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = origin + ".blocks[" + std::to_string(i) + "]";
            const json& b = arr[i];
            check_keys(b, {"name", "model", "params", "initial_state", "inputs", "outputs"},
                       path);
            Scenario::BlockDecl d;
            d.name = need_str(b, "name", path);
            d.model = need_str(b, "model", path);
            const auto reg = model_registry();
            auto mi = reg.find(d.model);
            if (mi == reg.end()) fail(path + ".model", "unknown model kind '" + d.model + "'");
            d.params = b.value("params", json::object());
            // validate params now so errors carry the file path
            if (d.model == "pv_array") parse_pv_params(d.params, path + ".params");
            if (d.model == "battery") parse_battery_params(d.params, path + ".params");
            if (d.model == "induction_motor") parse_motor_params(d.params, path + ".params");
            if (b.contains("initial_state"))
                for (auto it = b.at("initial_state").begin(); it != b.at("initial_state").end();
                     ++it) {
                    if (std::find(mi->second.states.begin(), mi->second.states.end(),
                                  it.key()) == mi->second.states.end())
                        fail(path + ".initial_state", "unknown state '" + it.key() + "'");
                    d.initial_state[it.key()] = it.value().get<double>();
                }
            const json& ins = need(b, "inputs", path);
            for (const auto& slot : mi->second.inputs) {
                if (!ins.contains(slot))
                    fail(path + ".inputs", "missing binding for input '" + slot + "'");
                d.inputs[slot] = ins.at(slot).get<std::string>();
            }
            check_keys(ins, {"V", "S", "T", "i_out", "u_a", "u_b", "u_c"}, path + ".inputs");
            const json& outs = need(b, "outputs", path);
            for (const auto& slot : mi->second.outputs) {
                if (!outs.contains(slot))
                    fail(path + ".outputs", "missing binding for output '" + slot + "'");
                d.outputs[slot] = outs.at(slot).get<std::string>();
            }
            sc.blocks.push_back(std::move(d));
        }
    }

    // PWM declarations
    if (doc.contains("pwm")) {
        const json& arr = doc.at("pwm");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = origin + ".pwm[" + std::to_string(i) + "]";
            const json& p = arr[i];
            check_keys(p, {"switch", "complement", "carrier_hz", "duty"}, path);
            Scenario::PwmDecl d;
            d.switch_name = need_str(p, "switch", path);
            d.complement = p.value("complement", std::string{});
            d.carrier_hz = need_num(p, "carrier_hz", path);
            if (!(d.carrier_hz > 0.0)) fail(path + ".carrier_hz", "must be positive");
            const json& duty = need(p, "duty", path);
            const std::string kind = need_str(duty, "kind", path + ".duty");
            if (kind == "const") {
                check_keys(duty, {"kind", "value"}, path + ".duty");
                d.duty.constant = true;
                d.duty.value = need_num(duty, "value", path + ".duty");
                if (d.duty.value < 0.0 || d.duty.value > 1.0)
                    fail(path + ".duty.value", "duty must lie in [0,1]");
            } else if (kind == "sine") {
                check_keys(duty, {"kind", "offset", "amplitude", "frequency_hz", "phase_rad"},
                           path + ".duty");
                d.duty.constant = false;
                d.duty.offset = need_num(duty, "offset", path + ".duty");
                d.duty.amplitude = need_num(duty, "amplitude", path + ".duty");
                d.duty.frequency_hz = need_num(duty, "frequency_hz", path + ".duty");
                d.duty.phase_rad = duty.value("phase_rad", 0.0);
                if (d.duty.offset - std::abs(d.duty.amplitude) < 0.0 ||
                    d.duty.offset + std::abs(d.duty.amplitude) > 1.0)
                    fail(path + ".duty", "modulated duty leaves [0,1]");
            } else {
                fail(path + ".duty.kind", "unknown duty kind '" + kind + "'");
            }
            sc.pwm.push_back(std::move(d));
        }
    }

    if (doc.contains("events")) {
        const json& arr = doc.at("events");
        for (std::size_t i = 0; i < arr.size(); ++i) {
            const std::string path = origin + ".events[" + std::to_string(i) + "]";
            const json& e = arr[i];
            check_keys(e, {"time", "set", "clear"}, path);
            Scenario::ExplicitEvent ev;
            ev.time = need_num(e, "time", path);
            if (e.contains("set"))
                for (const auto& s : e.at("set")) ev.set.push_back(s.get<std::string>());
            if (e.contains("clear"))
                for (const auto& s : e.at("clear")) ev.clear.push_back(s.get<std::string>());
            sc.events.push_back(std::move(ev));
        }
    }

    // solver settings with defaults
    {
        json s = doc.value("solver", json::object());
        check_keys(s,
                   {"method", "rel_tol", "abs_tol", "q_min", "q_max", "safety", "h_min",
                    "h_max"},
                   origin + ".solver");
        sc.solver = s.value("method", std::string("taylor"));
        if (sc.solver != "taylor" && sc.solver != "dp45" && sc.solver != "bs23")
            fail(origin + ".solver.method", "unknown solver '" + sc.solver + "'");
        sc.controller.rel_tol = s.value("rel_tol", 1e-6);
        sc.controller.abs_tol = s.value("abs_tol", 1e-9);
        sc.controller.q_min = s.value("q_min", 2);
        sc.controller.q_max = s.value("q_max", 5);
        sc.controller.safety = s.value("safety", 0.8);
        sc.controller.h_min = s.value("h_min", 1e-15);
        sc.controller.h_max = s.value("h_max", 1e3);
        try {
            sc.controller.validate();
        } catch (const SimError& e) {
            fail(origin + ".solver", e.what());
        }
    }

    {
        const json& span = need(doc, "t_span", origin);
        if (!span.is_array() || span.size() != 2) fail(origin + ".t_span", "expected [t0, t1]");
        sc.t_begin = span[0].get<double>();
        sc.t_end = span[1].get<double>();
        if (!(sc.t_end > sc.t_begin)) fail(origin + ".t_span", "must be non-degenerate");
    }
    sc.output_period = need_num(doc, "output_period", origin);
    if (!(sc.output_period > 0.0)) fail(origin + ".output_period", "must be positive");
    if (doc.contains("record"))
        for (const auto& r : doc.at("record")) sc.record.push_back(r.get<std::string>());

    // cross-reference checks
    {
        std::set<std::string> sensor_names, port_names, used_sensors, used_ports;
        for (const auto& s : sc.sensors) sensor_names.insert(s.name);
        for (const auto& p : sc.ports) port_names.insert(p.name);
        for (const auto& b : sc.blocks) {
            for (const auto& [slot, ref] : b.inputs) {
                const std::string where = origin + " block '" + b.name + "' input '" + slot + "'";
                if (ref.rfind("sensor:", 0) == 0) {
                    const std::string s = ref.substr(7);
                    if (!sensor_names.count(s)) fail(where, "unknown sensor '" + s + "'");
                    if (!used_sensors.insert(s).second)
                        fail(where, "sensor '" + s + "' feeds more than one input");
                } else if (ref.rfind("source:", 0) == 0) {
                    const std::string s = ref.substr(7);
                    if (std::find(sc.source_names.begin(), sc.source_names.end(), s) ==
                        sc.source_names.end())
                        fail(where, "unknown source '" + s + "'");
                } else {
                    fail(where, "binding must be 'sensor:<name>' or 'source:<name>'");
                }
            }
            for (const auto& [slot, ref] : b.outputs) {
                const std::string where = origin + " block '" + b.name + "' output '" + slot + "'";
                if (ref.rfind("port:", 0) != 0) fail(where, "binding must be 'port:<name>'");
                const std::string p = ref.substr(5);
                if (!port_names.count(p)) fail(where, "unknown port '" + p + "'");
                if (!used_ports.insert(p).second)
                    fail(where, "port '" + p + "' is driven by more than one output");
            }
        }
        for (const auto& s : sc.sensors)
            if (!used_sensors.count(s.name))
                fail(origin, "sensor '" + s.name + "' feeds no block input");
        for (const auto& p : sc.ports)
            if (!used_ports.count(p.name))
                fail(origin, "port '" + p.name + "' has no driving block output");
        std::set<std::string> switch_names;
        for (const auto& s : sc.netlist.switches) switch_names.insert(s.name);
        for (std::size_t i = 0; i < sc.pwm.size(); ++i) {
            if (!switch_names.count(sc.pwm[i].switch_name))
                fail(origin + ".pwm[" + std::to_string(i) + "].switch", "unknown switch");
            if (!sc.pwm[i].complement.empty() && !switch_names.count(sc.pwm[i].complement))
                fail(origin + ".pwm[" + std::to_string(i) + "].complement", "unknown switch");
        }
        for (std::size_t i = 0; i < sc.events.size(); ++i)
            for (const auto& n : sc.events[i].set)
                if (!switch_names.count(n))
                    fail(origin + ".events[" + std::to_string(i) + "].set",
                         "unknown switch '" + n + "'");
        for (std::size_t i = 0; i < sc.events.size(); ++i)
            for (const auto& n : sc.events[i].clear)
                if (!switch_names.count(n))
                    fail(origin + ".events[" + std::to_string(i) + "].clear",
                         "unknown switch '" + n + "'");
    }

    sc.netlist.validate();
    return sc;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        throw ScenarioError("JSON parse error in '" + path + "': " + e.what());
    }
    return parse_scenario(doc, path);
}

BuiltScenario build_system(const Scenario& sc) {
    // bindings ordered by block declaration, then model slot order
    std::vector<InputBinding> in_bindings;
    std::vector<OutputBinding> out_bindings;
    std::vector<NonlinearBlock> blocks;
    std::vector<std::string> nl_state_names, sensor_sig_names, output_sig_names;
    Eigen::VectorXd x_nl_0;

    auto find_sensor = [&](const std::string& name) -> const Scenario::SensorDecl& {
        for (const auto& s : sc.sensors)
            if (s.name == name) return s;
        throw ScenarioError("unknown sensor '" + name + "'");
    };
    auto find_port = [&](const std::string& name) -> const Scenario::PortDecl& {
        for (const auto& p : sc.ports)
            if (p.name == name) return p;
        throw ScenarioError("unknown port '" + name + "'");
    };
    auto source_id = [&](const std::string& name) {
        for (std::size_t i = 0; i < sc.source_names.size(); ++i)
            if (sc.source_names[i] == name) return static_cast<int>(i);
        throw ScenarioError("unknown source '" + name + "'");
    };

    const auto& reg = model_registry();
    std::vector<double> x0;
    for (const auto& b : sc.blocks) {
        const ModelInfo& mi = reg.at(b.model);
        if (b.model == "pv_array")
            blocks.push_back(make_pv_block(parse_pv_params(b.params, b.name + ".params")));
        else if (b.model == "battery")
            blocks.push_back(
                make_battery_block(parse_battery_params(b.params, b.name + ".params")));
        else
            blocks.push_back(
                make_motor_block(parse_motor_params(b.params, b.name + ".params")));

        for (const auto& slot : mi.inputs) {
            const std::string& ref = b.inputs.at(slot);
            InputBinding bind;
            bind.name = b.name + "." + slot;
            if (ref.rfind("sensor:", 0) == 0) {
                const auto& s = find_sensor(ref.substr(7));
                bind.name = s.name;
                bind.scale = s.scale;
                if (s.voltage) {
                    bind.kind = InputBinding::Kind::VoltageSensor;
                    bind.pos = s.pos;
                    bind.neg = s.neg;
                } else {
                    bind.kind = InputBinding::Kind::CurrentSensor;
                    bind.element = s.element;
                }
            } else {
                bind.kind = InputBinding::Kind::SourceFeed;
                bind.source = source_id(ref.substr(7));
            }
            sensor_sig_names.push_back(bind.name);
            in_bindings.push_back(std::move(bind));
        }
        for (const auto& slot : mi.outputs) {
            const auto& p = find_port(b.outputs.at(slot).substr(5));
            OutputBinding bind;
            bind.kind = p.voltage ? OutputBinding::Kind::VoltagePort
                                  : OutputBinding::Kind::CurrentPort;
            bind.name = p.name;
            bind.pos = p.pos;
            bind.neg = p.neg;
            output_sig_names.push_back(b.name + "." + slot);
            out_bindings.push_back(std::move(bind));
        }
        for (const auto& st : mi.states) {
            nl_state_names.push_back(b.name + "." + st);
            auto it = b.initial_state.find(st);
            x0.push_back(it == b.initial_state.end() ? 0.0 : it->second);
        }
    }
    x_nl_0 = Eigen::Map<Eigen::VectorXd>(x0.data(), static_cast<Eigen::Index>(x0.size()));

    auto compiler = std::make_shared<CircuitCompiler>(sc.netlist, in_bindings, out_bindings,
                                                      sc.sources.size());

    auto system = std::make_shared<HybridSystem>();
    system->n1 = compiler->n_states();
    system->l1 = sc.sources.size();
    system->block = concatenate_blocks(std::move(blocks));
    system->sources = sc.sources;
    system->topology = std::make_shared<TopologyCache>(compiler);
    system->pwl_state_names = compiler->state_names();
    system->nl_state_names = std::move(nl_state_names);
    system->sensor_names = std::move(sensor_sig_names);
    system->output_names = std::move(output_sig_names);

    // schedule: PWM + explicit events + step-source breakpoints
    EventSchedule sched;
    auto switch_bit = [&](const std::string& name) {
        for (std::size_t i = 0; i < sc.netlist.switches.size(); ++i)
            if (sc.netlist.switches[i].name == name) return static_cast<int>(i);
        throw ScenarioError("unknown switch '" + name + "'");
    };
    for (const auto& p : sc.pwm) {
        const int main_idx = switch_bit(p.switch_name);
        const int comp_idx = p.complement.empty() ? -1 : switch_bit(p.complement);
        sched.append(pwm_schedule(p.carrier_hz, [d = p.duty](double t) { return d(t); },
                                  sc.t_begin, sc.t_end, main_idx, comp_idx));
    }
    for (const auto& e : sc.events) {
        GateEvent ev;
        ev.time = e.time;
        for (const auto& n : e.set) ev.set_mask |= std::uint64_t{1} << switch_bit(n);
        for (const auto& n : e.clear) ev.clear_mask |= std::uint64_t{1} << switch_bit(n);
        sched.events.push_back(ev);
    }
    for (double t : sc.sources.breakpoints(sc.t_begin, sc.t_end))
        sched.events.push_back({t, 0, 0});
    sched.normalize();
    // keep events inside [t_begin, t_end)
    std::erase_if(sched.events, [&](const GateEvent& e) {
        return e.time < sc.t_begin || e.time >= sc.t_end;
    });

    BuiltScenario built;
    built.system = system;
    built.solver = sc.solver;
    built.run.system = system.get();
    built.run.schedule = std::move(sched);
    built.run.controller = sc.controller;
    built.run.t_begin = sc.t_begin;
    built.run.t_end = sc.t_end;
    built.run.output_period = sc.output_period;
    built.run.record = sc.record;
    built.run.x1_0 = compiler->initial_state();
    built.run.x_nl_0 = x_nl_0;
    built.run.initial_topology = sc.netlist.initial_switch_state();
    return built;
}

BuiltScenario load_and_build(const std::string& path) {
    return build_system(load_scenario(path));
}

nlohmann::json canonical_json(const Scenario& sc) {
    json doc;
    doc["schema_version"] = sc.schema_version;
    doc["name"] = sc.name;
    doc["t_span"] = {sc.t_begin, sc.t_end};
    doc["output_period"] = sc.output_period;
    doc["record"] = sc.record;
    doc["solver"] = {{"method", sc.solver},
                     {"rel_tol", sc.controller.rel_tol},
                     {"abs_tol", sc.controller.abs_tol},
                     {"q_min", sc.controller.q_min},
                     {"q_max", sc.controller.q_max},
                     {"safety", sc.controller.safety},
                     {"h_min", sc.controller.h_min},
                     {"h_max", sc.controller.h_max}};

    json elements = json::array();
    for (const auto& e : sc.netlist.resistors)
        elements.push_back({{"type", "resistor"},
                            {"name", e.name},
                            {"nodes", {e.pos, e.neg}},
                            {"resistance", e.resistance}});
    for (const auto& e : sc.netlist.capacitors)
        elements.push_back({{"type", "capacitor"},
                            {"name", e.name},
                            {"nodes", {e.pos, e.neg}},
                            {"capacitance", e.capacitance},
                            {"initial_voltage", e.initial_voltage}});
    for (const auto& e : sc.netlist.inductors)
        elements.push_back({{"type", "inductor"},
                            {"name", e.name},
                            {"nodes", {e.pos, e.neg}},
                            {"inductance", e.inductance},
                            {"initial_current", e.initial_current}});
    for (const auto& e : sc.netlist.vsources)
        elements.push_back({{"type", "vsource"},
                            {"name", e.name},
                            {"nodes", {e.pos, e.neg}},
                            {"source", sc.source_names[static_cast<std::size_t>(e.source)]}});
    for (const auto& e : sc.netlist.isources)
        elements.push_back({{"type", "isource"},
                            {"name", e.name},
                            {"nodes", {e.pos, e.neg}},
                            {"source", sc.source_names[static_cast<std::size_t>(e.source)]}});
    for (const auto& e : sc.netlist.switches)
        elements.push_back({{"type", "switch"},
                            {"name", e.name},
                            {"nodes", {e.pos, e.neg}},
                            {"r_on", e.r_on},
                            {"r_off", e.r_off},
                            {"initially_closed", e.initially_closed}});
    for (const auto& p : sc.ports)
        elements.push_back({{"type", "port"},
                            {"name", p.name},
                            {"nodes", {p.pos, p.neg}},
                            {"kind", p.voltage ? "voltage" : "current"}});
    for (const auto& s : sc.sensors) {
        json e{{"type", "sensor"}, {"name", s.name}, {"scale", s.scale}};
        if (s.voltage) {
            e["kind"] = "voltage";
            e["nodes"] = {s.pos, s.neg};
        } else {
            e["kind"] = "current";
            e["element"] = s.element;
        }
        elements.push_back(std::move(e));
    }
    doc["netlist"] = {{"elements", elements}};

    json sources = json::array();
    for (int i = 0; i < sc.sources.size(); ++i) {
        const auto& w = sc.sources.at(i);
        json s{{"name", w.name}};
        switch (w.kind) {
            case SourceWaveform::Kind::Dc:
                s["kind"] = "dc";
                s["value"] = w.value;
                break;
            case SourceWaveform::Kind::Sine: {
                s["kind"] = "sine";
                s["offset"] = w.offset;
                s["amplitude"] = w.tones[0].amplitude;
                s["frequency_hz"] = w.tones[0].frequency_hz;
                s["phase_rad"] = w.tones[0].phase_rad;
                json harm = json::array();
                for (std::size_t h = 1; h < w.tones.size(); ++h)
                    harm.push_back({{"amplitude", w.tones[h].amplitude},
                                    {"frequency_hz", w.tones[h].frequency_hz},
                                    {"phase_rad", w.tones[h].phase_rad}});
                s["harmonics"] = harm;
                break;
            }
            case SourceWaveform::Kind::Step:
                s["kind"] = "step";
                s["before"] = w.before;
                s["after"] = w.after;
                s["at"] = w.step_time;
                break;
        }
        sources.push_back(std::move(s));
    }
    doc["sources"] = sources;

    json blocks = json::array();
    for (const auto& b : sc.blocks) {
        json initial = json::object();
        for (const auto& [k, v] : b.initial_state) initial[k] = v;
        json inputs = json::object(), outputs = json::object();
        for (const auto& [k, v] : b.inputs) inputs[k] = v;
        for (const auto& [k, v] : b.outputs) outputs[k] = v;
        blocks.push_back({{"name", b.name},
                          {"model", b.model},
                          {"params", b.params},
                          {"initial_state", initial},
                          {"inputs", inputs},
                          {"outputs", outputs}});
    }
    doc["blocks"] = blocks;

    json pwm = json::array();
    for (const auto& p : sc.pwm) {
        json duty;
        if (p.duty.constant)
            duty = {{"kind", "const"}, {"value", p.duty.value}};
        else
            duty = {{"kind", "sine"},
                    {"offset", p.duty.offset},
                    {"amplitude", p.duty.amplitude},
                    {"frequency_hz", p.duty.frequency_hz},
                    {"phase_rad", p.duty.phase_rad}};
        pwm.push_back({{"switch", p.switch_name},
                       {"complement", p.complement},
                       {"carrier_hz", p.carrier_hz},
                       {"duty", duty}});
    }
    doc["pwm"] = pwm;

    json events = json::array();
    for (const auto& e : sc.events)
        events.push_back({{"time", e.time}, {"set", e.set}, {"clear", e.clear}});
    doc["events"] = events;
    return doc;
}

void write_stats_json(const RunStats& stats, const std::string& path) {
    json hist = json::object();
    for (const auto& [q, n] : stats.order_histogram) hist[std::to_string(q)] = n;
    json doc{{"solver", stats.solver},
             {"steps_accepted", stats.accepted},
             {"steps_rejected", stats.rejected},
             {"f_evals", stats.f_evals},
             {"g_evals", stats.g_evals},
             {"loop_iterations", stats.loop_iterations},
             {"order_histogram", hist},
             {"avg_order", stats.avg_order},
             {"wall_ms", stats.wall_ms},
             {"max_event_state_jump", stats.max_event_state_jump},
             {"max_event_loop_residual", stats.max_event_loop_residual}};
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw SimError("cannot open '" + path + "' for writing");
    const std::string text = doc.dump(2);
    std::fwrite(text.data(), 1, text.size(), f);
    std::fputc('\n', f);
    std::fclose(f);
}

}  // namespace pesim
