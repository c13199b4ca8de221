#include "pesim/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace pesim {

namespace {

bool is_ground(const std::string& n) { return n == "0" || n == "gnd" || n == "GND"; }

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(static_cast<std::size_t>(n)) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    int find(int a) {
        while (parent[static_cast<std::size_t>(a)] != a) {
            parent[static_cast<std::size_t>(a)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
            a = parent[static_cast<std::size_t>(a)];
        }
        return a;
    }
    void unite(int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); }
};

}  // namespace

std::uint64_t Netlist::initial_switch_state() const {
    std::uint64_t key = 0;
    for (std::size_t i = 0; i < switches.size(); ++i)
        if (switches[i].initially_closed) key |= std::uint64_t{1} << i;
    return key;
}

void Netlist::validate() const {
    for (const auto& r : resistors)
        if (!(r.resistance > 0.0))
            throw CompileError("resistor " + r.name + " needs a positive resistance");
    for (const auto& c : capacitors)
        if (!(c.capacitance > 0.0))
            throw CompileError("capacitor " + c.name + " needs a positive capacitance");
    for (const auto& l : inductors)
        if (!(l.inductance > 0.0))
            throw CompileError("inductor " + l.name + " needs a positive inductance");
    for (const auto& s : switches)
        if (!(s.r_on > 0.0) || !(s.r_off > 0.0))
            throw CompileError("switch " + s.name + " needs positive on/off resistances");
    if (switch_count() > 64) throw CompileError("more than 64 switches are not supported");

    // every node must reach ground through element branches
    std::map<std::string, int> ids;
    auto id_of = [&](const std::string& n) {
        const std::string key = is_ground(n) ? "0" : n;
        auto it = ids.find(key);
        if (it == ids.end()) it = ids.emplace(key, static_cast<int>(ids.size())).first;
        return it->second;
    };
    const int ground = id_of("0");
    std::vector<std::pair<int, int>> branches;
    auto add = [&](const std::string& p, const std::string& n) {
        branches.emplace_back(id_of(p), id_of(n));
    };
    for (const auto& e : resistors) add(e.pos, e.neg);
    for (const auto& e : capacitors) add(e.pos, e.neg);
    for (const auto& e : inductors) add(e.pos, e.neg);
    for (const auto& e : vsources) add(e.pos, e.neg);
    for (const auto& e : isources) add(e.pos, e.neg);
    for (const auto& e : switches) add(e.pos, e.neg);
    UnionFind uf(static_cast<int>(ids.size()));
    for (auto [a, b] : branches) uf.unite(a, b);
    for (const auto& [name, id] : ids)
        if (uf.find(id) != uf.find(ground))
            throw CompileError("node '" + name + "' is not reachable from ground");
}

CircuitCompiler::CircuitCompiler(Netlist netlist, std::vector<InputBinding> inputs,
                                 std::vector<OutputBinding> outputs, int n_sources)
    : netlist_(std::move(netlist)),
      inputs_(std::move(inputs)),
      outputs_(std::move(outputs)),
      n_sources_(n_sources) {
    netlist_.validate();

    auto touch = [&](const std::string& n) {
        if (is_ground(n)) return;
        if (!node_index_.count(n)) {
            node_index_[n] = static_cast<int>(node_names_.size());
            node_names_.push_back(n);
        }
    };
    for (const auto& e : netlist_.resistors) touch(e.pos), touch(e.neg);
    for (const auto& e : netlist_.capacitors) touch(e.pos), touch(e.neg);
    for (const auto& e : netlist_.inductors) touch(e.pos), touch(e.neg);
    for (const auto& e : netlist_.vsources) touch(e.pos), touch(e.neg);
    for (const auto& e : netlist_.isources) touch(e.pos), touch(e.neg);
    for (const auto& e : netlist_.switches) touch(e.pos), touch(e.neg);
    for (const auto& p : outputs_) touch(p.pos), touch(p.neg);
    n_nodes_ = static_cast<int>(node_names_.size());

    // branch-current unknowns: independent V sources, capacitors, voltage ports
    int b = 0;
    for (const auto& e : netlist_.vsources) vbranch_of_element_[e.name] = b++;
    for (const auto& e : netlist_.capacitors) vbranch_of_element_[e.name] = b++;
    for (const auto& p : outputs_)
        if (p.kind == OutputBinding::Kind::VoltagePort) vbranch_of_element_[p.name] = b++;
    n_vbranch_ = b;

    for (const auto& in : inputs_) {
        if (in.kind != InputBinding::Kind::CurrentSensor) continue;
        const std::string& e = in.element;
        const bool known =
            vbranch_of_element_.count(e) ||
            std::any_of(netlist_.inductors.begin(), netlist_.inductors.end(),
                        [&](const auto& l) { return l.name == e; }) ||
            std::any_of(netlist_.resistors.begin(), netlist_.resistors.end(),
                        [&](const auto& r) { return r.name == e; }) ||
            std::any_of(netlist_.switches.begin(), netlist_.switches.end(),
                        [&](const auto& s) { return s.name == e; });
        if (!known)
            throw CompileError("current sensor '" + in.name +
                               "' references unknown element '" + e + "'");
    }
    for (const auto& in : inputs_)
        if (in.kind == InputBinding::Kind::SourceFeed &&
            (in.source < 0 || in.source >= n_sources_))
            throw CompileError("sensor '" + in.name + "' references an unknown source");
}

int CircuitCompiler::node_of(const std::string& name) const {
    if (is_ground(name)) return -1;
    auto it = node_index_.find(name);
    if (it == node_index_.end()) throw CompileError("unknown node '" + name + "'");
    return it->second;
}

TopologyMatrices CircuitCompiler::compile(std::uint64_t switch_state) const {
    const int n_sw = netlist_.switch_count();
    if (n_sw < 64 && (switch_state >> n_sw) != 0)
        throw CompileError("switch bitmask wider than the declared switch count");

    const int nz = n_nodes_ + n_vbranch_;
    const int n1 = netlist_.state_count();
    const int l1 = n_sources_;
    const int mnl = static_cast<int>(outputs_.size());
    const int lnl = static_cast<int>(inputs_.size());
    const int nc = static_cast<int>(netlist_.capacitors.size());

    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nz, nz);
    Eigen::MatrixXd Rx = Eigen::MatrixXd::Zero(nz, n1);
    Eigen::MatrixXd Ru = Eigen::MatrixXd::Zero(nz, l1);
    Eigen::MatrixXd Ry = Eigen::MatrixXd::Zero(nz, mnl);

    auto stamp_conductance = [&](int p, int n, double g) {
        if (p >= 0) G(p, p) += g;
        if (n >= 0) G(n, n) += g;
        if (p >= 0 && n >= 0) {
            G(p, n) -= g;
            G(n, p) -= g;
        }
    };
    // voltage-like branch with current unknown flowing pos -> neg inside the
    // element; the constraint row v_pos - v_neg = (rhs) is filled by callers
    auto stamp_vbranch = [&](int p, int n, int branch_row) {
        const int col = n_nodes_ + branch_row;
        if (p >= 0) {
            G(p, col) += 1.0;
            G(col, p) += 1.0;
        }
        if (n >= 0) {
            G(n, col) -= 1.0;
            G(col, n) -= 1.0;
        }
    };

    for (const auto& r : netlist_.resistors)
        stamp_conductance(node_of(r.pos), node_of(r.neg), 1.0 / r.resistance);
    for (std::size_t i = 0; i < netlist_.switches.size(); ++i) {
        const auto& s = netlist_.switches[i];
        const bool closed = (switch_state >> i) & 1;
        stamp_conductance(node_of(s.pos), node_of(s.neg),
                          1.0 / (closed ? s.r_on : s.r_off));
    }
    for (std::size_t i = 0; i < netlist_.vsources.size(); ++i) {
        const auto& v = netlist_.vsources[i];
        const int b = vbranch_of_element_.at(v.name);
        stamp_vbranch(node_of(v.pos), node_of(v.neg), b);
        Ru(n_nodes_ + b, v.source) = 1.0;
    }
    for (std::size_t i = 0; i < netlist_.capacitors.size(); ++i) {
        const auto& c = netlist_.capacitors[i];
        const int b = vbranch_of_element_.at(c.name);
        stamp_vbranch(node_of(c.pos), node_of(c.neg), b);
        Rx(n_nodes_ + b, static_cast<int>(i)) = 1.0;
    }
    for (std::size_t i = 0; i < outputs_.size(); ++i) {
        const auto& p = outputs_[i];
        const int np = node_of(p.pos), nn = node_of(p.neg);
        if (p.kind == OutputBinding::Kind::VoltagePort) {
            const int b = vbranch_of_element_.at(p.name);
            stamp_vbranch(np, nn, b);
            Ry(n_nodes_ + b, static_cast<int>(i)) = 1.0;
        } else {
            if (np >= 0) Ry(np, static_cast<int>(i)) -= 1.0;
            if (nn >= 0) Ry(nn, static_cast<int>(i)) += 1.0;
        }
    }
    for (std::size_t i = 0; i < netlist_.inductors.size(); ++i) {
        const auto& l = netlist_.inductors[i];
        const int np = node_of(l.pos), nn = node_of(l.neg);
        const int j = nc + static_cast<int>(i);
        if (np >= 0) Rx(np, j) -= 1.0;
        if (nn >= 0) Rx(nn, j) += 1.0;
    }
    for (const auto& s : netlist_.isources) {
        const int np = node_of(s.pos), nn = node_of(s.neg);
        if (np >= 0) Ru(np, s.source) -= 1.0;
        if (nn >= 0) Ru(nn, s.source) += 1.0;
    }

    Eigen::FullPivLU<Eigen::MatrixXd> lu(G);
    if (!lu.isInvertible()) {
        Eigen::MatrixXd kernel = lu.kernel();
        int worst = 0;
        kernel.col(0).cwiseAbs().maxCoeff(&worst);
        std::string where = worst < n_nodes_
                                ? "node '" + node_names_[static_cast<std::size_t>(worst)] + "'"
                                : "a source/capacitor branch";
        throw CompileError("singular nodal matrix (floating subcircuit) near " + where);
    }

    // z = Zx x + Zu u1 + Zy y
    const Eigen::MatrixXd Zx = lu.solve(Rx);
    const Eigen::MatrixXd Zu = lu.solve(Ru);
    const Eigen::MatrixXd Zy = lu.solve(Ry);

    auto zrow = [&](const Eigen::MatrixXd& Z, int idx) -> Eigen::RowVectorXd {
        if (idx < 0) return Eigen::RowVectorXd::Zero(Z.cols());
        return Z.row(idx);
    };

    TopologyMatrices M;
    M.A = Eigen::MatrixXd::Zero(n1, n1);
    M.B1 = Eigen::MatrixXd::Zero(n1, l1);
    M.B2 = Eigen::MatrixXd::Zero(n1, mnl);
    M.C = Eigen::MatrixXd::Zero(lnl, n1);
    M.D1 = Eigen::MatrixXd::Zero(lnl, l1);
    M.D2 = Eigen::MatrixXd::Zero(lnl, mnl);

    for (std::size_t i = 0; i < netlist_.capacitors.size(); ++i) {
        const auto& c = netlist_.capacitors[i];
        const int row = n_nodes_ + vbranch_of_element_.at(c.name);
        const int j = static_cast<int>(i);
        M.A.row(j) = Zx.row(row) / c.capacitance;
        M.B1.row(j) = Zu.row(row) / c.capacitance;
        M.B2.row(j) = Zy.row(row) / c.capacitance;
    }
    for (std::size_t i = 0; i < netlist_.inductors.size(); ++i) {
        const auto& l = netlist_.inductors[i];
        const int j = nc + static_cast<int>(i);
        const int np = node_of(l.pos), nn = node_of(l.neg);
        M.A.row(j) = (zrow(Zx, np) - zrow(Zx, nn)) / l.inductance;
        M.B1.row(j) = (zrow(Zu, np) - zrow(Zu, nn)) / l.inductance;
        M.B2.row(j) = (zrow(Zy, np) - zrow(Zy, nn)) / l.inductance;
    }

    for (std::size_t s = 0; s < inputs_.size(); ++s) {
        const auto& in = inputs_[s];
        const int row = static_cast<int>(s);
        switch (in.kind) {
            case InputBinding::Kind::SourceFeed:
                M.D1(row, in.source) = in.scale;
                break;
            case InputBinding::Kind::VoltageSensor: {
                const int np = node_of(in.pos), nn = node_of(in.neg);
                M.C.row(row) = in.scale * (zrow(Zx, np) - zrow(Zx, nn));
                M.D1.row(row) = in.scale * (zrow(Zu, np) - zrow(Zu, nn));
                M.D2.row(row) = in.scale * (zrow(Zy, np) - zrow(Zy, nn));
                break;
            }
            case InputBinding::Kind::CurrentSensor: {
                auto vb = vbranch_of_element_.find(in.element);
                if (vb != vbranch_of_element_.end()) {
                    const int r = n_nodes_ + vb->second;
                    M.C.row(row) = in.scale * Zx.row(r);
                    M.D1.row(row) = in.scale * Zu.row(r);
                    M.D2.row(row) = in.scale * Zy.row(r);
                    break;
                }
                bool handled = false;
                for (std::size_t i = 0; i < netlist_.inductors.size(); ++i)
                    if (netlist_.inductors[i].name == in.element) {
                        M.C(row, nc + static_cast<int>(i)) = in.scale;
                        handled = true;
                        break;
                    }
                if (handled) break;
                // resistive branch: current is conductance times node-voltage drop
                double g = 0.0;
                int np = -1, nn = -1;
                for (const auto& r : netlist_.resistors)
                    if (r.name == in.element) {
                        g = 1.0 / r.resistance;
                        np = node_of(r.pos);
                        nn = node_of(r.neg);
                        handled = true;
                    }
                for (std::size_t i = 0; i < netlist_.switches.size(); ++i)
                    if (netlist_.switches[i].name == in.element) {
                        const bool closed = (switch_state >> i) & 1;
                        const auto& sw = netlist_.switches[i];
                        g = 1.0 / (closed ? sw.r_on : sw.r_off);
                        np = node_of(sw.pos);
                        nn = node_of(sw.neg);
                        handled = true;
                    }
                if (!handled)
                    throw CompileError("current sensor '" + in.name +
                                       "' has no measurable element");
                M.C.row(row) = in.scale * g * (zrow(Zx, np) - zrow(Zx, nn));
                M.D1.row(row) = in.scale * g * (zrow(Zu, np) - zrow(Zu, nn));
                M.D2.row(row) = in.scale * g * (zrow(Zy, np) - zrow(Zy, nn));
                break;
            }
        }
    }
    return M;
}

Eigen::VectorXd CircuitCompiler::initial_state() const {
    Eigen::VectorXd x0(n_states());
    int j = 0;
    for (const auto& c : netlist_.capacitors) x0(j++) = c.initial_voltage;
    for (const auto& l : netlist_.inductors) x0(j++) = l.initial_current;
    return x0;
}

std::vector<std::string> CircuitCompiler::state_names() const {
    std::vector<std::string> names;
    for (const auto& c : netlist_.capacitors) names.push_back("v(" + c.name + ")");
    for (const auto& l : netlist_.inductors) names.push_back("i(" + l.name + ")");
    return names;
}

const TopologyMatrices& TopologyCache::get(std::uint64_t switch_state) const {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = cache_.find(switch_state);
    if (it == cache_.end())
        it = cache_.emplace(switch_state, compiler_->compile(switch_state)).first;
    return it->second;
}

}  // namespace pesim
