#pragma once

// Central dispatch: collapse each IHR zone onto its interconnection bus,
// assemble the branch-flow program with reactive ranges and curtailment
// variables, and solve the second-order-cone relaxation on the cone core.

#include <map>
#include <string>
#include <vector>

#include "gridmatch/conic.hpp"
#include "gridmatch/csv.hpp"
#include "gridmatch/netmodel.hpp"

namespace gridmatch {

// What a hub reports upward after matching: its net draw and the reactive
// band its inverters can cover.
struct IhrReport {
    int ihr = 0;
    double p_net = 0.0;  // kW, positive = drawing from the grid
    double q_min = 0.0;  // kVAr
    double q_max = 0.0;  // kVAr
};

// ---------------------------------------------------------------------------
// Zone reduction
// ---------------------------------------------------------------------------

// Collapse every zone to its interconnection bus: intra-zone lines vanish
// (their impedance is negligible by the coherency assumption), inter-zone
// lines connect the interconnect nodes, shunts accumulate per zone, and the
// voltage window becomes (1 -+ delta)^2 around nominal.
inline NetworkModel reduce_network(const NetworkModel& net, const IhrPartition& part) {
    check_partition(net, part);
    double vmin = (1.0 - part.delta) * (1.0 - part.delta);
    double vmax = (1.0 + part.delta) * (1.0 + part.delta);

    std::map<int, int> to_node;  // original bus -> reduced node id
    for (auto& [bus, ihr] : part.zones) to_node[bus] = part.interconnect.at(ihr);
    to_node[net.slack_id()] = net.slack_id();

    std::map<int, Bus> nodes;
    for (auto& [ihr, ic] : part.interconnect) {
        Bus nb;
        nb.id = ic;
        nb.v_sq_min = vmin;
        nb.v_sq_max = vmax;
        nodes[ic] = nb;
    }
    Bus slack = net.buses()[net.bus_index(net.slack_id())];
    slack.v_sq_min = vmin;
    slack.v_sq_max = vmax;
    slack.g_shunt = slack.b_shunt = 0.0;
    slack.base_p_load.clear();
    slack.base_q_load.clear();
    nodes[net.slack_id()] = slack;
    auto add_profile = [](std::vector<double>& acc, const std::vector<double>& p) {
        if (p.size() > acc.size()) acc.resize(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) acc[i] += p[i];
    };
    for (const Bus& b : net.buses()) {
        int node = to_node.at(b.id);
        nodes[node].g_shunt += b.g_shunt;
        nodes[node].b_shunt += b.b_shunt;
        add_profile(nodes[node].base_p_load, b.base_p_load);
        add_profile(nodes[node].base_q_load, b.base_q_load);
    }

    std::vector<Line> lines;
    for (const Line& l : net.lines()) {
        int a = to_node.at(l.from), b = to_node.at(l.to);
        if (a == b) continue;  // intra-zone
        Line rl = l;
        rl.from = a;
        rl.to = b;
        lines.push_back(rl);
    }
    if (lines.size() + 1 != nodes.size())
        throw std::runtime_error("inter-zone lines do not form a tree over the IHR nodes");
    for (std::size_t i = 0; i < lines.size(); ++i)
        for (std::size_t j = i + 1; j < lines.size(); ++j) {
            auto key = [](const Line& l) {
                return std::make_pair(std::min(l.from, l.to), std::max(l.from, l.to));
            };
            if (key(lines[i]) == key(lines[j]))
                throw std::runtime_error("inter-zone lines do not form a tree over the IHR nodes");
        }

    std::vector<Bus> bus_list;
    for (auto& [id, b] : nodes) bus_list.push_back(b);
    return NetworkModel(bus_list, lines, net.slack_id(), net.base_mva(), net.base_kv());
}

// ---------------------------------------------------------------------------
// Instance
// ---------------------------------------------------------------------------

struct OpfInstance {
    NetworkModel net;              // reduced: slack + IHR nodes
    std::vector<int> ihr_ids;      // per-IHR arrays follow this order
    std::vector<int> node_ids;     // interconnect node of each IHR
    Eigen::VectorXd p_net_pu;      // positive = draw
    Eigen::VectorXd q_min_pu, q_max_pu;
    double lambda_rt = 0.12;  // $/kWh
    double lambda_c = 0.5;    // $/kWh
    double dt = 0.5;          // h per interval
};

inline OpfInstance build_instance(const std::vector<IhrReport>& reports, const NetworkModel& reduced,
                                  const IhrPartition& part, double lambda_rt, double lambda_c,
                                  double dt) {
    if (!(lambda_c > lambda_rt))
        throw std::runtime_error("curtailment price must exceed the real-time price");
    if (!(dt > 0)) throw std::runtime_error("interval length must be positive");
    std::map<int, IhrReport> by_ihr;
    for (const IhrReport& r : reports) {
        if (r.q_min > r.q_max + 1e-12)
            throw std::runtime_error("reactive band inverted for IHR " + std::to_string(r.ihr));
        if (!by_ihr.emplace(r.ihr, r).second)
            throw std::runtime_error("duplicate report for IHR " + std::to_string(r.ihr));
    }
    OpfInstance inst{reduced, {}, {}, {}, {}, {}, lambda_rt, lambda_c, dt};
    int n = (int)part.interconnect.size();
    inst.p_net_pu.resize(n);
    inst.q_min_pu.resize(n);
    inst.q_max_pu.resize(n);
    int j = 0;
    for (auto& [ihr, node] : part.interconnect) {
        auto it = by_ihr.find(ihr);
        if (it == by_ihr.end())
            throw std::runtime_error("missing report for IHR " + std::to_string(ihr));
        inst.ihr_ids.push_back(ihr);
        inst.node_ids.push_back(node);
        inst.p_net_pu(j) = kw_to_pu(it->second.p_net, reduced.base_mva());
        inst.q_min_pu(j) = kw_to_pu(it->second.q_min, reduced.base_mva());
        inst.q_max_pu(j) = kw_to_pu(it->second.q_max, reduced.base_mva());
        ++j;
    }
    if ((int)by_ihr.size() != n) throw std::runtime_error("report for unknown IHR");
    return inst;
}

// ---------------------------------------------------------------------------
// Solution
// ---------------------------------------------------------------------------

enum class OpfStatus { Optimal, Infeasible, IterationLimit };

inline const char* opf_status_name(OpfStatus s) {
    switch (s) {
        case OpfStatus::Optimal: return "optimal";
        case OpfStatus::Infeasible: return "infeasible";
        default: return "iteration-limit";
    }
}

struct OpfSolution {
    OpfStatus status = OpfStatus::IterationLimit;
    double p_g_kw = 0.0, q_g_kvar = 0.0;
    std::vector<double> line_p_kw, line_q_kvar, line_i_sq;  // reduced-net line order
    std::vector<double> v_sq;                               // reduced-net bus order
    std::vector<double> q_net_kvar, p_c_kw;                 // instance IHR order
    double objective = 0.0;  // $
    int iterations = 0;
    std::string message;
};

namespace opf_detail {
// Variable layout: [P_G, Q_G, P_l..., Q_l..., I_l..., V_h (non-slack)...,
//                   q_net_j..., p_C_j...]
struct Layout {
    int L = 0, H = 0, NI = 0;
    std::map<int, int> vidx;  // non-slack bus id -> V slot
    int pg() const { return 0; }
    int qg() const { return 1; }
    int pl(int l) const { return 2 + l; }
    int ql(int l) const { return 2 + L + l; }
    int il(int l) const { return 2 + 2 * L + l; }
    int vh(int bus) const { return 2 + 3 * L + vidx.at(bus); }
    int qn(int j) const { return 2 + 3 * L + H + j; }
    int pc(int j) const { return 2 + 3 * L + 2 * H + j; }
    int n() const { return 2 + 3 * L + 2 * H + NI; }
};

inline Layout make_layout(const OpfInstance& inst) {
    Layout lay;
    lay.L = (int)inst.net.lines().size();
    lay.NI = (int)inst.ihr_ids.size();
    for (const Bus& b : inst.net.buses())
        if (b.id != inst.net.slack_id()) lay.vidx[b.id] = lay.H++;
    return lay;
}
}  // namespace opf_detail

inline OpfSolution solve_opf(const OpfInstance& inst, const ConeSettings& cfg = {}) {
    using namespace opf_detail;
    const NetworkModel& net = inst.net;
    Layout lay = make_layout(inst);
    int L = lay.L, H = lay.H, NI = lay.NI;
    if (NI != H) throw std::runtime_error("instance must carry one report per IHR node");
    double base_kw = net.base_mva() * 1000.0;
    double lam_p = inst.lambda_rt * inst.dt * base_kw;  // $ per pu over Δt
    double lam_c = inst.lambda_c * inst.dt * base_kw;

    std::map<int, int> ihr_of_node;  // node id -> report index
    for (int j = 0; j < NI; ++j) ihr_of_node[inst.node_ids[j]] = j;

    ConeProgram prog;
    prog.c = Eigen::VectorXd::Zero(lay.n());
    prog.c(lay.pg()) = lam_p;
    for (int j = 0; j < NI; ++j) prog.c(lay.pc(j)) = lam_c;

    int m_eq = 2 * H + 2 + L;
    prog.A = Eigen::MatrixXd::Zero(m_eq, lay.n());
    prog.b = Eigen::VectorXd::Zero(m_eq);
    int row = 0;
    const Bus& slack = net.buses()[net.bus_index(net.slack_id())];
    // slack injections feed its child lines plus its own shunt at V = 1
    prog.A(row, lay.pg()) = 1.0;
    for (int l : net.child_lines(net.slack_id())) prog.A(row, lay.pl(l)) = -1.0;
    prog.b(row) = slack.g_shunt;
    ++row;
    prog.A(row, lay.qg()) = 1.0;
    for (int l : net.child_lines(net.slack_id())) prog.A(row, lay.ql(l)) = -1.0;
    prog.b(row) = slack.b_shunt;
    ++row;
    for (const Bus& bus : net.buses()) {
        if (bus.id == net.slack_id()) continue;
        int pl = net.parent_line(bus.id);
        const Line& line = net.lines()[pl];
        int j = ihr_of_node.count(bus.id) ? ihr_of_node.at(bus.id) : -1;
        if (j < 0) throw std::runtime_error("reduced node without a report");
        // P_in - r I - sum P_out - g V + p_C = p_net
        prog.A(row, lay.pl(pl)) = 1.0;
        prog.A(row, lay.il(pl)) = -line.r;
        for (int cl : net.child_lines(bus.id)) prog.A(row, lay.pl(cl)) = -1.0;
        prog.A(row, lay.vh(bus.id)) = -bus.g_shunt;
        prog.A(row, lay.pc(j)) = 1.0;
        prog.b(row) = inst.p_net_pu(j);
        ++row;
        // Q_in - x I - sum Q_out - b V - q_net = 0
        prog.A(row, lay.ql(pl)) = 1.0;
        prog.A(row, lay.il(pl)) = -line.x;
        for (int cl : net.child_lines(bus.id)) prog.A(row, lay.ql(cl)) = -1.0;
        prog.A(row, lay.vh(bus.id)) = -bus.b_shunt;
        prog.A(row, lay.qn(j)) = -1.0;
        ++row;
    }
    for (int l = 0; l < L; ++l) {
        const Line& line = net.lines()[l];
        double z2 = line.r * line.r + line.x * line.x;
        // V_child - V_parent + 2(rP + xQ) - z^2 I = 0 (parent slack folds in)
        prog.A(row, lay.vh(line.to)) = 1.0;
        prog.A(row, lay.pl(l)) = 2.0 * line.r;
        prog.A(row, lay.ql(l)) = 2.0 * line.x;
        prog.A(row, lay.il(l)) = -z2;
        if (line.from == net.slack_id())
            prog.b(row) = 1.0;
        else
            prog.A(row, lay.vh(line.from)) = -1.0;
        ++row;
    }

    // Inequalities: voltage windows, current caps, reactive bands, p_C box.
    struct IneqTag {
        std::string family;
    };
    std::vector<IneqTag> tags;
    std::vector<Eigen::VectorXd> grows;
    std::vector<double> hvals;
    auto add_row = [&](const std::string& fam) -> Eigen::VectorXd& {
        tags.push_back({fam});
        grows.emplace_back(Eigen::VectorXd::Zero(lay.n()));
        hvals.push_back(0.0);
        return grows.back();
    };
    for (const Bus& bus : net.buses()) {
        if (bus.id == net.slack_id()) continue;
        add_row("voltage lower bound")(lay.vh(bus.id)) = -1.0;
        hvals.back() = -bus.v_sq_min;
        add_row("voltage upper bound")(lay.vh(bus.id)) = 1.0;
        hvals.back() = bus.v_sq_max;
    }
    for (int l = 0; l < L; ++l) {
        add_row("current limit")(lay.il(l)) = 1.0;
        hvals.back() = net.lines()[l].i_sq_max;
    }
    for (int j = 0; j < NI; ++j) {
        add_row("reactive lower cap")(lay.qn(j)) = -1.0;
        hvals.back() = -inst.q_min_pu(j);
        add_row("reactive upper cap")(lay.qn(j)) = 1.0;
        hvals.back() = inst.q_max_pu(j);
        add_row("curtailment nonnegativity")(lay.pc(j)) = -1.0;
        add_row("curtailment ceiling")(lay.pc(j)) = 1.0;
        hvals.back() = std::max(inst.p_net_pu(j), 0.0);
    }
    int n_orth = (int)grows.size();

    // One quadratic cone per line: (V_recv + I, 2P, 2Q, V_recv - I).
    prog.soc.clear();
    for (int l = 0; l < L; ++l) {
        const Line& line = net.lines()[l];
        Eigen::VectorXd& r0 = add_row("power-flow cone");
        r0(lay.vh(line.to)) = -1.0;
        r0(lay.il(l)) = -1.0;
        add_row("power-flow cone")(lay.pl(l)) = -2.0;
        add_row("power-flow cone")(lay.ql(l)) = -2.0;
        Eigen::VectorXd& r3 = add_row("power-flow cone");
        r3(lay.vh(line.to)) = -1.0;
        r3(lay.il(l)) = 1.0;
        prog.soc.push_back(4);
    }
    prog.nonneg = n_orth;
    prog.G = Eigen::MatrixXd::Zero((int)grows.size(), lay.n());
    prog.h = Eigen::VectorXd::Zero((int)grows.size());
    for (int i = 0; i < (int)grows.size(); ++i) {
        prog.G.row(i) = grows[i];
        prog.h(i) = hvals[i];
    }

    ConeSolution cs = solve_cone(prog, cfg);

    OpfSolution sol;
    sol.iterations = cs.iterations;
    if (cs.status == ConeStatus::Optimal) {
        sol.status = OpfStatus::Optimal;
        sol.p_g_kw = pu_to_kw(cs.x(lay.pg()), net.base_mva());
        sol.q_g_kvar = pu_to_kw(cs.x(lay.qg()), net.base_mva());
        for (int l = 0; l < L; ++l) {
            sol.line_p_kw.push_back(pu_to_kw(cs.x(lay.pl(l)), net.base_mva()));
            sol.line_q_kvar.push_back(pu_to_kw(cs.x(lay.ql(l)), net.base_mva()));
            sol.line_i_sq.push_back(cs.x(lay.il(l)));
        }
        for (const Bus& bus : net.buses())
            sol.v_sq.push_back(bus.id == net.slack_id() ? 1.0 : cs.x(lay.vh(bus.id)));
        for (int j = 0; j < NI; ++j) {
            sol.q_net_kvar.push_back(pu_to_kw(cs.x(lay.qn(j)), net.base_mva()));
            sol.p_c_kw.push_back(pu_to_kw(std::max(cs.x(lay.pc(j)), 0.0), net.base_mva()));
        }
        sol.objective = cs.obj;
        sol.message = "optimal";
    } else if (cs.status == ConeStatus::Infeasible || cs.status == ConeStatus::Unbounded) {
        sol.status = OpfStatus::Infeasible;
        // name the families carrying the infeasibility certificate's weight
        std::map<std::string, double> weight;
        if (cs.z.size() == (Eigen::Index)tags.size())
            for (int i = 0; i < (int)tags.size(); ++i)
                weight[tags[i].family] += std::abs(cs.z(i));
        std::string top;
        double best = -1.0;
        for (auto& [fam, w] : weight)
            if (w > best) {
                best = w;
                top = fam;
            }
        sol.message = cs.status == ConeStatus::Unbounded
                          ? "objective unbounded (check price signs)"
                          : "infeasible; certificate dominated by: " + (top.empty() ? "?" : top);
    } else {
        sol.status = OpfStatus::IterationLimit;
        sol.message = "iteration limit reached";
    }
    return sol;
}

// ---------------------------------------------------------------------------
// Verification
// ---------------------------------------------------------------------------

// Maximum relaxation slack V_recv*I - (P^2 + Q^2) over the lines, in pu.
inline double soc_gap(const OpfInstance& inst, const OpfSolution& sol) {
    double gap = 0.0;
    const NetworkModel& net = inst.net;
    for (std::size_t l = 0; l < net.lines().size(); ++l) {
        double v = sol.v_sq[net.bus_index(net.lines()[l].to)];
        double p = kw_to_pu(sol.line_p_kw[l], net.base_mva());
        double q = kw_to_pu(sol.line_q_kvar[l], net.base_mva());
        gap = std::max(gap, v * sol.line_i_sq[l] - (p * p + q * q));
    }
    return gap;
}

struct OpfResiduals {
    double balance_p = 0.0, balance_q = 0.0, v_drop = 0.0;
    double v_bounds = 0.0, i_limit = 0.0, q_caps = 0.0, p_c_bounds = 0.0;
    double cone = 0.0;  // max(0, P^2+Q^2 - V I): violation of the relaxed constraint
    double max_abs() const {
        return std::max({balance_p, balance_q, v_drop, v_bounds, i_limit, q_caps, p_c_bounds, cone});
    }
};

inline OpfResiduals residuals(const OpfInstance& inst, const OpfSolution& sol) {
    const NetworkModel& net = inst.net;
    double mva = net.base_mva();
    OpfResiduals r;
    std::map<int, int> ihr_of_node;
    for (std::size_t j = 0; j < inst.node_ids.size(); ++j) ihr_of_node[inst.node_ids[j]] = (int)j;

    auto vsq = [&](int bus) { return sol.v_sq[net.bus_index(bus)]; };
    for (const Bus& bus : net.buses()) {
        if (bus.id == net.slack_id()) {
            double outp = 0, outq = 0;
            for (int l : net.child_lines(bus.id)) {
                outp += kw_to_pu(sol.line_p_kw[l], mva);
                outq += kw_to_pu(sol.line_q_kvar[l], mva);
            }
            r.balance_p = std::max(r.balance_p, std::abs(kw_to_pu(sol.p_g_kw, mva) - outp -
                                                         bus.g_shunt * vsq(bus.id)));
            r.balance_q = std::max(r.balance_q, std::abs(kw_to_pu(sol.q_g_kvar, mva) - outq -
                                                         bus.b_shunt * vsq(bus.id)));
            continue;
        }
        int j = ihr_of_node.at(bus.id);
        int pl = net.parent_line(bus.id);
        const Line& line = net.lines()[pl];
        double pin = kw_to_pu(sol.line_p_kw[pl], mva) - line.r * sol.line_i_sq[pl];
        double qin = kw_to_pu(sol.line_q_kvar[pl], mva) - line.x * sol.line_i_sq[pl];
        double pout = 0, qout = 0;
        for (int cl : net.child_lines(bus.id)) {
            pout += kw_to_pu(sol.line_p_kw[cl], mva);
            qout += kw_to_pu(sol.line_q_kvar[cl], mva);
        }
        double pload = inst.p_net_pu(j) - kw_to_pu(sol.p_c_kw[j], mva) + bus.g_shunt * vsq(bus.id);
        double qload = kw_to_pu(sol.q_net_kvar[j], mva) + bus.b_shunt * vsq(bus.id);
        r.balance_p = std::max(r.balance_p, std::abs(pin - pout - pload));
        r.balance_q = std::max(r.balance_q, std::abs(qin - qout - qload));
        r.v_bounds = std::max({r.v_bounds, bus.v_sq_min - vsq(bus.id), vsq(bus.id) - bus.v_sq_max});
        double pc = kw_to_pu(sol.p_c_kw[j], mva);
        r.p_c_bounds = std::max({r.p_c_bounds, -pc, pc - std::max(inst.p_net_pu(j), 0.0)});
        double qn = kw_to_pu(sol.q_net_kvar[j], mva);
        r.q_caps = std::max({r.q_caps, inst.q_min_pu(j) - qn, qn - inst.q_max_pu(j)});
    }
    for (std::size_t l = 0; l < net.lines().size(); ++l) {
        const Line& line = net.lines()[l];
        double vfrom = line.from == net.slack_id() ? 1.0 : vsq(line.from);
        double p = kw_to_pu(sol.line_p_kw[l], mva), q = kw_to_pu(sol.line_q_kvar[l], mva);
        double z2 = line.r * line.r + line.x * line.x;
        r.v_drop = std::max(r.v_drop, std::abs(vsq(line.to) - vfrom + 2.0 * (line.r * p + line.x * q) -
                                               z2 * sol.line_i_sq[l]));
        r.i_limit = std::max(r.i_limit, sol.line_i_sq[l] - line.i_sq_max);
        r.cone = std::max(r.cone, p * p + q * q - vsq(line.to) * sol.line_i_sq[l]);
    }
    r.v_bounds = std::max(r.v_bounds, 0.0);
    r.i_limit = std::max(r.i_limit, 0.0);
    r.q_caps = std::max(r.q_caps, 0.0);
    r.p_c_bounds = std::max(r.p_c_bounds, 0.0);
    r.cone = std::max(r.cone, 0.0);
    return r;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline std::string opf_instance_csv(const OpfInstance& inst) {
    const NetworkModel& net = inst.net;
    std::string out = "#base_mva=" + csv::num(net.base_mva()) + ",base_kv=" + csv::num(net.base_kv()) +
                      ",slack=" + std::to_string(net.slack_id()) + ",lambda_rt=" +
                      csv::num(inst.lambda_rt) + ",lambda_c=" + csv::num(inst.lambda_c) + ",dt=" +
                      csv::num(inst.dt) + "\n";
    for (const Bus& b : net.buses())
        out += "B," + std::to_string(b.id) + "," + csv::num(b.g_shunt) + "," + csv::num(b.b_shunt) +
               "," + csv::num(b.v_sq_min) + "," + csv::num(b.v_sq_max) + "\n";
    for (const Line& l : net.lines())
        out += "L," + std::to_string(l.from) + "," + std::to_string(l.to) + "," + csv::num(l.r) +
               "," + csv::num(l.x) + "," + csv::num(l.i_sq_max) + "\n";
    for (std::size_t j = 0; j < inst.ihr_ids.size(); ++j)
        out += "I," + std::to_string(inst.ihr_ids[j]) + "," + std::to_string(inst.node_ids[j]) +
               "," + csv::num(inst.p_net_pu(j)) + "," + csv::num(inst.q_min_pu(j)) + "," +
               csv::num(inst.q_max_pu(j)) + "\n";
    return out;
}

// Inverse of opf_instance_csv: lines carry per-unit impedances directly.
inline OpfInstance parse_opf_instance(const std::string& text) {
    std::map<std::string, std::string> dir;
    std::vector<Bus> buses;
    std::vector<Line> lines;
    struct IRow {
        int ihr, node;
        double p, qlo, qhi;
    };
    std::vector<IRow> irows;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = csv::trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        if (line.empty()) continue;
        if (line[0] == '#') {
            for (auto& [k, v] : csv::parse_directives(line)) dir[k] = v;
            continue;
        }
        auto f = csv::split(line);
        const char* ctx = "opf instance";
        if (f[0] == "B") {
            if (f.size() != 6) throw std::runtime_error("bad node row in opf instance");
            Bus b;
            b.id = csv::to_int(f[1], ctx);
            b.g_shunt = csv::to_double(f[2], ctx);
            b.b_shunt = csv::to_double(f[3], ctx);
            b.v_sq_min = csv::to_double(f[4], ctx);
            b.v_sq_max = csv::to_double(f[5], ctx);
            buses.push_back(b);
        } else if (f[0] == "L") {
            if (f.size() != 6) throw std::runtime_error("bad line row in opf instance");
            Line l;
            l.from = csv::to_int(f[1], ctx);
            l.to = csv::to_int(f[2], ctx);
            l.r = csv::to_double(f[3], ctx);
            l.x = csv::to_double(f[4], ctx);
            l.i_sq_max = csv::to_double(f[5], ctx);
            lines.push_back(l);
        } else if (f[0] == "I") {
            if (f.size() != 6) throw std::runtime_error("bad IHR row in opf instance");
            irows.push_back({csv::to_int(f[1], ctx), csv::to_int(f[2], ctx),
                             csv::to_double(f[3], ctx), csv::to_double(f[4], ctx),
                             csv::to_double(f[5], ctx)});
        } else {
            throw std::runtime_error("unknown row kind in opf instance: " + f[0]);
        }
    }
    for (const char* key : {"base_mva", "base_kv", "slack", "lambda_rt", "lambda_c", "dt"})
        if (!dir.count(key))
            throw std::runtime_error(std::string("opf instance missing directive ") + key);
    const char* ctx = "opf directives";
    NetworkModel net(buses, lines, csv::to_int(dir["slack"], ctx), csv::to_double(dir["base_mva"], ctx),
                     csv::to_double(dir["base_kv"], ctx));
    OpfInstance inst{net,
                     {},
                     {},
                     {},
                     {},
                     {},
                     csv::to_double(dir["lambda_rt"], ctx),
                     csv::to_double(dir["lambda_c"], ctx),
                     csv::to_double(dir["dt"], ctx)};
    if (!(inst.lambda_c > inst.lambda_rt))
        throw std::runtime_error("curtailment price must exceed the real-time price");
    inst.p_net_pu.resize((int)irows.size());
    inst.q_min_pu.resize((int)irows.size());
    inst.q_max_pu.resize((int)irows.size());
    for (int j = 0; j < (int)irows.size(); ++j) {
        if (!net.has_bus(irows[j].node) || irows[j].node == net.slack_id())
            throw std::runtime_error("IHR row names a bad node");
        inst.ihr_ids.push_back(irows[j].ihr);
        inst.node_ids.push_back(irows[j].node);
        inst.p_net_pu(j) = irows[j].p;
        inst.q_min_pu(j) = irows[j].qlo;
        inst.q_max_pu(j) = irows[j].qhi;
        if (irows[j].qlo > irows[j].qhi + 1e-12)
            throw std::runtime_error("reactive band inverted for IHR " + std::to_string(irows[j].ihr));
    }
    return inst;
}

inline std::string opf_solution_csv(const OpfInstance& inst, const OpfSolution& sol) {
    std::string out = std::string("#status=") + opf_status_name(sol.status) + ",objective=" +
                      csv::num(sol.objective) + ",p_g_kw=" + csv::num(sol.p_g_kw) + ",q_g_kvar=" +
                      csv::num(sol.q_g_kvar) + ",iterations=" + std::to_string(sol.iterations) + "\n";
    if (sol.status != OpfStatus::Optimal) return out;
    const NetworkModel& net = inst.net;
    for (const Bus& b : net.buses())
        out += "V," + std::to_string(b.id) + "," + csv::num(sol.v_sq[net.bus_index(b.id)]) + "\n";
    for (std::size_t l = 0; l < net.lines().size(); ++l)
        out += "F," + std::to_string(net.lines()[l].from) + "," + std::to_string(net.lines()[l].to) +
               "," + csv::num(sol.line_p_kw[l]) + "," + csv::num(sol.line_q_kvar[l]) + "," +
               csv::num(sol.line_i_sq[l]) + "\n";
    for (std::size_t j = 0; j < inst.ihr_ids.size(); ++j)
        out += "C," + std::to_string(inst.ihr_ids[j]) + "," + csv::num(sol.q_net_kvar[j]) + "," +
               csv::num(sol.p_c_kw[j]) + "\n";
    return out;
}

}  // namespace gridmatch
