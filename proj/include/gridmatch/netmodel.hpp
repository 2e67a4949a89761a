#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridmatch/csv.hpp"

namespace gridmatch {

// ---------------------------------------------------------------------------
// Per-unit conversion. Z_base = kV^2 / MVA, S_base = MVA.
// ---------------------------------------------------------------------------

inline double ohm_to_pu(double ohm, double base_mva, double base_kv) {
    return ohm * base_mva / (base_kv * base_kv);
}
inline double pu_to_ohm(double pu, double base_mva, double base_kv) {
    return pu * base_kv * base_kv / base_mva;
}
inline double kw_to_pu(double kw, double base_mva) { return kw / (base_mva * 1000.0); }
inline double pu_to_kw(double pu, double base_mva) { return pu * base_mva * 1000.0; }

// ---------------------------------------------------------------------------
// Network data model
// ---------------------------------------------------------------------------

struct Bus {
    int id = 0;
    double g_shunt = 0.0;   // pu
    double b_shunt = 0.0;   // pu
    double v_sq_min = 0.0;  // pu^2
    double v_sq_max = 0.0;  // pu^2
    // Optional inflexible load profiles (kW / kVAr per interval); empty until
    // a scenario attaches them.
    std::vector<double> base_p_load;
    std::vector<double> base_q_load;
};

// Oriented parent->child after NetworkModel construction (from is the bus
// nearer the slack).
struct Line {
    int from = 0;
    int to = 0;
    double r = 0.0;        // pu
    double x = 0.0;        // pu
    double i_sq_max = 0.0; // pu^2
};

class NetworkModel {
public:
    NetworkModel() = default;

    NetworkModel(std::vector<Bus> buses, std::vector<Line> lines, int slack_id,
                 double base_mva, double base_kv)
        : buses_(std::move(buses)), lines_(std::move(lines)), slack_id_(slack_id),
          base_mva_(base_mva), base_kv_(base_kv) {
        if (base_mva_ <= 0 || base_kv_ <= 0) throw std::runtime_error("bad power/voltage base");
        build_topology();
    }

    const std::vector<Bus>& buses() const { return buses_; }
    const std::vector<Line>& lines() const { return lines_; }
    int slack_id() const { return slack_id_; }
    double base_mva() const { return base_mva_; }
    double base_kv() const { return base_kv_; }

    std::size_t bus_index(int id) const {
        auto it = bus_index_.find(id);
        if (it == bus_index_.end()) throw std::runtime_error("unknown bus id " + std::to_string(id));
        return it->second;
    }
    bool has_bus(int id) const { return bus_index_.count(id) != 0; }

    // -1 for the slack bus.
    int parent_line(int bus_id) const { return parent_line_[bus_index(bus_id)]; }
    const std::vector<int>& child_lines(int bus_id) const { return child_lines_[bus_index(bus_id)]; }
    int depth(int bus_id) const { return depth_[bus_index(bus_id)]; }

    // Buses in breadth-first order from the slack (parents before children).
    const std::vector<int>& bfs_order() const { return bfs_order_; }

private:
    void build_topology() {
        if (buses_.empty()) throw std::runtime_error("network has no buses");
        for (std::size_t i = 0; i < buses_.size(); ++i) {
            if (!bus_index_.emplace(buses_[i].id, i).second)
                throw std::runtime_error("duplicate bus id " + std::to_string(buses_[i].id));
            if (!(buses_[i].v_sq_min > 0) || !(buses_[i].v_sq_min < buses_[i].v_sq_max))
                throw std::runtime_error("bad voltage bounds on bus " + std::to_string(buses_[i].id));
            if (!std::isfinite(buses_[i].g_shunt) || !std::isfinite(buses_[i].b_shunt))
                throw std::runtime_error("non-finite shunt on bus " + std::to_string(buses_[i].id));
        }
        if (!has_bus(slack_id_)) throw std::runtime_error("missing slack bus " + std::to_string(slack_id_));
        if (lines_.size() != buses_.size() - 1)
            throw std::runtime_error("non-radial network: |lines| != |buses|-1");

        std::map<std::pair<int, int>, bool> seen;
        std::vector<std::vector<std::pair<int, int>>> adj(buses_.size());  // (neighbor bus idx, line idx)
        for (std::size_t li = 0; li < lines_.size(); ++li) {
            const Line& l = lines_[li];
            if (l.from == l.to) throw std::runtime_error("line with identical endpoints");
            if (!(l.r > 0) || l.x < 0 || !(l.i_sq_max > 0))
                throw std::runtime_error("bad line parameters on " + std::to_string(l.from) + "-" +
                                         std::to_string(l.to));
            auto key = std::minmax(l.from, l.to);
            if (seen[{key.first, key.second}]) throw std::runtime_error("duplicate line");
            seen[{key.first, key.second}] = true;
            std::size_t a = bus_index(l.from), b = bus_index(l.to);
            adj[a].push_back({(int)b, (int)li});
            adj[b].push_back({(int)a, (int)li});
        }

        // BFS from slack; reorient lines parent->child.
        parent_line_.assign(buses_.size(), -1);
        child_lines_.assign(buses_.size(), {});
        depth_.assign(buses_.size(), -1);
        bfs_order_.clear();
        std::vector<std::size_t> queue{bus_index(slack_id_)};
        depth_[queue[0]] = 0;
        for (std::size_t qi = 0; qi < queue.size(); ++qi) {
            std::size_t u = queue[qi];
            bfs_order_.push_back(buses_[u].id);
            for (auto [v, li] : adj[u]) {
                if (depth_[v] >= 0) continue;
                depth_[v] = depth_[u] + 1;
                if (lines_[li].to != buses_[v].id) std::swap(lines_[li].from, lines_[li].to);
                parent_line_[v] = li;
                child_lines_[u].push_back(li);
                queue.push_back(v);
            }
        }
        if (queue.size() != buses_.size())
            throw std::runtime_error("disconnected network");
    }

    std::vector<Bus> buses_;
    std::vector<Line> lines_;
    int slack_id_ = 0;
    double base_mva_ = 1.0;
    double base_kv_ = 1.0;
    std::map<int, std::size_t> bus_index_;
    std::vector<int> parent_line_;
    std::vector<std::vector<int>> child_lines_;
    std::vector<int> depth_;
    std::vector<int> bfs_order_;
};

// Network CSV:
//   #base_mva=<f>,base_kv=<f>,slack=<id>
//   B,<id>,<g_pu>,<b_pu>,<vsqmin_pu2>,<vsqmax_pu2>
//   L,<from>,<to>,<r_ohm>,<x_ohm>,<isqmax_pu2>
// Line impedances are given in ohms and converted to per unit here.
inline NetworkModel parse_network(const std::string& text) {
    double base_mva = 1.0, base_kv = 12.66;
    int slack = -1;
    bool have_header = false;
    std::vector<Bus> buses;
    std::vector<Line> lines;

    std::size_t pos = 0;
    int lineno = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string row = csv::trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        ++lineno;
        if (row.empty()) continue;
        std::string ctx = "network row " + std::to_string(lineno);
        if (row[0] == '#') {
            for (auto& [k, v] : csv::parse_directives(row)) {
                if (k == "base_mva") base_mva = csv::to_double(v, ctx);
                else if (k == "base_kv") base_kv = csv::to_double(v, ctx);
                else if (k == "slack") slack = csv::to_int(v, ctx);
                else throw std::runtime_error("unknown directive '" + k + "' in " + ctx);
            }
            have_header = true;
            continue;
        }
        auto f = csv::split(row);
        if (f[0] == "B") {
            if (f.size() != 6) throw std::runtime_error("malformed bus row: " + ctx);
            Bus b;
            b.id = csv::to_int(f[1], ctx);
            b.g_shunt = csv::to_double(f[2], ctx);
            b.b_shunt = csv::to_double(f[3], ctx);
            b.v_sq_min = csv::to_double(f[4], ctx);
            b.v_sq_max = csv::to_double(f[5], ctx);
            buses.push_back(b);
        } else if (f[0] == "L") {
            if (f.size() != 6) throw std::runtime_error("malformed line row: " + ctx);
            Line l;
            l.from = csv::to_int(f[1], ctx);
            l.to = csv::to_int(f[2], ctx);
            l.r = ohm_to_pu(csv::to_double(f[3], ctx), base_mva, base_kv);
            l.x = ohm_to_pu(csv::to_double(f[4], ctx), base_mva, base_kv);
            l.i_sq_max = csv::to_double(f[5], ctx);
            lines.push_back(l);
        } else {
            throw std::runtime_error("malformed row (expected B or L): " + ctx);
        }
    }
    if (!have_header || slack < 0) throw std::runtime_error("network file missing #...slack=<id> header");
    return NetworkModel(std::move(buses), std::move(lines), slack, base_mva, base_kv);
}

// ---------------------------------------------------------------------------
// DistFlow fixed point (test oracle and partition validation)
// ---------------------------------------------------------------------------

struct PowerFlowResult {
    std::vector<double> v_sq;      // per bus, pu^2, net.buses() order
    std::vector<double> line_p;    // sending-end active flow per line, pu
    std::vector<double> line_q;    // sending-end reactive flow per line, pu
    std::vector<double> line_i_sq; // pu^2
    double slack_p = 0.0;          // pu
    double slack_q = 0.0;          // pu
    int iterations = 0;
};

struct PowerFlowOptions {
    double tol = 1e-13;
    int max_iter = 500;
    double v_slack_sq = 1.0;
};

// Backward/forward sweep on the radial network. Loads are consumption,
// kW / kVAr per bus in net.buses() order (slack entry ignored). At the fixed
// point the branch balance, the voltage-drop equation and
// I^2 = (P^2+Q^2)/V_to^2 hold simultaneously.
inline PowerFlowResult fixed_point_powerflow(const NetworkModel& net,
                                             const std::vector<double>& p_load_kw,
                                             const std::vector<double>& q_load_kvar,
                                             const PowerFlowOptions& opt = {}) {
    const auto& buses = net.buses();
    const auto& lines = net.lines();
    if (p_load_kw.size() != buses.size() || q_load_kvar.size() != buses.size())
        throw std::runtime_error("load vector length != bus count");

    std::vector<double> p_pu(buses.size()), q_pu(buses.size());
    for (std::size_t i = 0; i < buses.size(); ++i) {
        p_pu[i] = kw_to_pu(p_load_kw[i], net.base_mva());
        q_pu[i] = kw_to_pu(q_load_kvar[i], net.base_mva());
    }

    PowerFlowResult res;
    res.v_sq.assign(buses.size(), opt.v_slack_sq);
    res.line_p.assign(lines.size(), 0.0);
    res.line_q.assign(lines.size(), 0.0);
    res.line_i_sq.assign(lines.size(), 0.0);

    const auto& order = net.bfs_order();
    for (int it = 0; it < opt.max_iter; ++it) {
        double delta = 0.0;
        // backward: accumulate sending-end flows from the leaves up
        for (auto rit = order.rbegin(); rit != order.rend(); ++rit) {
            int bid = *rit;
            std::size_t bi = net.bus_index(bid);
            if (bid == net.slack_id()) continue;
            int li = net.parent_line(bid);
            const Line& l = lines[li];
            double p = p_pu[bi] + buses[bi].g_shunt * res.v_sq[bi];
            double q = q_pu[bi] + buses[bi].b_shunt * res.v_sq[bi];
            for (int ci : net.child_lines(bid)) {
                p += res.line_p[ci];
                q += res.line_q[ci];
            }
            p += l.r * res.line_i_sq[li];
            q += l.x * res.line_i_sq[li];
            double new_isq = (p * p + q * q) / res.v_sq[bi];
            delta = std::max(delta, std::abs(new_isq - res.line_i_sq[li]));
            res.line_p[li] = p;
            res.line_q[li] = q;
            res.line_i_sq[li] = new_isq;
        }
        // forward: propagate voltages from the slack down
        for (int bid : order) {
            if (bid == net.slack_id()) continue;
            std::size_t bi = net.bus_index(bid);
            int li = net.parent_line(bid);
            const Line& l = lines[li];
            double v_up = res.v_sq[net.bus_index(l.from)];
            double v = v_up - 2.0 * (l.r * res.line_p[li] + l.x * res.line_q[li]) +
                       (l.r * l.r + l.x * l.x) * res.line_i_sq[li];
            if (!(v > 0))
                throw std::runtime_error("power flow diverged (voltage collapse at bus " +
                                         std::to_string(bid) + ")");
            delta = std::max(delta, std::abs(v - res.v_sq[bi]));
            res.v_sq[bi] = v;
        }
        res.iterations = it + 1;
        if (delta < opt.tol) {
            std::size_t si = net.bus_index(net.slack_id());
            res.slack_p = buses[si].g_shunt * res.v_sq[si];
            res.slack_q = buses[si].b_shunt * res.v_sq[si];
            for (int ci : net.child_lines(net.slack_id())) {
                res.slack_p += res.line_p[ci];
                res.slack_q += res.line_q[ci];
            }
            return res;
        }
    }
    throw std::runtime_error("power flow did not converge (extreme loading?)");
}

struct PowerFlowResiduals {
    double balance_p = 0.0;  // max abs nodal active-balance violation, pu
    double balance_q = 0.0;
    double v_drop = 0.0;     // max abs voltage-drop equation violation, pu^2
};

inline PowerFlowResiduals powerflow_residuals(const NetworkModel& net,
                                              const PowerFlowResult& r,
                                              const std::vector<double>& p_load_kw,
                                              const std::vector<double>& q_load_kvar) {
    PowerFlowResiduals out;
    const auto& buses = net.buses();
    const auto& lines = net.lines();
    for (std::size_t bi = 0; bi < buses.size(); ++bi) {
        int bid = buses[bi].id;
        if (bid == net.slack_id()) continue;
        int li = net.parent_line(bid);
        double in_p = r.line_p[li] - lines[li].r * r.line_i_sq[li];
        double in_q = r.line_q[li] - lines[li].x * r.line_i_sq[li];
        double out_p = kw_to_pu(p_load_kw[bi], net.base_mva()) + buses[bi].g_shunt * r.v_sq[bi];
        double out_q = kw_to_pu(q_load_kvar[bi], net.base_mva()) + buses[bi].b_shunt * r.v_sq[bi];
        for (int ci : net.child_lines(bid)) {
            out_p += r.line_p[ci];
            out_q += r.line_q[ci];
        }
        out.balance_p = std::max(out.balance_p, std::abs(in_p - out_p));
        out.balance_q = std::max(out.balance_q, std::abs(in_q - out_q));
    }
    for (std::size_t li = 0; li < lines.size(); ++li) {
        const Line& l = lines[li];
        double lhs = r.v_sq[net.bus_index(l.to)] - r.v_sq[net.bus_index(l.from)];
        double rhs = -2.0 * (l.r * r.line_p[li] + l.x * r.line_q[li]) +
                     (l.r * l.r + l.x * l.x) * r.line_i_sq[li];
        out.v_drop = std::max(out.v_drop, std::abs(lhs - rhs));
    }
    return out;
}

// ---------------------------------------------------------------------------
// IHR partition
// ---------------------------------------------------------------------------

struct IhrPartition {
    std::map<int, int> zones;         // bus id -> IHR id (all non-slack buses)
    std::map<int, int> interconnect;  // IHR id -> bus id nearest the slack
    double delta = 0.0;               // intra-zone voltage-spread tolerance, pu
};

// Structural checks: full cover of non-slack buses, each zone a connected
// subtree, interconnect = the unique zone bus whose parent lies outside.
inline void check_partition(const NetworkModel& net, const IhrPartition& part) {
    if (!(part.delta > 0)) throw std::runtime_error("partition delta must be positive");
    for (const Bus& b : net.buses()) {
        if (b.id == net.slack_id()) {
            if (part.zones.count(b.id)) throw std::runtime_error("slack bus assigned to a zone");
            continue;
        }
        if (!part.zones.count(b.id))
            throw std::runtime_error("bus " + std::to_string(b.id) + " not assigned to any IHR");
    }
    for (auto& [bid, ihr] : part.zones)
        if (!net.has_bus(bid)) throw std::runtime_error("partition references unknown bus " + std::to_string(bid));

    std::map<int, std::vector<int>> members;
    for (auto& [bid, ihr] : part.zones) members[ihr].push_back(bid);

    for (auto& [ihr, bus_ids] : members) {
        int root = -1;
        for (int bid : bus_ids) {
            int li = net.parent_line(bid);
            int parent = net.lines()[li].from;
            auto it = part.zones.find(parent);
            bool parent_inside = (it != part.zones.end() && it->second == ihr);
            if (!parent_inside) {
                if (root >= 0)
                    throw std::runtime_error("IHR " + std::to_string(ihr) + " is not a connected subtree");
                root = bid;
            }
        }
        if (root < 0) throw std::runtime_error("IHR " + std::to_string(ihr) + " has no root bus");
        auto it = part.interconnect.find(ihr);
        if (it == part.interconnect.end() || it->second != root)
            throw std::runtime_error("IHR " + std::to_string(ihr) + " interconnect must be bus " +
                                     std::to_string(root));
    }
}

// Partition CSV: "#delta=<pu>" plus "<bus_id>,<ihr_id>" rows. The
// interconnect bus of each zone is derived from the tree.
inline IhrPartition parse_partition(const std::string& text, const NetworkModel& net) {
    IhrPartition part;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string row = csv::trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        ++lineno;
        if (row.empty()) continue;
        std::string ctx = "partition row " + std::to_string(lineno);
        if (row[0] == '#') {
            for (auto& [k, v] : csv::parse_directives(row)) {
                if (k == "delta") part.delta = csv::to_double(v, ctx);
                else throw std::runtime_error("unknown directive '" + k + "' in " + ctx);
            }
            continue;
        }
        auto f = csv::split(row);
        if (f.size() != 2) throw std::runtime_error("malformed " + ctx);
        int bid = csv::to_int(f[0], ctx);
        if (part.zones.count(bid)) throw std::runtime_error("duplicate bus in " + ctx);
        part.zones[bid] = csv::to_int(f[1], ctx);
    }
    // derive interconnects: the zone bus nearest the slack
    std::map<int, std::pair<int, int>> best;  // ihr -> (depth, bus)
    for (auto& [bid, ihr] : part.zones) {
        if (!net.has_bus(bid)) throw std::runtime_error("partition references unknown bus " + std::to_string(bid));
        int d = net.depth(bid);
        auto it = best.find(ihr);
        if (it == best.end() || d < it->second.first) best[ihr] = {d, bid};
    }
    for (auto& [ihr, db] : best) part.interconnect[ihr] = db.second;
    check_partition(net, part);
    return part;
}

struct PartitionReport {
    std::map<int, double> spread;  // IHR id -> max intra-zone |V_b - V_b'| at peak, pu
    bool pass = false;
    int worst_ihr = -1;
    double worst_spread = 0.0;
};

// Eq.-style spread check at peak load via the DistFlow fixed point.
inline PartitionReport validate_partition(const NetworkModel& net, const IhrPartition& part,
                                          const std::vector<double>& peak_p_kw,
                                          const std::vector<double>& peak_q_kvar) {
    check_partition(net, part);
    auto pf = fixed_point_powerflow(net, peak_p_kw, peak_q_kvar);

    std::map<int, std::pair<double, double>> vrange;  // ihr -> (min V, max V)
    for (auto& [bid, ihr] : part.zones) {
        double v = std::sqrt(pf.v_sq[net.bus_index(bid)]);
        auto it = vrange.find(ihr);
        if (it == vrange.end()) vrange[ihr] = {v, v};
        else {
            it->second.first = std::min(it->second.first, v);
            it->second.second = std::max(it->second.second, v);
        }
    }
    PartitionReport rep;
    rep.pass = true;
    for (auto& [ihr, mm] : vrange) {
        double s = mm.second - mm.first;
        rep.spread[ihr] = s;
        if (s > rep.worst_spread) {
            rep.worst_spread = s;
            rep.worst_ihr = ihr;
        }
        if (s >= part.delta) rep.pass = false;
    }
    return rep;
}

}  // namespace gridmatch
