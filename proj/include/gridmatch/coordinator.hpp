#pragma once

// The hierarchical loop: per-interval IHR matching, net-flow/reactive reports
// upward, central OPF, curtailment re-dispatch back into the markets, and
// day-level reporting.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "gridmatch/nn.hpp"
#include "gridmatch/opf.hpp"
#include "gridmatch/policy.hpp"
#include "gridmatch/scenario.hpp"

namespace gridmatch {

struct PriceConfig {
    double lambda_rt = 0.12;  // $/kWh real-time grid price
    double lambda_c = 0.5;    // $/kWh curtailment penalty
};

// Curtailments below solver noise are treated as zero rather than booked as cuts.
constexpr double kCurtailFloorKw = 1e-6;

// ---------------------------------------------------------------------------
// Agents
// ---------------------------------------------------------------------------

// How one hub decides its match bits: the match-on-arrival heuristic, or a
// trained network evaluated at the distribution mode.
struct IhrAgent {
    bool learned = false;
    TcnParams policy;
    EncodeNorms norms;
};

inline IhrAgent ma_agent() { return {}; }

inline IhrAgent learned_agent(TcnParams policy, EncodeNorms norms) {
    IhrAgent ag;
    ag.learned = true;
    ag.policy = std::move(policy);
    ag.norms = norms;
    return ag;
}

inline DiscreteMatch agent_decide(const IhrAgent& ag, const IhrMarketState& state) {
    DiscreteMatch dm;
    if (!ag.learned) {
        for (const Customer& cu : state.active) dm.bits[cu.id] = 1;
        return dm;
    }
    Tensor input = encode_state(state, ag.norms);
    Tensor probs = tcn_forward(ag.policy, input, nullptr);
    MatchProbabilities mp = tcn_probs(probs, state.snap, ag.norms.n_slots);
    for (auto& [id, pr] : mp.probs) dm.bits[id] = pr >= 0.5 ? 1 : 0;
    return dm;
}

// ---------------------------------------------------------------------------
// Re-dispatch
// ---------------------------------------------------------------------------

struct CurtailCut {
    int customer = 0;
    double kwh = 0.0;
    bool deadline = false;  // the cut strands this customer at its deadline
};

struct RedispatchResult {
    MatchAmounts m;
    std::vector<int> returned;  // customers put back in the queue (p_u restored)
    std::vector<CurtailCut> cuts;
};

struct RedispatchPolicy {
    bool grid_only = true;                        // cut only grid-booked matches
    const std::set<int>* only_customers = nullptr;  // restrict to these ids
};

// Remove p_c_kw * dt of matched energy, cheapest welfare forgone first
// (ascending pi - supply cost, then longer remaining window, then id).
inline RedispatchResult redispatch(const IhrMarketState& state, const MatchAmounts& m,
                                   double p_c_kw, double dt, const RedispatchPolicy& rp = {}) {
    if (dt <= 0) throw std::runtime_error("nonpositive interval length");
    RedispatchResult out;
    out.m = m;
    double need = p_c_kw * dt;
    if (need <= kServedEps) return out;

    struct Entry {
        Supply s;
        int id;
        double kwh;
        double forgone;
        int d;
    };
    std::vector<Entry> pool;
    double curtailable = 0.0;
    for (auto& [key, kwh] : m.entries) {
        if (rp.grid_only && key.first != Supply::Grid) continue;
        if (rp.only_customers && !rp.only_customers->count(key.second)) continue;
        const Customer& cu = state.customer(key.second);
        double pi = willingness(state.c, cu, state.t);
        double cost = key.first == Supply::Grid ? state.c : 0.0;
        pool.push_back({key.first, key.second, kwh, pi - cost, cu.d});
        curtailable += kwh;
    }
    if (need > curtailable + 1e-9)
        throw std::runtime_error("curtailment exceeds the matched energy available to cut");
    std::sort(pool.begin(), pool.end(), [](const Entry& a, const Entry& b) {
        if (a.forgone != b.forgone) return a.forgone < b.forgone;
        if (a.d != b.d) return a.d > b.d;
        return a.id < b.id;
    });

    std::map<int, double> cut_by_customer;
    for (const Entry& e : pool) {
        if (need <= kServedEps) break;
        double cut = std::min(e.kwh, need);
        need -= cut;
        double& v = out.m.entries.at({e.s, e.id});
        v -= cut;
        if (v <= kServedEps) out.m.entries.erase({e.s, e.id});
        cut_by_customer[e.id] += cut;
    }
    for (auto& [id, kwh] : cut_by_customer) {
        const Customer& cu = state.customer(id);
        bool strands = cu.d == state.t && out.m.total(id) + kServedEps < cu.p_u;
        out.cuts.push_back({id, kwh, strands});
        if (!strands) out.returned.push_back(id);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Interval loop
// ---------------------------------------------------------------------------

struct Hub {
    int ihr = 0;
    IhrAgent agent;
    IhrMarketState market;
};

// Largest per-interval arrival batch in the day (the market's n_max floor).
inline int max_arrival_batch(const EpisodeData& data) {
    std::size_t peak = 1;
    for (const IhrEpisode& ep : data.markets)
        for (const auto& lst : ep.arrivals) peak = std::max(peak, lst.size());
    return (int)peak;
}

inline std::vector<Hub> make_hubs(const EpisodeData& data, const std::map<int, IhrAgent>& agents,
                                  int n_max = 0) {
    data.validate();
    if (n_max <= 0) n_max = max_arrival_batch(data);
    std::vector<Hub> hubs;
    for (int ihr : data.ihr_ids) {
        auto it = agents.find(ihr);
        if (it == agents.end())
            throw std::runtime_error("no agent configured for IHR " + std::to_string(ihr));
        hubs.push_back({ihr, it->second, make_market(data.c, n_max)});
    }
    return hubs;
}

struct DayConfig {
    PriceConfig prices;
    ConeSettings cone;  // central-solver tolerances
    int n_max = 0;      // market arrival cap; 0 derives it from the data
};

struct IntervalResult {
    int t = 0;
    bool infeasible = false;
    std::vector<double> pre_welfare;   // hub order, $
    std::vector<double> post_welfare;  // after curtailment re-dispatch
    std::vector<double> p_net_kw;      // reported net flows, before curtailment
    std::vector<double> curtail_kw;
    std::vector<std::vector<CurtailCut>> cuts;  // per hub
    OpfSolution opf;
};

namespace coord_detail {

// Settle one hub's interval: re-dispatch the curtailment, record welfare and
// violations, advance the market.
inline void settle(Hub& hub, const MatchAmounts& m1, double p_c_kw, double dt,
                   const RedispatchPolicy& rp, IntervalResult& res) {
    RedispatchResult rd = redispatch(hub.market, m1, p_c_kw, dt, rp);
    res.post_welfare.push_back(match_welfare(hub.market, rd.m));
    res.curtail_kw.push_back(p_c_kw);
    res.cuts.push_back(rd.cuts);
    std::set<int> drop;
    for (const CurtailCut& cut : rd.cuts)
        if (cut.deadline) drop.insert(cut.customer);
    hub.market = apply_match(hub.market, rd.m, dt, drop.empty() ? nullptr : &drop).first;
}

}  // namespace coord_detail

// One tick of the hierarchy: match in every hub, report net flows and
// reactive bands, solve the central OPF, re-dispatch the curtailments.
// An infeasible OPF falls back to stripping every grid-booked match
// (RES-only operation) and flags the interval.
inline IntervalResult run_interval(std::vector<Hub>& hubs, const EpisodeData& data,
                                   const NetworkModel& reduced, const IhrPartition& part,
                                   const DayConfig& cfg, int t) {
    if (t < 1 || t > data.T) throw std::runtime_error("interval outside the horizon");
    IntervalResult res;
    res.t = t;
    std::vector<MatchAmounts> m1(hubs.size());
    std::vector<IhrReport> reports;
    for (std::size_t i = 0; i < hubs.size(); ++i) {
        Hub& hub = hubs[i];
        const IhrEpisode& ep = data.markets[data.market_index(hub.ihr)];
        hub.market = step_arrivals(hub.market, ep.arrivals[t - 1], ep.res[t - 1],
                                   ep.base_q.empty() ? 0.0 : ep.base_q[t - 1]);
        if (hub.market.t != t) throw std::runtime_error("market interval out of step");
        DiscreteMatch dm = agent_decide(hub.agent, hub.market);
        MatchAmounts m = allocate_res_first(dm, hub.market, data.dt);
        m1[i] = deadline_override(m, hub.market, data.dt);
        res.pre_welfare.push_back(match_welfare(hub.market, m1[i]));
        ReactiveCaps caps = reactive_capacities(hub.market);
        reports.push_back({hub.ihr, net_active_flow(m1[i], data.dt), caps.q_min, caps.q_max});
        res.p_net_kw.push_back(reports.back().p_net);
    }

    OpfInstance inst = build_instance(reports, reduced, part, cfg.prices.lambda_rt,
                                      cfg.prices.lambda_c, data.dt);
    res.opf = solve_opf(inst, cfg.cone);

    std::map<int, double> pc;
    if (res.opf.status == OpfStatus::Optimal) {
        for (std::size_t j = 0; j < inst.ihr_ids.size(); ++j)
            pc[inst.ihr_ids[j]] = res.opf.p_c_kw[j] < kCurtailFloorKw ? 0.0 : res.opf.p_c_kw[j];
    } else {
        res.infeasible = true;
        for (const IhrReport& r : reports) pc[r.ihr] = std::max(r.p_net, 0.0);
    }
    for (std::size_t i = 0; i < hubs.size(); ++i)
        coord_detail::settle(hubs[i], m1[i], pc.at(hubs[i].ihr), data.dt, {}, res);
    return res;
}

// ---------------------------------------------------------------------------
// Day loop
// ---------------------------------------------------------------------------

struct DayOutcome {
    std::vector<int> ihr_ids;
    std::vector<int> node_ids;  // reduced-net bus order used in voltage rows
    std::vector<IntervalResult> intervals;
    double pre_total = 0.0, post_total = 0.0;
};

inline DayOutcome run_day(const EpisodeData& data, const std::map<int, IhrAgent>& agents,
                          const NetworkModel& net, const IhrPartition& part,
                          const DayConfig& cfg = {}) {
    NetworkModel reduced = reduce_network(net, part);
    std::vector<Hub> hubs = make_hubs(data, agents, cfg.n_max);
    DayOutcome day;
    day.ihr_ids = data.ihr_ids;
    for (const Bus& b : reduced.buses()) day.node_ids.push_back(b.id);
    for (int t = 1; t <= data.T; ++t) {
        IntervalResult res = run_interval(hubs, data, reduced, part, cfg, t);
        for (double w : res.pre_welfare) day.pre_total += w;
        for (double w : res.post_welfare) day.post_total += w;
        day.intervals.push_back(std::move(res));
    }
    return day;
}

// ---------------------------------------------------------------------------
// Centralized variant: one market over all hubs, then the same OPF
// ---------------------------------------------------------------------------

namespace coord_detail {

inline std::map<int, double> welfare_by_ihr(const IhrMarketState& state, const MatchAmounts& m,
                                            const std::map<int, int>& home,
                                            const std::vector<int>& ihr_ids) {
    std::map<int, double> w;
    for (int ihr : ihr_ids) w[ihr] = 0.0;
    for (auto& [key, kwh] : m.entries) {
        const Customer& cu = state.customer(key.second);
        double pi = willingness(state.c, cu, state.t);
        double cost = key.first == Supply::Grid ? state.c : 0.0;
        w.at(home.at(key.second)) += (pi - cost) * kwh;
    }
    return w;
}

}  // namespace coord_detail

// Pooled matching across all IHRs. Inverter output is attributed to zones in
// proportion to availability, so each zone's report is its customers' draw
// minus its share of the pooled RES dispatch; curtailment then cuts that
// zone's customer matches (either supply) cheapest-forgone-first.
inline DayOutcome run_day_centralized(const EpisodeData& data, const IhrAgent& agent,
                                      const NetworkModel& net, const IhrPartition& part,
                                      const DayConfig& cfg = {}) {
    data.validate();
    NetworkModel reduced = reduce_network(net, part);
    IhrEpisode merged = merged_market(data);
    std::map<int, int> home;  // customer -> IHR
    for (std::size_t i = 0; i < data.markets.size(); ++i)
        for (const auto& lst : data.markets[i].arrivals)
            for (const Customer& cu : lst) home[cu.id] = data.ihr_ids[i];

    int n_max = cfg.n_max;
    if (n_max <= 0) {
        std::size_t peak = 1;
        for (const auto& lst : merged.arrivals) peak = std::max(peak, lst.size());
        n_max = (int)peak;
    }
    Hub hub{0, agent, make_market(data.c, n_max)};

    DayOutcome day;
    day.ihr_ids = data.ihr_ids;
    for (const Bus& b : reduced.buses()) day.node_ids.push_back(b.id);

    for (int t = 1; t <= data.T; ++t) {
        IntervalResult res;
        res.t = t;
        hub.market = step_arrivals(hub.market, merged.arrivals[t - 1], merged.res[t - 1],
                                   merged.base_q[t - 1]);
        DiscreteMatch dm = agent_decide(agent, hub.market);
        MatchAmounts m1 = deadline_override(allocate_res_first(dm, hub.market, data.dt),
                                            hub.market, data.dt);

        auto pre = coord_detail::welfare_by_ihr(hub.market, m1, home, data.ihr_ids);
        for (int ihr : data.ihr_ids) res.pre_welfare.push_back(pre.at(ihr));

        // split the pooled RES dispatch over the zones by availability
        double e_res = m1.supply_total(Supply::Res);
        double avail = 0.0;
        for (const IhrEpisode& ep : data.markets) avail += ep.res[t - 1].r_p;
        std::vector<IhrReport> reports;
        std::vector<std::set<int>> zone_ids(data.ihr_ids.size());
        for (const Customer& cu : hub.market.active)
            zone_ids[data.market_index(home.at(cu.id))].insert(cu.id);
        for (std::size_t i = 0; i < data.ihr_ids.size(); ++i) {
            const IhrEpisode& ep = data.markets[i];
            double draw = 0.0;
            for (auto& [key, kwh] : m1.entries)
                if (home.at(key.second) == data.ihr_ids[i]) draw += kwh;
            double rp = ep.res[t - 1].r_p, rs = ep.res[t - 1].r_s;
            double share = avail > 0 ? rp / avail : 0.0;
            double dispatch_kw = e_res * share / data.dt;
            double rq = std::sqrt(std::max(0.0, rs * rs - rp * rp));
            double bq = ep.base_q.empty() ? 0.0 : ep.base_q[t - 1];
            reports.push_back({data.ihr_ids[i], draw / data.dt - dispatch_kw, bq - rq, bq + rq});
            res.p_net_kw.push_back(reports.back().p_net);
        }

        OpfInstance inst = build_instance(reports, reduced, part, cfg.prices.lambda_rt,
                                          cfg.prices.lambda_c, data.dt);
        res.opf = solve_opf(inst, cfg.cone);
        std::map<int, double> pc;
        if (res.opf.status == OpfStatus::Optimal) {
            for (std::size_t j = 0; j < inst.ihr_ids.size(); ++j)
                pc[inst.ihr_ids[j]] = res.opf.p_c_kw[j] < kCurtailFloorKw ? 0.0 : res.opf.p_c_kw[j];
        } else {
            res.infeasible = true;
            for (const IhrReport& r : reports) pc[r.ihr] = std::max(r.p_net, 0.0);
        }

        MatchAmounts m2 = m1;
        std::set<int> drop;
        for (std::size_t i = 0; i < data.ihr_ids.size(); ++i) {
            RedispatchPolicy rp;
            rp.grid_only = false;
            rp.only_customers = &zone_ids[i];
            RedispatchResult rd = redispatch(hub.market, m2, pc.at(data.ihr_ids[i]), data.dt, rp);
            m2 = rd.m;
            res.curtail_kw.push_back(pc.at(data.ihr_ids[i]));
            res.cuts.push_back(rd.cuts);
            for (const CurtailCut& cut : rd.cuts)
                if (cut.deadline) drop.insert(cut.customer);
        }
        auto post = coord_detail::welfare_by_ihr(hub.market, m2, home, data.ihr_ids);
        for (int ihr : data.ihr_ids) res.post_welfare.push_back(post.at(ihr));
        hub.market = apply_match(hub.market, m2, data.dt, drop.empty() ? nullptr : &drop).first;

        for (double w : res.pre_welfare) day.pre_total += w;
        for (double w : res.post_welfare) day.post_total += w;
        day.intervals.push_back(std::move(res));
    }
    return day;
}

// ---------------------------------------------------------------------------
// Day-report CSVs
// ---------------------------------------------------------------------------

inline std::string welfare_csv(const DayOutcome& day) {
    std::string out = "t,ihr,pre,post\n";
    for (const IntervalResult& r : day.intervals)
        for (std::size_t i = 0; i < day.ihr_ids.size(); ++i)
            out += std::to_string(r.t) + "," + std::to_string(day.ihr_ids[i]) + "," +
                   csv::num(r.pre_welfare[i]) + "," + csv::num(r.post_welfare[i]) + "\n";
    return out;
}

inline std::string voltage_csv(const DayOutcome& day) {
    std::string out = "t,node,v_sq\n";
    for (const IntervalResult& r : day.intervals) {
        if (r.opf.status != OpfStatus::Optimal) continue;
        for (std::size_t k = 0; k < day.node_ids.size(); ++k)
            out += std::to_string(r.t) + "," + std::to_string(day.node_ids[k]) + "," +
                   csv::num(r.opf.v_sq[k]) + "\n";
    }
    return out;
}

inline std::string curtailment_csv(const DayOutcome& day) {
    std::string out = "t,ihr,p_c_kw\n";
    for (const IntervalResult& r : day.intervals)
        for (std::size_t i = 0; i < day.ihr_ids.size(); ++i)
            out += std::to_string(r.t) + "," + std::to_string(day.ihr_ids[i]) + "," +
                   csv::num(r.curtail_kw[i]) + "\n";
    return out;
}

inline std::string violations_csv(const DayOutcome& day) {
    std::string out = "t,ihr,customer,kwh\n";
    for (const IntervalResult& r : day.intervals)
        for (std::size_t i = 0; i < r.cuts.size(); ++i)
            for (const CurtailCut& cut : r.cuts[i])
                if (cut.deadline)
                    out += std::to_string(r.t) + "," + std::to_string(day.ihr_ids[i]) + "," +
                           std::to_string(cut.customer) + "," + csv::num(cut.kwh) + "\n";
    return out;
}

}  // namespace gridmatch
