#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gridmatch/csv.hpp"

namespace gridmatch {

// Remaining demand below this is treated as served (kWh).
constexpr double kServedEps = 1e-9;

// A load request. Flexible customers (EVs) may be served any time in [a, d]
// and their willingness to pay decays at rate b per interval; inflexible
// customers have d = a and must be served on arrival.
struct Customer {
    int id = 0;
    int a = 0;           // arrival interval
    double p = 0.0;      // requested energy, kWh
    int d = 0;           // deadline interval
    double phi_c = 0.0;  // criticality control in [0,1]
    double b = 0.0;      // willingness decay, $/kWh per interval
    double p_u = 0.0;    // unserved energy, kWh
    bool flexible = true;
};

inline void validate_customer(const Customer& cu) {
    if (cu.a > cu.d) throw std::runtime_error("customer " + std::to_string(cu.id) + ": a > d");
    if (cu.p < 0 || cu.p_u < 0 || cu.p_u > cu.p + kServedEps)
        throw std::runtime_error("customer " + std::to_string(cu.id) + ": bad demand");
    if (cu.phi_c < 0 || cu.phi_c > 1)
        throw std::runtime_error("customer " + std::to_string(cu.id) + ": crit control outside [0,1]");
    if (cu.flexible && cu.d <= cu.a)
        throw std::runtime_error("customer " + std::to_string(cu.id) + ": flexible needs d > a");
    if (!cu.flexible && cu.d != cu.a)
        throw std::runtime_error("customer " + std::to_string(cu.id) + ": inflexible needs d = a");
}

// b = phi_c * c / (d - a): willingness reaches (1-phi_c)*c at the deadline.
inline Customer make_flexible(int id, int a, double p_kwh, int d, double phi_c, double c) {
    Customer cu;
    cu.id = id;
    cu.a = a;
    cu.p = cu.p_u = p_kwh;
    cu.d = d;
    cu.phi_c = phi_c;
    cu.flexible = true;
    if (d <= a) throw std::runtime_error("flexible customer needs d > a");
    cu.b = phi_c * c / double(d - a);
    validate_customer(cu);
    return cu;
}

inline Customer make_inflexible(int id, int a, double p_kwh) {
    Customer cu;
    cu.id = id;
    cu.a = a;
    cu.p = cu.p_u = p_kwh;
    cu.d = a;
    cu.phi_c = 0.0;
    cu.b = 0.0;
    cu.flexible = false;
    validate_customer(cu);
    return cu;
}

// pi = c - b*(t - a), the per-kWh valuation at interval t.
inline double willingness(double c, const Customer& cu, int t) {
    if (t < cu.a || t > cu.d)
        throw std::runtime_error("willingness queried outside [a,d] for customer " +
                                 std::to_string(cu.id));
    return c - cu.b * double(t - cu.a);
}

struct ResState {
    double r_p = 0.0;  // available RES output, kW
    double r_s = 0.0;  // inverter apparent capacity, kVA
};

// Decision-time frame of one interval (arrivals applied, matching not yet):
// the record a policy sees and the unit of the episode history.
struct MarketSnapshot {
    int t = 0;
    std::vector<Customer> active;
    ResState res;
    double base_q = 0.0;
};

enum class Supply { Grid = 0, Res = 1 };

inline const char* supply_name(Supply s) { return s == Supply::Grid ? "grid" : "res"; }

// Matched energy per (supply type, customer), kWh for one interval.
struct MatchAmounts {
    std::map<std::pair<Supply, int>, double> entries;

    void add(Supply s, int id, double kwh) {
        if (kwh == 0.0) return;
        entries[{s, id}] += kwh;
    }
    double get(Supply s, int id) const {
        auto it = entries.find({s, id});
        return it == entries.end() ? 0.0 : it->second;
    }
    double total(int id) const { return get(Supply::Grid, id) + get(Supply::Res, id); }
    double supply_total(Supply s) const {
        double sum = 0.0;
        for (auto& [k, v] : entries)
            if (k.first == s) sum += v;
        return sum;
    }
    bool empty() const { return entries.empty(); }
};

// One IHR's matching market. A value type: every transition returns a new
// state. `snap` is the current interval's decision-time frame; `history`
// holds the frames of intervals 1..t-1.
struct IhrMarketState {
    int t = 0;
    std::vector<Customer> active;
    ResState res;
    double c = 0.12;      // grid tariff, $/kWh
    double base_q = 0.0;  // inflexible reactive load, kVAr
    int n_max = 16;       // arrival cap per interval
    std::vector<MarketSnapshot> history;
    MarketSnapshot snap;

    const Customer& customer(int id) const {
        for (const Customer& cu : active)
            if (cu.id == id) return cu;
        throw std::runtime_error("customer " + std::to_string(id) + " not active");
    }
    bool has_customer(int id) const {
        for (const Customer& cu : active)
            if (cu.id == id) return true;
        return false;
    }
};

inline IhrMarketState make_market(double c, int n_max) {
    if (c <= 0 || n_max <= 0) throw std::runtime_error("bad market parameters");
    IhrMarketState st;
    st.c = c;
    st.n_max = n_max;
    return st;
}

// Advance to interval t+1: freeze the previous frame, ingest arrivals and the
// new RES / inflexible-reactive figures.
inline IhrMarketState step_arrivals(const IhrMarketState& state,
                                    const std::vector<Customer>& arrivals, const ResState& res,
                                    double base_q = 0.0) {
    if (res.r_p < -kServedEps || res.r_p > res.r_s + kServedEps)
        throw std::runtime_error("RES output outside [0, inverter capacity]");
    if ((int)arrivals.size() > state.n_max)
        throw std::runtime_error("arrival cap exceeded: " + std::to_string(arrivals.size()) +
                                 " > " + std::to_string(state.n_max));
    IhrMarketState next = state;
    if (next.t > 0) next.history.push_back(next.snap);
    next.t += 1;
    next.res = res;
    next.base_q = base_q;

    std::set<int> ids;
    for (const Customer& cu : next.active) {
        if (cu.d < next.t)
            throw std::runtime_error("customer " + std::to_string(cu.id) +
                                     " stranded past deadline");
        ids.insert(cu.id);
    }
    for (Customer cu : arrivals) {
        if (cu.a != next.t)
            throw std::runtime_error("arrival time mismatch for customer " + std::to_string(cu.id));
        cu.p_u = cu.p;
        validate_customer(cu);
        if (!ids.insert(cu.id).second)
            throw std::runtime_error("duplicate customer id " + std::to_string(cu.id));
        next.active.push_back(cu);
    }
    next.snap = {next.t, next.active, next.res, next.base_q};
    return next;
}

// Social-welfare value of a match against the current state:
// sum over entries of (pi_i - cost_j) * kWh, grid priced at c, RES at 0.
inline double match_welfare(const IhrMarketState& state, const MatchAmounts& m) {
    double w = 0.0;
    for (auto& [key, kwh] : m.entries) {
        const Customer& cu = state.customer(key.second);
        double pi = willingness(state.c, cu, state.t);
        double cost = key.first == Supply::Grid ? state.c : 0.0;
        w += (pi - cost) * kwh;
    }
    return w;
}

// Settle a match: verifies feasibility (per-customer cap, RES cap, full
// service at deadlines), reduces unserved demand, drops served customers.
// Customers listed in deadline_drop are allowed to exit unserved at their
// deadline (central curtailment overriding the market guarantee); everyone
// else triggers an error.
inline std::pair<IhrMarketState, double> apply_match(const IhrMarketState& state,
                                                     const MatchAmounts& m, double dt,
                                                     const std::set<int>* deadline_drop = nullptr) {
    if (dt <= 0) throw std::runtime_error("nonpositive interval length");
    for (auto& [key, kwh] : m.entries) {
        if (kwh < -kServedEps) throw std::runtime_error("negative match amount");
        if (!state.has_customer(key.second))
            throw std::runtime_error("match references inactive customer " +
                                     std::to_string(key.second));
    }
    for (const Customer& cu : state.active)
        if (m.total(cu.id) > cu.p_u + kServedEps)
            throw std::runtime_error("over-service of customer " + std::to_string(cu.id));
    if (m.supply_total(Supply::Res) > state.res.r_p * dt + kServedEps)
        throw std::runtime_error("RES oversubscribed");

    double welfare = match_welfare(state, m);

    IhrMarketState next = state;
    std::vector<Customer> still;
    for (Customer cu : next.active) {
        cu.p_u = std::max(0.0, cu.p_u - m.total(cu.id));
        if (cu.p_u < kServedEps) continue;  // served
        if (cu.d == next.t) {
            if (deadline_drop && deadline_drop->count(cu.id)) continue;  // logged upstream
            throw std::runtime_error("customer " + std::to_string(cu.id) +
                                     " left unserved at its deadline");
        }
        still.push_back(cu);
    }
    next.active = std::move(still);
    return {std::move(next), welfare};
}

// Net active power drawn from the grid by this IHR over the interval, kW.
inline double net_active_flow(const MatchAmounts& m, double dt) {
    if (dt <= 0) throw std::runtime_error("nonpositive interval length");
    return m.supply_total(Supply::Grid) / dt;
}

struct ReactiveCaps {
    double q_min = 0.0;  // kVAr
    double q_max = 0.0;
};

// Reactive headroom of the inverter around the inflexible reactive load:
// r_q = sqrt(r_s^2 - r_p^2), caps = base_q -/+ r_q. Matched EV load is taken
// at unity power factor.
inline ReactiveCaps reactive_capacities(const IhrMarketState& state) {
    double rp = state.res.r_p, rs = state.res.r_s;
    if (rp > rs + kServedEps) throw std::runtime_error("RES output exceeds inverter capacity");
    double rq = std::sqrt(std::max(0.0, rs * rs - rp * rp));
    return {state.base_q - rq, state.base_q + rq};
}

// Audit rows: t,customer,supply,kWh,pi,welfare-contribution
inline std::string match_csv_rows(const IhrMarketState& state, const MatchAmounts& m) {
    std::string out;
    for (auto& [key, kwh] : m.entries) {
        const Customer& cu = state.customer(key.second);
        double pi = willingness(state.c, cu, state.t);
        double cost = key.first == Supply::Grid ? state.c : 0.0;
        out += std::to_string(state.t) + "," + std::to_string(key.second) + "," +
               supply_name(key.first) + "," + csv::num(kwh) + "," + csv::num(pi) + "," +
               csv::num((pi - cost) * kwh) + "\n";
    }
    return out;
}

}  // namespace gridmatch
