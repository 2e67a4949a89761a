#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "gridmatch/conic.hpp"
#include "gridmatch/market.hpp"
#include "gridmatch/rng.hpp"

namespace gridmatch {

// Per-customer match bits m_t (1 = matched this interval).
struct DiscreteMatch {
    std::map<int, int> bits;
};

struct MatchProbabilities {
    std::map<int, double> probs;  // each strictly inside (0,1)
};

struct SampledMatch {
    DiscreteMatch match;
    double log_prob = 0.0;  // log probability of the drawn bit vector
};

inline SampledMatch sample_discrete(const MatchProbabilities& mp, Rng& rng) {
    SampledMatch out;
    for (auto& [id, pr] : mp.probs) {
        if (!(pr > 0.0) || !(pr < 1.0))
            throw std::runtime_error("match probability must lie strictly in (0,1)");
        int bit = rng.bernoulli(pr) ? 1 : 0;
        out.match.bits[id] = bit;
        out.log_prob += bit ? std::log(pr) : std::log1p(-pr);
    }
    return out;
}

// Allocation priority: descending willingness, then earlier deadline, then
// lower id. Scarce RES goes to whoever values energy most right now.
inline std::vector<const Customer*> priority_order(const IhrMarketState& state) {
    std::vector<const Customer*> order;
    for (const Customer& cu : state.active) order.push_back(&cu);
    std::sort(order.begin(), order.end(), [&](const Customer* a, const Customer* b) {
        double pa = willingness(state.c, *a, state.t);
        double pb = willingness(state.c, *b, state.t);
        if (pa != pb) return pa > pb;
        if (a->d != b->d) return a->d < b->d;
        return a->id < b->id;
    });
    return order;
}

// phi: turn match bits into amounts. Bit-1 customers get their full p_u,
// RES first in priority order then grid; leftover RES spills to bit-0
// customers in the same order.
inline MatchAmounts allocate_res_first(const DiscreteMatch& dm, const IhrMarketState& state,
                                       double dt) {
    if (dm.bits.size() != state.active.size())
        throw std::runtime_error("match bits must cover exactly the active customers");
    for (const Customer& cu : state.active)
        if (!dm.bits.count(cu.id))
            throw std::runtime_error("missing match bit for customer " + std::to_string(cu.id));

    MatchAmounts m;
    double res_left = state.res.r_p * dt;
    auto order = priority_order(state);
    for (const Customer* cu : order) {
        if (dm.bits.at(cu->id) != 1) continue;
        double from_res = std::min(cu->p_u, res_left);
        res_left -= from_res;
        m.add(Supply::Res, cu->id, from_res);
        m.add(Supply::Grid, cu->id, cu->p_u - from_res);
    }
    for (const Customer* cu : order) {
        if (dm.bits.at(cu->id) == 1) continue;
        if (res_left <= kServedEps) break;
        double from_res = std::min(cu->p_u, res_left);
        res_left -= from_res;
        m.add(Supply::Res, cu->id, from_res);
    }
    return m;
}

// nu: no customer leaves the market unserved — whatever is still missing for
// a customer at its deadline is bought from the grid.
inline MatchAmounts deadline_override(const MatchAmounts& m, const IhrMarketState& state,
                                      double dt) {
    (void)dt;
    MatchAmounts out = m;
    for (const Customer& cu : state.active) {
        if (cu.d != state.t) continue;
        double deficit = cu.p_u - out.total(cu.id);
        if (deficit > kServedEps) out.add(Supply::Grid, cu.id, deficit);
    }
    return out;
}

// MA baseline: serve everyone fully the moment they appear.
inline MatchAmounts match_on_arrival(const IhrMarketState& state, double dt) {
    DiscreteMatch all;
    for (const Customer& cu : state.active) all.bits[cu.id] = 1;
    return allocate_res_first(all, state, dt);
}

// ---------------------------------------------------------------------------
// Hindsight oracle
// ---------------------------------------------------------------------------

// One IHR's complete day: everything the market will see, known up front.
struct IhrEpisode {
    double c = 0.12;  // $/kWh
    int T = 0;
    std::vector<std::vector<Customer>> arrivals;  // [t-1] -> customers with a = t
    std::vector<ResState> res;                    // [t-1]
    std::vector<double> base_q;                   // [t-1], kVAr (may be empty)

    void validate() const {
        if (T < 1 || (int)arrivals.size() != T || (int)res.size() != T)
            throw std::runtime_error("episode arrays must have length T");
        if (!base_q.empty() && (int)base_q.size() != T)
            throw std::runtime_error("episode arrays must have length T");
        for (int t = 1; t <= T; ++t)
            for (const Customer& cu : arrivals[t - 1]) {
                validate_customer(cu);
                if (cu.a != t) throw std::runtime_error("arrival listed under the wrong interval");
                if (cu.d > T) throw std::runtime_error("deadline beyond the horizon");
            }
    }
};

struct OracleResult {
    double welfare = 0.0;
    std::vector<MatchAmounts> schedule;  // [t-1]
};

// Hindsight optimum: with the whole day known, schedule every customer's full
// demand inside its window to maximize total welfare, subject to the per-
// interval RES budgets. A transportation-style LP solved on the cone core.
inline OracleResult offline_oracle(const IhrEpisode& ep, double dt,
                                   const ConeSettings& cfg = {}) {
    ep.validate();
    struct Var {
        Supply s;
        int cust_idx;
        int t;
    };
    std::vector<Customer> custs;
    for (auto& lst : ep.arrivals)
        for (auto& cu : lst) custs.push_back(cu);

    std::vector<Var> vars;
    std::vector<std::vector<int>> cust_vars(custs.size());
    std::vector<std::vector<int>> res_vars(ep.T);
    for (std::size_t i = 0; i < custs.size(); ++i) {
        for (int t = custs[i].a; t <= custs[i].d; ++t) {
            for (Supply s : {Supply::Grid, Supply::Res}) {
                cust_vars[i].push_back((int)vars.size());
                if (s == Supply::Res) res_vars[t - 1].push_back((int)vars.size());
                vars.push_back({s, (int)i, t});
            }
        }
    }
    int n = (int)vars.size();
    OracleResult out;
    out.schedule.assign(ep.T, {});
    if (n == 0) return out;

    ConeProgram p;
    p.c = Eigen::VectorXd::Zero(n);
    for (int v = 0; v < n; ++v) {
        const Customer& cu = custs[vars[v].cust_idx];
        double pi = willingness(ep.c, cu, vars[v].t);
        double cost = vars[v].s == Supply::Grid ? ep.c : 0.0;
        p.c(v) = -(pi - cost);  // maximize welfare
    }
    p.A = Eigen::MatrixXd::Zero((int)custs.size(), n);
    p.b = Eigen::VectorXd::Zero((int)custs.size());
    for (std::size_t i = 0; i < custs.size(); ++i) {
        for (int v : cust_vars[i]) p.A((int)i, v) = 1.0;
        p.b((int)i) = custs[i].p;
    }
    int m = n + ep.T;
    p.G = Eigen::MatrixXd::Zero(m, n);
    p.h = Eigen::VectorXd::Zero(m);
    p.G.block(0, 0, n, n) = -Eigen::MatrixXd::Identity(n, n);
    for (int t = 0; t < ep.T; ++t) {
        for (int v : res_vars[t]) p.G(n + t, v) = 1.0;
        p.h(n + t) = ep.res[t].r_p * dt;
    }
    p.nonneg = m;

    auto sol = solve_cone(p, cfg);
    if (sol.status != ConeStatus::Optimal)
        throw std::runtime_error(std::string("hindsight LP failed: ") +
                                 cone_status_name(sol.status));
    out.welfare = -sol.obj;
    for (int v = 0; v < n; ++v) {
        double amt = std::max(0.0, sol.x(v));
        if (amt > kServedEps)
            out.schedule[vars[v].t - 1].add(vars[v].s, custs[vars[v].cust_idx].id, amt);
    }
    return out;
}

}  // namespace gridmatch
