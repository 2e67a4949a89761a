#include <catch2/catch_amalgamated.hpp>

#include "gridmatch/coordinator.hpp"
#include "gridmatch/learn.hpp"
#include "gridmatch/rng.hpp"

using namespace gridmatch;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

Bus mk_bus(int id) {
    Bus bus;
    bus.id = id;
    bus.v_sq_min = 0.5;
    bus.v_sq_max = 2.0;
    return bus;
}

Line mk_line(int from, int to, double r, double x, double isqmax = 25.0) {
    Line l;
    l.from = from;
    l.to = to;
    l.r = r;
    l.x = x;
    l.i_sq_max = isqmax;
    return l;
}

// slack 1 feeding IHR 7 at bus 2 and IHR 9 at bus 3, 1 MVA / 1 kV base
NetworkModel star(double isq12 = 25.0, double isq13 = 25.0, double r = 1e-4, double x = 1e-4) {
    return NetworkModel({mk_bus(1), mk_bus(2), mk_bus(3)},
                        {mk_line(1, 2, r, x, isq12), mk_line(1, 3, r, x, isq13)}, 1, 1.0, 1.0);
}

IhrPartition star_part(double delta = 0.1) {
    IhrPartition part;
    part.zones = {{2, 7}, {3, 9}};
    part.interconnect = {{7, 2}, {9, 3}};
    part.delta = delta;
    return part;
}

NetworkModel two_node(double isqmax = 25.0, double r = 0.01, double x = 0.01) {
    return NetworkModel({mk_bus(1), mk_bus(2)}, {mk_line(1, 2, r, x, isqmax)}, 1, 1.0, 1.0);
}

IhrPartition two_node_part(double delta = 0.05) {
    IhrPartition part;
    part.zones = {{2, 1}};
    part.interconnect = {{1, 2}};
    part.delta = delta;
    return part;
}

IhrEpisode empty_ep(int T) {
    IhrEpisode ep;
    ep.c = 0.12;
    ep.T = T;
    ep.arrivals.resize(T);
    ep.res.assign(T, ResState{});
    ep.base_q.assign(T, 0.0);
    return ep;
}

EpisodeData make_day(const std::vector<int>& ihrs, int T) {
    EpisodeData d;
    d.T = T;
    d.dt = 0.5;
    d.c = 0.12;
    d.ihr_ids = ihrs;
    for (std::size_t i = 0; i < ihrs.size(); ++i) {
        d.markets.push_back(empty_ep(T));
        d.inflex_p_kw.emplace_back(T, 0.0);
        d.inflex_q_kvar.emplace_back(T, 0.0);
    }
    return d;
}

std::map<int, IhrAgent> ma_agents(const EpisodeData& data) {
    std::map<int, IhrAgent> ag;
    for (int ihr : data.ihr_ids) ag[ihr] = ma_agent();
    return ag;
}

// market at t=2 holding the given t=1 arrivals
IhrMarketState market_at_2(const std::vector<Customer>& arrivals, ResState res = {}) {
    IhrMarketState st = make_market(0.12, 8);
    st = step_arrivals(st, arrivals, res);
    return step_arrivals(st, {}, res);
}

// Per-IHR matching day with no network in the loop: the welfare the hub
// would collect if the grid never pushed back.
double standalone_welfare(const IhrEpisode& ep, double dt) {
    IhrMarketState st = make_market(ep.c, 64);
    double total = 0.0;
    for (int t = 1; t <= ep.T; ++t) {
        st = step_arrivals(st, ep.arrivals[t - 1], ep.res[t - 1],
                           ep.base_q.empty() ? 0.0 : ep.base_q[t - 1]);
        MatchAmounts m = deadline_override(match_on_arrival(st, dt), st, dt);
        auto [next, w] = apply_match(st, m, dt);
        st = std::move(next);
        total += w;
    }
    return total;
}

}  // namespace

TEST_CASE("redispatch: p_c = 0 is the identity") {
    IhrMarketState st = market_at_2({make_flexible(1, 1, 4.0, 5, 0.5, 0.12)});
    MatchAmounts m;
    m.add(Supply::Grid, 1, 1.5);
    RedispatchResult rd = redispatch(st, m, 0.0, 0.5);
    CHECK(rd.cuts.empty());
    CHECK(rd.returned.empty());
    CHECK(rd.m.get(Supply::Grid, 1) == 1.5);
}

TEST_CASE("redispatch: cheapest forgone welfare is cut first") {
    // at t=2: pi(A) = 0.12 - 0.015, pi(B) = 0.12 - 0.030; both grid-matched,
    // so B forgoes less welfare and must be cut first
    IhrMarketState st = market_at_2(
        {make_flexible(1, 1, 4.0, 5, 0.5, 0.12), make_flexible(2, 1, 4.0, 5, 1.0, 0.12)});
    MatchAmounts m;
    m.add(Supply::Grid, 1, 1.0);
    m.add(Supply::Grid, 2, 1.0);

    SECTION("partial cut hits only the cheap customer") {
        RedispatchResult rd = redispatch(st, m, 2.0, 0.5);  // need 1.0 kWh
        REQUIRE(rd.cuts.size() == 1);
        CHECK(rd.cuts[0].customer == 2);
        CHECK_THAT(rd.cuts[0].kwh, WithinAbs(1.0, 1e-12));
        CHECK_FALSE(rd.cuts[0].deadline);
        CHECK(rd.returned == std::vector<int>{2});
        CHECK(rd.m.get(Supply::Grid, 1) == 1.0);
        CHECK(rd.m.get(Supply::Grid, 2) == 0.0);
    }
    SECTION("deeper cut spills onto the next customer") {
        RedispatchResult rd = redispatch(st, m, 3.0, 0.5);  // need 1.5 kWh
        REQUIRE(rd.cuts.size() == 2);
        double total_cut = 0.0;
        for (const CurtailCut& cut : rd.cuts) total_cut += cut.kwh;
        CHECK_THAT(total_cut, WithinAbs(1.5, 1e-12));
        CHECK_THAT(rd.m.get(Supply::Grid, 1), WithinAbs(0.5, 1e-12));
        CHECK(rd.m.get(Supply::Grid, 2) == 0.0);
    }
    SECTION("cut beyond the curtailable pool throws") {
        CHECK_THROWS_WITH(redispatch(st, m, 4.2, 0.5), ContainsSubstring("curtailment exceeds"));
    }
}

TEST_CASE("redispatch: grid_only leaves RES matches alone") {
    IhrMarketState st = market_at_2({make_flexible(1, 1, 4.0, 5, 0.5, 0.12)}, {4.0, 6.0});
    MatchAmounts m;
    m.add(Supply::Grid, 1, 1.0);
    m.add(Supply::Res, 1, 0.7);

    RedispatchResult rd = redispatch(st, m, 2.0, 0.5);  // exactly the grid booking
    CHECK(rd.m.get(Supply::Grid, 1) == 0.0);
    CHECK(rd.m.get(Supply::Res, 1) == 0.7);

    // with the whole pool open, grid still goes first: forgone pi - c < pi
    RedispatchPolicy rp;
    rp.grid_only = false;
    RedispatchResult rd2 = redispatch(st, m, 2.4, 0.5, rp);  // need 1.2
    CHECK(rd2.m.get(Supply::Grid, 1) == 0.0);
    CHECK_THAT(rd2.m.get(Supply::Res, 1), WithinAbs(0.5, 1e-12));
}

TEST_CASE("redispatch: only_customers restricts the pool") {
    IhrMarketState st = market_at_2(
        {make_flexible(1, 1, 4.0, 5, 0.5, 0.12), make_flexible(2, 1, 4.0, 5, 1.0, 0.12)});
    MatchAmounts m;
    m.add(Supply::Grid, 1, 1.0);
    m.add(Supply::Grid, 2, 1.0);
    std::set<int> pool = {1};
    RedispatchPolicy rp;
    rp.only_customers = &pool;
    RedispatchResult rd = redispatch(st, m, 2.0, 0.5, rp);
    REQUIRE(rd.cuts.size() == 1);
    CHECK(rd.cuts[0].customer == 1);  // customer 2 is cheaper but out of the pool
    CHECK(rd.m.get(Supply::Grid, 2) == 1.0);
}

TEST_CASE("redispatch: ties break toward the longer window, then the lower id") {
    SECTION("equal forgone welfare, different deadlines") {
        // -phi*c*(t-a)/(d-a) equal: phi=0.25,d=3 vs phi=0.5,d=5
        IhrMarketState st = market_at_2(
            {make_flexible(5, 1, 4.0, 3, 0.25, 0.12), make_flexible(6, 1, 4.0, 5, 0.5, 0.12)});
        MatchAmounts m;
        m.add(Supply::Grid, 5, 1.0);
        m.add(Supply::Grid, 6, 1.0);
        RedispatchResult rd = redispatch(st, m, 2.0, 0.5);
        REQUIRE(rd.cuts.size() == 1);
        CHECK(rd.cuts[0].customer == 6);  // more future intervals to recover in
    }
    SECTION("identical customers fall back to the id") {
        IhrMarketState st = market_at_2(
            {make_flexible(3, 1, 4.0, 5, 0.5, 0.12), make_flexible(4, 1, 4.0, 5, 0.5, 0.12)});
        MatchAmounts m;
        m.add(Supply::Grid, 3, 1.0);
        m.add(Supply::Grid, 4, 1.0);
        RedispatchResult rd = redispatch(st, m, 2.0, 0.5);
        REQUIRE(rd.cuts.size() == 1);
        CHECK(rd.cuts[0].customer == 3);
    }
}

TEST_CASE("redispatch: cutting a deadline customer strands it") {
    IhrMarketState st = market_at_2({make_flexible(7, 1, 4.0, 2, 0.5, 0.12)});
    MatchAmounts m;
    m.add(Supply::Grid, 7, 4.0);
    RedispatchResult rd = redispatch(st, m, 2.0, 0.5);
    REQUIRE(rd.cuts.size() == 1);
    CHECK(rd.cuts[0].customer == 7);
    CHECK(rd.cuts[0].deadline);
    CHECK(rd.returned.empty());

    // apply_match accepts the exit only when the drop set names the customer
    CHECK_THROWS_WITH(apply_match(st, rd.m, 0.5), ContainsSubstring("deadline"));
    std::set<int> drop = {7};
    auto [next, w] = apply_match(st, rd.m, 0.5, &drop);
    CHECK_FALSE(next.has_customer(7));
    CHECK_THAT(w, WithinAbs((0.06 - 0.12) * 3.0, 1e-12));  // pi(2) = c - 0.06*(2-1)
}

TEST_CASE("run_day: an empty day is exactly zero") {
    EpisodeData data = make_day({7, 9}, 3);
    DayOutcome day = run_day(data, ma_agents(data), star(), star_part());
    REQUIRE(day.intervals.size() == 3);
    CHECK(day.node_ids == std::vector<int>{1, 2, 3});
    CHECK(day.pre_total == 0.0);
    CHECK(day.post_total == 0.0);
    for (const IntervalResult& r : day.intervals) {
        CHECK_FALSE(r.infeasible);
        CHECK(r.opf.status == OpfStatus::Optimal);
        for (double w : r.pre_welfare) CHECK(w == 0.0);
        for (double p : r.p_net_kw) CHECK(p == 0.0);
        for (double p : r.curtail_kw) CHECK_THAT(p, WithinAbs(0.0, 1e-6));
        for (double v : r.opf.v_sq) CHECK_THAT(v, WithinAbs(1.0, 1e-5));
        CHECK_THAT(r.opf.p_g_kw, WithinAbs(0.0, 1e-3));
    }
}

TEST_CASE("run_day: generous network never curtails and matches the standalone markets") {
    EpisodeData data = make_day({7, 9}, 4);
    data.markets[0].arrivals[0] = {make_flexible(1, 1, 3.0, 3, 0.5, 0.12),
                                   make_flexible(2, 1, 2.0, 4, 1.0, 0.12)};
    data.markets[0].arrivals[1] = {make_flexible(3, 2, 4.0, 4, 0.25, 0.12)};
    data.markets[0].res.assign(4, {2.0, 5.0});
    data.markets[0].base_q.assign(4, 1.0);
    data.markets[1].arrivals[0] = {make_flexible(11, 1, 5.0, 4, 0.75, 0.12)};
    data.markets[1].arrivals[2] = {make_flexible(12, 3, 1.5, 4, 0.5, 0.12)};
    data.markets[1].res.assign(4, {0.0, 3.0});
    data.markets[1].base_q.assign(4, 0.5);

    NetworkModel net = star();
    IhrPartition part = star_part();
    DayOutcome day = run_day(data, ma_agents(data), net, part);

    double expect = standalone_welfare(data.markets[0], data.dt) +
                    standalone_welfare(data.markets[1], data.dt);
    CHECK_THAT(day.pre_total, WithinAbs(expect, 1e-9));
    CHECK_THAT(day.post_total, WithinAbs(day.pre_total, 1e-6));

    NetworkModel red = reduce_network(net, part);
    for (const IntervalResult& r : day.intervals) {
        REQUIRE(r.opf.status == OpfStatus::Optimal);
        for (double p : r.curtail_kw) CHECK_THAT(p, WithinAbs(0.0, 1e-3));
        // voltages stay inside the partition's service band
        for (std::size_t k = 0; k < r.opf.v_sq.size(); ++k) {
            const Bus& b = red.buses()[k];
            CHECK(r.opf.v_sq[k] >= b.v_sq_min - 1e-7);
            CHECK(r.opf.v_sq[k] <= b.v_sq_max + 1e-7);
        }
        // active power balance: injection = delivered + line losses + shunts
        double delivered = 0.0;
        for (std::size_t i = 0; i < r.p_net_kw.size(); ++i)
            delivered += kw_to_pu(r.p_net_kw[i] - r.curtail_kw[i], red.base_mva());
        double loss = 0.0;
        for (std::size_t l = 0; l < red.lines().size(); ++l)
            loss += red.lines()[l].r * r.opf.line_i_sq[l];
        double shunt = 0.0;
        for (std::size_t k = 0; k < red.buses().size(); ++k)
            shunt += red.buses()[k].g_shunt * r.opf.v_sq[k];
        CHECK_THAT(kw_to_pu(r.opf.p_g_kw, red.base_mva()), WithinAbs(delivered + loss + shunt, 2e-6));
    }
}

TEST_CASE("run_day: a binding feeder line curtails only the zone behind it") {
    // line to bus 2 caps around 99.9 kW; the 60 kWh EV asks for 120 kW at t=1
    EpisodeData data = make_day({7, 9}, 4);
    data.markets[0].arrivals[0] = {make_flexible(1, 1, 60.0, 4, 0.5, 0.12)};
    data.markets[1].arrivals[0] = {make_flexible(11, 1, 5.0, 4, 0.5, 0.12)};

    NetworkModel net = star(0.01, 25.0, 0.01, 0.01);
    IhrPartition part = star_part(0.05);
    DayOutcome day = run_day(data, ma_agents(data), net, part);

    const IntervalResult& first = day.intervals[0];
    REQUIRE(first.opf.status == OpfStatus::Optimal);
    CHECK_THAT(first.p_net_kw[0], WithinAbs(120.0, 1e-9));
    CHECK(first.curtail_kw[0] > 15.0);
    CHECK(first.curtail_kw[0] < 25.0);
    CHECK_THAT(first.curtail_kw[1], WithinAbs(0.0, 1e-3));
    // grid cuts forgo pi - c <= 0, so settled welfare never drops below the plan
    CHECK(first.post_welfare[0] >= first.pre_welfare[0] - 1e-12);
    REQUIRE_FALSE(first.cuts[0].empty());
    CHECK(first.cuts[1].empty());
    CHECK_THAT(first.opf.line_i_sq[0], WithinAbs(0.01, 1e-5));

    // the zone recovers: everything is delivered by the deadline, nothing stranded
    for (const IntervalResult& r : day.intervals)
        for (const auto& cuts : r.cuts)
            for (const CurtailCut& cut : cuts) CHECK_FALSE(cut.deadline);
    double delivered7 = 0.0, delivered9 = 0.0;
    for (const IntervalResult& r : day.intervals) {
        delivered7 += (r.p_net_kw[0] - r.curtail_kw[0]) * data.dt;
        delivered9 += (r.p_net_kw[1] - r.curtail_kw[1]) * data.dt;
    }
    CHECK_THAT(delivered7, WithinAbs(60.0, 0.1));
    CHECK_THAT(delivered9, WithinAbs(5.0, 0.1));
}

TEST_CASE("run_day: an infeasible interval flags and falls back to RES-only") {
    // 300 kVAr of inflexible reactive load behind x = 0.01 pu sags the bus
    // below the 0.2% band no matter how much active power is cut
    EpisodeData data = make_day({1}, 2);
    data.markets[0].arrivals[0] = {make_flexible(41, 1, 2.0, 2, 0.5, 0.12)};
    data.markets[0].res.assign(2, {0.0, 1.0});
    data.markets[0].base_q.assign(2, 300.0);
    data.inflex_q_kvar[0].assign(2, 300.0);

    DayOutcome day = run_day(data, ma_agents(data), two_node(), two_node_part(0.002));
    REQUIRE(day.intervals.size() == 2);
    for (const IntervalResult& r : day.intervals) {
        CHECK(r.infeasible);
        CHECK(r.opf.status != OpfStatus::Optimal);
        CHECK_THAT(r.opf.message, ContainsSubstring("infeasible"));
        // zero-grid fallback: the whole report is curtailed
        CHECK_THAT(r.curtail_kw[0], WithinAbs(r.p_net_kw[0], 1e-12));
        CHECK_THAT(r.post_welfare[0], WithinAbs(0.0, 1e-12));
    }
    // t=1 books 4 kW, all cut; t=2 is the deadline, so the retry strands
    CHECK_THAT(day.intervals[0].p_net_kw[0], WithinAbs(4.0, 1e-9));
    REQUIRE(day.intervals[1].cuts[0].size() == 1);
    CHECK(day.intervals[1].cuts[0][0].deadline);
    CHECK_THAT(day.intervals[1].cuts[0][0].kwh, WithinAbs(2.0, 1e-9));

    std::string viol = violations_csv(day);
    CHECK_THAT(viol, ContainsSubstring("t,ihr,customer,kwh\n"));
    CHECK_THAT(viol, ContainsSubstring("2,1,41,2\n"));
    CHECK(voltage_csv(day) == "t,node,v_sq\n");  // no optimal interval to report
}

TEST_CASE("centralized day on one zone agrees with the decentralized day") {
    EpisodeData data = make_day({1}, 4);
    data.markets[0].arrivals[0] = {make_flexible(1, 1, 30.0, 4, 0.5, 0.12),
                                   make_flexible(2, 1, 30.0, 4, 1.0, 0.12)};
    data.markets[0].res.assign(4, {20.0, 30.0});
    data.markets[0].base_q.assign(4, 10.0);

    NetworkModel net = two_node(0.008);
    IhrPartition part = two_node_part(0.05);
    DayOutcome dec = run_day(data, ma_agents(data), net, part);
    DayOutcome cen = run_day_centralized(data, ma_agent(), net, part);

    double cut_dec = 0.0, cut_cen = 0.0;
    for (std::size_t i = 0; i < dec.intervals.size(); ++i) {
        cut_dec += dec.intervals[i].curtail_kw[0];
        cut_cen += cen.intervals[i].curtail_kw[0];
        CHECK_THAT(cen.intervals[i].p_net_kw[0],
                   WithinAbs(dec.intervals[i].p_net_kw[0], 1e-9));
    }
    CHECK(cut_dec > 1.0);  // the current cap really binds
    CHECK_THAT(cut_cen, WithinAbs(cut_dec, 1e-3));
    CHECK_THAT(cen.pre_total, WithinAbs(dec.pre_total, 1e-9));
    CHECK_THAT(cen.post_total, WithinAbs(dec.post_total, 1e-4));
}

TEST_CASE("centralized pooling moves surplus RES across zones") {
    EpisodeData data = make_day({7, 9}, 2);
    data.markets[0].arrivals[0] = {make_flexible(1, 1, 1.0, 2, 0.5, 0.12)};
    data.markets[0].res.assign(2, {10.0, 12.0});
    data.markets[1].arrivals[0] = {make_flexible(11, 1, 20.0, 2, 0.5, 0.12)};

    NetworkModel net = star();
    IhrPartition part = star_part();
    DayOutcome dec = run_day(data, ma_agents(data), net, part);
    DayOutcome cen = run_day_centralized(data, ma_agent(), net, part);

    // decentralized: only 1 kWh of the 5 kWh RES window is usable in zone 7
    CHECK_THAT(dec.pre_total, WithinAbs(0.12 * 1.0, 1e-9));
    // pooled: the full 5 kWh clears against zone 9's demand
    CHECK_THAT(cen.pre_total, WithinAbs(0.12 * 5.0, 1e-9));
    CHECK_THAT(cen.post_total, WithinAbs(cen.pre_total, 1e-6));

    // zone 7 exports its surplus share, zone 9 draws the rest
    const IntervalResult& r = cen.intervals[0];
    CHECK_THAT(r.p_net_kw[0], WithinAbs(1.0 / 0.5 - 10.0, 1e-9));
    CHECK_THAT(r.p_net_kw[1], WithinAbs(40.0, 1e-9));
    CHECK_THAT(r.curtail_kw[0], WithinAbs(0.0, 1e-6));  // exporters cannot be curtailed
    REQUIRE(r.opf.status == OpfStatus::Optimal);
}

TEST_CASE("day reports carry the right rows") {
    EpisodeData data = make_day({7, 9}, 2);
    data.markets[0].arrivals[0] = {make_flexible(1, 1, 2.0, 2, 0.5, 0.12)};
    DayOutcome day = run_day(data, ma_agents(data), star(), star_part());

    std::string wf = welfare_csv(day);
    CHECK_THAT(wf, ContainsSubstring("t,ihr,pre,post\n"));
    CHECK(std::count(wf.begin(), wf.end(), '\n') == 1 + 2 * 2);

    std::string volt = voltage_csv(day);
    CHECK_THAT(volt, ContainsSubstring("t,node,v_sq\n"));
    CHECK(std::count(volt.begin(), volt.end(), '\n') == 1 + 2 * 3);

    std::string cur = curtailment_csv(day);
    CHECK_THAT(cur, ContainsSubstring("t,ihr,p_c_kw\n"));
    CHECK(std::count(cur.begin(), cur.end(), '\n') == 1 + 2 * 2);

    CHECK(violations_csv(day) == "t,ihr,customer,kwh\n");
}

TEST_CASE("agents: MA matches everyone, a fresh TCN still yields valid bits") {
    EpisodeData data = make_day({7}, 3);
    data.markets[0].arrivals[0] = {make_flexible(1, 1, 3.0, 3, 0.5, 0.12),
                                   make_flexible(2, 1, 1.0, 3, 1.0, 0.12)};
    IhrMarketState st = make_market(0.12, 8);
    st = step_arrivals(st, data.markets[0].arrivals[0], {0.0, 1.0});

    DiscreteMatch ma = agent_decide(ma_agent(), st);
    REQUIRE(ma.bits.size() == 2);
    for (auto& [id, bit] : ma.bits) CHECK(bit == 1);

    Rng rng(99);
    EncodeNorms norms = suggest_norms(data);
    TcnParams tcn = make_tcn(frame_channels(norms), norms.n_slots, rng);
    DiscreteMatch nn = agent_decide(learned_agent(tcn, norms), st);
    REQUIRE(nn.bits.size() == 2);
    for (auto& [id, bit] : nn.bits) CHECK((bit == 0 || bit == 1));
    // whatever the bits, the downstream allocation must be applicable
    MatchAmounts m = deadline_override(allocate_res_first(nn, st, 0.5), st, 0.5);
    CHECK_NOTHROW(match_welfare(st, m));
}

TEST_CASE("make_hubs: every IHR needs an agent") {
    EpisodeData data = make_day({7, 9}, 2);
    std::map<int, IhrAgent> ag;
    ag[7] = ma_agent();
    CHECK_THROWS_WITH(make_hubs(data, ag), ContainsSubstring("no agent configured"));
}
