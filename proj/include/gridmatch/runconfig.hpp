#pragma once

// One JSON document binds a whole run: network and partition files, the
// scenario recipe, training hyperparameters, prices, solver tolerances, and
// where outputs land. Unknown keys are rejected so typos fail loudly.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridmatch/coordinator.hpp"
#include "gridmatch/learn.hpp"
#include "gridmatch/scenario.hpp"

namespace gridmatch {

struct SolverConfig {
    double tol_feas = 1e-8;
    double tol_gap = 1e-8;
    int max_iter = 200;

    ConeSettings cone() const { return {tol_feas, tol_gap, max_iter}; }
};

struct TrainFileConfig {
    int epochs = 200;
    int batch = 20;
    std::string estimator = "reinforce";
    int k = 4;
    double alpha_theta = 0.01;
    double alpha_phi = 0.01;
    std::vector<int> critic_hidden = {32, 32};
    std::uint64_t seed = 1;
    bool dropout = true;
};

struct EvalFileConfig {
    int episodes = 1;
    std::uint64_t seed = 777;
};

struct RunConfig {
    std::string network;    // feeder CSV (#base_mva/base_kv/slack + B/L rows)
    std::string partition;  // #delta + bus,ihr rows
    std::string peak_load;  // bus,p_kw,q_kvar rows, used by `net validate`
    std::string output_dir = "out";
    std::string solar_profile;  // timestamp,value CSV; empty -> synthetic
    std::string load_profile;
    int threads = 1;
    ScenarioConfig scenario;
    TrainFileConfig train;
    EvalFileConfig eval;
    PriceConfig prices;
    SolverConfig solver;
};

namespace cfg_detail {

using nlohmann::json;

inline void expect_keys(const json& j, std::initializer_list<const char*> keys,
                        const std::string& where) {
    if (!j.is_object()) throw std::runtime_error("config section '" + where + "' must be an object");
    for (auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* allowed : keys)
            if (k == allowed) ok = true;
        if (!ok) throw std::runtime_error("unknown config key '" + k + "' in " + where);
    }
}

template <typename T>
void fetch(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void parse_scenario(const json& j, RunConfig& rc) {
    expect_keys(j,
                {"kind", "T", "dt", "c", "charge_kwh", "phi_lo", "phi_hi", "arrive_lo",
                 "arrive_hi", "dead_lo", "dead_hi", "seed", "ihrs", "solar_profile",
                 "load_profile"},
                "scenario");
    ScenarioConfig& sc = rc.scenario;
    std::string kind = scenario_kind_name(sc.kind);
    fetch(j, "kind", kind);
    sc.kind = parse_scenario_kind(kind);
    fetch(j, "T", sc.T);
    fetch(j, "dt", sc.dt);
    fetch(j, "c", sc.c);
    fetch(j, "charge_kwh", sc.charge_kwh);
    fetch(j, "phi_lo", sc.phi_lo);
    fetch(j, "phi_hi", sc.phi_hi);
    fetch(j, "arrive_lo", sc.arrive_lo);
    fetch(j, "arrive_hi", sc.arrive_hi);
    fetch(j, "dead_lo", sc.dead_lo);
    fetch(j, "dead_hi", sc.dead_hi);
    fetch(j, "seed", sc.seed);
    fetch(j, "solar_profile", rc.solar_profile);
    fetch(j, "load_profile", rc.load_profile);
    if (j.contains("ihrs")) {
        if (!j.at("ihrs").is_array()) throw std::runtime_error("scenario.ihrs must be an array");
        for (const json& z : j.at("ihrs")) {
            expect_keys(z, {"ihr", "ev_count", "inverter_kw", "inflex_p_peak_kw",
                            "inflex_q_peak_kvar"},
                        "scenario.ihrs[]");
            IhrScenario s;
            if (!z.contains("ihr")) throw std::runtime_error("scenario.ihrs[] entry lacks 'ihr'");
            s.ihr = z.at("ihr").get<int>();
            if (s.ihr < 1) throw std::runtime_error("IHR ids must be positive");
            fetch(z, "ev_count", s.ev_count);
            fetch(z, "inverter_kw", s.inverter_kw);
            fetch(z, "inflex_p_peak_kw", s.inflex_p_peak_kw);
            fetch(z, "inflex_q_peak_kvar", s.inflex_q_peak_kvar);
            sc.ihrs.push_back(s);
        }
    }
    sc.validate();
}

inline void parse_train(const json& j, TrainFileConfig& tc) {
    expect_keys(j,
                {"epochs", "batch", "estimator", "k", "alpha_theta", "alpha_phi",
                 "critic_hidden", "seed", "dropout"},
                "train");
    fetch(j, "epochs", tc.epochs);
    fetch(j, "batch", tc.batch);
    fetch(j, "estimator", tc.estimator);
    fetch(j, "k", tc.k);
    fetch(j, "alpha_theta", tc.alpha_theta);
    fetch(j, "alpha_phi", tc.alpha_phi);
    fetch(j, "critic_hidden", tc.critic_hidden);
    fetch(j, "seed", tc.seed);
    fetch(j, "dropout", tc.dropout);
    parse_estimator(tc.estimator);  // reject unknown names now, not mid-run
}

}  // namespace cfg_detail

inline RunConfig parse_run_config(const std::string& text) {
    using cfg_detail::expect_keys;
    using cfg_detail::fetch;
    using nlohmann::json;
    RunConfig rc;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("config is not valid JSON: ") + e.what());
    }
    try {
        expect_keys(j,
                    {"network", "partition", "peak_load", "output_dir", "threads", "scenario",
                     "train", "eval", "prices", "solver"},
                    "the config root");
        fetch(j, "network", rc.network);
        fetch(j, "partition", rc.partition);
        fetch(j, "peak_load", rc.peak_load);
        fetch(j, "output_dir", rc.output_dir);
        fetch(j, "threads", rc.threads);
        if (j.contains("scenario")) cfg_detail::parse_scenario(j.at("scenario"), rc);
        if (j.contains("train")) cfg_detail::parse_train(j.at("train"), rc.train);
        if (j.contains("eval")) {
            expect_keys(j.at("eval"), {"episodes", "seed"}, "eval");
            fetch(j.at("eval"), "episodes", rc.eval.episodes);
            fetch(j.at("eval"), "seed", rc.eval.seed);
        }
        if (j.contains("prices")) {
            expect_keys(j.at("prices"), {"lambda_rt", "lambda_c"}, "prices");
            fetch(j.at("prices"), "lambda_rt", rc.prices.lambda_rt);
            fetch(j.at("prices"), "lambda_c", rc.prices.lambda_c);
        }
        if (j.contains("solver")) {
            expect_keys(j.at("solver"), {"tol_feas", "tol_gap", "max_iter"}, "solver");
            fetch(j.at("solver"), "tol_feas", rc.solver.tol_feas);
            fetch(j.at("solver"), "tol_gap", rc.solver.tol_gap);
            fetch(j.at("solver"), "max_iter", rc.solver.max_iter);
        }
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("config: ") + e.what());
    }
    if (rc.threads < 1) throw std::runtime_error("threads must be at least 1");
    if (rc.eval.episodes < 1) throw std::runtime_error("eval.episodes must be at least 1");
    if (rc.prices.lambda_c <= rc.prices.lambda_rt)
        throw std::runtime_error("curtailment price must exceed the real-time price");
    return rc;
}

// Resolve profile files into the scenario's shape vectors.
inline void load_scenario_shapes(RunConfig& rc) {
    if (!rc.solar_profile.empty())
        rc.scenario.solar_shape =
            normalize_shape(parse_profile_csv(csv::read_file(rc.solar_profile), rc.scenario.T));
    if (!rc.load_profile.empty())
        rc.scenario.load_shape =
            normalize_shape(parse_profile_csv(csv::read_file(rc.load_profile), rc.scenario.T));
}

inline TrainConfig to_train_config(const RunConfig& rc, const EncodeNorms& norms,
                                   std::uint64_t seed) {
    TrainConfig tc;
    tc.epochs = rc.train.epochs;
    tc.batch = rc.train.batch;
    tc.estimator = parse_estimator(rc.train.estimator);
    tc.k = rc.train.k;
    tc.alpha_theta = rc.train.alpha_theta;
    tc.alpha_phi = rc.train.alpha_phi;
    tc.critic_hidden = rc.train.critic_hidden;
    tc.seed = seed;
    tc.norms = norms;
    tc.dt = rc.scenario.dt;
    tc.dropout = rc.train.dropout;
    return tc;
}

// Per-bus peak loads: `bus,p_kw,q_kvar` rows (one optional header line),
// returned in the network's bus order; unlisted buses carry zero.
inline std::pair<std::vector<double>, std::vector<double>> parse_bus_loads(
    const std::string& text, const NetworkModel& net) {
    std::vector<double> p(net.buses().size(), 0.0), q(net.buses().size(), 0.0);
    std::vector<bool> seen(net.buses().size(), false);
    std::size_t pos = 0;
    int lineno = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string row = csv::trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        ++lineno;
        if (row.empty() || row[0] == '#') continue;
        auto f = csv::split(row);
        if (lineno == 1 && !f.empty() && !std::isdigit((unsigned char)f[0][0]) &&
            f[0][0] != '-')
            continue;  // header row
        std::string ctx = "load row " + std::to_string(lineno);
        if (f.size() != 3) throw std::runtime_error("malformed " + ctx);
        int bid = csv::to_int(f[0], ctx);
        if (!net.has_bus(bid))
            throw std::runtime_error(ctx + " references unknown bus " + std::to_string(bid));
        std::size_t idx = net.bus_index(bid);
        if (seen[idx]) throw std::runtime_error("duplicate bus in " + ctx);
        seen[idx] = true;
        p[idx] = csv::to_double(f[1], ctx);
        q[idx] = csv::to_double(f[2], ctx);
    }
    return {std::move(p), std::move(q)};
}

}  // namespace gridmatch
