#include <CLI11.hpp>

#include <Eigen/Core>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "gridmatch/runconfig.hpp"

namespace fs = std::filesystem;
using namespace gridmatch;

namespace {

RunConfig load_config(const std::string& path, bool required) {
    if (!fs::exists(path)) {
        if (required)
            throw std::runtime_error("config file '" + path +
                                     "' not found (set --config or GRIDMATCH_CONFIG)");
        return {};
    }
    RunConfig rc = parse_run_config(csv::read_file(path));
    // Input files resolve against the config's directory, so bundled configs
    // work from any working directory. output_dir stays relative to the CWD.
    fs::path base = fs::path(path).parent_path();
    for (std::string* p : {&rc.network, &rc.partition, &rc.peak_load, &rc.solar_profile,
                           &rc.load_profile})
        if (!p->empty() && fs::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
    return rc;
}

void write_under(const std::string& path, const std::string& content) {
    fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    csv::write_file(path, content);
}

void append_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for appending");
    out << content;
}

// Distinct, reproducible parameter/rollout streams per agent; 0 is the
// central agent, zone ids are positive.
std::uint64_t agent_seed(std::uint64_t base, int ihr) {
    return base ^ (0x9e3779b97f4a7c15ULL * (std::uint64_t)(ihr + 1));
}

int cmd_net_validate(const RunConfig& rc) {
    if (rc.network.empty() || rc.partition.empty() || rc.peak_load.empty())
        throw std::runtime_error("net validate needs network, partition, and peak_load files");
    NetworkModel net = parse_network(csv::read_file(rc.network));
    IhrPartition part = parse_partition(csv::read_file(rc.partition), net);
    auto [p_kw, q_kvar] = parse_bus_loads(csv::read_file(rc.peak_load), net);
    PartitionReport rep = validate_partition(net, part, p_kw, q_kvar);
    for (auto& [ihr, spread] : rep.spread)
        std::cout << "IHR " << ihr << ": intra-zone voltage spread " << csv::num(spread)
                  << " pu\n";
    if (!rep.pass) {
        std::cout << "FAIL: IHR " << rep.worst_ihr << " spreads " << csv::num(rep.worst_spread)
                  << " pu, at or over the delta = " << csv::num(part.delta) << " budget\n";
        return 2;
    }
    std::cout << "OK: " << rep.spread.size() << " zones within delta = " << csv::num(part.delta)
              << "\n";
    return 0;
}

int cmd_scenario_gen(RunConfig rc, std::string out_path) {
    if (rc.scenario.ihrs.empty()) throw std::runtime_error("the scenario section lists no IHRs");
    load_scenario_shapes(rc);
    Rng rng(rc.scenario.seed);
    EpisodeData data = gen_scenario(rc.scenario, rng);
    if (out_path.empty())
        out_path = (fs::path(rc.output_dir) /
                    (std::string("episode_") + scenario_kind_name(rc.scenario.kind) + "_seed" +
                     std::to_string(rc.scenario.seed) + ".csv"))
                       .string();
    write_under(out_path, episode_csv(data));
    int evs = 0;
    for (const IhrEpisode& ep : data.markets)
        for (const auto& lst : ep.arrivals)
            for (const Customer& cu : lst) evs += cu.flexible ? 1 : 0;
    std::cout << "wrote " << out_path << ": " << data.ihr_ids.size() << " IHRs, " << evs
              << " EVs, T = " << data.T << "\n";
    return 0;
}

struct TrainArgs {
    int ihr = -1;  // -1 = every zone plus the central agent; 0 = central only
    int epochs = 0;
    bool resume = false;
    bool timing = false;
};

int cmd_train(RunConfig rc, const TrainArgs& args) {
    if (rc.scenario.ihrs.empty()) throw std::runtime_error("the scenario section lists no IHRs");
    load_scenario_shapes(rc);
    if (args.epochs > 0) rc.train.epochs = args.epochs;
    fs::create_directories(rc.output_dir);

    auto train_one = [&](int ihr_id, const std::string& tag, bool merged, int idx) {
        EncodeNorms norms = scenario_norms(rc.scenario, merged);
        TrainConfig tc = to_train_config(rc, norms, agent_seed(rc.train.seed, ihr_id));
        tc.timing = args.timing;
        std::string ck_path = (fs::path(rc.output_dir) / ("ckpt_" + tag + ".csv")).string();
        std::string curve_path = (fs::path(rc.output_dir) / ("curve_" + tag + ".csv")).string();
        Learner L;
        bool appending = false;
        if (args.resume && fs::exists(ck_path)) {
            L = from_checkpoint(load_checkpoint(csv::read_file(ck_path)));
            appending = fs::exists(curve_path);
        } else {
            L = make_learner(tc);
        }
        int more = (int)std::max(0LL, (long long)tc.epochs - L.epoch);
        const ScenarioConfig sc = rc.scenario;
        auto source = [sc, merged, idx](long long e) -> IhrEpisode {
            Rng r = Rng::derive(sc.seed, (std::uint64_t)e + 1);
            EpisodeData day = gen_scenario(sc, r);
            return merged ? merged_market(day) : day.markets[idx];
        };
        std::vector<EpochLog> curve = train(L, tc, more, source);
        std::string rows;
        for (const EpochLog& l : curve) rows += epoch_log_row(l) + "\n";
        if (appending)
            append_file(curve_path, rows);
        else
            csv::write_file(curve_path, epoch_log_header() + "\n" + rows);
        csv::write_file(ck_path, save_checkpoint(to_checkpoint(L)));
        double avg = L.welfare_count ? L.welfare_accum / (double)L.welfare_count : 0.0;
        std::cout << tag << ": +" << more << " epochs (" << L.epoch
                  << " total), running avg welfare " << csv::num(avg) << "\n";
    };

    bool any = false;
    for (std::size_t i = 0; i < rc.scenario.ihrs.size(); ++i) {
        int id = rc.scenario.ihrs[i].ihr;
        if (args.ihr >= 0 && args.ihr != id) continue;
        train_one(id, "ihr" + std::to_string(id), false, (int)i);
        any = true;
    }
    if (args.ihr <= 0) {
        train_one(0, "central", true, 0);
        any = true;
    }
    if (!any) throw std::runtime_error("scenario has no IHR " + std::to_string(args.ihr));
    return 0;
}

int cmd_eval(RunConfig rc, int episodes_override) {
    if (rc.scenario.ihrs.empty()) throw std::runtime_error("the scenario section lists no IHRs");
    if (rc.network.empty() || rc.partition.empty())
        throw std::runtime_error("eval needs network and partition files in the config");
    load_scenario_shapes(rc);
    if (episodes_override > 0) rc.eval.episodes = episodes_override;
    NetworkModel net = parse_network(csv::read_file(rc.network));
    IhrPartition part = parse_partition(csv::read_file(rc.partition), net);
    fs::path dir(rc.output_dir);
    fs::create_directories(dir);

    EncodeNorms zone_norms = scenario_norms(rc.scenario, false);
    EncodeNorms central_norms = scenario_norms(rc.scenario, true);
    auto load_agent = [&](const std::string& tag, const EncodeNorms& norms) {
        std::string path = (dir / ("ckpt_" + tag + ".csv")).string();
        if (!fs::exists(path))
            throw std::runtime_error("missing checkpoint '" + path +
                                     "'; run `gridmatch train` first");
        Checkpoint ck = load_checkpoint(csv::read_file(path));
        if (ck.policy.n_out != norms.n_slots)
            throw std::runtime_error("checkpoint '" + path +
                                     "' does not fit this scenario's geometry");
        return learned_agent(ck.policy, norms);
    };

    std::map<int, IhrAgent> la, ma;
    for (const IhrScenario& z : rc.scenario.ihrs) {
        la[z.ihr] = load_agent("ihr" + std::to_string(z.ihr), zone_norms);
        ma[z.ihr] = ma_agent();
    }
    IhrAgent la_central = load_agent("central", central_norms);

    DayConfig dc;
    dc.prices = rc.prices;
    dc.cone = rc.solver.cone();

    double sum[2][2] = {{0.0, 0.0}, {0.0, 0.0}};  // [la][centralized]
    long long infeasible = 0, violations = 0;
    for (int e = 0; e < rc.eval.episodes; ++e) {
        Rng r = Rng::derive(rc.eval.seed, (std::uint64_t)e);
        EpisodeData day_data = gen_scenario(rc.scenario, r);
        DayOutcome cells[2][2];
        cells[0][0] = run_day(day_data, ma, net, part, dc);
        cells[0][1] = run_day_centralized(day_data, ma_agent(), net, part, dc);
        cells[1][0] = run_day(day_data, la, net, part, dc);
        cells[1][1] = run_day_centralized(day_data, la_central, net, part, dc);
        for (int a = 0; a < 2; ++a)
            for (int m = 0; m < 2; ++m) {
                sum[a][m] += cells[a][m].post_total;
                for (const IntervalResult& iv : cells[a][m].intervals) {
                    infeasible += iv.infeasible ? 1 : 0;
                    for (const auto& cs : iv.cuts)
                        for (const CurtailCut& cut : cs) violations += cut.deadline ? 1 : 0;
                }
            }
        if (e == 0) {
            const char* an[2] = {"ma", "la"};
            const char* mn[2] = {"dec", "cen"};
            for (int a = 0; a < 2; ++a)
                for (int m = 0; m < 2; ++m) {
                    std::string sfx = std::string("_") + an[a] + "_" + mn[m] + ".csv";
                    const DayOutcome& day = cells[a][m];
                    csv::write_file((dir / ("welfare" + sfx)).string(), welfare_csv(day));
                    csv::write_file((dir / ("voltage" + sfx)).string(), voltage_csv(day));
                    csv::write_file((dir / ("curtailment" + sfx)).string(),
                                    curtailment_csv(day));
                    csv::write_file((dir / ("violations" + sfx)).string(),
                                    violations_csv(day));
                }
        }
    }
    double n = (double)rc.eval.episodes;
    std::string table = "model,centralized,decentralized\n";
    table += "LA," + csv::num(sum[1][1] / n) + "," + csv::num(sum[1][0] / n) + "\n";
    table += "MA," + csv::num(sum[0][1] / n) + "," + csv::num(sum[0][0] / n) + "\n";
    csv::write_file((dir / "eval_summary.csv").string(), table);
    std::cout << table << "episodes: " << rc.eval.episodes
              << ", infeasible intervals: " << infeasible
              << ", deadline violations: " << violations << "\n";
    return 0;
}

int cmd_opf_solve(const RunConfig& rc, const std::string& in_path, const std::string& out_path) {
    OpfInstance inst = parse_opf_instance(csv::read_file(in_path));
    OpfSolution sol = solve_opf(inst, rc.solver.cone());
    std::string text = opf_solution_csv(inst, sol);
    if (!out_path.empty())
        write_under(out_path, text);
    else
        std::cout << text;
    if (sol.status == OpfStatus::Optimal) {
        OpfResiduals res = residuals(inst, sol);
        std::cout << "status: optimal, objective " << csv::num(sol.objective) << " $, P_G "
                  << csv::num(sol.p_g_kw) << " kW, max residual " << csv::num(res.max_abs())
                  << " pu, cone gap " << csv::num(soc_gap(inst, sol)) << ", " << sol.iterations
                  << " iterations\n";
        return 0;
    }
    std::cout << "status: " << opf_status_name(sol.status) << " after " << sol.iterations
              << " iterations\n";
    if (!sol.message.empty()) std::cout << sol.message << "\n";
    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-level EV matching with a reduced second-order-cone dispatch"};
    app.require_subcommand(1);
    std::string config_path = "gridmatch.json";
    app.add_option("--config", config_path, "run configuration JSON")
        ->envname("GRIDMATCH_CONFIG");
    int threads = 0;
    app.add_option("--threads", threads, "cap internal parallelism");

    auto* net = app.add_subcommand("net", "network tools");
    net->require_subcommand(1);
    auto* netv =
        net->add_subcommand("validate", "check the partition's voltage budget at peak load");
    std::string network, partition, peakload;
    netv->add_option("--network", network, "feeder CSV (overrides the config)");
    netv->add_option("--partition", partition, "partition CSV (overrides the config)");
    netv->add_option("--peak-load", peakload, "bus,p_kw,q_kvar CSV (overrides the config)");

    auto* scen = app.add_subcommand("scenario", "episode generation");
    scen->require_subcommand(1);
    auto* sgen = scen->add_subcommand("gen", "draw one day of arrivals, RES, and inflexible load");
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    sgen->add_option("--seed", gen_seed, "override the scenario seed");
    sgen->add_option("--out", gen_out, "output file (default under output_dir)");

    TrainArgs targs;
    auto* tr = app.add_subcommand("train", "train one agent per IHR plus the pooled central agent");
    tr->add_option("--ihr", targs.ihr, "train only this IHR (0 = the central agent)");
    tr->add_option("--epochs", targs.epochs, "absolute epoch target (overrides the config)");
    tr->add_flag("--resume", targs.resume, "continue from existing checkpoints");
    tr->add_flag("--timing", targs.timing,
                 "record wall-clock ms in the curves (breaks byte determinism)");

    int eval_episodes = 0;
    auto* ev = app.add_subcommand(
        "eval", "run {learned, match-on-arrival} x {centralized, decentralized} days");
    ev->add_option("--episodes", eval_episodes, "evaluation episodes (overrides the config)");

    auto* opf = app.add_subcommand("opf", "central dispatch tools");
    opf->require_subcommand(1);
    auto* osolve = opf->add_subcommand("solve", "solve one dispatch instance file");
    std::string opf_in, opf_out;
    osolve->add_option("--instance", opf_in, "instance CSV")->required();
    osolve->add_option("--out", opf_out, "write the solution CSV here instead of stdout");
    double tol_feas = 0, tol_gap = 0;
    int max_iter = 0;
    osolve->add_option("--tol-feas", tol_feas, "feasibility tolerance");
    osolve->add_option("--tol-gap", tol_gap, "relative gap tolerance");
    osolve->add_option("--max-iter", max_iter, "iteration cap");

    for (CLI::App* s : {net, netv, scen, sgen, tr, ev, opf, osolve}) s->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        bool need_cfg =
            sgen->parsed() || tr->parsed() || ev->parsed() ||
            (netv->parsed() && (network.empty() || partition.empty() || peakload.empty()));
        RunConfig rc = load_config(config_path, need_cfg);
        if (threads > 0) rc.threads = threads;
        Eigen::setNbThreads(rc.threads);

        if (netv->parsed()) {
            if (!network.empty()) rc.network = network;
            if (!partition.empty()) rc.partition = partition;
            if (!peakload.empty()) rc.peak_load = peakload;
            return cmd_net_validate(rc);
        }
        if (sgen->parsed()) {
            if (sgen->count("--seed")) rc.scenario.seed = gen_seed;
            return cmd_scenario_gen(std::move(rc), gen_out);
        }
        if (tr->parsed()) return cmd_train(std::move(rc), targs);
        if (ev->parsed()) return cmd_eval(std::move(rc), eval_episodes);
        if (osolve->parsed()) {
            if (osolve->count("--tol-feas")) rc.solver.tol_feas = tol_feas;
            if (osolve->count("--tol-gap")) rc.solver.tol_gap = tol_gap;
            if (osolve->count("--max-iter")) rc.solver.max_iter = max_iter;
            return cmd_opf_solve(rc, opf_in, opf_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "gridmatch: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
