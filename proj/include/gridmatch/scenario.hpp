#pragma once

// Episode generation: EV arrival patterns for the two benchmark scenarios,
// solar/load profile shaping, and assembly of full-day market episodes with
// the zone's inflexible load embedded as must-serve customers.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gridmatch/csv.hpp"
#include "gridmatch/nn.hpp"
#include "gridmatch/policy.hpp"
#include "gridmatch/rng.hpp"

namespace gridmatch {

enum class ScenarioKind { Scenario1, Scenario2, Custom };

inline const char* scenario_kind_name(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::Scenario1: return "scenario1";
        case ScenarioKind::Scenario2: return "scenario2";
        default: return "custom";
    }
}

inline ScenarioKind parse_scenario_kind(const std::string& s) {
    if (s == "scenario1") return ScenarioKind::Scenario1;
    if (s == "scenario2") return ScenarioKind::Scenario2;
    if (s == "custom") return ScenarioKind::Custom;
    throw std::runtime_error("unknown scenario kind: " + s);
}

// Per-hub knobs: fleet size, inverter rating (the solar shape scales to it),
// and the zone's inflexible peak load.
struct IhrScenario {
    int ihr = 0;
    int ev_count = 0;
    double inverter_kw = 0.0;
    double inflex_p_peak_kw = 0.0;
    double inflex_q_peak_kvar = 0.0;
};

struct ScenarioConfig {
    ScenarioKind kind = ScenarioKind::Scenario1;
    int T = 48;
    double dt = 0.5;          // hours
    double c = 0.12;          // tariff, $/kWh
    double charge_kwh = 6.6;  // per EV request
    double phi_lo = 0.0, phi_hi = 1.0;
    // Explicit windows for kind=custom (1-based, inclusive); derived otherwise.
    int arrive_lo = 0, arrive_hi = 0, dead_lo = 0, dead_hi = 0;
    std::vector<IhrScenario> ihrs;
    std::vector<double> solar_shape;  // T values in [0,1]; empty -> synthetic bell
    std::vector<double> load_shape;   // T values in [0,1]; empty -> synthetic two-peak
    std::uint64_t seed = 1;

    void validate() const;
};

// Arrival window per kind: early arrivals reward waiting for midday RES,
// moderate arrivals reward a mixed strategy.
inline std::pair<int, int> arrival_window(const ScenarioConfig& cfg) {
    int q = (cfg.T + 3) / 4;
    switch (cfg.kind) {
        case ScenarioKind::Scenario1: return {1, q};
        case ScenarioKind::Scenario2: return {q, (cfg.T + 1) / 2};
        default: return {cfg.arrive_lo, cfg.arrive_hi};
    }
}

inline std::pair<int, int> deadline_window(const ScenarioConfig& cfg) {
    if (cfg.kind == ScenarioKind::Custom) return {cfg.dead_lo, cfg.dead_hi};
    return {(3 * cfg.T + 3) / 4, cfg.T};
}

inline void ScenarioConfig::validate() const {
    if (T < 1) throw std::runtime_error("scenario horizon must be at least 1");
    if (!(dt > 0)) throw std::runtime_error("interval length must be positive");
    if (!(c > 0)) throw std::runtime_error("tariff must be positive");
    if (!(charge_kwh > 0)) throw std::runtime_error("charge request must be positive");
    if (phi_lo < 0 || phi_hi > 1 || phi_lo > phi_hi)
        throw std::runtime_error("criticality range must sit inside [0,1]");
    std::map<int, int> seen;
    bool any_ev = false;
    for (const IhrScenario& s : ihrs) {
        if (seen.count(s.ihr)) throw std::runtime_error("duplicate IHR in scenario config");
        seen[s.ihr] = 1;
        if (s.ev_count < 0) throw std::runtime_error("negative EV count");
        if (s.inverter_kw < 0 || s.inflex_p_peak_kw < 0 || s.inflex_q_peak_kvar < 0)
            throw std::runtime_error("negative rating in scenario config");
        if (s.ev_count > 0) any_ev = true;
    }
    auto [alo, ahi] = arrival_window(*this);
    auto [dlo, dhi] = deadline_window(*this);
    if (any_ev) {
        if (alo < 1 || ahi > T || alo > ahi)
            throw std::runtime_error("bad arrival window");
        if (dlo < 1 || dhi > T || dlo > dhi)
            throw std::runtime_error("bad deadline window");
        if (dhi < ahi + 1)
            throw std::runtime_error("horizon too short: latest arrival leaves no service window");
    }
    for (const std::vector<double>* shape : {&solar_shape, &load_shape}) {
        if (shape->empty()) continue;
        if ((int)shape->size() != T) throw std::runtime_error("profile shape needs T values");
        for (double v : *shape)
            if (!(v >= 0.0) || v > 1.0)
                throw std::runtime_error("profile shape values must lie in [0,1]");
    }
}

// ---------------------------------------------------------------------------
// Bundled synthetic profiles
// ---------------------------------------------------------------------------

// Daylight bell: zero overnight, peak 1 at midday (intervals T/4..3T/4).
inline std::vector<double> synthetic_solar_shape(int T) {
    std::vector<double> s(T);
    for (int t = 1; t <= T; ++t) {
        double tau = (t - 0.5) / T;
        s[t - 1] = std::max(0.0, std::sin(6.283185307179586 * (tau - 0.25)));
    }
    return s;
}

// Residential two-peak day: morning shoulder, taller evening peak.
inline std::vector<double> synthetic_load_shape(int T) {
    std::vector<double> s(T);
    double peak = 0.0;
    for (int t = 1; t <= T; ++t) {
        double tau = (t - 0.5) / T;
        auto bump = [&](double at, double width) {
            double u = (tau - at) / width;
            return std::exp(-u * u);
        };
        s[t - 1] = 0.55 + 0.25 * bump(0.33, 0.08) + 0.45 * bump(0.79, 0.09);
        peak = std::max(peak, s[t - 1]);
    }
    for (double& v : s) v /= peak;
    return s;
}

// ---------------------------------------------------------------------------
// Profile CSV ingestion
// ---------------------------------------------------------------------------

// "timestamp,value" rows (header allowed). n == T passes through; n > T is
// linearly resampled onto the T interval midpoints; n < T is an error.
inline std::vector<double> parse_profile_csv(const std::string& text, int T) {
    std::vector<double> raw;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = csv::trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto f = csv::split(line);
        if (f.size() != 2) throw std::runtime_error("profile row " + std::to_string(lineno) +
                                                    ": expected timestamp,value");
        if (lineno == 1 && raw.empty()) {  // tolerate a header row
            try {
                raw.push_back(csv::to_double(f[1], "profile value"));
            } catch (const std::exception&) {
            }
            continue;
        }
        raw.push_back(csv::to_double(f[1], "profile row " + std::to_string(lineno)));
    }
    int n = (int)raw.size();
    if (n < T)
        throw std::runtime_error("profile has " + std::to_string(n) + " rows, needs at least " +
                                 std::to_string(T));
    if (n == T) return raw;
    // sample i sits at fraction (i+1/2)/n; interpolate onto (k+1/2)/T
    std::vector<double> out(T);
    for (int k = 0; k < T; ++k) {
        double pos_frac = (k + 0.5) / T * n - 0.5;
        int i0 = (int)std::floor(pos_frac);
        double w = pos_frac - i0;
        int a = std::clamp(i0, 0, n - 1), b = std::clamp(i0 + 1, 0, n - 1);
        out[k] = (1.0 - w) * raw[a] + w * raw[b];
    }
    return out;
}

inline std::vector<double> load_profiles_csv(const std::string& path, int T, double scale = 1.0) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open profile file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::vector<double> series = parse_profile_csv(ss.str(), T);
    for (double& v : series) v *= scale;
    return series;
}

// Normalize a raw kW series into a [0,1] shape (peak maps to 1).
inline std::vector<double> normalize_shape(const std::vector<double>& series) {
    double peak = 0.0;
    for (double v : series) {
        if (v < 0) throw std::runtime_error("profile has negative values");
        peak = std::max(peak, v);
    }
    std::vector<double> out = series;
    if (peak > 0)
        for (double& v : out) v /= peak;
    return out;
}

// ---------------------------------------------------------------------------
// Episode data
// ---------------------------------------------------------------------------

// A full generated day: per IHR, the market episode (EVs plus the zone's
// inflexible load embedded as one must-serve customer per interval) and the
// raw inflexible series for reporting.
struct EpisodeData {
    int T = 0;
    double dt = 0.5;
    double c = 0.12;
    std::vector<int> ihr_ids;
    std::vector<IhrEpisode> markets;
    std::vector<std::vector<double>> inflex_p_kw;    // [ihr][t-1]
    std::vector<std::vector<double>> inflex_q_kvar;  // [ihr][t-1]

    int market_index(int ihr) const {
        for (std::size_t i = 0; i < ihr_ids.size(); ++i)
            if (ihr_ids[i] == ihr) return (int)i;
        throw std::runtime_error("episode has no IHR " + std::to_string(ihr));
    }

    void validate() const {
        std::size_t n = ihr_ids.size();
        if (markets.size() != n || inflex_p_kw.size() != n || inflex_q_kvar.size() != n)
            throw std::runtime_error("episode arrays disagree on the IHR count");
        for (std::size_t i = 0; i < n; ++i) {
            markets[i].validate();
            if (markets[i].T != T || markets[i].c != c)
                throw std::runtime_error("market episode disagrees with the day parameters");
            if ((int)inflex_p_kw[i].size() != T || (int)inflex_q_kvar[i].size() != T)
                throw std::runtime_error("inflexible series must have length T");
        }
    }
};

inline EpisodeData gen_scenario(const ScenarioConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<double> solar = cfg.solar_shape.empty() ? synthetic_solar_shape(cfg.T)
                                                        : cfg.solar_shape;
    std::vector<double> load = cfg.load_shape.empty() ? synthetic_load_shape(cfg.T)
                                                      : cfg.load_shape;
    auto [alo, ahi] = arrival_window(cfg);
    auto [dlo_w, dhi] = deadline_window(cfg);

    EpisodeData data;
    data.T = cfg.T;
    data.dt = cfg.dt;
    data.c = cfg.c;
    int next_id = 1;
    for (const IhrScenario& s : cfg.ihrs) {
        IhrEpisode ep;
        ep.c = cfg.c;
        ep.T = cfg.T;
        ep.arrivals.resize(cfg.T);
        ep.res.resize(cfg.T);
        ep.base_q.resize(cfg.T);
        std::vector<double> pser(cfg.T), qser(cfg.T);
        for (int t = 1; t <= cfg.T; ++t) {
            ep.res[t - 1] = {s.inverter_kw * solar[t - 1], s.inverter_kw};
            pser[t - 1] = s.inflex_p_peak_kw * load[t - 1];
            qser[t - 1] = s.inflex_q_peak_kvar * load[t - 1];
            ep.base_q[t - 1] = qser[t - 1];
        }
        for (int e = 0; e < s.ev_count; ++e) {
            int a = rng.uniform_int(alo, ahi);
            int d = rng.uniform_int(std::max(dlo_w, a + 1), dhi);
            double phi = rng.uniform(cfg.phi_lo, cfg.phi_hi);
            ep.arrivals[a - 1].push_back(make_flexible(next_id++, a, cfg.charge_kwh, d, phi, cfg.c));
        }
        for (int t = 1; t <= cfg.T; ++t) {
            double kwh = pser[t - 1] * cfg.dt;
            if (kwh > 0) ep.arrivals[t - 1].push_back(make_inflexible(next_id++, t, kwh));
        }
        ep.validate();
        data.ihr_ids.push_back(s.ihr);
        data.markets.push_back(std::move(ep));
        data.inflex_p_kw.push_back(std::move(pser));
        data.inflex_q_kvar.push_back(std::move(qser));
    }
    data.validate();
    return data;
}

// One market spanning all IHRs: pooled arrivals, summed RES and reactive base.
inline IhrEpisode merged_market(const EpisodeData& data) {
    data.validate();
    IhrEpisode out;
    out.c = data.c;
    out.T = data.T;
    out.arrivals.resize(data.T);
    out.res.assign(data.T, {});
    out.base_q.assign(data.T, 0.0);
    for (const IhrEpisode& ep : data.markets)
        for (int t = 1; t <= data.T; ++t) {
            for (const Customer& cu : ep.arrivals[t - 1]) out.arrivals[t - 1].push_back(cu);
            out.res[t - 1].r_p += ep.res[t - 1].r_p;
            out.res[t - 1].r_s += ep.res[t - 1].r_s;
            out.base_q[t - 1] += ep.base_q.empty() ? 0.0 : ep.base_q[t - 1];
        }
    out.validate();
    return out;
}

// Peak simultaneous active customers across the markets: the slot count any
// encoder for this day must provide.
inline int max_active_customers(const EpisodeData& data) {
    int peak = 0;
    auto scan = [&](const IhrEpisode& ep) {
        for (int t = 1; t <= ep.T; ++t) {
            int active = 0;
            for (int u = 1; u <= t; ++u)
                for (const Customer& cu : ep.arrivals[u - 1])
                    if (cu.d >= t) ++active;
            peak = std::max(peak, active);
        }
    };
    for (const IhrEpisode& ep : data.markets) scan(ep);
    return peak;
}

// Encoder normalizers sized to the day: slot count with one slot of headroom,
// demand and RES scales from the data.
inline EncodeNorms suggest_norms(const EpisodeData& data) {
    EncodeNorms en;
    en.T = data.T;
    en.n_slots = max_active_customers(data) + 1;
    en.c = data.c;
    double pmax = 0.0, rmax = 0.0;
    for (const IhrEpisode& ep : data.markets) {
        for (const auto& lst : ep.arrivals)
            for (const Customer& cu : lst) pmax = std::max(pmax, cu.p);
        for (const ResState& rs : ep.res) rmax = std::max(rmax, rs.r_s);
    }
    en.p_max = pmax > 0 ? pmax : 1.0;
    en.r_max = rmax > 0 ? rmax : 1.0;
    return en;
}

// Encoder normalizers from the config alone, valid for every draw it can
// produce: under one arrival/deadline regime, all of a zone's EVs can be
// queued at once, plus the embedded inflexible customer. `merged` sizes the
// encoder for the pooled market spanning all zones.
inline EncodeNorms scenario_norms(const ScenarioConfig& cfg, bool merged = false) {
    cfg.validate();
    EncodeNorms en;
    en.T = cfg.T;
    en.c = cfg.c;
    int peak = 0;
    double pmax = cfg.charge_kwh, rmax = 0.0;
    for (const IhrScenario& z : cfg.ihrs) {
        int act = z.ev_count + (z.inflex_p_peak_kw > 0 ? 1 : 0);
        peak = merged ? peak + act : std::max(peak, act);
        if (z.inflex_p_peak_kw > 0) pmax = std::max(pmax, z.inflex_p_peak_kw * cfg.dt);
        rmax = merged ? rmax + z.inverter_kw : std::max(rmax, z.inverter_kw);
    }
    en.n_slots = peak + 1;
    en.p_max = pmax > 0 ? pmax : 1.0;
    en.r_max = rmax > 0 ? rmax : 1.0;
    return en;
}

// ---------------------------------------------------------------------------
// Audit dump
// ---------------------------------------------------------------------------

// Rows: E,ihr,id,a,d,kwh,phi (EVs) / N,ihr,t,id,kw,kvar (inflexible; id 0 when
// the interval embeds no customer) / R,ihr,t,rp,rs.
inline std::string episode_csv(const EpisodeData& data) {
    std::string out = "#T=" + std::to_string(data.T) + ",dt=" + csv::num(data.dt) +
                      ",c=" + csv::num(data.c) + "\n";
    for (std::size_t i = 0; i < data.ihr_ids.size(); ++i) {
        const IhrEpisode& ep = data.markets[i];
        std::string ihr = std::to_string(data.ihr_ids[i]);
        for (int t = 1; t <= data.T; ++t)
            for (const Customer& cu : ep.arrivals[t - 1])
                if (cu.flexible)
                    out += "E," + ihr + "," + std::to_string(cu.id) + "," + std::to_string(cu.a) +
                           "," + std::to_string(cu.d) + "," + csv::num(cu.p) + "," +
                           csv::num(cu.phi_c) + "\n";
        for (int t = 1; t <= data.T; ++t) {
            int id = 0;
            for (const Customer& cu : ep.arrivals[t - 1])
                if (!cu.flexible) id = cu.id;
            out += "N," + ihr + "," + std::to_string(t) + "," + std::to_string(id) + "," +
                   csv::num(data.inflex_p_kw[i][t - 1]) + "," +
                   csv::num(data.inflex_q_kvar[i][t - 1]) + "\n";
        }
        for (int t = 1; t <= data.T; ++t)
            out += "R," + ihr + "," + std::to_string(t) + "," + csv::num(ep.res[t - 1].r_p) + "," +
                   csv::num(ep.res[t - 1].r_s) + "\n";
    }
    return out;
}

inline EpisodeData parse_episode(const std::string& text) {
    EpisodeData data;
    data.T = 0;
    std::map<int, int> index_of;  // ihr -> position
    auto slot = [&](int ihr) {
        auto it = index_of.find(ihr);
        if (it != index_of.end()) return it->second;
        int i = (int)data.ihr_ids.size();
        index_of[ihr] = i;
        data.ihr_ids.push_back(ihr);
        IhrEpisode ep;
        ep.c = data.c;
        ep.T = data.T;
        ep.arrivals.resize(data.T);
        ep.res.resize(data.T);
        ep.base_q.assign(data.T, 0.0);
        data.markets.push_back(std::move(ep));
        data.inflex_p_kw.emplace_back(data.T, 0.0);
        data.inflex_q_kvar.emplace_back(data.T, 0.0);
        return i;
    };
    std::size_t pos = 0;
    bool have_header = false;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        std::string line = csv::trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        if (line.empty()) continue;
        const char* ctx = "episode file";
        if (line[0] == '#') {
            for (auto& [k, v] : csv::parse_directives(line)) {
                if (k == "T") data.T = csv::to_int(v, ctx);
                else if (k == "dt") data.dt = csv::to_double(v, ctx);
                else if (k == "c") data.c = csv::to_double(v, ctx);
                else throw std::runtime_error("unknown directive '" + k + "' in episode file");
            }
            if (data.T < 1) throw std::runtime_error("episode file needs T >= 1");
            have_header = true;
            continue;
        }
        if (!have_header) throw std::runtime_error("episode file must start with its #T=... header");
        auto f = csv::split(line);
        if (f[0] == "E") {
            if (f.size() != 7) throw std::runtime_error("bad E row in episode file");
            int i = slot(csv::to_int(f[1], ctx));
            int id = csv::to_int(f[2], ctx), a = csv::to_int(f[3], ctx), d = csv::to_int(f[4], ctx);
            if (a < 1 || a > data.T) throw std::runtime_error("E row arrival outside horizon");
            data.markets[i].arrivals[a - 1].push_back(make_flexible(
                id, a, csv::to_double(f[5], ctx), d, csv::to_double(f[6], ctx), data.c));
        } else if (f[0] == "N") {
            if (f.size() != 6) throw std::runtime_error("bad N row in episode file");
            int i = slot(csv::to_int(f[1], ctx));
            int t = csv::to_int(f[2], ctx), id = csv::to_int(f[3], ctx);
            if (t < 1 || t > data.T) throw std::runtime_error("N row interval outside horizon");
            double kw = csv::to_double(f[4], ctx), kvar = csv::to_double(f[5], ctx);
            data.inflex_p_kw[i][t - 1] = kw;
            data.inflex_q_kvar[i][t - 1] = kvar;
            data.markets[i].base_q[t - 1] = kvar;
            if (id != 0) data.markets[i].arrivals[t - 1].push_back(make_inflexible(id, t, kw * data.dt));
        } else if (f[0] == "R") {
            if (f.size() != 5) throw std::runtime_error("bad R row in episode file");
            int i = slot(csv::to_int(f[1], ctx));
            int t = csv::to_int(f[2], ctx);
            if (t < 1 || t > data.T) throw std::runtime_error("R row interval outside horizon");
            data.markets[i].res[t - 1] = {csv::to_double(f[3], ctx), csv::to_double(f[4], ctx)};
        } else {
            throw std::runtime_error("unknown row kind in episode file: " + f[0]);
        }
    }
    data.validate();
    return data;
}

}  // namespace gridmatch
