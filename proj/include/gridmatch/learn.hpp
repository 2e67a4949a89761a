#pragma once

// Policy-gradient training for the per-IHR matching policy: episode rollouts
// with trace capture, REINFORCE and k-step actor-critic estimators, the
// critic regression, and the batched update loop.

#include <chrono>
#include <functional>

#include "gridmatch/nn.hpp"
#include "gridmatch/policy.hpp"

namespace gridmatch {

struct StepRecord {
    std::vector<int> ids;  // slot -> customer id at decision time
    DiscreteMatch bits;
    MatchProbabilities probs;
    double log_prob = 0.0;
    double v = 0.0;  // realized welfare of this interval
    MatchAmounts match;
};

struct EpisodeTrace {
    Tensor input;  // decision-time frames, (6n+1) x T
    DropoutMasks masks;
    bool train_mode = false;
    std::vector<StepRecord> steps;
    double total_welfare = 0.0;
    double dt = 0.5;
};

namespace learn_detail {
// One roll of the market under the current policy; `choose` picks the bit
// vector given the head's probabilities (sampling, forcing, ...).
template <class Chooser>
EpisodeTrace roll_episode(const TcnParams& policy, const IhrEpisode& ep, const EncodeNorms& en,
                          double dt, const DropoutMasks* masks, Chooser&& choose) {
    ep.validate();
    if (en.T != ep.T) throw std::runtime_error("encoder horizon must match the episode horizon");
    EpisodeTrace tr;
    tr.dt = dt;
    tr.train_mode = masks != nullptr;
    if (masks) tr.masks = *masks;
    tr.input = Tensor::zeros({frame_channels(en), ep.T});

    IhrMarketState st = make_market(ep.c, en.n_slots);
    for (int t = 1; t <= ep.T; ++t) {
        double bq = ep.base_q.empty() ? 0.0 : ep.base_q[t - 1];
        st = step_arrivals(st, ep.arrivals[t - 1], ep.res[t - 1], bq);
        encode_frame_into(st.snap, en, st.c, tr.input, t - 1);

        Tensor prefix = Tensor::zeros({tr.input.rows(), t});
        for (int c = 0; c < tr.input.rows(); ++c)
            for (int l = 0; l < t; ++l) prefix.at(c, l) = tr.input.at(c, l);
        Tensor probs_seq = tcn_forward(policy, prefix, masks);

        StepRecord rec;
        rec.ids = slot_ids(st.snap, en.n_slots);
        rec.probs = tcn_probs(probs_seq, st.snap, en.n_slots);
        SampledMatch sm = choose(rec.probs, t);
        rec.bits = sm.match;
        rec.log_prob = sm.log_prob;

        MatchAmounts m = deadline_override(allocate_res_first(rec.bits, st, dt), st, dt);
        auto [next, w] = apply_match(st, m, dt);
        rec.v = w;
        rec.match = m;
        tr.total_welfare += w;
        tr.steps.push_back(std::move(rec));
        st = std::move(next);
    }
    return tr;
}
}  // namespace learn_detail

inline EpisodeTrace sample_episode(const TcnParams& policy, const IhrEpisode& ep,
                                   const EncodeNorms& en, double dt, Rng& rng,
                                   const DropoutMasks* masks = nullptr) {
    return learn_detail::roll_episode(policy, ep, en, dt, masks,
                                      [&](const MatchProbabilities& mp, int) {
                                          return sample_discrete(mp, rng);
                                      });
}

// Matching on arrival: every customer fully served the moment it shows up.
inline double ma_rollout(const IhrEpisode& ep, double dt) {
    ep.validate();
    int n = 0;
    for (const auto& a : ep.arrivals) n += (int)a.size();
    IhrMarketState st = make_market(ep.c, std::max(1, n));
    double welfare = 0.0;
    for (int t = 1; t <= ep.T; ++t) {
        double bq = ep.base_q.empty() ? 0.0 : ep.base_q[t - 1];
        st = step_arrivals(st, ep.arrivals[t - 1], ep.res[t - 1], bq);
        auto [next, w] = apply_match(st, match_on_arrival(st, dt), dt);
        welfare += w;
        st = std::move(next);
    }
    return welfare;
}

// G_t = sum of interval welfare from t to the end (undiscounted).
inline std::vector<double> returns_to_go(const std::vector<double>& v) {
    std::vector<double> g(v.size(), 0.0);
    double acc = 0.0;
    for (int i = (int)v.size() - 1; i >= 0; --i) {
        acc += v[i];
        g[i] = acc;
    }
    return g;
}

inline std::vector<double> trace_values(const EpisodeTrace& tr) {
    std::vector<double> v;
    for (const StepRecord& s : tr.steps) v.push_back(s.v);
    return v;
}

// d/dtheta sum_t w_t * log mu(m_t | X_t), exact reverse mode over one full
// sequence pass (bit-identical to the rollout's incremental passes).
inline Eigen::VectorXd weighted_logprob_gradient(const TcnParams& policy, const EpisodeTrace& tr,
                                                 const std::vector<double>& wts) {
    int T = (int)tr.steps.size();
    if ((int)wts.size() != T) throw std::runtime_error("one weight per interval required");
    TcnCache cache;
    tcn_forward(policy, tr.input, tr.train_mode ? &tr.masks : nullptr, &cache);
    Tensor dprobs = Tensor::zeros({policy.n_out, T});
    for (int t = 0; t < T; ++t) {
        const StepRecord& rec = tr.steps[t];
        for (int s = 0; s < (int)rec.ids.size(); ++s) {
            double p = cache.probs.at(s, t);
            int bit = rec.bits.bits.at(rec.ids[s]);
            dprobs.at(s, t) = wts[t] * (bit ? 1.0 / p : -1.0 / (1.0 - p));
        }
    }
    TcnParams grad = zeros_like(policy);
    tcn_backward(policy, cache, dprobs, grad);
    return flatten(grad);
}

inline Eigen::VectorXd reinforce_gradient(const TcnParams& policy, const EpisodeTrace& tr) {
    return weighted_logprob_gradient(policy, tr, returns_to_go(trace_values(tr)));
}

// Critic features: the decision-time frame of interval k plus normalized time.
inline std::vector<double> critic_input(const EpisodeTrace& tr, int k, const EncodeNorms& en) {
    int T = (int)tr.steps.size();
    if (k < 1 || k > T) throw std::runtime_error("critic interval out of range");
    std::vector<double> x(frame_channels(en) + 1);
    for (int c = 0; c < tr.input.rows(); ++c) x[c] = tr.input.at(c, k - 1);
    x.back() = double(k) / en.T;
    return x;
}

inline double critic_value(const CriticParams& critic, const EpisodeTrace& tr, int k,
                           const EncodeNorms& en) {
    return critic_forward(critic, critic_input(tr, k, en));
}

// w_t = v_t + ... + v_{min(t+k-1,T)} + V(X_{t+k}), the critic term dropped
// once t+k runs past the horizon. k = T reduces to the full return.
inline std::vector<double> ac_k_weights(const EpisodeTrace& tr, const CriticParams& critic, int k,
                                        const EncodeNorms& en) {
    int T = (int)tr.steps.size();
    if (k < 1) throw std::runtime_error("k must be at least 1");
    std::vector<double> g = returns_to_go(trace_values(tr));
    std::vector<double> w(T);
    for (int t = 1; t <= T; ++t) {
        double tail = t + k <= T ? g[t + k - 1] : 0.0;
        double boot = t + k <= T ? critic_value(critic, tr, t + k, en) : 0.0;
        w[t - 1] = g[t - 1] - tail + boot;
    }
    return w;
}

inline Eigen::VectorXd ac_k_gradient(const TcnParams& policy, const CriticParams& critic,
                                     const EpisodeTrace& tr, int k, const EncodeNorms& en) {
    return weighted_logprob_gradient(policy, tr, ac_k_weights(tr, critic, k, en));
}

// d/dphi (1/2) sum_k (V(X_k) - G_k)^2 against the realized returns.
inline Eigen::VectorXd critic_gradient(const CriticParams& critic, const EpisodeTrace& tr,
                                       const EncodeNorms& en) {
    std::vector<double> g = returns_to_go(trace_values(tr));
    CriticParams grad = zeros_like(critic);
    for (int k = 1; k <= (int)tr.steps.size(); ++k) {
        CriticCache cache;
        double v = critic_forward(critic, critic_input(tr, k, en), &cache);
        critic_backward(critic, cache, v - g[k - 1], grad);
    }
    return flatten(grad);
}

// ---------------------------------------------------------------------------
// Exact enumeration over every bit sequence (small markets only): the ground
// truth that the sampled estimators are checked against.
// ---------------------------------------------------------------------------

namespace learn_detail {
inline void enumerate_rec(const TcnParams& policy, const IhrEpisode& ep, const EncodeNorms& en,
                          double dt, IhrMarketState st, int t, EpisodeTrace tr,
                          const std::function<void(const EpisodeTrace&)>& fn) {
    if (t > ep.T) {
        fn(tr);
        return;
    }
    double bq = ep.base_q.empty() ? 0.0 : ep.base_q[t - 1];
    st = step_arrivals(st, ep.arrivals[t - 1], ep.res[t - 1], bq);
    encode_frame_into(st.snap, en, st.c, tr.input, t - 1);
    Tensor prefix = Tensor::zeros({tr.input.rows(), t});
    for (int c = 0; c < tr.input.rows(); ++c)
        for (int l = 0; l < t; ++l) prefix.at(c, l) = tr.input.at(c, l);
    Tensor probs_seq = tcn_forward(policy, prefix, tr.train_mode ? &tr.masks : nullptr);
    MatchProbabilities mp = tcn_probs(probs_seq, st.snap, en.n_slots);
    std::vector<int> ids = slot_ids(st.snap, en.n_slots);
    int n = (int)ids.size();
    if (n > 20) throw std::runtime_error("market too large to enumerate");
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        StepRecord rec;
        rec.ids = ids;
        rec.probs = mp;
        for (int i = 0; i < n; ++i) {
            int bit = (mask >> i) & 1u;
            rec.bits.bits[ids[i]] = bit;
            double p = mp.probs.at(ids[i]);
            rec.log_prob += bit ? std::log(p) : std::log1p(-p);
        }
        MatchAmounts m = deadline_override(allocate_res_first(rec.bits, st, dt), st, dt);
        auto [next, w] = apply_match(st, m, dt);
        rec.v = w;
        rec.match = m;
        EpisodeTrace tr2 = tr;
        tr2.steps.push_back(std::move(rec));
        tr2.total_welfare += w;
        enumerate_rec(policy, ep, en, dt, next, t + 1, std::move(tr2), fn);
    }
}
}  // namespace learn_detail

// Visits every reachable trace with its probability.
inline void enumerate_traces(const TcnParams& policy, const IhrEpisode& ep, const EncodeNorms& en,
                             double dt,
                             const std::function<void(const EpisodeTrace&, double)>& fn) {
    ep.validate();
    if (en.T != ep.T) throw std::runtime_error("encoder horizon must match the episode horizon");
    EpisodeTrace seed;
    seed.dt = dt;
    seed.input = Tensor::zeros({frame_channels(en), ep.T});
    learn_detail::enumerate_rec(policy, ep, en, dt, make_market(ep.c, en.n_slots), 1, seed,
                                [&](const EpisodeTrace& tr) {
                                    double logp = 0.0;
                                    for (const StepRecord& s : tr.steps) logp += s.log_prob;
                                    fn(tr, std::exp(logp));
                                });
}

// J(theta) = E[total welfare], exactly.
inline double enumerate_value(const TcnParams& policy, const IhrEpisode& ep,
                              const EncodeNorms& en, double dt) {
    double j = 0.0;
    enumerate_traces(policy, ep, en, dt,
                     [&](const EpisodeTrace& tr, double p) { j += p * tr.total_welfare; });
    return j;
}

// grad J via the score function with the total return, summed exactly.
inline Eigen::VectorXd enumerate_gradient(const TcnParams& policy, const IhrEpisode& ep,
                                          const EncodeNorms& en, double dt) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(flatten(policy).size());
    enumerate_traces(policy, ep, en, dt, [&](const EpisodeTrace& tr, double p) {
        std::vector<double> w(tr.steps.size(), tr.total_welfare);
        g += p * weighted_logprob_gradient(policy, tr, w);
    });
    return g;
}

// ---------------------------------------------------------------------------
// Batched training loop
// ---------------------------------------------------------------------------

enum class Estimator { Reinforce, AcK };

inline Estimator parse_estimator(const std::string& s) {
    if (s == "reinforce") return Estimator::Reinforce;
    if (s == "ac_k") return Estimator::AcK;
    throw std::runtime_error("unknown estimator: " + s);
}
inline const char* estimator_name(Estimator e) {
    return e == Estimator::Reinforce ? "reinforce" : "ac_k";
}

struct TrainConfig {
    int epochs = 200;  // N
    int batch = 20;    // M: update cadence; trailing partial batches are not applied
    Estimator estimator = Estimator::Reinforce;
    int k = 4;  // ac_k bootstrap horizon
    double alpha_theta = 0.01;
    double alpha_phi = 0.01;
    std::vector<int> critic_hidden = {32, 32};
    std::uint64_t seed = 1;
    EncodeNorms norms;
    double dt = 0.5;
    bool dropout = true;
    bool timing = false;  // wall_ms stays 0 unless enabled, keeping logs reproducible

    void validate() const {
        if (epochs < 0 || batch < 1) throw std::runtime_error("bad epoch or batch count");
        if (estimator == Estimator::AcK && (k < 1 || k > norms.T))
            throw std::runtime_error("k must lie in [1, T]");
    }
};

struct EpochLog {
    long long epoch = 0;  // 1-based, absolute
    double welfare = 0.0;
    double running_avg = 0.0;
    double ma_welfare = 0.0;  // matching-on-arrival on the identical episode
    double grad_norm = 0.0;   // this episode's policy-gradient norm
    double wall_ms = 0.0;
};

inline std::string epoch_log_header() {
    return "epoch,welfare,running_avg,ma_welfare,grad_norm,wall_ms";
}
inline std::string epoch_log_row(const EpochLog& l) {
    return std::to_string(l.epoch) + "," + csv::num(l.welfare) + "," + csv::num(l.running_avg) +
           "," + csv::num(l.ma_welfare) + "," + csv::num(l.grad_norm) + "," + csv::num(l.wall_ms);
}

// Policy, critic, optimizers, and the progress counters that make resumed
// runs indistinguishable from uninterrupted ones.
struct Learner {
    TcnParams policy;
    CriticParams critic;
    AdamState opt_theta, opt_phi;
    long long epoch = 0;
    double welfare_accum = 0.0;
    long long welfare_count = 0;
};

inline Learner make_learner(const TrainConfig& cfg) {
    Rng rng = Rng::derive(cfg.seed, 0x1017);
    Learner L;
    L.policy = make_tcn(frame_channels(cfg.norms), cfg.norms.n_slots, rng);
    L.critic = make_critic(frame_channels(cfg.norms) + 1, cfg.critic_hidden, rng);
    L.opt_theta = make_adam(flatten(L.policy).size(), cfg.alpha_theta);
    L.opt_phi = make_adam(flatten(L.critic).size(), cfg.alpha_phi);
    return L;
}

inline Checkpoint to_checkpoint(const Learner& L) {
    return Checkpoint{L.policy, L.critic,         L.opt_theta,
                      L.opt_phi, L.epoch,          L.welfare_accum,
                      L.welfare_count};
}
inline Learner from_checkpoint(const Checkpoint& ck) {
    return Learner{ck.policy, ck.critic,         ck.opt_theta,
                   ck.opt_phi, ck.epoch,          ck.welfare_accum,
                   ck.welfare_count};
}

// Runs n_epochs more epochs: one episode per epoch, parameters updated with
// the batch-mean gradients every `batch` epochs (ascent on the policy,
// descent on the critic), accumulators cleared after each update. Episode,
// rollout, and dropout randomness derive from (seed, absolute epoch), so a
// resumed learner continues the exact sequence an uninterrupted run produces.
inline std::vector<EpochLog> train(Learner& L, const TrainConfig& cfg, int n_epochs,
                                   const std::function<IhrEpisode(long long)>& source) {
    cfg.validate();
    std::vector<EpochLog> curve;
    Eigen::VectorXd gsum_theta = Eigen::VectorXd::Zero(flatten(L.policy).size());
    Eigen::VectorXd gsum_phi = Eigen::VectorXd::Zero(flatten(L.critic).size());
    int in_batch = 0;
    for (int j = 0; j < n_epochs; ++j) {
        auto t0 = std::chrono::steady_clock::now();
        long long e = L.epoch;
        IhrEpisode ep = source(e);
        Rng roll = Rng::derive(cfg.seed, 3 * (std::uint64_t)e + 1);
        DropoutMasks dm;
        const DropoutMasks* masks = nullptr;
        if (cfg.dropout) {
            Rng drng = Rng::derive(cfg.seed, 3 * (std::uint64_t)e + 2);
            dm = make_dropout_masks(L.policy, ep.T, drng);
            masks = &dm;
        }
        EpisodeTrace tr = sample_episode(L.policy, ep, cfg.norms, cfg.dt, roll, masks);
        Eigen::VectorXd gt = cfg.estimator == Estimator::Reinforce
                                 ? reinforce_gradient(L.policy, tr)
                                 : ac_k_gradient(L.policy, L.critic, tr, cfg.k, cfg.norms);
        Eigen::VectorXd gp = critic_gradient(L.critic, tr, cfg.norms);
        gsum_theta += gt;
        gsum_phi += gp;
        ++in_batch;

        L.welfare_accum += tr.total_welfare;
        L.welfare_count += 1;
        EpochLog log;
        log.epoch = e + 1;
        log.welfare = tr.total_welfare;
        log.running_avg = L.welfare_accum / (double)L.welfare_count;
        log.ma_welfare = ma_rollout(ep, cfg.dt);
        log.grad_norm = gt.norm();
        if (cfg.timing)
            log.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();

        if (in_batch == cfg.batch) {
            Eigen::VectorXd theta = flatten(L.policy);
            adam_step(L.opt_theta, theta, Eigen::VectorXd(gsum_theta / cfg.batch), true);
            unflatten(L.policy, theta);
            Eigen::VectorXd phi = flatten(L.critic);
            adam_step(L.opt_phi, phi, Eigen::VectorXd(gsum_phi / cfg.batch), false);
            unflatten(L.critic, phi);
            gsum_theta.setZero();
            gsum_phi.setZero();
            in_batch = 0;
        }
        L.epoch += 1;
        curve.push_back(log);
    }
    return curve;
}

}  // namespace gridmatch
