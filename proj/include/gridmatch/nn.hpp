#pragma once

// Neural substrate: dilated causal convolutions with residual blocks (the
// matching-probability head), a small feed-forward critic, ADAM, checkpoint
// serialization, and the market-state encoder. All gradients are exact
// reverse-mode, hand-derived per layer.

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridmatch/csv.hpp"
#include "gridmatch/market.hpp"
#include "gridmatch/policy.hpp"
#include "gridmatch/rng.hpp"

namespace gridmatch {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    static Tensor zeros(std::vector<int> shp) {
        Tensor t;
        t.shape = std::move(shp);
        int n = 1;
        for (int d : t.shape) n *= d;
        t.v.assign(n, 0.0);
        return t;
    }
    int numel() const { return (int)v.size(); }
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }
    double& at(int i, int j) { return v[(std::size_t)i * shape[1] + j]; }
    double at(int i, int j) const { return v[(std::size_t)i * shape[1] + j]; }
};

// ---------------------------------------------------------------------------
// Market-state encoding
// ---------------------------------------------------------------------------

// Min-max normalization constants for the input features.
struct EncodeNorms {
    int T = 48;
    int n_slots = 16;
    double p_max = 6.6;   // kWh
    double c = 0.12;      // $/kWh; also the natural bound for b
    double r_max = 150.0; // kW
};

constexpr int kSlotFeatures = 6;  // a, p, b, d, p_u, b_u

inline int frame_channels(const EncodeNorms& en) { return kSlotFeatures * en.n_slots + 1; }

// Active customers in ascending id order, assigned to fixed slots.
inline std::vector<int> slot_ids(const MarketSnapshot& snap, int n_slots) {
    std::vector<int> ids;
    for (const Customer& cu : snap.active) ids.push_back(cu.id);
    std::sort(ids.begin(), ids.end());
    if ((int)ids.size() > n_slots)
        throw std::runtime_error("active customers exceed the slot count");
    return ids;
}

// One interval's feature column: per slot (a, p, b, d, p_u, b_u) plus the
// RES scalar; empty slots stay zero. b_u is the current willingness, the
// live counterpart of b the way p_u tracks p.
inline void encode_frame_into(const MarketSnapshot& snap, const EncodeNorms& en, double c,
                              Tensor& out, int col) {
    auto ids = slot_ids(snap, en.n_slots);
    for (int s = 0; s < (int)ids.size(); ++s) {
        const Customer* cu = nullptr;
        for (const Customer& x : snap.active)
            if (x.id == ids[s]) cu = &x;
        double pi = willingness(c, *cu, snap.t);
        out.at(kSlotFeatures * s + 0, col) = double(cu->a) / en.T;
        out.at(kSlotFeatures * s + 1, col) = cu->p / en.p_max;
        out.at(kSlotFeatures * s + 2, col) = cu->b / en.c;
        out.at(kSlotFeatures * s + 3, col) = double(cu->d) / en.T;
        out.at(kSlotFeatures * s + 4, col) = cu->p_u / en.p_max;
        out.at(kSlotFeatures * s + 5, col) = pi / en.c;
    }
    out.at(kSlotFeatures * en.n_slots, col) = snap.res.r_p / en.r_max;
}

// Frames 1..t as a (channels x t) sequence: the policy input.
inline Tensor encode_state(const IhrMarketState& state, const EncodeNorms& en) {
    if (state.t < 1) throw std::runtime_error("encode_state needs t >= 1");
    Tensor out = Tensor::zeros({frame_channels(en), state.t});
    for (int l = 0; l < (int)state.history.size(); ++l)
        encode_frame_into(state.history[l], en, state.c, out, l);
    encode_frame_into(state.snap, en, state.c, out, state.t - 1);
    return out;
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct ConvLayer {
    int in_ch = 0, out_ch = 0, kernel = 1, dilation = 1;
    std::vector<double> W;  // [out][in][k], k = 0 is the current-time tap
    std::vector<double> b;

    double w(int co, int ci, int k) const { return W[((std::size_t)co * in_ch + ci) * kernel + k]; }
    double& w(int co, int ci, int k) { return W[((std::size_t)co * in_ch + ci) * kernel + k]; }
};

inline ConvLayer make_conv(int in_ch, int out_ch, int kernel, int dilation, Rng& rng) {
    ConvLayer c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.kernel = kernel;
    c.dilation = dilation;
    double bound = std::sqrt(1.0 / (in_ch * kernel));
    c.W.resize((std::size_t)in_ch * out_ch * kernel);
    c.b.assign(out_ch, 0.0);
    for (double& w : c.W) w = rng.uniform(-bound, bound);
    for (double& b : c.b) b = rng.uniform(-bound, bound);
    return c;
}

// Causal: out[.][l] never reads in[.][l'] with l' > l; the past is
// left-zero-padded.
inline Tensor conv_forward(const ConvLayer& c, const Tensor& in) {
    if (in.rows() != c.in_ch) throw std::runtime_error("conv input channel mismatch");
    int L = in.cols();
    Tensor out = Tensor::zeros({c.out_ch, L});
    for (int co = 0; co < c.out_ch; ++co)
        for (int l = 0; l < L; ++l) {
            double acc = c.b[co];
            for (int k = 0; k < c.kernel; ++k) {
                int src = l - k * c.dilation;
                if (src < 0) continue;
                for (int ci = 0; ci < c.in_ch; ++ci) acc += c.w(co, ci, k) * in.at(ci, src);
            }
            out.at(co, l) = acc;
        }
    return out;
}

inline void conv_backward(const ConvLayer& c, const Tensor& in, const Tensor& dout, Tensor& din,
                          ConvLayer& grad) {
    int L = in.cols();
    for (int co = 0; co < c.out_ch; ++co)
        for (int l = 0; l < L; ++l) {
            double g = dout.at(co, l);
            if (g == 0.0) continue;
            grad.b[co] += g;
            for (int k = 0; k < c.kernel; ++k) {
                int src = l - k * c.dilation;
                if (src < 0) continue;
                for (int ci = 0; ci < c.in_ch; ++ci) {
                    grad.w(co, ci, k) += g * in.at(ci, src);
                    din.at(ci, src) += g * c.w(co, ci, k);
                }
            }
        }
}

// ---------------------------------------------------------------------------
// Temporal convolution policy network
// ---------------------------------------------------------------------------

struct TcnBlock {
    ConvLayer c1, c2;
    ConvLayer proj;  // 1x1, used when in/out channel counts differ
    bool has_proj = false;
    double dropout = 0.0;
};

struct TcnParams {
    int in_ch = 0;
    int n_out = 0;
    std::vector<TcnBlock> blocks;
    ConvLayer head;  // 1x1 conv to n_out logits
};

// Default geometry: 3 blocks x 4 filters, kernel 3, dropout 0.1, dilations
// growing as powers of 4 (1, 4, 16).
inline TcnParams make_tcn(int in_ch, int n_out, Rng& rng, int n_blocks = 3, int filters = 4,
                          int kernel = 3, int dil_base = 4, double dropout = 0.1) {
    if (n_blocks < 1 || filters < 1 || kernel < 1 || dil_base < 1 || dropout < 0 || dropout >= 1)
        throw std::runtime_error("bad network geometry");
    TcnParams p;
    p.in_ch = in_ch;
    p.n_out = n_out;
    int ch = in_ch;
    int dil = 1;
    for (int i = 0; i < n_blocks; ++i) {
        TcnBlock b;
        b.c1 = make_conv(ch, filters, kernel, dil, rng);
        b.c2 = make_conv(filters, filters, kernel, dil, rng);
        b.dropout = dropout;
        if (ch != filters) {
            b.proj = make_conv(ch, filters, 1, 1, rng);
            b.has_proj = true;
        }
        p.blocks.push_back(std::move(b));
        ch = filters;
        dil *= dil_base;
    }
    p.head = make_conv(ch, n_out, 1, 1, rng);
    return p;
}

// Per-episode pre-sampled inverted-dropout multipliers: one (channels x T)
// mask per dropout site. Sampling once up front makes incremental rollout
// passes and the full-sequence training pass numerically identical.
struct DropoutMasks {
    std::vector<Tensor> mask;  // 2 per block: after each conv's activation
};

inline DropoutMasks make_dropout_masks(const TcnParams& p, int T, Rng& rng) {
    DropoutMasks dm;
    for (const TcnBlock& b : p.blocks) {
        for (int site = 0; site < 2; ++site) {
            const ConvLayer& c = site == 0 ? b.c1 : b.c2;
            Tensor m = Tensor::zeros({c.out_ch, T});
            for (double& x : m.v)
                x = (b.dropout > 0 && rng.uniform() < b.dropout) ? 0.0 : 1.0 / (1.0 - b.dropout);
            dm.mask.push_back(std::move(m));
        }
    }
    return dm;
}

constexpr double kLogitClamp = 36.0;

struct TcnCache {
    Tensor input;
    struct BlockCache {
        Tensor in, z1, a1, z2, a2, res_in, pre_out, out;
    };
    std::vector<BlockCache> blocks;
    Tensor head_in, logits, probs;
    DropoutMasks masks_used;  // empty tensors when eval mode
    bool train_mode = false;
};

// Probabilities for every slot at every interval, shape (n_out x L).
// masks == nullptr runs in eval mode (no dropout).
inline Tensor tcn_forward(const TcnParams& p, const Tensor& input, const DropoutMasks* masks,
                          TcnCache* cache = nullptr) {
    if (input.rows() != p.in_ch) throw std::runtime_error("input channel mismatch");
    int L = input.cols();
    if (masks && !masks->mask.empty() && masks->mask[0].cols() < L)
        throw std::runtime_error("dropout masks shorter than the input sequence");
    if (cache) {
        cache->input = input;
        cache->blocks.clear();
        cache->train_mode = masks != nullptr;
        if (masks) cache->masks_used = *masks;
    }
    Tensor x = input;
    for (std::size_t bi = 0; bi < p.blocks.size(); ++bi) {
        const TcnBlock& b = p.blocks[bi];
        TcnCache::BlockCache bc;
        bc.in = x;
        bc.z1 = conv_forward(b.c1, x);
        bc.a1 = bc.z1;
        for (double& u : bc.a1.v) u = std::max(0.0, u);
        if (masks) {
            const Tensor& m = masks->mask[2 * bi];
            for (int ch = 0; ch < bc.a1.rows(); ++ch)
                for (int l = 0; l < L; ++l) bc.a1.at(ch, l) *= m.at(ch, l);
        }
        bc.z2 = conv_forward(b.c2, bc.a1);
        bc.a2 = bc.z2;
        for (double& u : bc.a2.v) u = std::max(0.0, u);
        if (masks) {
            const Tensor& m = masks->mask[2 * bi + 1];
            for (int ch = 0; ch < bc.a2.rows(); ++ch)
                for (int l = 0; l < L; ++l) bc.a2.at(ch, l) *= m.at(ch, l);
        }
        bc.res_in = b.has_proj ? conv_forward(b.proj, x) : x;
        bc.pre_out = bc.a2;
        for (int i = 0; i < bc.pre_out.numel(); ++i) bc.pre_out.v[i] += bc.res_in.v[i];
        bc.out = bc.pre_out;
        for (double& u : bc.out.v) u = std::max(0.0, u);
        x = bc.out;
        if (cache) cache->blocks.push_back(std::move(bc));
    }
    Tensor logits = conv_forward(p.head, x);
    Tensor probs = logits;
    for (double& u : probs.v) {
        double z = std::clamp(u, -kLogitClamp, kLogitClamp);
        u = 1.0 / (1.0 + std::exp(-z));
    }
    if (cache) {
        cache->head_in = x;
        cache->logits = logits;
        cache->probs = probs;
    }
    return probs;
}

inline TcnParams zeros_like(const TcnParams& p) {
    TcnParams g = p;
    for (TcnBlock& b : g.blocks) {
        std::fill(b.c1.W.begin(), b.c1.W.end(), 0.0);
        std::fill(b.c1.b.begin(), b.c1.b.end(), 0.0);
        std::fill(b.c2.W.begin(), b.c2.W.end(), 0.0);
        std::fill(b.c2.b.begin(), b.c2.b.end(), 0.0);
        if (b.has_proj) {
            std::fill(b.proj.W.begin(), b.proj.W.end(), 0.0);
            std::fill(b.proj.b.begin(), b.proj.b.end(), 0.0);
        }
    }
    std::fill(g.head.W.begin(), g.head.W.end(), 0.0);
    std::fill(g.head.b.begin(), g.head.b.end(), 0.0);
    return g;
}

// Accumulate d(loss)/d(params) given d(loss)/d(probabilities).
inline void tcn_backward(const TcnParams& p, const TcnCache& cache, const Tensor& dprobs,
                         TcnParams& grad) {
    if (cache.blocks.size() != p.blocks.size())
        throw std::runtime_error("stale or mismatched forward cache");
    int L = cache.input.cols();
    if (dprobs.rows() != p.n_out || dprobs.cols() != L)
        throw std::runtime_error("upstream gradient shape mismatch");

    Tensor dlogits = dprobs;
    for (int i = 0; i < dlogits.numel(); ++i) {
        double z = cache.logits.v[i];
        if (std::abs(z) >= kLogitClamp) {
            dlogits.v[i] = 0.0;  // saturated by the clamp
            continue;
        }
        double pr = cache.probs.v[i];
        dlogits.v[i] *= pr * (1.0 - pr);
    }
    Tensor dx = Tensor::zeros({p.head.in_ch, L});
    conv_backward(p.head, cache.head_in, dlogits, dx, grad.head);

    for (int bi = (int)p.blocks.size() - 1; bi >= 0; --bi) {
        const TcnBlock& b = p.blocks[bi];
        const auto& bc = cache.blocks[bi];
        TcnBlock& gb = grad.blocks[bi];

        Tensor dpre = dx;
        for (int i = 0; i < dpre.numel(); ++i)
            if (bc.pre_out.v[i] <= 0.0) dpre.v[i] = 0.0;

        // residual leg
        Tensor din_res = Tensor::zeros({b.has_proj ? b.proj.in_ch : bc.in.rows(), L});
        if (b.has_proj)
            conv_backward(b.proj, bc.in, dpre, din_res, gb.proj);
        else
            din_res = dpre;

        // conv leg, unwinding dropout -> relu -> conv twice
        Tensor da2 = dpre;
        if (cache.train_mode) {
            const Tensor& m = cache.masks_used.mask[2 * bi + 1];
            for (int ch = 0; ch < da2.rows(); ++ch)
                for (int l = 0; l < L; ++l) da2.at(ch, l) *= m.at(ch, l);
        }
        for (int i = 0; i < da2.numel(); ++i)
            if (bc.z2.v[i] <= 0.0) da2.v[i] = 0.0;
        Tensor da1 = Tensor::zeros({b.c2.in_ch, L});
        conv_backward(b.c2, bc.a1, da2, da1, gb.c2);

        if (cache.train_mode) {
            const Tensor& m = cache.masks_used.mask[2 * bi];
            for (int ch = 0; ch < da1.rows(); ++ch)
                for (int l = 0; l < L; ++l) da1.at(ch, l) *= m.at(ch, l);
        }
        for (int i = 0; i < da1.numel(); ++i)
            if (bc.z1.v[i] <= 0.0) da1.v[i] = 0.0;
        Tensor din = Tensor::zeros({b.c1.in_ch, L});
        conv_backward(b.c1, bc.in, da1, din, gb.c1);

        for (int i = 0; i < din.numel(); ++i) din.v[i] += din_res.v[i];
        dx = std::move(din);
    }
}

// Match probabilities for the last column of an encoded sequence, keyed to
// the snapshot's active customers by slot order.
inline MatchProbabilities tcn_probs(const Tensor& probs_seq, const MarketSnapshot& snap,
                                    int n_slots) {
    auto ids = slot_ids(snap, n_slots);
    MatchProbabilities mp;
    int col = probs_seq.cols() - 1;
    for (int s = 0; s < (int)ids.size(); ++s) mp.probs[ids[s]] = probs_seq.at(s, col);
    return mp;
}

// ---------------------------------------------------------------------------
// Critic
// ---------------------------------------------------------------------------

struct DenseLayer {
    int in = 0, out = 0;
    std::vector<double> W;  // [out][in]
    std::vector<double> b;
};

struct CriticParams {
    std::vector<DenseLayer> layers;  // tanh hidden, linear scalar output
};

inline CriticParams make_critic(int in_dim, const std::vector<int>& hidden, Rng& rng) {
    CriticParams p;
    int prev = in_dim;
    std::vector<int> dims = hidden;
    dims.push_back(1);
    for (int out : dims) {
        DenseLayer l;
        l.in = prev;
        l.out = out;
        double bound = std::sqrt(1.0 / prev);
        l.W.resize((std::size_t)prev * out);
        l.b.assign(out, 0.0);
        for (double& w : l.W) w = rng.uniform(-bound, bound);
        for (double& b : l.b) b = rng.uniform(-bound, bound);
        p.layers.push_back(std::move(l));
        prev = out;
    }
    return p;
}

struct CriticCache {
    std::vector<std::vector<double>> acts;  // acts[0] = input, then post-activation layers
    std::vector<std::vector<double>> pre;   // pre-activation per layer
};

inline double critic_forward(const CriticParams& p, const std::vector<double>& x,
                             CriticCache* cache = nullptr) {
    if (p.layers.empty() || (int)x.size() != p.layers[0].in)
        throw std::runtime_error("critic input dimension mismatch");
    std::vector<double> a = x;
    if (cache) {
        cache->acts = {a};
        cache->pre.clear();
    }
    for (std::size_t li = 0; li < p.layers.size(); ++li) {
        const DenseLayer& l = p.layers[li];
        std::vector<double> z(l.out);
        for (int o = 0; o < l.out; ++o) {
            double acc = l.b[o];
            for (int i = 0; i < l.in; ++i) acc += l.W[(std::size_t)o * l.in + i] * a[i];
            z[o] = acc;
        }
        bool last = li + 1 == p.layers.size();
        std::vector<double> out = z;
        if (!last)
            for (double& u : out) u = std::tanh(u);
        if (cache) {
            cache->pre.push_back(z);
            cache->acts.push_back(out);
        }
        a = std::move(out);
    }
    return a[0];
}

inline CriticParams zeros_like(const CriticParams& p) {
    CriticParams g = p;
    for (DenseLayer& l : g.layers) {
        std::fill(l.W.begin(), l.W.end(), 0.0);
        std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    return g;
}

// Accumulates d(loss)/d(params) for upstream scalar gradient dV.
inline void critic_backward(const CriticParams& p, const CriticCache& cache, double dV,
                            CriticParams& grad) {
    if (cache.acts.size() != p.layers.size() + 1)
        throw std::runtime_error("stale critic cache");
    std::vector<double> da{dV};
    for (int li = (int)p.layers.size() - 1; li >= 0; --li) {
        const DenseLayer& l = p.layers[li];
        bool last = li + 1 == (int)p.layers.size();
        std::vector<double> dz = da;
        if (!last)
            for (int o = 0; o < l.out; ++o) {
                double t = std::tanh(cache.pre[li][o]);
                dz[o] *= 1.0 - t * t;
            }
        const std::vector<double>& a_in = cache.acts[li];
        std::vector<double> din(l.in, 0.0);
        for (int o = 0; o < l.out; ++o) {
            grad.layers[li].b[o] += dz[o];
            for (int i = 0; i < l.in; ++i) {
                grad.layers[li].W[(std::size_t)o * l.in + i] += dz[o] * a_in[i];
                din[i] += dz[o] * l.W[(std::size_t)o * l.in + i];
            }
        }
        da = std::move(din);
    }
}

// ---------------------------------------------------------------------------
// Flattening (optimizer / checkpoints / finite differences)
// ---------------------------------------------------------------------------

namespace nn_detail {
template <class Fn>
void visit_params(TcnParams& p, Fn&& fn) {
    for (TcnBlock& b : p.blocks) {
        for (double& w : b.c1.W) fn(w);
        for (double& w : b.c1.b) fn(w);
        for (double& w : b.c2.W) fn(w);
        for (double& w : b.c2.b) fn(w);
        if (b.has_proj) {
            for (double& w : b.proj.W) fn(w);
            for (double& w : b.proj.b) fn(w);
        }
    }
    for (double& w : p.head.W) fn(w);
    for (double& w : p.head.b) fn(w);
}
template <class Fn>
void visit_params(CriticParams& p, Fn&& fn) {
    for (DenseLayer& l : p.layers) {
        for (double& w : l.W) fn(w);
        for (double& w : l.b) fn(w);
    }
}
}  // namespace nn_detail

template <class Params>
Eigen::VectorXd flatten(const Params& p) {
    Params& mp = const_cast<Params&>(p);
    std::vector<double> vals;
    nn_detail::visit_params(mp, [&](double& w) { vals.push_back(w); });
    return Eigen::Map<Eigen::VectorXd>(vals.data(), (Eigen::Index)vals.size());
}

template <class Params>
void unflatten(Params& p, const Eigen::VectorXd& flat) {
    Eigen::Index i = 0;
    nn_detail::visit_params(p, [&](double& w) {
        if (i >= flat.size()) throw std::runtime_error("flat parameter vector too short");
        w = flat(i++);
    });
    if (i != flat.size()) throw std::runtime_error("flat parameter vector too long");
}

// ---------------------------------------------------------------------------
// ADAM
// ---------------------------------------------------------------------------

struct AdamState {
    Eigen::VectorXd m, v;
    long long step = 0;
    double alpha = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

inline AdamState make_adam(Eigen::Index dim, double alpha) {
    AdamState st;
    st.m = Eigen::VectorXd::Zero(dim);
    st.v = Eigen::VectorXd::Zero(dim);
    st.alpha = alpha;
    return st;
}

// Bias-corrected moment update; ascent adds the step, descent subtracts.
inline void adam_step(AdamState& st, Eigen::VectorXd& params, const Eigen::VectorXd& grad,
                      bool ascent) {
    if (params.size() != grad.size() || params.size() != st.m.size())
        throw std::runtime_error("optimizer shape mismatch");
    if (!grad.allFinite()) throw std::runtime_error("non-finite gradient");
    st.step += 1;
    st.m = st.beta1 * st.m + (1.0 - st.beta1) * grad;
    st.v = st.beta2 * st.v + (1.0 - st.beta2) * grad.cwiseProduct(grad);
    double bc1 = 1.0 - std::pow(st.beta1, (double)st.step);
    double bc2 = 1.0 - std::pow(st.beta2, (double)st.step);
    Eigen::VectorXd mhat = st.m / bc1;
    Eigen::VectorXd vhat = st.v / bc2;
    Eigen::VectorXd delta =
        st.alpha * mhat.cwiseQuotient(vhat.cwiseSqrt() + Eigen::VectorXd::Constant(vhat.size(), st.eps));
    params += ascent ? delta : Eigen::VectorXd(-delta);
}

// ---------------------------------------------------------------------------
// Checkpoints (hexfloat text, bit-exact round trip)
// ---------------------------------------------------------------------------

namespace nn_detail {
inline std::string hexd(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}
inline void emit_vec(std::string& out, const char* tag, const std::vector<double>& v) {
    out += tag;
    for (double x : v) {
        out += ',';
        out += hexd(x);
    }
    out += '\n';
}
inline void emit_evec(std::string& out, const char* tag, const Eigen::VectorXd& v) {
    out += tag;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out += ',';
        out += hexd(v(i));
    }
    out += '\n';
}

struct CkptReader {
    std::vector<std::vector<std::string>> rows;
    std::size_t pos = 0;
    explicit CkptReader(const std::string& text) {
        std::size_t p = 0;
        while (p < text.size()) {
            auto eol = text.find('\n', p);
            if (eol == std::string::npos) eol = text.size();
            std::string line = text.substr(p, eol - p);
            p = eol + 1;
            if (!line.empty()) rows.push_back(csv::split(line));
        }
    }
    const std::vector<std::string>& next(const std::string& tag) {
        if (pos >= rows.size()) throw std::runtime_error("checkpoint truncated at " + tag);
        if (rows[pos][0] != tag)
            throw std::runtime_error("checkpoint expected '" + tag + "', found '" + rows[pos][0] + "'");
        return rows[pos++];
    }
    static double hexval(const std::string& s) {
        char* end = nullptr;
        double v = std::strtod(s.c_str(), &end);
        if (end == s.c_str()) throw std::runtime_error("bad checkpoint number: " + s);
        return v;
    }
    std::vector<double> vec(const std::string& tag, std::size_t count) {
        auto& r = next(tag);
        if (r.size() != count + 1) throw std::runtime_error("checkpoint vector length mismatch: " + tag);
        std::vector<double> v(count);
        for (std::size_t i = 0; i < count; ++i) v[i] = hexval(r[i + 1]);
        return v;
    }
};

inline void emit_conv(std::string& out, const ConvLayer& c) {
    out += "conv," + std::to_string(c.in_ch) + "," + std::to_string(c.out_ch) + "," +
           std::to_string(c.kernel) + "," + std::to_string(c.dilation) + "\n";
    emit_vec(out, "w", c.W);
    emit_vec(out, "b", c.b);
}
inline ConvLayer read_conv(CkptReader& r) {
    auto& hd = r.next("conv");
    if (hd.size() != 5) throw std::runtime_error("bad conv header");
    ConvLayer c;
    c.in_ch = csv::to_int(hd[1], "ckpt");
    c.out_ch = csv::to_int(hd[2], "ckpt");
    c.kernel = csv::to_int(hd[3], "ckpt");
    c.dilation = csv::to_int(hd[4], "ckpt");
    c.W = r.vec("w", (std::size_t)c.in_ch * c.out_ch * c.kernel);
    c.b = r.vec("b", (std::size_t)c.out_ch);
    return c;
}
inline void emit_adam(std::string& out, const char* name, const AdamState& st) {
    out += std::string("adam,") + name + "," + std::to_string(st.step) + "," + hexd(st.alpha) +
           "," + hexd(st.beta1) + "," + hexd(st.beta2) + "," + hexd(st.eps) + "\n";
    emit_evec(out, "m", st.m);
    emit_evec(out, "v", st.v);
}
inline AdamState read_adam(CkptReader& r, const std::string& name) {
    auto& hd = r.next("adam");
    if (hd.size() != 7 || hd[1] != name) throw std::runtime_error("bad adam header");
    AdamState st;
    st.step = (long long)csv::to_int(hd[2], "ckpt");
    st.alpha = CkptReader::hexval(hd[3]);
    st.beta1 = CkptReader::hexval(hd[4]);
    st.beta2 = CkptReader::hexval(hd[5]);
    st.eps = CkptReader::hexval(hd[6]);
    auto m = r.next("m");
    st.m.resize((Eigen::Index)m.size() - 1);
    for (Eigen::Index i = 0; i + 1 < (Eigen::Index)m.size(); ++i)
        st.m(i) = CkptReader::hexval(m[i + 1]);
    auto v = r.next("v");
    if (v.size() != m.size()) throw std::runtime_error("adam moment length mismatch");
    st.v.resize((Eigen::Index)v.size() - 1);
    for (Eigen::Index i = 0; i + 1 < (Eigen::Index)v.size(); ++i)
        st.v(i) = CkptReader::hexval(v[i + 1]);
    return st;
}
}  // namespace nn_detail

struct Checkpoint {
    TcnParams policy;
    CriticParams critic;
    AdamState opt_theta, opt_phi;
    long long epoch = 0;          // absolute epochs completed
    double welfare_accum = 0.0;   // running-average state, so resumes
    long long welfare_count = 0;  // continue the same log
};

inline std::string save_checkpoint(const Checkpoint& ck) {
    using namespace nn_detail;
    std::string out = "gridmatch-ckpt,1\n";
    out += "epoch," + std::to_string(ck.epoch) + "," + hexd(ck.welfare_accum) + "," +
           std::to_string(ck.welfare_count) + "\n";
    out += "tcn," + std::to_string(ck.policy.in_ch) + "," + std::to_string(ck.policy.n_out) + "," +
           std::to_string(ck.policy.blocks.size()) + "\n";
    for (const TcnBlock& b : ck.policy.blocks) {
        out += "block," + std::to_string(b.has_proj ? 1 : 0) + "," + hexd(b.dropout) + "\n";
        emit_conv(out, b.c1);
        emit_conv(out, b.c2);
        if (b.has_proj) emit_conv(out, b.proj);
    }
    emit_conv(out, ck.policy.head);
    out += "critic," + std::to_string(ck.critic.layers.size()) + "\n";
    for (const DenseLayer& l : ck.critic.layers) {
        out += "dense," + std::to_string(l.in) + "," + std::to_string(l.out) + "\n";
        emit_vec(out, "w", l.W);
        emit_vec(out, "b", l.b);
    }
    emit_adam(out, "theta", ck.opt_theta);
    emit_adam(out, "phi", ck.opt_phi);
    return out;
}

inline Checkpoint load_checkpoint(const std::string& text) {
    using namespace nn_detail;
    CkptReader r(text);
    auto& magic = r.next("gridmatch-ckpt");
    if (magic.size() != 2 || magic[1] != "1") throw std::runtime_error("unsupported checkpoint version");
    Checkpoint ck;
    auto& eh = r.next("epoch");
    if (eh.size() != 4) throw std::runtime_error("bad epoch header");
    ck.epoch = csv::to_int(eh.at(1), "ckpt");
    ck.welfare_accum = CkptReader::hexval(eh.at(2));
    ck.welfare_count = csv::to_int(eh.at(3), "ckpt");
    auto& th = r.next("tcn");
    ck.policy.in_ch = csv::to_int(th.at(1), "ckpt");
    ck.policy.n_out = csv::to_int(th.at(2), "ckpt");
    int nb = csv::to_int(th.at(3), "ckpt");
    for (int i = 0; i < nb; ++i) {
        auto& bh = r.next("block");
        TcnBlock b;
        b.has_proj = csv::to_int(bh.at(1), "ckpt") != 0;
        b.dropout = CkptReader::hexval(bh.at(2));
        b.c1 = read_conv(r);
        b.c2 = read_conv(r);
        if (b.has_proj) b.proj = read_conv(r);
        ck.policy.blocks.push_back(std::move(b));
    }
    ck.policy.head = read_conv(r);
    int nl = csv::to_int(r.next("critic").at(1), "ckpt");
    for (int i = 0; i < nl; ++i) {
        auto& dh = r.next("dense");
        DenseLayer l;
        l.in = csv::to_int(dh.at(1), "ckpt");
        l.out = csv::to_int(dh.at(2), "ckpt");
        l.W = r.vec("w", (std::size_t)l.in * l.out);
        l.b = r.vec("b", (std::size_t)l.out);
        ck.critic.layers.push_back(std::move(l));
    }
    ck.opt_theta = nn_detail::read_adam(r, "theta");
    ck.opt_phi = nn_detail::read_adam(r, "phi");
    return ck;
}

// Central finite differences of a scalar function of a flat parameter vector.
template <class F>
Eigen::VectorXd finite_difference(F&& f, Eigen::VectorXd x, double eps = 1e-5) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double keep = x(i);
        x(i) = keep + eps;
        double up = f(x);
        x(i) = keep - eps;
        double dn = f(x);
        x(i) = keep;
        g(i) = (up - dn) / (2.0 * eps);
    }
    return g;
}

}  // namespace gridmatch
