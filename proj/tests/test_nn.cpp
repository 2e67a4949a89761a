#include <catch2/catch_amalgamated.hpp>

#include "gridmatch/nn.hpp"

using namespace gridmatch;
using Catch::Matchers::ContainsSubstring;

namespace {

EncodeNorms small_norms() {
    EncodeNorms en;
    en.T = 8;
    en.n_slots = 3;
    en.p_max = 6.6;
    en.c = 0.12;
    en.r_max = 10.0;
    return en;
}

// Relative error with an absolute floor, for comparing gradients.
double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).norm() / std::max(1e-12, b.norm());
}

// Smallest |pre-activation| across every ReLU input in the cache. Finite
// differences are only trustworthy when no perturbation crosses a kink.
double min_kink_margin(const TcnCache& cache) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& bc : cache.blocks) {
        for (double z : bc.z1.v) m = std::min(m, std::abs(z));
        for (double z : bc.z2.v) m = std::min(m, std::abs(z));
        for (double z : bc.pre_out.v) m = std::min(m, std::abs(z));
    }
    return m;
}

}  // namespace

TEST_CASE("encode_state lays out slots by ascending id and normalizes") {
    EncodeNorms en = small_norms();
    auto st = make_market(0.12, en.n_slots);
    // full-size request arriving at t=1 -> p feature exactly 1.0
    st = step_arrivals(st, {make_flexible(7, 1, 6.6, 5, 0.5, 0.12), make_flexible(3, 1, 3.3, 8, 1.0, 0.12)},
                       {4.0, 5.0});
    Tensor x = encode_state(st, en);
    REQUIRE(x.rows() == 6 * en.n_slots + 1);
    REQUIRE(x.cols() == 1);

    // slot 0 is customer 3 (lower id), slot 1 is customer 7, slot 2 empty
    CHECK(x.at(0, 0) == 1.0 / 8);       // a/T
    CHECK(x.at(1, 0) == 0.5);           // 3.3/6.6
    CHECK(x.at(3, 0) == 1.0);           // d/T = 8/8
    CHECK(x.at(4, 0) == 0.5);           // p_u/p_max
    CHECK(x.at(5, 0) == 1.0);           // willingness at arrival = c
    CHECK(x.at(6 + 1, 0) == 1.0);       // customer 7: p = 6.6 = p_max
    CHECK(x.at(6 + 3, 0) == 5.0 / 8);   // d/T
    for (int f = 0; f < 6; ++f) CHECK(x.at(12 + f, 0) == 0.0);  // empty slot
    CHECK(x.at(18, 0) == 0.4);          // r_p/r_max

    // b feature: phi_c * c / (d - a) over c
    CHECK_THAT(x.at(2, 0), Catch::Matchers::WithinAbs(1.0 / 7.0, 1e-15));

    SECTION("willingness feature decays as the deadline nears") {
        auto st2 = step_arrivals(st, {}, {0.0, 0.0});
        Tensor x2 = encode_state(st2, en);
        REQUIRE(x2.cols() == 2);
        // customer 3 at t=2: pi = c - b*(2-1)
        double b = 1.0 * 0.12 / 7.0;
        CHECK_THAT(x2.at(5, 1), Catch::Matchers::WithinAbs((0.12 - b) / 0.12, 1e-15));
        // first column still records the decision-time frame of t=1
        CHECK(x2.at(5, 0) == 1.0);
    }
}

TEST_CASE("encode_state rejects more customers than slots") {
    EncodeNorms en = small_norms();
    en.n_slots = 1;
    auto st = make_market(0.12, 8);
    st = step_arrivals(st, {make_flexible(1, 1, 2.0, 4, 0.5, 0.12), make_flexible(2, 1, 2.0, 4, 0.5, 0.12)},
                       {0.0, 1.0});
    REQUIRE_THROWS_WITH(encode_state(st, en), ContainsSubstring("slot count"));
}

TEST_CASE("all-zero weights give probability one half everywhere") {
    Rng rng(1);
    TcnParams p = make_tcn(13, 2, rng);
    Eigen::VectorXd flat = Eigen::VectorXd::Zero(flatten(p).size());
    unflatten(p, flat);
    Tensor in = Tensor::zeros({13, 5});
    Rng noise(2);
    for (double& v : in.v) v = noise.uniform(-1, 1);
    Tensor probs = tcn_forward(p, in, nullptr);
    REQUIRE(probs.rows() == 2);
    REQUIRE(probs.cols() == 5);
    for (double pr : probs.v) CHECK(pr == 0.5);
}

TEST_CASE("outputs are strict probabilities") {
    Rng rng(3);
    TcnParams p = make_tcn(7, 3, rng);
    // inflate weights to push logits toward the clamp
    Eigen::VectorXd flat = flatten(p) * 200.0;
    unflatten(p, flat);
    Tensor in = Tensor::zeros({7, 9});
    for (double& v : in.v) v = rng.uniform(-3, 3);
    Tensor probs = tcn_forward(p, in, nullptr);
    for (double pr : probs.v) {
        CHECK(pr > 0.0);
        CHECK(pr < 1.0);
        CHECK(std::isfinite(std::log(pr)));
        CHECK(std::isfinite(std::log1p(-pr)));
    }
}

TEST_CASE("causality: perturbing a frame never changes earlier outputs") {
    Rng rng(11);
    TcnParams p = make_tcn(13, 2, rng);
    int L = 20;
    Tensor in = Tensor::zeros({13, L});
    for (double& v : in.v) v = rng.uniform(-1, 1);
    Tensor base = tcn_forward(p, in, nullptr);
    for (int trial = 0; trial < 30; ++trial) {
        int col = rng.uniform_int(1, L - 1);
        int ch = rng.uniform_int(0, 12);
        Tensor mod = in;
        mod.at(ch, col) += rng.uniform(-5, 5);
        Tensor out = tcn_forward(p, mod, nullptr);
        for (int c = 0; c < out.rows(); ++c)
            for (int l = 0; l < col; ++l) REQUIRE(out.at(c, l) == base.at(c, l));
        // and the perturbed column itself must react through the direct tap
        // at least somewhere when the change is on-path (not asserted: the
        // receptive field guarantees reach, but ReLUs may gate it off).
    }
}

TEST_CASE("prefix forward equals full forward column by column") {
    Rng rng(17);
    TcnParams p = make_tcn(13, 2, rng);
    int T = 12;
    Tensor in = Tensor::zeros({13, T});
    for (double& v : in.v) v = rng.uniform(-1, 1);
    Rng drng(99);
    DropoutMasks dm = make_dropout_masks(p, T, drng);
    Tensor full = tcn_forward(p, in, &dm);
    for (int t = 1; t <= T; ++t) {
        Tensor prefix = Tensor::zeros({13, t});
        for (int c = 0; c < 13; ++c)
            for (int l = 0; l < t; ++l) prefix.at(c, l) = in.at(c, l);
        Tensor out = tcn_forward(p, prefix, &dm);
        for (int c = 0; c < out.rows(); ++c)
            REQUIRE(out.at(c, t - 1) == full.at(c, t - 1));  // bitwise
    }
}

TEST_CASE("dropout masks are inverted-scale and reproducible") {
    Rng rng(5);
    TcnParams p = make_tcn(13, 2, rng);
    Rng a(42), b(42), c(43);
    DropoutMasks m1 = make_dropout_masks(p, 16, a);
    DropoutMasks m2 = make_dropout_masks(p, 16, b);
    DropoutMasks m3 = make_dropout_masks(p, 16, c);
    REQUIRE(m1.mask.size() == 6);
    bool any_zero = false, differs = false;
    for (std::size_t i = 0; i < m1.mask.size(); ++i)
        for (int j = 0; j < m1.mask[i].numel(); ++j) {
            double v = m1.mask[i].v[j];
            REQUIRE((v == 0.0 || v == 1.0 / 0.9));
            REQUIRE(v == m2.mask[i].v[j]);
            if (v == 0.0) any_zero = true;
            if (v != m3.mask[i].v[j]) differs = true;
        }
    CHECK(any_zero);
    CHECK(differs);

    // eval mode ignores dropout entirely
    Tensor in = Tensor::zeros({13, 16});
    for (double& v : in.v) v = rng.uniform(-1, 1);
    Tensor e1 = tcn_forward(p, in, nullptr);
    Tensor e2 = tcn_forward(p, in, nullptr);
    REQUIRE(e1.v == e2.v);
    Tensor t1 = tcn_forward(p, in, &m1);
    CHECK(t1.v != e1.v);
}

TEST_CASE("conv layer gradients match finite differences to 1e-6") {
    Rng rng(7);
    ConvLayer c = make_conv(3, 2, 3, 2, rng);
    int L = 7;
    Tensor in = Tensor::zeros({3, L});
    for (double& v : in.v) v = rng.uniform(-1, 1);
    // smooth scalar loss over the output so FD is well-behaved
    Tensor coef = Tensor::zeros({2, L});
    for (double& v : coef.v) v = rng.uniform(-1, 1);
    auto loss_of = [&](const ConvLayer& cl, const Tensor& x) {
        Tensor out = conv_forward(cl, x);
        double s = 0;
        for (int i = 0; i < out.numel(); ++i) s += coef.v[i] * std::tanh(out.v[i]);
        return s;
    };
    // analytic
    Tensor out = conv_forward(c, in);
    Tensor dout = coef;
    for (int i = 0; i < dout.numel(); ++i) {
        double t = std::tanh(out.v[i]);
        dout.v[i] *= 1.0 - t * t;
    }
    Tensor din = Tensor::zeros({3, L});
    ConvLayer gc = c;
    std::fill(gc.W.begin(), gc.W.end(), 0.0);
    std::fill(gc.b.begin(), gc.b.end(), 0.0);
    conv_backward(c, in, dout, din, gc);

    // FD over weights and biases
    std::size_t nw = c.W.size(), nb = c.b.size();
    Eigen::VectorXd x0(nw + nb);
    for (std::size_t i = 0; i < nw; ++i) x0(i) = c.W[i];
    for (std::size_t i = 0; i < nb; ++i) x0(nw + i) = c.b[i];
    auto f = [&](const Eigen::VectorXd& x) {
        ConvLayer cl = c;
        for (std::size_t i = 0; i < nw; ++i) cl.W[i] = x(i);
        for (std::size_t i = 0; i < nb; ++i) cl.b[i] = x(nw + i);
        return loss_of(cl, in);
    };
    Eigen::VectorXd fd = finite_difference(f, x0);
    Eigen::VectorXd an(nw + nb);
    for (std::size_t i = 0; i < nw; ++i) an(i) = gc.W[i];
    for (std::size_t i = 0; i < nb; ++i) an(nw + i) = gc.b[i];
    REQUIRE(rel_err(an, fd) < 1e-6);

    // FD over the input
    Eigen::VectorXd xi(in.numel());
    for (int i = 0; i < in.numel(); ++i) xi(i) = in.v[i];
    auto fi = [&](const Eigen::VectorXd& x) {
        Tensor t = in;
        for (int i = 0; i < t.numel(); ++i) t.v[i] = x(i);
        return loss_of(c, t);
    };
    Eigen::VectorXd fdi = finite_difference(fi, xi);
    Eigen::VectorXd ani(in.numel());
    for (int i = 0; i < in.numel(); ++i) ani(i) = din.v[i];
    REQUIRE(rel_err(ani, fdi) < 1e-6);
}

TEST_CASE("full network gradient matches finite differences") {
    // Pick the first seed whose ReLU pre-activations keep a safe margin from
    // zero, so central differences never straddle a kink.
    int n_in = 13, n_out = 2, L = 6;
    Tensor in = Tensor::zeros({n_in, L});
    Tensor w = Tensor::zeros({n_out, L});
    std::vector<int> m((std::size_t)n_out * L);
    TcnParams p;
    TcnCache cache;
    DropoutMasks dm;
    bool train_mode = GENERATE(false, true);
    for (std::uint64_t seed = 100;; ++seed) {
        Rng rng(seed);
        p = make_tcn(n_in, n_out, rng);
        for (double& v : in.v) v = rng.uniform(-1, 1);
        for (double& v : w.v) v = rng.uniform(-2, 2);
        for (int& b : m) b = rng.bernoulli(0.5) ? 1 : 0;
        Rng drng(seed + 1);
        dm = make_dropout_masks(p, L, drng);
        tcn_forward(p, in, train_mode ? &dm : nullptr, &cache);
        if (min_kink_margin(cache) > 5e-4) break;
    }
    INFO("train_mode=" << train_mode);

    // surrogate: sum_i w_i * log Bernoulli(m_i | p_i)
    auto surrogate = [&](const Eigen::VectorXd& flat) {
        TcnParams q = p;
        unflatten(q, flat);
        Tensor pr = tcn_forward(q, in, train_mode ? &dm : nullptr);
        double s = 0;
        for (int i = 0; i < pr.numel(); ++i)
            s += w.v[i] * (m[i] ? std::log(pr.v[i]) : std::log1p(-pr.v[i]));
        return s;
    };

    Eigen::VectorXd flat = flatten(p);
    Tensor dprobs = Tensor::zeros({n_out, L});
    for (int i = 0; i < dprobs.numel(); ++i) {
        double pr = cache.probs.v[i];
        dprobs.v[i] = w.v[i] * (m[i] ? 1.0 / pr : -1.0 / (1.0 - pr));
    }
    TcnParams grad = zeros_like(p);
    tcn_backward(p, cache, dprobs, grad);
    Eigen::VectorXd an = flatten(grad);
    Eigen::VectorXd fd = finite_difference(surrogate, flat);
    REQUIRE(rel_err(an, fd) < 1e-4);
}

TEST_CASE("tcn_probs keys the last column by ascending customer id") {
    auto st = make_market(0.12, 3);
    st = step_arrivals(st, {make_flexible(9, 1, 2.0, 4, 0.5, 0.12), make_flexible(4, 1, 2.0, 4, 0.5, 0.12)},
                       {1.0, 2.0});
    Tensor probs = Tensor::zeros({3, 2});
    probs.at(0, 1) = 0.8;  // slot 0 -> id 4
    probs.at(1, 1) = 0.3;  // slot 1 -> id 9
    probs.at(2, 1) = 0.9;  // unused slot
    MatchProbabilities mp = tcn_probs(probs, st.snap, 3);
    REQUIRE(mp.probs.size() == 2);
    CHECK(mp.probs.at(4) == 0.8);
    CHECK(mp.probs.at(9) == 0.3);
}

TEST_CASE("critic: zero weights give zero, gradients match finite differences") {
    Rng rng(23);
    CriticParams p = make_critic(5, {4, 3}, rng);
    CriticParams z = p;
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(flatten(p).size());
    unflatten(z, zero);
    CHECK(critic_forward(z, {1.0, -2.0, 0.5, 3.0, 0.0}) == 0.0);

    std::vector<double> x = {0.3, -0.7, 1.2, 0.1, -0.4};
    auto f = [&](const Eigen::VectorXd& flat) {
        CriticParams q = p;
        unflatten(q, flat);
        double v = critic_forward(q, x);
        return 0.5 * (v - 2.0) * (v - 2.0);  // squared error against a target
    };
    CriticCache cache;
    double v = critic_forward(p, x, &cache);
    CriticParams grad = zeros_like(p);
    critic_backward(p, cache, v - 2.0, grad);
    Eigen::VectorXd an = flatten(grad);
    Eigen::VectorXd fd = finite_difference(f, flatten(p));
    REQUIRE(rel_err(an, fd) < 1e-6);
}

TEST_CASE("adam first step and limiting behavior") {
    AdamState st = make_adam(3, 0.1);
    Eigen::VectorXd params = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd g(3);
    g << 2.0, -0.5, 0.0;

    SECTION("first step is alpha * g / (|g| + eps)") {
        Eigen::VectorXd expect(3);
        for (int i = 0; i < 3; ++i) expect(i) = 0.1 * g(i) / (std::abs(g(i)) + st.eps);
        adam_step(st, params, g, /*ascent=*/true);
        REQUIRE((params - expect).norm() < 1e-15);
        CHECK(st.step == 1);
    }
    SECTION("descent negates the step") {
        Eigen::VectorXd up = params, dn = params;
        AdamState s2 = st;
        adam_step(st, up, g, true);
        adam_step(s2, dn, g, false);
        REQUIRE((up + dn).norm() == 0.0);
    }
    SECTION("zero gradient leaves parameters unchanged but counts the step") {
        params << 1, 2, 3;
        adam_step(st, params, Eigen::VectorXd::Zero(3), true);
        CHECK(params(0) == 1.0);
        CHECK(params(2) == 3.0);
        CHECK(st.step == 1);
    }
    SECTION("constant gradient converges to alpha * sign(g) steps") {
        Eigen::VectorXd prev = params;
        for (int k = 0; k < 50; ++k) {
            prev = params;
            adam_step(st, params, g, true);
        }
        Eigen::VectorXd step = params - prev;
        CHECK_THAT(step(0), Catch::Matchers::WithinAbs(0.1, 1e-7));
        CHECK_THAT(step(1), Catch::Matchers::WithinAbs(-0.1, 1e-7));
        CHECK(step(2) == 0.0);
    }
    SECTION("non-finite gradients are rejected") {
        g(1) = std::numeric_limits<double>::quiet_NaN();
        REQUIRE_THROWS_WITH(adam_step(st, params, g, true), ContainsSubstring("non-finite"));
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    Rng rng(31);
    Checkpoint ck;
    ck.policy = make_tcn(13, 2, rng);
    ck.critic = make_critic(14, {8}, rng);
    ck.opt_theta = make_adam(flatten(ck.policy).size(), 0.01);
    ck.opt_phi = make_adam(flatten(ck.critic).size(), 0.05);
    ck.epoch = 37;
    // dirty the optimizer state with a few steps on irrational-ish values
    Eigen::VectorXd pt = flatten(ck.policy);
    for (int k = 0; k < 3; ++k) {
        Eigen::VectorXd g = Eigen::VectorXd::Constant(pt.size(), std::sqrt(2.0) / (k + 1));
        adam_step(ck.opt_theta, pt, g, true);
    }
    unflatten(ck.policy, pt);

    std::string text = save_checkpoint(ck);
    Checkpoint back = load_checkpoint(text);
    REQUIRE(save_checkpoint(back) == text);
    REQUIRE(flatten(back.policy) == flatten(ck.policy));
    REQUIRE(flatten(back.critic) == flatten(ck.critic));
    REQUIRE(back.opt_theta.m == ck.opt_theta.m);
    REQUIRE(back.opt_theta.v == ck.opt_theta.v);
    CHECK(back.opt_theta.step == 3);
    CHECK(back.epoch == 37);
    CHECK(back.policy.blocks.size() == 3);
    CHECK(back.policy.blocks[0].has_proj);
    CHECK_FALSE(back.policy.blocks[1].has_proj);
    CHECK(back.policy.blocks[2].c1.dilation == 16);

    SECTION("corrupted text is rejected") {
        REQUIRE_THROWS(load_checkpoint("gridmatch-ckpt,2\n"));
        REQUIRE_THROWS(load_checkpoint(text.substr(0, text.size() / 2)));
    }
}

TEST_CASE("flatten and unflatten are inverse and order-stable") {
    Rng rng(41);
    TcnParams p = make_tcn(7, 3, rng);
    Eigen::VectorXd f1 = flatten(p);
    TcnParams q = p;
    Eigen::VectorXd mod = f1 * 1.5;
    unflatten(q, mod);
    REQUIRE(flatten(q) == mod);
    REQUIRE_THROWS_WITH(unflatten(q, Eigen::VectorXd::Zero(f1.size() - 1)),
                        ContainsSubstring("too short"));
    REQUIRE_THROWS_WITH(unflatten(q, Eigen::VectorXd::Zero(f1.size() + 1)),
                        ContainsSubstring("too long"));
}
