#include <doctest.h>

#include <random>

#include "groupalign/grouping.hpp"
#include "test_helpers.hpp"

using namespace groupalign;

namespace {

ScoreMap random_score_map(int h, int w, int cls, std::mt19937_64& rng) {
    return make_score_map(gatest::random_tensor(h, w, cls, rng));
}

// Straight-line reimplementation of the grouping network on one map in eval
// mode: dense per-pixel matrix ops, no shared code with GroupNet internals.
Tensor group_assign_oracle(const GroupNet& net, const Tensor& input) {
    const int hidden = net.cfg.hidden;
    const int k = net.cfg.k;
    const int cls = net.cfg.cls;
    Tensor out(input.h, input.w, k);
    for (int y = 0; y < input.h; ++y) {
        for (int x = 0; x < input.w; ++x) {
            std::vector<double> h1(hidden, 0.0);
            for (int o = 0; o < hidden; ++o) {
                double acc = net.conv1.bias[o];
                for (int u = 0; u < cls; ++u)
                    acc += net.conv1.weight[static_cast<std::size_t>(o) * cls + u] *
                           input.at(y, x, u);
                h1[o] = acc > 0.0 ? acc : 0.0;  // relu
            }
            for (int o = 0; o < hidden; ++o) {
                const double norm = (h1[o] - net.bn.running_mean[o]) /
                                    std::sqrt(net.bn.running_var[o] + net.bn.eps);
                h1[o] = net.bn.gamma[o] * norm + net.bn.beta[o];
            }
            std::vector<double> z2(k, 0.0);
            for (int o = 0; o < k; ++o) {
                double acc = net.conv2.bias[o];
                for (int u = 0; u < hidden; ++u)
                    acc += net.conv2.weight[static_cast<std::size_t>(o) * hidden + u] * h1[u];
                z2[o] = acc;
            }
            double mx = z2[0];
            for (double v : z2) mx = std::max(mx, v);
            double sum = 0.0;
            for (int o = 0; o < k; ++o) {
                z2[o] = std::exp(z2[o] - mx);
                sum += z2[o];
            }
            for (int o = 0; o < k; ++o) out.at(y, x, o) = z2[o] / sum;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("group_assign with K=1 is identically one") {
    std::mt19937_64 rng(2);
    GroupConfig cfg;
    cfg.cls = 5;
    cfg.k = 1;
    GroupNet net(cfg);
    net.init(rng);
    ScoreMap s = random_score_map(6, 6, 5, rng);
    GroupProbabilities assign = group_assign(net, s, true);
    for (double v : assign.v) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero-initialized second conv gives uniform group probabilities") {
    std::mt19937_64 rng(3);
    GroupConfig cfg;
    cfg.cls = 4;
    cfg.k = 4;
    GroupNet net(cfg);
    net.init(rng);  // conv2 zero by construction
    ScoreMap s = random_score_map(8, 8, 4, rng);
    GroupProbabilities assign = group_assign(net, s, true);
    for (double v : assign.v) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("K < 1 is a configuration error") {
    GroupConfig cfg;
    cfg.k = 0;
    CHECK_THROWS_AS(GroupNet{cfg}, ConfigError);
}

TEST_CASE("group_assign matches the dense per-pixel oracle") {
    std::mt19937_64 rng(41);
    GroupConfig cfg;
    cfg.cls = 3;
    cfg.k = 4;
    cfg.hidden = 16;
    GroupNet net(cfg);
    net.init(rng);
    // randomize everything the oracle reads, including BN stats and conv2
    gatest::fill_uniform(net.conv2.weight, rng, -0.8, 0.8);
    gatest::fill_uniform(net.conv2.bias, rng, -0.2, 0.2);
    gatest::fill_uniform(net.bn.running_mean, rng, -0.3, 0.3);
    gatest::fill_uniform(net.bn.running_var, rng, 0.4, 1.6);
    gatest::fill_uniform(net.bn.gamma, rng, 0.5, 1.5);
    gatest::fill_uniform(net.bn.beta, rng, -0.4, 0.4);

    ScoreMap s = random_score_map(8, 8, 3, rng);
    GroupProbabilities assign = group_assign(net, s, /*training=*/false);
    const Tensor oracle = group_assign_oracle(net, s.prob);
    REQUIRE(assign.v.size() == oracle.v.size());
    for (std::size_t i = 0; i < assign.v.size(); ++i)
        CHECK(assign.v[i] == doctest::Approx(oracle.v[i]).epsilon(1e-6));
}

TEST_CASE("partition of unity cascades through F and Q") {
    std::mt19937_64 rng(5);
    GroupConfig cfg;
    cfg.cls = 4;
    cfg.k = 3;
    GroupNet net(cfg);
    net.init(rng);
    gatest::fill_uniform(net.conv2.weight, rng, -0.5, 0.5);
    ScoreMap s = random_score_map(6, 6, 4, rng);
    GroupProbabilities assign = group_assign(net, s, true);

    // assignments sum to one per pixel
    for (int i = 0; i < 36; ++i) {
        double sum = 0.0;
        for (int k = 0; k < 3; ++k) sum += assign.v[static_cast<std::size_t>(i) * 3 + k];
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
    // features sum back to prob
    std::vector<GroupFeature> feats = group_features(s, assign);
    for (std::size_t i = 0; i < s.prob.v.size(); ++i) {
        double sum = 0.0;
        for (const GroupFeature& f : feats) sum += f.v[i];
        CHECK(sum == doctest::Approx(s.prob.v[i]).epsilon(1e-6));
    }
    // Q sums to the spatial class mean
    std::vector<double> class_mean(4, 0.0);
    for (int i = 0; i < 36; ++i)
        for (int u = 0; u < 4; ++u) class_mean[u] += s.prob.v[static_cast<std::size_t>(i) * 4 + u];
    for (double& v : class_mean) v /= 36.0;
    std::vector<double> q_sum(4, 0.0);
    for (const GroupFeature& f : feats) {
        ClassDistribution q = class_distribution(f);
        for (int u = 0; u < 4; ++u) q_sum[u] += q[u];
    }
    for (int u = 0; u < 4; ++u) CHECK(q_sum[u] == doctest::Approx(class_mean[u]).epsilon(1e-6));
}

TEST_CASE("group_features closed-form cases and elementwise oracle") {
    std::mt19937_64 rng(6);
    ScoreMap s = random_score_map(4, 4, 3, rng);

    SUBCASE("uniform assignment splits prob evenly") {
        GroupProbabilities assign(4, 4, 2, 0.5);
        std::vector<GroupFeature> feats = group_features(s, assign);
        for (std::size_t i = 0; i < s.prob.v.size(); ++i) {
            CHECK(feats[0].v[i] == doctest::Approx(s.prob.v[i] / 2).epsilon(1e-12));
            CHECK(feats[1].v[i] == doctest::Approx(s.prob.v[i] / 2).epsilon(1e-12));
        }
    }
    SUBCASE("one-hot assignment routes the pixel to one group") {
        GroupProbabilities assign(4, 4, 3, 0.0);
        for (int i = 0; i < 16; ++i) assign.v[static_cast<std::size_t>(i) * 3 + 2] = 1.0;
        std::vector<GroupFeature> feats = group_features(s, assign);
        for (std::size_t i = 0; i < s.prob.v.size(); ++i) {
            CHECK(feats[2].v[i] == doctest::Approx(s.prob.v[i]).epsilon(1e-12));
            CHECK(feats[0].v[i] == 0.0);
            CHECK(feats[1].v[i] == 0.0);
        }
    }
    SUBCASE("random maps equal the elementwise product oracle") {
        Tensor raw = gatest::random_tensor(4, 4, 2, rng, 0.0, 1.0);
        GroupProbabilities assign = channel_softmax(raw);
        std::vector<GroupFeature> feats = group_features(s, assign);
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x)
                for (int k = 0; k < 2; ++k)
                    for (int u = 0; u < 3; ++u)
                        CHECK(feats[k].at(y, x, u) ==
                              doctest::Approx(assign.at(y, x, k) * s.prob.at(y, x, u))
                                  .epsilon(1e-12));
    }
    SUBCASE("shape mismatch throws") {
        GroupProbabilities assign(3, 4, 2, 0.5);
        CHECK_THROWS_AS(group_features(s, assign), DataError);
    }
}

TEST_CASE("class_distribution and max_class_scores hand values") {
    // 2x2 map with two classes: pixels (.2,.8), (.4,.6), (1,0), (0,1)
    GroupFeature feat(2, 2, 2);
    feat.at(0, 0, 0) = 0.2;
    feat.at(0, 0, 1) = 0.8;
    feat.at(0, 1, 0) = 0.4;
    feat.at(0, 1, 1) = 0.6;
    feat.at(1, 0, 0) = 1.0;
    feat.at(1, 0, 1) = 0.0;
    feat.at(1, 1, 0) = 0.0;
    feat.at(1, 1, 1) = 1.0;

    ClassDistribution q = class_distribution(feat);
    CHECK(q[0] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(0.6).epsilon(1e-12));

    MaxClassScores m = max_class_scores(feat);
    CHECK(m[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m[1] == doctest::Approx(1.0).epsilon(1e-12));

    GroupFeature zeros(3, 3, 2, 0.0);
    for (double v : class_distribution(zeros)) CHECK(v == 0.0);
    for (double v : max_class_scores(zeros)) CHECK(v == 0.0);
}

TEST_CASE("m dominates the spatial mean of each channel") {
    std::mt19937_64 rng(8);
    GroupFeature feat = gatest::random_tensor(5, 5, 4, rng, 0.0, 1.0);
    ClassDistribution q = class_distribution(feat);
    MaxClassScores m = max_class_scores(feat);
    for (int u = 0; u < 4; ++u) CHECK(m[u] >= q[u]);
}

TEST_CASE("dQ/dscores and dM/dscores match finite differences") {
    std::mt19937_64 rng(77);
    GroupConfig cfg;
    cfg.cls = 3;
    cfg.k = 2;
    cfg.hidden = 8;
    GroupNet net(cfg);
    net.init(rng);
    gatest::fill_uniform(net.conv2.weight, rng, -0.6, 0.6);
    Tensor scores = gatest::random_tensor(4, 4, 3, rng);

    // scalar probes: weighted sums of all q's and m's
    std::vector<double> wq(2 * 3), wm(2 * 3);
    gatest::fill_uniform(wq, rng, -1.0, 1.0);
    gatest::fill_uniform(wm, rng, -1.0, 1.0);

    auto pipeline = [&](const Tensor& sc, double* q_out, double* m_out) {
        ScoreMap s = make_score_map(sc);
        GroupNet net_copy = net;  // keep BN running stats fixed across probes
        std::vector<const ScoreMap*> batch{&s};
        GroupNet::Forward fw;
        std::vector<GroupProbabilities> assign = net_copy.forward(batch, true, &fw);
        std::vector<GroupFeature> feats = group_features(s, assign[0]);
        double q_acc = 0.0, m_acc = 0.0;
        for (int k = 0; k < 2; ++k) {
            ClassDistribution q = class_distribution(feats[k]);
            MaxClassScores m = max_class_scores(feats[k]);
            for (int u = 0; u < 3; ++u) {
                q_acc += wq[static_cast<std::size_t>(k) * 3 + u] * q[u];
                m_acc += wm[static_cast<std::size_t>(k) * 3 + u] * m[u];
            }
        }
        if (q_out) *q_out = q_acc;
        if (m_out) *m_out = m_acc;
        return std::make_pair(q_acc, m_acc);
    };

    // analytic gradients via the module backward helpers
    auto analytic = [&](bool use_q) {
        ScoreMap s = make_score_map(scores);
        GroupNet net_copy = net;
        std::vector<const ScoreMap*> batch{&s};
        GroupNet::Forward fw;
        std::vector<GroupProbabilities> assign = net_copy.forward(batch, true, &fw);
        std::vector<GroupFeature> feats = group_features(s, assign[0]);
        std::vector<Tensor> dfeats(2);
        for (int k = 0; k < 2; ++k) {
            dfeats[k] = Tensor(4, 4, 3);
            if (use_q) {
                std::vector<double> dq(wq.begin() + k * 3, wq.begin() + (k + 1) * 3);
                class_distribution_backward(dq, dfeats[k]);
            } else {
                MaxPoolResult pool = max_class_scores_with_arg(feats[k]);
                std::vector<double> dm(wm.begin() + k * 3, wm.begin() + (k + 1) * 3);
                max_class_scores_backward(pool, dm, dfeats[k]);
            }
        }
        Tensor dassign, dprob;
        group_features_backward(s, assign[0], dfeats, dassign, dprob);
        std::vector<Tensor> dx = net_copy.backward(fw, {dassign});
        add_scaled(dprob, dx[0], 1.0);
        return channel_softmax_backward(s.prob, dprob);
    };

    Tensor dq_scores = analytic(true);
    auto eval_q = [&] { return pipeline(scores, nullptr, nullptr).first; };
    CHECK(gatest::grad_rel_error(scores.v, eval_q, dq_scores.v) < 1e-4);

    Tensor dm_scores = analytic(false);
    auto eval_m = [&] { return pipeline(scores, nullptr, nullptr).second; };
    CHECK(gatest::grad_rel_error(scores.v, eval_m, dm_scores.v) < 1e-4);
}

TEST_CASE("permuting grouping output channels permutes F, Q, M") {
    std::mt19937_64 rng(31);
    GroupConfig cfg;
    cfg.cls = 4;
    cfg.k = 3;
    cfg.hidden = 8;
    GroupNet net(cfg);
    net.init(rng);
    gatest::fill_uniform(net.conv2.weight, rng, -0.7, 0.7);
    gatest::fill_uniform(net.conv2.bias, rng, -0.2, 0.2);
    ScoreMap s = random_score_map(6, 6, 4, rng);

    const int perm[3] = {2, 0, 1};
    GroupNet permuted = net;
    for (int ko = 0; ko < 3; ++ko) {
        for (int u = 0; u < 8; ++u)
            permuted.conv2.weight[static_cast<std::size_t>(perm[ko]) * 8 + u] =
                net.conv2.weight[static_cast<std::size_t>(ko) * 8 + u];
        permuted.conv2.bias[perm[ko]] = net.conv2.bias[ko];
    }

    GroupProbabilities a0 = group_assign(net, s, true);
    GroupProbabilities a1 = group_assign(permuted, s, true);
    std::vector<GroupFeature> f0 = group_features(s, a0);
    std::vector<GroupFeature> f1 = group_features(s, a1);
    for (int k = 0; k < 3; ++k) {
        for (std::size_t i = 0; i < f0[k].v.size(); ++i)
            CHECK(f1[perm[k]].v[i] == doctest::Approx(f0[k].v[i]).epsilon(1e-9));
        ClassDistribution q0 = class_distribution(f0[k]);
        ClassDistribution q1 = class_distribution(f1[perm[k]]);
        MaxClassScores m0 = max_class_scores(f0[k]);
        MaxClassScores m1 = max_class_scores(f1[perm[k]]);
        for (int u = 0; u < 4; ++u) {
            CHECK(q1[u] == doctest::Approx(q0[u]).epsilon(1e-9));
            CHECK(m1[u] == doctest::Approx(m0[u]).epsilon(1e-9));
        }
    }
}
