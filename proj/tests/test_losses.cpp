#include <doctest.h>

#include <cmath>
#include <random>

#include "groupalign/losses.hpp"
#include "groupalign/pipeline.hpp"
#include "test_helpers.hpp"

using namespace groupalign;

TEST_CASE("semantic consistency loss: closed forms") {
    SUBCASE("identical distributions give zero") {
        std::vector<ClassDistribution> q = {{0.2, 0.3}, {0.1, 0.4}};
        CHECK(semantic_consistency_loss(q, q) == doctest::Approx(0.0));
    }
    SUBCASE("opposed one-hots give two") {
        std::vector<ClassDistribution> qs = {{1.0, 0.0}};
        std::vector<ClassDistribution> qt = {{0.0, 1.0}};
        CHECK(semantic_consistency_loss(qs, qt) == doctest::Approx(2.0));
    }
    SUBCASE("per-group differences [0.1,-0.1] and [0,0] give 0.02") {
        std::vector<ClassDistribution> qs = {{0.5, 0.2}, {0.3, 0.3}};
        std::vector<ClassDistribution> qt = {{0.4, 0.3}, {0.3, 0.3}};
        CHECK(semantic_consistency_loss(qs, qt) == doctest::Approx(0.02).epsilon(1e-9));
    }
    SUBCASE("length mismatch throws") {
        std::vector<ClassDistribution> qs = {{1.0, 0.0}};
        std::vector<ClassDistribution> qt = {{1.0, 0.0}, {0.0, 1.0}};
        CHECK_THROWS_AS(semantic_consistency_loss(qs, qt), DataError);
    }
    SUBCASE("symmetric in its arguments") {
        std::mt19937_64 rng(3);
        std::vector<ClassDistribution> qs(3, ClassDistribution(4));
        std::vector<ClassDistribution> qt(3, ClassDistribution(4));
        for (auto& q : qs) gatest::fill_uniform(q, rng, 0.0, 1.0);
        for (auto& q : qt) gatest::fill_uniform(q, rng, 0.0, 1.0);
        CHECK(semantic_consistency_loss(qs, qt) ==
              doctest::Approx(semantic_consistency_loss(qt, qs)).epsilon(1e-12));
    }
}

TEST_CASE("cosine similarity: closed forms") {
    CHECK(cosine_similarity({1, 0}, {0, 1}) == doctest::Approx(0.0));
    CHECK(cosine_similarity({0.3, 0.3}, {0.7, 0.7}) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(cosine_similarity({3, 4}, {4, 3}) == doctest::Approx(0.96).epsilon(1e-9));
    // zero vectors are guarded by the epsilon, no crash
    CHECK(cosine_similarity({0, 0}, {1, 1}) == doctest::Approx(0.0));
}

TEST_CASE("cosine similarity is scale invariant") {
    std::mt19937_64 rng(5);
    ClassDistribution a(5), b(5);
    gatest::fill_uniform(a, rng, 0.01, 1.0);
    gatest::fill_uniform(b, rng, 0.01, 1.0);
    const double base = cosine_similarity(a, b);
    ClassDistribution a_scaled = a;
    for (double& v : a_scaled) v *= 37.5;
    CHECK(cosine_similarity(a_scaled, b) == doctest::Approx(base).epsilon(1e-7));
}

TEST_CASE("orthogonality loss: closed forms") {
    SUBCASE("disjoint one-hot groups give zero") {
        std::vector<ClassDistribution> q = {{1.0, 0.0}, {0.0, 1.0}};
        CHECK(orthogonality_loss(q, q) == doctest::Approx(0.0));
    }
    SUBCASE("identical nonzero groups count every pair in both domains") {
        std::vector<ClassDistribution> q(3, ClassDistribution{0.2, 0.5, 0.1});
        // 3 pairs per domain, cosine 1 each
        CHECK(orthogonality_loss(q, q) == doctest::Approx(6.0).epsilon(1e-7));
    }
    SUBCASE("K=1 has no pairs") {
        std::vector<ClassDistribution> q = {{0.4, 0.6}};
        CHECK(orthogonality_loss(q, q) == doctest::Approx(0.0));
    }
    SUBCASE("bounded by 2 * K(K-1)/2") {
        std::mt19937_64 rng(9);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<ClassDistribution> qs(4, ClassDistribution(3));
            std::vector<ClassDistribution> qt(4, ClassDistribution(3));
            for (auto& q : qs) gatest::fill_uniform(q, rng, 0.0, 1.0);
            for (auto& q : qt) gatest::fill_uniform(q, rng, 0.0, 1.0);
            const double v = orthogonality_loss(qs, qt);
            CHECK(v >= 0.0);
            CHECK(v <= 2.0 * 6.0 + 1e-9);
        }
    }
}

TEST_CASE("class equivalence loss: closed forms") {
    SUBCASE("no source score above tau gives zero") {
        std::vector<MaxClassScores> ms = {{0.01, 0.02}};
        std::vector<MaxClassScores> mt = {{0.5, 0.5}};
        CHECK(class_equivalence_loss(ms, mt, 0.05) == doctest::Approx(0.0));
    }
    SUBCASE("single active class gives -ln m_T") {
        std::vector<MaxClassScores> ms = {{0.9, 0.01}};
        std::vector<MaxClassScores> mt = {{0.5, 0.3}};
        CHECK(class_equivalence_loss(ms, mt, 0.05) ==
              doctest::Approx(0.6931471805599453).epsilon(1e-7));
    }
    SUBCASE("target at one gives ~zero") {
        std::vector<MaxClassScores> ms = {{0.9, 0.8}};
        std::vector<MaxClassScores> mt = {{1.0, 1.0}};
        CHECK(class_equivalence_loss(ms, mt, 0.05) == doctest::Approx(0.0).epsilon(1e-7));
    }
    SUBCASE("monotonically non-increasing in each active target entry") {
        std::vector<MaxClassScores> ms = {{0.9, 0.9}};
        double prev = 1e300;
        for (double m = 0.1; m <= 1.0; m += 0.1) {
            std::vector<MaxClassScores> mt = {{m, 0.5}};
            const double v = class_equivalence_loss(ms, mt, 0.05);
            CHECK(v <= prev);
            prev = v;
        }
    }
}

TEST_CASE("loss report satisfies the weighted-sum identity") {
    LossReport r;
    r.seg = 0.9;
    r.co = 1.0;
    r.orth = 1.0;
    r.cadv_g = 1.0;
    r.cl = 1.0;
    SUBCASE("all lambdas zero collapse to seg") {
        LossWeights w;
        w.lambda_co = w.lambda_orth = w.lambda_cadv = w.lambda_cl = 0.0;
        total_loss(r, w);
        CHECK(r.total == doctest::Approx(r.seg));
    }
    SUBCASE("paper weights with unit components add 0.0031") {
        LossWeights w;  // paper defaults
        total_loss(r, w);
        CHECK(r.total == doctest::Approx(0.9 + 0.0031).epsilon(1e-9));
    }
    SUBCASE("re-summation oracle on arbitrary components") {
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> u(0.0, 2.0);
        LossWeights w;
        w.lambda_co = 0.25;
        w.lambda_orth = 0.5;
        w.lambda_cadv = 0.125;
        w.lambda_cl = 0.0625;
        for (int i = 0; i < 10; ++i) {
            r.seg = u(rng);
            r.co = u(rng);
            r.orth = u(rng);
            r.cadv_g = u(rng);
            r.cl = u(rng);
            total_loss(r, w);
            const double oracle =
                r.seg + 0.25 * r.co + 0.5 * r.orth + 0.125 * r.cadv_g + 0.0625 * r.cl;
            CHECK(r.total == doctest::Approx(oracle).epsilon(1e-12));
        }
    }
    SUBCASE("negative weight rejected") {
        LossWeights w;
        w.lambda_co = -0.1;
        CHECK_THROWS_AS(total_loss(r, w), ConfigError);
    }
}

// gradient of each alignment loss w.r.t. the underlying scores, through the
// grouping network
TEST_CASE("alignment loss gradients through grouping match finite differences") {
    std::mt19937_64 rng(2024);
    GroupConfig gcfg;
    gcfg.cls = 3;
    gcfg.k = 2;
    gcfg.hidden = 8;
    GroupNet c_net(gcfg);
    c_net.init(rng);
    gatest::fill_uniform(c_net.conv2.weight, rng, -0.6, 0.6);

    DiscConfig dcfg;
    dcfg.in_channels = 9;
    dcfg.channels = {2, 2, 2, 2, 1};
    PatchDiscriminator d_net(dcfg);
    d_net.init(rng);

    PipelineConfig pcfg;
    pcfg.weights.tau = 0.05;

    Tensor scores_s = gatest::random_tensor(4, 4, 3, rng);
    Tensor scores_t = gatest::random_tensor(4, 4, 3, rng);
    LabelMap labels(4, 4);
    std::uniform_int_distribution<int> lab(0, 2);
    for (int& l : labels.labels) l = lab(rng);

    auto eval_term = [&](LossTerm term, const Tensor& ss, const Tensor& ts) {
        ScoreMap s = make_score_map(ss);
        ScoreMap t = make_score_map(ts);
        GroupNet c_copy = c_net;
        AlignmentPipeline pipe(&c_copy, &d_net, pcfg);
        AlignmentState st = pipe.forward({&s}, {&labels}, {&t}, true);
        return pipe.term_value_and_grad(st, term, nullptr);
    };
    auto grad_term = [&](LossTerm term) {
        ScoreMap s = make_score_map(scores_s);
        ScoreMap t = make_score_map(scores_t);
        GroupNet c_copy = c_net;
        AlignmentPipeline pipe(&c_copy, &d_net, pcfg);
        AlignmentState st = pipe.forward({&s}, {&labels}, {&t}, true);
        std::vector<Tensor> dscores(2);
        pipe.term_value_and_grad(st, term, &dscores);
        return dscores;
    };

    for (LossTerm term : {LossTerm::co, LossTerm::orth, LossTerm::cl}) {
        CAPTURE(loss_term_name(term));
        std::vector<Tensor> ds = grad_term(term);
        auto eval_s = [&] { return eval_term(term, scores_s, scores_t); };
        CHECK(gatest::grad_rel_error(scores_s.v, eval_s, ds[0].v) < 1e-4);
        auto eval_t = [&] { return eval_term(term, scores_s, scores_t); };
        CHECK(gatest::grad_rel_error(scores_t.v, eval_t, ds[1].v) < 1e-4);
    }
}
