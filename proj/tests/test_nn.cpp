#include <doctest.h>

#include <random>

#include "groupalign/nn.hpp"
#include "test_helpers.hpp"

using namespace groupalign;

namespace {

double tensor_sum_weighted(const Tensor& t, const Tensor& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.v.size(); ++i) s += t.v[i] * w.v[i];
    return s;
}

}  // namespace

TEST_CASE("conv2d output shapes") {
    Conv2d c3(3, 8, 3, 1, 1);
    CHECK(c3.out_h(16) == 16);
    Conv2d c4(8, 16, 4, 2, 1);
    CHECK(c4.out_h(64) == 32);
    CHECK(c4.out_w(32) == 16);
}

TEST_CASE("conv2d gradients match finite differences") {
    std::mt19937_64 rng(99);
    for (auto [k, stride, pad] : {std::array<int, 3>{3, 1, 1}, std::array<int, 3>{4, 2, 1},
                                  std::array<int, 3>{1, 1, 0}}) {
        Conv2d conv(3, 4, k, stride, pad);
        conv.he_init(rng);
        Tensor x = gatest::random_tensor(8, 8, 3, rng);
        Tensor cotangent = gatest::random_tensor(conv.out_h(8), conv.out_w(8), 4, rng);

        auto eval = [&] { return tensor_sum_weighted(conv.forward(x), cotangent); };
        conv.zero_grad();
        Tensor dx = conv.backward(x, cotangent);

        CHECK(gatest::grad_rel_error(x.v, eval, dx.v) < 1e-6);
        CHECK(gatest::grad_rel_error(conv.weight, eval, conv.gweight) < 1e-6);
        CHECK(gatest::grad_rel_error(conv.bias, eval, conv.gbias) < 1e-6);
    }
}

TEST_CASE("batch norm normalizes and its backward matches finite differences") {
    std::mt19937_64 rng(7);
    BatchNorm bn(3);
    gatest::Tensor a = gatest::random_tensor(4, 4, 3, rng);
    gatest::Tensor b = gatest::random_tensor(4, 4, 3, rng);
    gatest::fill_uniform(bn.gamma, rng, 0.5, 1.5);
    gatest::fill_uniform(bn.beta, rng, -0.5, 0.5);

    BatchNorm::Cache cache;
    std::vector<Tensor> ys = bn.forward({a, b}, true, &cache);
    // per-channel mean of normalized output equals beta
    for (int ch = 0; ch < 3; ++ch) {
        double mean = 0.0;
        for (const Tensor& y : ys)
            for (int i = 0; i < 16; ++i) mean += y.v[static_cast<std::size_t>(i) * 3 + ch];
        mean /= 32.0;
        CHECK(mean == doctest::Approx(bn.beta[ch]).epsilon(1e-9));
    }

    Tensor wa = gatest::random_tensor(4, 4, 3, rng);
    Tensor wb = gatest::random_tensor(4, 4, 3, rng);
    auto eval = [&] {
        BatchNorm bn_copy = bn;  // keep running stats untouched by probes
        std::vector<Tensor> out = bn_copy.forward({a, b}, true, nullptr);
        return tensor_sum_weighted(out[0], wa) + tensor_sum_weighted(out[1], wb);
    };
    bn.zero_grad();
    std::vector<Tensor> dxs = bn.backward(cache, {wa, wb});
    CHECK(gatest::grad_rel_error(a.v, eval, dxs[0].v) < 1e-6);
    CHECK(gatest::grad_rel_error(b.v, eval, dxs[1].v) < 1e-6);
    CHECK(gatest::grad_rel_error(bn.gamma, eval, bn.ggamma) < 1e-6);
    CHECK(gatest::grad_rel_error(bn.beta, eval, bn.gbeta) < 1e-6);
}

TEST_CASE("bilinear resize backward is the transpose of forward") {
    std::mt19937_64 rng(21);
    Tensor x = gatest::random_tensor(4, 4, 2, rng);
    Tensor w = gatest::random_tensor(8, 8, 2, rng);
    auto eval = [&] { return tensor_sum_weighted(bilinear_resize(x, 8, 8), w); };
    Tensor dx = bilinear_resize_backward(w, 4, 4);
    CHECK(gatest::grad_rel_error(x.v, eval, dx.v) < 1e-6);
}

TEST_CASE("softmax backward matches finite differences") {
    std::mt19937_64 rng(5);
    Tensor x = gatest::random_tensor(3, 3, 4, rng);
    Tensor w = gatest::random_tensor(3, 3, 4, rng);
    auto eval = [&] { return tensor_sum_weighted(channel_softmax(x), w); };
    Tensor y = channel_softmax(x);
    Tensor dx = channel_softmax_backward(y, w);
    CHECK(gatest::grad_rel_error(x.v, eval, dx.v) < 1e-6);

    for (int i = 0; i < 9; ++i) {
        double s = 0.0;
        for (int ch = 0; ch < 4; ++ch) s += y.v[static_cast<std::size_t>(i) * 4 + ch];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
}
