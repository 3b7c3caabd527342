#include "gradcheck.hpp"

#include "hiermask/backbone.hpp"
#include "hiermask/error.hpp"
#include "hiermask/params.hpp"
#include "hiermask/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace hiermask;
using ag::Tensor;
using T = Tensor<double>;

namespace {

std::mt19937_64 rng(1234);

T rand_t(ag::Shape s, bool grad = true, double scale = 1.0)
{
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(ag::numel(s));
    for (auto& x : v) x = nd(rng);
    return T::from(std::move(s), std::move(v), grad);
}

// Random linear functional of t, so every output entry receives a distinct upstream gradient.
T probe_sum(const T& t, std::uint64_t seed = 99)
{
    std::mt19937_64 r(seed);
    std::normal_distribution<double> nd;
    std::vector<double> w(t.numel());
    for (auto& x : w) x = nd(r);
    const int n = static_cast<int>(t.numel());
    return ag::sum(ag::matmul(ag::reshape(t, {1, n}), T::from({n, 1}, w)));
}

void expect_grads(const std::vector<T>& leaves, const std::function<T()>& f, double tol = 1e-6)
{
    ParamList<double> params;
    for (std::size_t i = 0; i < leaves.size(); ++i) params.push_back({"p" + std::to_string(i), leaves[i]});
    // entries below 1e-2 are compared absolutely
    const auto r = gradcheck::check(params, f, 1e-5, 1e-2);
    INFO("worst " << r.worst << " kinks " << r.kinks);
    CHECK(r.max_rel < tol);
}

int sgn(double v) { return v > 0 ? 1 : 0; }

} // namespace

TEST_SUITE("autograd") {

TEST_CASE("elementwise and structural op gradients")
{
    auto a = rand_t({3, 4}), b = rand_t({3, 4}), c = rand_t({2, 4});
    expect_grads({a, b}, [&] { return probe_sum(ag::add(a, b)); });
    expect_grads({a}, [&] { return probe_sum(ag::scale(a, 2.5)); });
    expect_grads({a}, [&] { return probe_sum(ag::relu(a)); });
    expect_grads({a}, [&] { return probe_sum(ag::reshape(a, {4, 3})); });
    expect_grads({a, c}, [&] { return probe_sum(ag::concat<double>({a, c})); });
    expect_grads({a}, [&] { return probe_sum(ag::slice(a, 1, 3)); });
    expect_grads({a}, [&] { return probe_sum(ag::slice_cols(a, 1, 3)); });
    expect_grads({a, b}, [&] { return probe_sum(ag::concat_cols<double>({a, b})); });
    expect_grads({a}, [&] { return ag::sum(a); });
    expect_grads({a}, [&] { return probe_sum(ag::transpose(a)); });
}

TEST_CASE("matrix op gradients")
{
    auto a = rand_t({3, 4}), b = rand_t({4, 5}), bt = rand_t({5, 4}), at = rand_t({4, 3});
    expect_grads({a, b}, [&] { return probe_sum(ag::matmul(a, b)); });
    expect_grads({a, bt}, [&] { return probe_sum(ag::matmul(a, bt, false, true)); });
    expect_grads({at, b}, [&] { return probe_sum(ag::matmul(at, b, true, false)); });
    expect_grads({at, bt}, [&] { return probe_sum(ag::matmul(at, bt, true, true)); });
    auto bias = rand_t({4}), w = rand_t({5, 4}), wb = rand_t({5});
    expect_grads({a, bias}, [&] { return probe_sum(ag::add_row_bias(a, bias)); });
    expect_grads({a, w, wb}, [&] { return probe_sum(ag::linear(a, w, wb)); });
    expect_grads({a}, [&] { return probe_sum(ag::softmax_rows(a)); });
    expect_grads({a}, [&] { return probe_sum(ag::softmax_cols(a)); });
    auto g = rand_t({4}), be = rand_t({4});
    expect_grads({a, g, be}, [&] { return probe_sum(ag::layer_norm_rows(a, g, be)); });
    expect_grads({a}, [&] { return probe_sum(ag::l2_normalize_cols(a)); });
    const std::vector<int> group{0, 1, 0};
    expect_grads({a}, [&] { return probe_sum(ag::group_sum_rows<double>(a, group, 2)); });
    auto x = rand_t({3, 2, 2, 2}), cb = rand_t({3});
    expect_grads({x, cb}, [&] { return probe_sum(ag::add_channel_bias(x, cb)); });
}

TEST_CASE("volumetric op gradients")
{
    auto x = rand_t({2, 4, 4, 4});
    auto w = rand_t({3, 2, 3, 3, 3}), b = rand_t({3});
    expect_grads({x, w, b}, [&] { return probe_sum(ag::conv3d(x, w, b)); });
    auto wd = rand_t({3, 2, 2, 2, 2});
    expect_grads({x, wd, b}, [&] { return probe_sum(ag::conv_down2(x, wd, b)); });
    auto wu = rand_t({2, 3, 2, 2, 2});
    expect_grads({x, wu, b}, [&] { return probe_sum(ag::conv_up2(x, wu, b)); });
    auto wa = rand_t({3, 2, 1, 2, 2}), wua = rand_t({2, 3, 1, 2, 2});
    expect_grads({x, wa, b}, [&] { return probe_sum(ag::conv_down2(x, wa, b)); });
    expect_grads({x, wua, b}, [&] { return probe_sum(ag::conv_up2(x, wua, b)); });
    auto wp = rand_t({3, 2});
    expect_grads({x, wp, b}, [&] { return probe_sum(ag::pointwise(x, wp, b)); });
    auto g = rand_t({2}), be = rand_t({2});
    expect_grads({x, g, be}, [&] { return probe_sum(ag::instance_norm(x, g, be)); });
}

TEST_CASE("loss gradients")
{
    auto logits = rand_t({4, 27});
    std::vector<std::uint8_t> labels(27);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 4);
    expect_grads({logits}, [&] { return ag::cross_entropy(ag::softmax_cols(logits), labels); });
    const std::vector<int> classes{1, 3};
    expect_grads({logits}, [&] { return ag::soft_dice_loss(ag::softmax_cols(logits), labels, classes); });
}

TEST_CASE("conv3d matches a direct loop")
{
    auto x = rand_t({2, 3, 4, 5}, false), w = rand_t({3, 2, 3, 3, 3}, false), b = rand_t({3}, false);
    const auto y = ag::conv3d(x, w, b);
    const int D = 3, H = 4, W = 5;
    double max_err = 0.0;
    for (int o = 0; o < 3; ++o)
        for (int z = 0; z < D; ++z)
            for (int yy = 0; yy < H; ++yy)
                for (int xx = 0; xx < W; ++xx) {
                    double acc = b.data()[o];
                    for (int i = 0; i < 2; ++i)
                        for (int dz = -1; dz <= 1; ++dz)
                            for (int dy = -1; dy <= 1; ++dy)
                                for (int dx = -1; dx <= 1; ++dx) {
                                    const int sz = z + dz, sy = yy + dy, sx = xx + dx;
                                    if (sz < 0 || sy < 0 || sx < 0 || sz >= D || sy >= H || sx >= W) continue;
                                    acc += w.data()[(((o * 2 + i) * 3 + dz + 1) * 3 + dy + 1) * 3 + dx + 1] *
                                           x.data()[((i * D + sz) * H + sy) * W + sx];
                                }
                    max_err = std::max(max_err, std::abs(acc - y.data()[((o * D + z) * H + yy) * W + xx]));
                }
    CHECK(max_err < 1e-12);
}

TEST_CASE("strided convolutions match direct loops")
{
    auto x = rand_t({2, 4, 2, 6}, false), w = rand_t({3, 2, 2, 2, 2}, false), b = rand_t({3}, false);
    const auto y = ag::conv_down2(x, w, b);
    REQUIRE(y.shape() == ag::Shape{3, 2, 1, 3});
    double max_err = 0.0;
    for (int o = 0; o < 3; ++o)
        for (int z = 0; z < 2; ++z)
            for (int xx = 0; xx < 3; ++xx) {
                double acc = b.data()[o];
                for (int i = 0; i < 2; ++i)
                    for (int kz = 0; kz < 2; ++kz)
                        for (int ky = 0; ky < 2; ++ky)
                            for (int kx = 0; kx < 2; ++kx)
                                acc += w.data()[(((o * 2 + i) * 2 + kz) * 2 + ky) * 2 + kx] *
                                       x.data()[((i * 4 + 2 * z + kz) * 2 + ky) * 6 + 2 * xx + kx];
                max_err = std::max(max_err, std::abs(acc - y.data()[(o * 2 + z) * 3 + xx]));
            }
    CHECK(max_err < 1e-12);

    auto u = rand_t({2, 2, 1, 3}, false), wu = rand_t({2, 3, 2, 2, 2}, false);
    const auto up = ag::conv_up2(u, wu, b);
    REQUIRE(up.shape() == ag::Shape{3, 4, 2, 6});
    max_err = 0.0;
    for (int o = 0; o < 3; ++o)
        for (int z = 0; z < 4; ++z)
            for (int yy = 0; yy < 2; ++yy)
                for (int xx = 0; xx < 6; ++xx) {
                    double acc = b.data()[o];
                    for (int i = 0; i < 2; ++i)
                        acc += wu.data()[(((i * 3 + o) * 2 + z % 2) * 2 + yy % 2) * 2 + xx % 2] *
                               u.data()[((i * 2 + z / 2) * 1 + yy / 2) * 3 + xx / 2];
                    max_err = std::max(max_err, std::abs(acc - up.data()[((o * 4 + z) * 2 + yy) * 6 + xx]));
                }
    CHECK(max_err < 1e-12);
}

TEST_CASE("instance norm normalizes each channel")
{
    auto x = rand_t({2, 3, 3, 3}, false, 4.0);
    auto g = T::from({2}, {1.0, 1.0}), b = T::from({2}, {0.0, 0.0});
    const auto y = ag::instance_norm(x, g, b);
    for (int c = 0; c < 2; ++c) {
        double mean = 0, sq = 0;
        for (int i = 0; i < 27; ++i) mean += y.data()[c * 27 + i];
        mean /= 27;
        for (int i = 0; i < 27; ++i) sq += std::pow(y.data()[c * 27 + i] - mean, 2);
        CHECK(std::abs(mean) < 1e-12);
        CHECK(sq / 27 == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("no-grad mode records nothing")
{
    auto a = rand_t({2, 2});
    ag::NoGradGuard guard;
    const auto b = ag::scale(a, 2.0);
    CHECK_FALSE(b.requires_grad());
    CHECK(b.node()->parents.empty());
}

TEST_CASE("relu probe sees sign changes")
{
    auto a = T::from({2}, {0.5, -0.5});
    ag::ReluPatternProbe probe;
    probe.reset();
    ag::relu(a);
    const auto h1 = probe.hash();
    probe.reset();
    ag::relu(a);
    CHECK(probe.hash() == h1);
    a.data()[1] = 0.25;
    probe.reset();
    ag::relu(a);
    CHECK(probe.hash() != h1);
    CHECK(sgn(a.data()[1]) == 1);
}

}

TEST_SUITE("backbone") {

TEST_CASE("feature shapes")
{
    Initializer init(0);
    Backbone<float> toy(BackboneConfig{16, {8, 16, 32, 32}}, init);
    ag::NoGradGuard guard;
    const auto f = toy.forward(Tensor<float>::zeros({1, 32, 32, 32}));
    for (int j = 0; j < kLevels; ++j) {
        CHECK(f.levels[j].dim(0) == 16);
        for (int a = 1; a <= 3; ++a) CHECK(f.levels[j].dim(a) == 32 >> j);
    }

    // z is halved twice only, as in the reference instantiation
    Initializer init2(0);
    Backbone<float> paper_shape(BackboneConfig{32, {1, 1, 1, 1}, true}, init2);
    const auto g = paper_shape.forward(Tensor<float>::zeros({1, 48, 192, 192}));
    CHECK(g.levels[3].shape() == ag::Shape{32, 12, 24, 24});
    CHECK(g.levels[0].shape() == ag::Shape{32, 48, 192, 192});
}

TEST_CASE("indivisible patch dims are rejected")
{
    CHECK_THROWS_AS(check_patch_dims({12, 16, 16}), UsageError);
    CHECK_NOTHROW(check_patch_dims({12, 16, 16}, BackboneConfig{8, {4, 4, 4, 4}, true}));
    Initializer init(0);
    Backbone<float> b(BackboneConfig{8, {4, 4, 4, 4}}, init);
    CHECK_THROWS_AS(b.forward(Tensor<float>::zeros({1, 8, 8, 20})), UsageError);
}

TEST_CASE("zero input gives zero features")
{
    Initializer init(3);
    Backbone<double> b(BackboneConfig{8, {4, 4, 8, 8}}, init);
    ag::NoGradGuard guard;
    const auto f = b.forward(T::zeros({1, 16, 16, 16}));
    for (const auto& level : f.levels)
        for (double v : level.data()) CHECK(v == 0.0);
}

TEST_CASE("backward against finite differences")
{
    Initializer init(5);
    Backbone<double> b(BackboneConfig{4, {2, 2, 4, 4}}, init);
    // move norm offsets and biases off zero so no ReLU sits at its kink
    std::mt19937_64 r(8);
    std::normal_distribution<double> nd(0.0, 0.3);
    for (auto& p : b.params())
        if (p.name.ends_with(".bias"))
            for (auto& v : p.tensor.data()) v = nd(r);
    auto patch = rand_t({1, 8, 8, 8}, false);
    const auto result = gradcheck::check(b.params(), [&] { return ag::sum(b.forward(patch).levels[3]); });
    INFO("worst " << result.worst << " kinks " << result.kinks);
    CHECK(result.max_rel < 1e-4);
}

TEST_CASE("backward entry point")
{
    Initializer init(5);
    Backbone<double> b(BackboneConfig{4, {2, 2, 4, 4}}, init);
    CHECK_THROWS_AS(b.backward({}), UsageError);

    auto patch = rand_t({1, 8, 8, 8}, false);
    b.forward(patch);
    b.backward({});
    for (const auto& p : b.params())
        for (double g : p.tensor.grad()) CHECK(g == 0.0);

    auto grads_of = [&] {
        for (const auto& p : b.params()) p.tensor.zero_grad();
        const auto f = b.forward(patch);
        std::array<std::vector<double>, kLevels> up;
        up[3].assign(f.levels[3].numel(), 1.0);
        up[0].assign(f.levels[0].numel(), -0.5);
        b.backward(up);
        std::vector<double> all;
        for (const auto& p : b.params()) all.insert(all.end(), p.tensor.grad().begin(), p.tensor.grad().end());
        return all;
    };
    const auto g1 = grads_of();
    const auto g2 = grads_of();
    CHECK(g1 == g2);
    double norm = 0.0;
    for (double g : g1) norm += g * g;
    CHECK(norm > 0.0);
}

}
