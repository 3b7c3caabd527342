#include "gradcheck.hpp"

#include "hiermask/dualdecode.hpp"
#include "hiermask/error.hpp"
#include "hiermask/queryhier.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace hiermask;
using ag::Tensor;
using T = Tensor<double>;
using Mat = std::vector<std::vector<double>>;

namespace {

T rand_t(std::mt19937_64& rng, ag::Shape s, bool grad = false, double scale = 1.0)
{
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> v(ag::numel(s));
    for (auto& x : v) x = nd(rng);
    return T::from(std::move(s), std::move(v), grad);
}

Mat to_mat(const T& t)
{
    Mat m(t.dim(0), std::vector<double>(t.dim(1)));
    for (int i = 0; i < t.dim(0); ++i)
        for (int j = 0; j < t.dim(1); ++j) m[i][j] = t.data()[i * t.dim(1) + j];
    return m;
}

std::vector<double> vec(const T& t) { return {t.data().begin(), t.data().end()}; }

// x W^T + b
Mat affine(const Mat& x, const T& w, const T& b)
{
    const int out = w.dim(0), in = w.dim(1);
    Mat y(x.size(), std::vector<double>(out));
    for (std::size_t r = 0; r < x.size(); ++r)
        for (int o = 0; o < out; ++o) {
            double acc = b.data()[o];
            for (int i = 0; i < in; ++i) acc += x[r][i] * w.data()[o * in + i];
            y[r][o] = acc;
        }
    return y;
}

Mat layer_norm(const Mat& x, const T& g, const T& b)
{
    Mat y = x;
    for (std::size_t r = 0; r < x.size(); ++r) {
        const double n = static_cast<double>(x[r].size());
        double mean = 0, var = 0;
        for (double v : x[r]) mean += v / n;
        for (double v : x[r]) var += (v - mean) * (v - mean) / n;
        for (std::size_t j = 0; j < x[r].size(); ++j)
            y[r][j] = (x[r][j] - mean) / std::sqrt(var + 1e-5) * g.data()[j] + b.data()[j];
    }
    return y;
}

// Single-head attention written out with explicit loops.
Mat attend(const Mat& q, const Mat& kv, const T& wq, const T& bq, const T& wk, const T& bk, const T& wv, const T& bv,
           const T& wo, const T& bo)
{
    const Mat qp = affine(q, wq, bq), kp = affine(kv, wk, bk), vp = affine(kv, wv, bv);
    const std::size_t d = qp[0].size();
    Mat mixed(q.size(), std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < q.size(); ++i) {
        std::vector<double> s(kv.size());
        double mx = -1e300;
        for (std::size_t j = 0; j < kv.size(); ++j) {
            double dot = 0;
            for (std::size_t c = 0; c < d; ++c) dot += qp[i][c] * kp[j][c];
            s[j] = dot / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& v : s) z += (v = std::exp(v - mx));
        for (std::size_t j = 0; j < kv.size(); ++j)
            for (std::size_t c = 0; c < d; ++c) mixed[i][c] += s[j] / z * vp[j][c];
    }
    return affine(mixed, wo, bo);
}

Mat add(Mat a, const Mat& b)
{
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
    return a;
}

Mat layer_oracle(const DecoderLayer<double>& L, const Mat& q, const Mat& kv)
{
    Mat x = add(q, attend(layer_norm(q, L.ca_norm_g, L.ca_norm_b), kv, L.ca_wq, L.ca_bq, L.ca_wk, L.ca_bk, L.ca_wv,
                          L.ca_bv, L.ca_wo, L.ca_bo));
    const Mat xn = layer_norm(x, L.sa_norm_g, L.sa_norm_b);
    x = add(x, attend(xn, xn, L.sa_wq, L.sa_bq, L.sa_wk, L.sa_bk, L.sa_wv, L.sa_bv, L.sa_wo, L.sa_bo));
    Mat h = affine(layer_norm(x, L.ff_norm_g, L.ff_norm_b), L.ff_w1, L.ff_b1);
    for (auto& row : h)
        for (auto& v : row) v = std::max(v, 0.0);
    return add(x, affine(h, L.ff_w2, L.ff_b2));
}

void randomize(const ParamList<double>& params, std::mt19937_64& rng, double scale)
{
    std::normal_distribution<double> nd(0.0, scale);
    for (const auto& p : params)
        if (p.name.ends_with("bias"))
        {
            auto t = p.tensor;
            for (auto& v : t.data()) v = nd(rng);
        }
}

} // namespace

TEST_SUITE("queryhier") {

TEST_CASE("paper configuration shapes")
{
    const auto tax = Taxonomy::build(paper_taxonomy_config());
    Initializer init(0);
    QuerySet<float> q(tax, 32, RepresentationMode::Hierarchy, DecoderConfig{}, init);
    CHECK(q.a().shape() == ag::Shape{4, 32});
    CHECK(q.s().shape() == ag::Shape{13, 32});
    REQUIRE(q.w().size() == 4);
    CHECK(q.w()[0].shape() == ag::Shape{64, 32});
    CHECK(q.w()[1].shape() == ag::Shape{128, 32});
    CHECK(q.w()[2].shape() == ag::Shape{64, 32});
    CHECK(q.w()[3].shape() == ag::Shape{64, 32});
    CHECK(q.layers().size() == 3);
    CHECK(q.initial_b().shape() == ag::Shape{10, 32});

    Initializer init2(0);
    QuerySet<float> plain(tax, 32, RepresentationMode::Plain, DecoderConfig{}, init2);
    CHECK_FALSE(plain.a().defined());
    CHECK(plain.w().empty());
    CHECK(plain.b_free().shape() == ag::Shape{10, 32});
    CHECK(plain.s().shape() == ag::Shape{13, 32});

    Initializer init3(0);
    QuerySet<float> parallel(tax, 32, RepresentationMode::Parallel, DecoderConfig{}, init3);
    CHECK(parallel.a().shape() == ag::Shape{4, 32});
    CHECK(parallel.w().empty());
    CHECK(parallel.b_free().shape() == ag::Shape{10, 32});
}

TEST_CASE("initialization is deterministic and validated")
{
    const auto tax = Taxonomy::build(toy_taxonomy_config());
    Initializer i1(9), i2(9);
    QuerySet<double> a(tax, 8, RepresentationMode::Hierarchy, DecoderConfig{}, i1);
    QuerySet<double> b(tax, 8, RepresentationMode::Hierarchy, DecoderConfig{}, i2);
    const auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t k = 0; k < pa.size(); ++k) CHECK(vec(pa[k].tensor) == vec(pb[k].tensor));

    Initializer i3(0);
    CHECK_THROWS_AS(QuerySet<double>(tax, 2, RepresentationMode::Hierarchy, DecoderConfig{}, i3), UsageError);
    CHECK_THROWS_AS(QuerySet<double>(tax, 6, RepresentationMode::Hierarchy, DecoderConfig{}, i3), UsageError);
    CHECK_THROWS_AS(mode_from_string("tree"), UsageError);
    CHECK(mode_from_string("plain") == RepresentationMode::Plain);
}

TEST_CASE("expand_hierarchy")
{
    std::mt19937_64 rng(4);
    const int d = 5;
    auto a = rand_t(rng, {3, d});
    const std::vector<int> sizes{2, 4, 3};

    std::vector<T> identity_blocks, zero_blocks;
    for (int n : sizes) {
        std::vector<double> w(static_cast<std::size_t>(n) * d * d, 0.0);
        for (int j = 0; j < n; ++j)
            for (int c = 0; c < d; ++c) w[(j * d + c) * d + c] = 1.0;
        identity_blocks.push_back(T::from({n * d, d}, w));
        zero_blocks.push_back(T::zeros({n * d, d}));
    }
    const auto b = expand_hierarchy(a, identity_blocks);
    REQUIRE(b.shape() == ag::Shape{9, d});
    int row = 0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < sizes[i]; ++j, ++row)
            for (int c = 0; c < d; ++c) CHECK(b.data()[row * d + c] == a.data()[i * d + c]);
    const auto zero = expand_hierarchy(a, zero_blocks);
    for (double v : zero.data()) CHECK(v == 0.0);

    // 1x3 detection query, 6x3 projection, two subtypes
    auto a1 = rand_t(rng, {1, 3});
    auto w1 = rand_t(rng, {6, 3});
    const auto b1 = expand_hierarchy(a1, {w1});
    REQUIRE(b1.shape() == ag::Shape{2, 3});
    for (int r = 0; r < 6; ++r) {
        double acc = 0;
        for (int c = 0; c < 3; ++c) acc += a1.data()[c] * w1.data()[r * 3 + c];
        CHECK(std::abs(b1.data()[r] - acc) <= 1e-12);
    }

    // linearity in A
    auto a2 = rand_t(rng, {1, 3});
    const double alpha = -1.7;
    std::vector<double> mix(3);
    for (int c = 0; c < 3; ++c) mix[c] = alpha * a1.data()[c] + a2.data()[c];
    const auto lhs = expand_hierarchy(T::from({1, 3}, mix), {w1});
    const auto r2 = expand_hierarchy(a2, {w1});
    for (int k = 0; k < 6; ++k) CHECK(std::abs(lhs.data()[k] - (alpha * b1.data()[k] + r2.data()[k])) <= 1e-12);

    CHECK_THROWS(expand_hierarchy(a1, {T::zeros({5, 3})}));
}

TEST_CASE("one key: cross-attention returns its value projection")
{
    std::mt19937_64 rng(5);
    Initializer init(1);
    DecoderLayer<double> L(4, 1, 2, init);
    auto q = rand_t(rng, {1, 4});
    auto kv = rand_t(rng, {1, 4});
    const auto out = attention(q, kv, 1, L.ca_wq, L.ca_bq, L.ca_wk, L.ca_bk, L.ca_wv, L.ca_bv, L.ca_wo, L.ca_bo);
    const Mat expected = affine(affine(to_mat(kv), L.ca_wv, L.ca_bv), L.ca_wo, L.ca_bo);
    for (int c = 0; c < 4; ++c) CHECK(out.data()[c] == doctest::Approx(expected[0][c]).epsilon(1e-12));
}

TEST_CASE("decoder layer matches the loop oracle")
{
    std::mt19937_64 rng(6);
    Initializer init(2);
    DecoderLayer<double> L(4, 1, 4, init);
    ParamList<double> params;
    L.collect("l", params);
    randomize(params, rng, 0.2);
    auto q = rand_t(rng, {3, 4});
    auto feature = rand_t(rng, {4, 2, 2, 2});
    const auto out = L(q, feature);
    Mat kv(8, std::vector<double>(4));
    for (int n = 0; n < 8; ++n)
        for (int c = 0; c < 4; ++c) kv[n][c] = feature.data()[c * 8 + n];
    const Mat expected = layer_oracle(L, to_mat(q), kv);
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 4; ++c) CHECK(std::abs(out.data()[i * 4 + c] - expected[i][c]) <= 1e-10);

    CHECK_THROWS_AS(L(q, rand_t(rng, {3, 2, 2, 2})), UsageError);
}

TEST_CASE("feature positions are unordered")
{
    std::mt19937_64 rng(7);
    Initializer init(3);
    DecoderLayer<double> L(8, 4, 4, init);
    auto q = rand_t(rng, {5, 8});
    auto f = rand_t(rng, {8, 2, 2, 4});
    std::vector<int> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> permuted(f.numel());
    for (int c = 0; c < 8; ++c)
        for (int n = 0; n < 16; ++n) permuted[c * 16 + n] = f.data()[c * 16 + perm[n]];
    const auto a = L(q, f);
    const auto b = L(q, T::from({8, 4, 2, 2}, permuted));
    for (int k = 0; k < a.numel(); ++k) CHECK(std::abs(a.data()[k] - b.data()[k]) <= 1e-12);
}

TEST_CASE("zero residual branches pass queries through")
{
    const auto tax = Taxonomy::build(paper_taxonomy_config());
    Initializer init(0);
    QuerySet<double> qs(tax, 8, RepresentationMode::Hierarchy, DecoderConfig{}, init);
    for (auto& L : qs.layers())
        for (auto* t : {&L.ca_wo, &L.ca_bo, &L.sa_wo, &L.sa_bo, &L.ff_w2, &L.ff_b2})
            for (auto& v : t->data()) v = 0.0;
    std::mt19937_64 rng(1);
    MultiScaleFeatures<double> feats;
    for (int j = 0; j < kLevels; ++j) feats.levels[j] = rand_t(rng, {8, 8 >> j, 8 >> j, 8 >> j});
    const auto out = qs.run_decoder(feats);
    CHECK(vec(out.a) == vec(qs.a()));
    CHECK(vec(out.s) == vec(qs.s()));
    CHECK(vec(out.b) == vec(qs.initial_b()));
}

TEST_CASE("query count is conserved through the stack")
{
    const auto tax = Taxonomy::build(paper_taxonomy_config());
    Initializer init(0);
    QuerySet<float> qs(tax, 32, RepresentationMode::Hierarchy, DecoderConfig{}, init);
    std::mt19937_64 rng(2);
    MultiScaleFeatures<float> feats;
    std::normal_distribution<float> nd;
    for (int j = 0; j < kLevels; ++j) {
        std::vector<float> v(32 * 512 >> (3 * j));
        for (auto& x : v) x = nd(rng);
        feats.levels[j] = Tensor<float>::from({32, 8 >> j, 8 >> j, 8 >> j}, v);
    }
    const auto out = qs.run_decoder(feats);
    CHECK(out.a.dim(0) + out.b.dim(0) + out.s.dim(0) == 26 + 1);
    CHECK(out.b.dim(1) == 32);
}

TEST_CASE("diagnosis supervision reaches the detection queries")
{
    const auto tax = Taxonomy::build(toy_taxonomy_config());
    Initializer init(4);
    QuerySet<double> qs(tax, 8, RepresentationMode::Hierarchy, DecoderConfig{}, init);
    std::mt19937_64 rng(3);
    MultiScaleFeatures<double> feats;
    for (int j = 0; j < kLevels; ++j) feats.levels[j] = rand_t(rng, {8, 4 >> std::min(j, 2), 4 >> std::min(j, 2), 4 >> std::min(j, 2)});
    LabelMap gt({4, 4, 4}, {1, 1, 1});
    for (auto& v : gt.data) v = static_cast<std::uint8_t>(rng() % tax.diagnosis_size());
    const auto merged = merge_labelmap(tax, gt);

    auto grad_a = [&](bool with_diagnosis) {
        for (const auto& p : qs.params()) p.tensor.zero_grad();
        const auto masks = decode_masks(qs.run_decoder(feats), feats.levels[0], tax);
        const auto fg = present_foreground(merged.data);
        T loss = ag::add(ag::cross_entropy(masks.det, merged.data), ag::soft_dice_loss(masks.det, merged.data, fg));
        if (with_diagnosis) loss = ag::add(loss, dual_loss(masks, gt, tax).total);
        ag::backward(loss);
        return std::vector<double>(qs.a().grad().begin(), qs.a().grad().end());
    };
    const auto det_only = grad_a(false);
    const auto both = grad_a(true);
    double diff = 0.0;
    for (std::size_t i = 0; i < both.size(); ++i) diff = std::max(diff, std::abs(both[i] - det_only[i]));
    CHECK(diff > 1e-6);
}

TEST_CASE("query and decoder gradients against finite differences")
{
    const auto tax = Taxonomy::build(paper_taxonomy_config());
    for (auto mode : {RepresentationMode::Hierarchy, RepresentationMode::Parallel, RepresentationMode::Plain}) {
        Initializer init(5);
        QuerySet<double> qs(tax, 8, mode, DecoderConfig{}, init);
        std::mt19937_64 rng(4);
        randomize(qs.params(), rng, 0.2);
        MultiScaleFeatures<double> feats;
        for (int j = 0; j < kLevels; ++j) feats.levels[j] = rand_t(rng, {8, 4 >> std::min(j, 2), 4, 4 >> std::min(j, 2)});
        LabelMap gt({4, 4, 4}, {1, 1, 1});
        for (auto& v : gt.data) v = static_cast<std::uint8_t>(rng() % tax.diagnosis_size());
        const bool det_term = mode != RepresentationMode::Plain;
        const auto r = gradcheck::check(qs.params(), [&] {
            return dual_loss(decode_masks(qs.run_decoder(feats), feats.levels[0], tax), gt, tax, det_term).total;
        });
        INFO(to_string(mode) << " worst " << r.worst << " kinks " << r.kinks);
        CHECK(r.max_rel < 1e-4);
    }
}

}
