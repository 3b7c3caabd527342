#include "hiermask/queryhier.hpp"

#include "hiermask/error.hpp"

#include <cmath>

namespace hiermask {

std::string to_string(RepresentationMode mode)
{
    switch (mode) {
    case RepresentationMode::Hierarchy: return "hierarchy";
    case RepresentationMode::Parallel: return "parallel";
    case RepresentationMode::Plain: return "plain";
    }
    return "?";
}

RepresentationMode mode_from_string(const std::string& name)
{
    if (name == "hierarchy") return RepresentationMode::Hierarchy;
    if (name == "parallel") return RepresentationMode::Parallel;
    if (name == "plain") return RepresentationMode::Plain;
    throw UsageError("unknown representation mode '" + name + "' (expected hierarchy, parallel or plain)");
}

namespace {

template <typename T>
ag::Tensor<T> weight(Initializer& init, int out, int in)
{
    return init.normal<T>({out, in}, std::sqrt(1.0 / in));
}

template <typename T>
ag::Tensor<T> filled(int n, double v)
{
    return Initializer::constant<T>({n}, v);
}

template <typename T>
bool all_finite(const ag::Tensor<T>& t)
{
    for (T v : t.data())
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace

template <typename T>
DecoderLayer<T>::DecoderLayer(int d, int heads_, int ffn_mult, Initializer& init) : heads(heads_)
{
    ca_norm_g = filled<T>(d, 1.0);
    ca_norm_b = filled<T>(d, 0.0);
    ca_wq = weight<T>(init, d, d);
    ca_bq = filled<T>(d, 0.0);
    ca_wk = weight<T>(init, d, d);
    ca_bk = filled<T>(d, 0.0);
    ca_wv = weight<T>(init, d, d);
    ca_bv = filled<T>(d, 0.0);
    ca_wo = weight<T>(init, d, d);
    ca_bo = filled<T>(d, 0.0);
    sa_norm_g = filled<T>(d, 1.0);
    sa_norm_b = filled<T>(d, 0.0);
    sa_wq = weight<T>(init, d, d);
    sa_bq = filled<T>(d, 0.0);
    sa_wk = weight<T>(init, d, d);
    sa_bk = filled<T>(d, 0.0);
    sa_wv = weight<T>(init, d, d);
    sa_bv = filled<T>(d, 0.0);
    sa_wo = weight<T>(init, d, d);
    sa_bo = filled<T>(d, 0.0);
    ff_norm_g = filled<T>(d, 1.0);
    ff_norm_b = filled<T>(d, 0.0);
    ff_w1 = weight<T>(init, d * ffn_mult, d);
    ff_b1 = filled<T>(d * ffn_mult, 0.0);
    ff_w2 = weight<T>(init, d, d * ffn_mult);
    ff_b2 = filled<T>(d, 0.0);
}

template <typename T>
ag::Tensor<T> attention(const ag::Tensor<T>& q, const ag::Tensor<T>& kv, int heads, const ag::Tensor<T>& wq,
                        const ag::Tensor<T>& bq, const ag::Tensor<T>& wk, const ag::Tensor<T>& bk,
                        const ag::Tensor<T>& wv, const ag::Tensor<T>& bv, const ag::Tensor<T>& wo,
                        const ag::Tensor<T>& bo)
{
    const int d = q.dim(1);
    if (kv.dim(1) != d) throw UsageError("attention: key width " + std::to_string(kv.dim(1)) + " != query width " + std::to_string(d));
    if (heads < 1 || d % heads != 0) throw UsageError("attention: width not divisible by head count");
    const int dh = d / heads;
    auto qp = ag::linear(q, wq, bq);
    auto kp = ag::linear(kv, wk, bk);
    auto vp = ag::linear(kv, wv, bv);
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<ag::Tensor<T>> parts;
    for (int h = 0; h < heads; ++h) {
        auto qh = ag::slice_cols(qp, h * dh, (h + 1) * dh);
        auto kh = ag::slice_cols(kp, h * dh, (h + 1) * dh);
        auto vh = ag::slice_cols(vp, h * dh, (h + 1) * dh);
        auto weights = ag::softmax_rows(ag::scale(ag::matmul(qh, kh, false, true), scale));
        parts.push_back(ag::matmul(weights, vh));
    }
    return ag::linear(heads == 1 ? parts[0] : ag::concat_cols(parts), wo, bo);
}

template <typename T>
ag::Tensor<T> DecoderLayer<T>::operator()(const ag::Tensor<T>& queries, const ag::Tensor<T>& feature) const
{
    const int d = queries.dim(1);
    if (feature.shape().size() != 4 || feature.dim(0) != d)
        throw UsageError("decoder: feature " + ag::to_string(feature.shape()) + " does not match query width " +
                         std::to_string(d));
    const int n = static_cast<int>(feature.numel() / d);
    auto kv = ag::transpose(ag::reshape(feature, {d, n}));

    auto x = ag::add(queries, attention(ag::layer_norm_rows(queries, ca_norm_g, ca_norm_b), kv, heads, ca_wq, ca_bq,
                                        ca_wk, ca_bk, ca_wv, ca_bv, ca_wo, ca_bo));
    auto xn = ag::layer_norm_rows(x, sa_norm_g, sa_norm_b);
    x = ag::add(x, attention(xn, xn, heads, sa_wq, sa_bq, sa_wk, sa_bk, sa_wv, sa_bv, sa_wo, sa_bo));
    auto hidden = ag::relu(ag::linear(ag::layer_norm_rows(x, ff_norm_g, ff_norm_b), ff_w1, ff_b1));
    x = ag::add(x, ag::linear(hidden, ff_w2, ff_b2));
    if (!all_finite(x)) throw DivergenceError("decoder produced non-finite query values");
    return x;
}

template <typename T>
void DecoderLayer<T>::collect(const std::string& prefix, ParamList<T>& out) const
{
    out.push_back({prefix + ".cross.norm.weight", ca_norm_g});
    out.push_back({prefix + ".cross.norm.bias", ca_norm_b});
    out.push_back({prefix + ".cross.q.weight", ca_wq});
    out.push_back({prefix + ".cross.q.bias", ca_bq});
    out.push_back({prefix + ".cross.k.weight", ca_wk});
    out.push_back({prefix + ".cross.k.bias", ca_bk});
    out.push_back({prefix + ".cross.v.weight", ca_wv});
    out.push_back({prefix + ".cross.v.bias", ca_bv});
    out.push_back({prefix + ".cross.out.weight", ca_wo});
    out.push_back({prefix + ".cross.out.bias", ca_bo});
    out.push_back({prefix + ".self.norm.weight", sa_norm_g});
    out.push_back({prefix + ".self.norm.bias", sa_norm_b});
    out.push_back({prefix + ".self.q.weight", sa_wq});
    out.push_back({prefix + ".self.q.bias", sa_bq});
    out.push_back({prefix + ".self.k.weight", sa_wk});
    out.push_back({prefix + ".self.k.bias", sa_bk});
    out.push_back({prefix + ".self.v.weight", sa_wv});
    out.push_back({prefix + ".self.v.bias", sa_bv});
    out.push_back({prefix + ".self.out.weight", sa_wo});
    out.push_back({prefix + ".self.out.bias", sa_bo});
    out.push_back({prefix + ".ffn.norm.weight", ff_norm_g});
    out.push_back({prefix + ".ffn.norm.bias", ff_norm_b});
    out.push_back({prefix + ".ffn.fc1.weight", ff_w1});
    out.push_back({prefix + ".ffn.fc1.bias", ff_b1});
    out.push_back({prefix + ".ffn.fc2.weight", ff_w2});
    out.push_back({prefix + ".ffn.fc2.bias", ff_b2});
}

template <typename T>
ag::Tensor<T> expand_hierarchy(const ag::Tensor<T>& a, const std::vector<ag::Tensor<T>>& w)
{
    if (a.shape().size() != 2 || a.dim(0) != static_cast<int>(w.size()))
        throw UsageError("expand_hierarchy: " + std::to_string(w.size()) + " projections for A " + ag::to_string(a.shape()));
    const int d = a.dim(1);
    std::vector<ag::Tensor<T>> parts;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (w[i].shape().size() != 2 || w[i].dim(1) != d || w[i].dim(0) % d != 0)
            throw UsageError("expand_hierarchy: W_" + std::to_string(i) + " " + ag::to_string(w[i].shape()) +
                             " incompatible with d=" + std::to_string(d));
        const int ni = w[i].dim(0) / d;
        auto ai = ag::slice(a, static_cast<int>(i), static_cast<int>(i) + 1);
        parts.push_back(ag::reshape(ag::matmul(ai, w[i], false, true), {ni, d}));
    }
    return ag::concat(parts);
}

template <typename T>
QuerySet<T>::QuerySet(const Taxonomy& taxonomy, int d, RepresentationMode mode, const DecoderConfig& decoder,
                      Initializer& init)
    : mode_(mode), d_(d), m_(taxonomy.num_majors()), n_(taxonomy.num_subtypes())
{
    if (d < 4) throw UsageError("query width d must be at least 4, got " + std::to_string(d));
    if (decoder.heads < 1 || d % decoder.heads != 0)
        throw UsageError("query width d=" + std::to_string(d) + " is not divisible by " + std::to_string(decoder.heads) + " heads");
    if (decoder.layers < 1 || decoder.layers > kLevels - 1)
        throw UsageError("decoder layers must be between 1 and " + std::to_string(kLevels - 1));
    for (int g = 0; g < m_; ++g) group_sizes_.push_back(taxonomy.group_size(g));

    s_ = init.normal<T>({taxonomy.num_shared() + 1, d}, 1.0);
    if (mode != RepresentationMode::Plain) a_ = init.normal<T>({m_, d}, 1.0);
    if (mode == RepresentationMode::Hierarchy) {
        for (int ni : group_sizes_) w_.push_back(init.normal<T>({ni * d, d}, std::sqrt(1.0 / d)));
    } else {
        b_ = init.normal<T>({n_, d}, 1.0);
    }
    for (int l = 0; l < decoder.layers; ++l) layers_.emplace_back(d, decoder.heads, decoder.ffn_mult, init);
}

template <typename T>
ag::Tensor<T> QuerySet<T>::initial_b() const
{
    return mode_ == RepresentationMode::Hierarchy ? expand_hierarchy(a_, w_) : b_;
}

template <typename T>
DecodedQueries<T> QuerySet<T>::run_decoder(const MultiScaleFeatures<T>& features) const
{
    std::vector<ag::Tensor<T>> parts;
    if (mode_ != RepresentationMode::Plain) parts.push_back(a_);
    parts.push_back(initial_b());
    parts.push_back(s_);
    auto q = ag::concat(parts);
    for (std::size_t j = 0; j < layers_.size(); ++j) q = layers_[j](q, features.levels[kLevels - 1 - j]);

    DecodedQueries<T> out;
    int row = 0;
    if (mode_ != RepresentationMode::Plain) {
        out.a = ag::slice(q, 0, m_);
        row = m_;
    }
    out.b = ag::slice(q, row, row + n_);
    out.s = ag::slice(q, row + n_, q.dim(0));
    return out;
}

template <typename T>
ParamList<T> QuerySet<T>::params() const
{
    ParamList<T> out;
    if (a_.defined()) out.push_back({"queries.A", a_});
    if (b_.defined()) out.push_back({"queries.B", b_});
    out.push_back({"queries.S", s_});
    for (std::size_t i = 0; i < w_.size(); ++i) out.push_back({"queries.W" + std::to_string(i), w_[i]});
    for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect("decoder.layer" + std::to_string(l), out);
    return out;
}

#define HIERMASK_INSTANTIATE(T)                                                                                       \
    template struct DecoderLayer<T>;                                                                                  \
    template class QuerySet<T>;                                                                                       \
    template ag::Tensor<T> expand_hierarchy<T>(const ag::Tensor<T>&, const std::vector<ag::Tensor<T>>&);              \
    template ag::Tensor<T> attention<T>(const ag::Tensor<T>&, const ag::Tensor<T>&, int, const ag::Tensor<T>&,        \
                                        const ag::Tensor<T>&, const ag::Tensor<T>&, const ag::Tensor<T>&,             \
                                        const ag::Tensor<T>&, const ag::Tensor<T>&, const ag::Tensor<T>&,             \
                                        const ag::Tensor<T>&);

HIERMASK_INSTANTIATE(float)
HIERMASK_INSTANTIATE(double)

#undef HIERMASK_INSTANTIATE

} // namespace hiermask
