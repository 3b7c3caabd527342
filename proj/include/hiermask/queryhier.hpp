#pragma once

#include "hiermask/backbone.hpp"
#include "hiermask/params.hpp"
#include "hiermask/taxonomy.hpp"
#include "hiermask/tensor.hpp"

#include <string>
#include <vector>

namespace hiermask {

/// How tumor queries are represented.
///   hierarchy: diagnosis queries derived from detection queries via W_i
///   parallel:  independent detection and diagnosis queries
///   plain:     diagnosis queries only; detection output merged post hoc
enum class RepresentationMode { Hierarchy, Parallel, Plain };

std::string to_string(RepresentationMode mode);
/// Throws UsageError for unknown names.
RepresentationMode mode_from_string(const std::string& name);

struct DecoderConfig {
    int layers = 3;
    int heads = 4;
    int ffn_mult = 4;
};

/// Pre-norm transformer layer: cross-attention to one feature level,
/// self-attention over queries, feed-forward; each block residual.
template <typename T>
struct DecoderLayer {
    int heads = 1;
    ag::Tensor<T> ca_norm_g, ca_norm_b, ca_wq, ca_bq, ca_wk, ca_bk, ca_wv, ca_bv, ca_wo, ca_bo;
    ag::Tensor<T> sa_norm_g, sa_norm_b, sa_wq, sa_bq, sa_wk, sa_bk, sa_wv, sa_bv, sa_wo, sa_bo;
    ag::Tensor<T> ff_norm_g, ff_norm_b, ff_w1, ff_b1, ff_w2, ff_b2;

    DecoderLayer() = default;
    DecoderLayer(int d, int heads, int ffn_mult, Initializer& init);

    /// queries [Q, d], feature [d, D, H, W]. Throws UsageError on width
    /// mismatch and DivergenceError on non-finite output.
    ag::Tensor<T> operator()(const ag::Tensor<T>& queries, const ag::Tensor<T>& feature) const;

    void collect(const std::string& prefix, ParamList<T>& out) const;
};

/// Multi-head attention of `q` [Q, d] over keys/values `kv` [N, d] using
/// already normalized inputs; exposed for testing.
template <typename T>
ag::Tensor<T> attention(const ag::Tensor<T>& q, const ag::Tensor<T>& kv, int heads, const ag::Tensor<T>& wq,
                        const ag::Tensor<T>& bq, const ag::Tensor<T>& wk, const ag::Tensor<T>& bk,
                        const ag::Tensor<T>& wv, const ag::Tensor<T>& bv, const ag::Tensor<T>& wo,
                        const ag::Tensor<T>& bo);

/// B_i = reshape(A_i W_i^T) to n_i rows, concatenated over majors.
template <typename T>
ag::Tensor<T> expand_hierarchy(const ag::Tensor<T>& a, const std::vector<ag::Tensor<T>>& w);

/// Final query states after the decoder stack. `a` is undefined in plain mode.
template <typename T>
struct DecodedQueries {
    ag::Tensor<T> a;  // [m, d]
    ag::Tensor<T> b;  // [n, d]
    ag::Tensor<T> s;  // [|shared| + 1, d], background in row 0
};

template <typename T>
class QuerySet {
public:
    QuerySet() = default;

    /// Queries drawn from N(0, 1); W_i from N(0, 1/d). Throws UsageError for d < 4
    /// or when d is not divisible by the head count.
    QuerySet(const Taxonomy& taxonomy, int d, RepresentationMode mode, const DecoderConfig& decoder, Initializer& init);

    RepresentationMode mode() const { return mode_; }
    int d() const { return d_; }

    const ag::Tensor<T>& a() const { return a_; }
    const ag::Tensor<T>& b_free() const { return b_; }
    const ag::Tensor<T>& s() const { return s_; }
    const std::vector<ag::Tensor<T>>& w() const { return w_; }
    std::vector<DecoderLayer<T>>& layers() { return layers_; }
    const std::vector<DecoderLayer<T>>& layers() const { return layers_; }

    /// Diagnosis queries entering the decoder: expand_hierarchy(A, W) in
    /// hierarchy mode, the free B otherwise.
    ag::Tensor<T> initial_b() const;

    /// Layer j attends to F^(4-j): F4, F3, F2.
    DecodedQueries<T> run_decoder(const MultiScaleFeatures<T>& features) const;

    ParamList<T> params() const;

private:
    RepresentationMode mode_ = RepresentationMode::Hierarchy;
    int d_ = 0;
    int m_ = 0;
    int n_ = 0;
    std::vector<int> group_sizes_;
    ag::Tensor<T> a_, b_, s_;
    std::vector<ag::Tensor<T>> w_;
    std::vector<DecoderLayer<T>> layers_;
};

} // namespace hiermask
