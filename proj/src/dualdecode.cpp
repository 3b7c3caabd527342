#include "hiermask/dualdecode.hpp"

#include "hiermask/error.hpp"

#include <algorithm>
#include <cmath>

namespace hiermask {

template <typename T>
ag::Tensor<T> mask_logits(const ag::Tensor<T>& queries, const ag::Tensor<T>& feature, double eps)
{
    if (feature.shape().size() != 4 || queries.shape().size() != 2 || queries.dim(1) != feature.dim(0))
        throw UsageError("decode: queries " + ag::to_string(queries.shape()) + " do not match feature " +
                         ag::to_string(feature.shape()));
    const int d = feature.dim(0);
    const int n = static_cast<int>(feature.numel() / d);
    auto normalized = ag::l2_normalize_cols(ag::reshape(feature, {d, n}), eps);
    return ag::matmul(queries, normalized);
}

template <typename T>
ag::Tensor<T> detection_queries(const DecodedQueries<T>& q)
{
    return ag::concat<T>({ag::slice(q.s, 0, 1), q.a, ag::slice(q.s, 1, q.s.dim(0))});
}

template <typename T>
ag::Tensor<T> diagnosis_queries(const DecodedQueries<T>& q)
{
    return ag::concat<T>({ag::slice(q.s, 0, 1), q.b, ag::slice(q.s, 1, q.s.dim(0))});
}

template <typename T>
DualMasks<T> decode_masks(const DecodedQueries<T>& q, const ag::Tensor<T>& feature, const Taxonomy& taxonomy)
{
    if (q.s.dim(0) != taxonomy.num_shared() + 1 || q.b.dim(0) != taxonomy.num_subtypes())
        throw UsageError("decode: query counts do not match the taxonomy");
    DualMasks<T> out;
    out.dims = {feature.dim(1), feature.dim(2), feature.dim(3)};
    out.diag = ag::softmax_cols(mask_logits(diagnosis_queries(q), feature));
    if (q.a.defined()) {
        if (q.a.dim(0) != taxonomy.num_majors()) throw UsageError("decode: detection query count mismatch");
        out.det = ag::softmax_cols(mask_logits(detection_queries(q), feature));
    } else {
        out.det = ag::group_sum_rows(out.diag, std::span<const int>(taxonomy.merge_table()), taxonomy.detection_size());
    }
    return out;
}

std::vector<int> present_foreground(std::span<const std::uint8_t> labels)
{
    std::array<bool, 256> seen{};
    for (auto v : labels) seen[v] = true;
    std::vector<int> out;
    for (int c = 1; c < 256; ++c)
        if (seen[c]) out.push_back(c);
    return out;
}

template <typename T>
DualLoss<T> dual_loss(const DualMasks<T>& masks, const LabelMap& gt, const Taxonomy& taxonomy, bool detection_term)
{
    if (gt.dims != masks.dims) throw UsageError("loss: ground-truth dims differ from the decoded grid");
    if (gt.space != LabelSpace::Diagnosis) throw UsageError("loss: ground truth must be in the diagnosis space");
    const LabelMap merged = merge_labelmap(taxonomy, gt);

    const auto diag_classes = present_foreground(gt.data);
    auto ce_diag = ag::cross_entropy(masks.diag, std::span<const std::uint8_t>(gt.data));
    auto dice_diag = ag::soft_dice_loss(masks.diag, std::span<const std::uint8_t>(gt.data), std::span<const int>(diag_classes));

    DualLoss<T> out;
    out.terms.ce_diag = ce_diag.item();
    out.terms.dice_diag = dice_diag.item();
    out.total = ag::add(ce_diag, dice_diag);
    if (detection_term) {
        const auto det_classes = present_foreground(merged.data);
        auto ce_det = ag::cross_entropy(masks.det, std::span<const std::uint8_t>(merged.data));
        auto dice_det =
            ag::soft_dice_loss(masks.det, std::span<const std::uint8_t>(merged.data), std::span<const int>(det_classes));
        out.terms.ce_det = ce_det.item();
        out.terms.dice_det = dice_det.item();
        out.total = ag::add(out.total, ag::add(ce_det, dice_det));
    }
    out.terms.total = out.total.item();
    if (!std::isfinite(out.terms.total)) throw DivergenceError("loss is not finite");
    return out;
}

#define HIERMASK_INSTANTIATE(T)                                                                                       \
    template ag::Tensor<T> mask_logits<T>(const ag::Tensor<T>&, const ag::Tensor<T>&, double);                        \
    template ag::Tensor<T> detection_queries<T>(const DecodedQueries<T>&);                                            \
    template ag::Tensor<T> diagnosis_queries<T>(const DecodedQueries<T>&);                                            \
    template DualMasks<T> decode_masks<T>(const DecodedQueries<T>&, const ag::Tensor<T>&, const Taxonomy&);           \
    template DualLoss<T> dual_loss<T>(const DualMasks<T>&, const LabelMap&, const Taxonomy&, bool);

HIERMASK_INSTANTIATE(float)
HIERMASK_INSTANTIATE(double)

#undef HIERMASK_INSTANTIATE

} // namespace hiermask
