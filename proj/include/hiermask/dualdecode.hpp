#pragma once

#include "hiermask/queryhier.hpp"
#include "hiermask/taxonomy.hpp"
#include "hiermask/tensor.hpp"
#include "hiermask/volume.hpp"

#include <cstdint>
#include <span>

namespace hiermask {

/// Per-voxel class probabilities for both heads, each [C, D*H*W] over the
/// decode grid `dims`. Channel index equals the class id of the head's space.
template <typename T>
struct DualMasks {
    ag::Tensor<T> det;
    ag::Tensor<T> diag;
    Dims dims{0, 0, 0};
};

/// Logits q . f / sqrt(|f|^2 + eps^2) for queries [K, d] against a feature
/// grid [d, D, H, W]; result is [K, D*H*W].
template <typename T>
ag::Tensor<T> mask_logits(const ag::Tensor<T>& queries, const ag::Tensor<T>& feature, double eps = 1e-8);

/// Queries of the detection head in class-id order: background, majors, shared.
template <typename T>
ag::Tensor<T> detection_queries(const DecodedQueries<T>& q);
/// Queries of the diagnosis head in class-id order: background, subtypes, shared.
template <typename T>
ag::Tensor<T> diagnosis_queries(const DecodedQueries<T>& q);

/// Softmax over classes of the mask logits for both heads. Without detection
/// queries (plain mode) the detection head sums diagnosis probabilities
/// under the subtype-to-major merge.
template <typename T>
DualMasks<T> decode_masks(const DecodedQueries<T>& q, const ag::Tensor<T>& feature, const Taxonomy& taxonomy);

struct LossTerms {
    double total = 0.0;
    double ce_det = 0.0;
    double dice_det = 0.0;
    double ce_diag = 0.0;
    double dice_diag = 0.0;
};

template <typename T>
struct DualLoss {
    ag::Tensor<T> total;
    LossTerms terms;
};

/// Foreground classes present in a label patch, ascending.
std::vector<int> present_foreground(std::span<const std::uint8_t> labels);

/// (CE + soft-Dice) on the detection head against the merged ground truth
/// plus the same on the diagnosis head. `detection_term` false drops the
/// detection half (plain mode, whose detection head is not a separate
/// prediction). Throws DivergenceError when the loss is not finite.
template <typename T>
DualLoss<T> dual_loss(const DualMasks<T>& masks, const LabelMap& gt, const Taxonomy& taxonomy,
                      bool detection_term = true);

} // namespace hiermask
