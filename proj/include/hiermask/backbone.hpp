#pragma once

#include "hiermask/params.hpp"
#include "hiermask/tensor.hpp"

#include <array>
#include <optional>

namespace hiermask {

inline constexpr int kLevels = 4;
/// Total downsampling between F1 and F4.
inline constexpr int kCoarsestFactor = 8;

struct BackboneConfig {
    int d = 32;
    std::array<int, kLevels> widths{8, 16, 32, 32};
    /// z is halved by the first two downsamplings only (factors 1,2,4,4 along z).
    bool anisotropic = false;

    /// Kernel (= stride) of downsampling step `step` in 1..3, along (z, y, x).
    std::array<int, 3> down_kernel(int step) const { return {anisotropic && step == kLevels - 1 ? 1 : 2, 2, 2}; }
    /// Total downsampling between F1 and F4 along (z, y, x).
    std::array<int, 3> coarsest_factor() const { return {anisotropic ? 4 : kCoarsestFactor, kCoarsestFactor, kCoarsestFactor}; }
};

/// F1..F4 stored at index 0..3, each [d, D/2^j, H/2^j, W/2^j] (z capped at
/// 4 when anisotropic).
template <typename T>
struct MultiScaleFeatures {
    std::array<ag::Tensor<T>, kLevels> levels;
};

/// Conv -> instance norm -> ReLU, twice.
template <typename T>
struct ConvBlock {
    ag::Tensor<T> w1, b1, g1, beta1, w2, b2, g2, beta2;

    ConvBlock() = default;
    ConvBlock(int in, int out, Initializer& init);
    ag::Tensor<T> operator()(const ag::Tensor<T>& x) const;
    void collect(const std::string& prefix, ParamList<T>& out) const;
};

/// 3D encoder-decoder with per-level 1x1x1 projections to the query width.
template <typename T>
class Backbone {
public:
    Backbone() = default;
    Backbone(const BackboneConfig& config, Initializer& init);

    const BackboneConfig& config() const { return config_; }

    /// `patch` is [1, D, H, W] with dims divisible by coarsest_factor(). Caches the
    /// features for a later call to backward().
    MultiScaleFeatures<T> forward(const ag::Tensor<T>& patch);

    /// Propagates upstream gradients given per level (empty vector = zero)
    /// from the cached forward into parameter and input gradients, then
    /// drops the cache. Throws UsageError without a cached forward.
    void backward(const std::array<std::vector<T>, kLevels>& grads);

    ParamList<T> params() const;

private:
    BackboneConfig config_;
    std::array<ConvBlock<T>, kLevels> enc_;
    std::array<ConvBlock<T>, kLevels - 1> dec_;
    std::array<ag::Tensor<T>, kLevels - 1> down_w_, down_b_, up_w_, up_b_;
    std::array<ag::Tensor<T>, kLevels> proj_w_, proj_b_;
    std::optional<MultiScaleFeatures<T>> cached_;
};

/// Throws UsageError unless every dim is a positive multiple of the coarsest factor.
void check_patch_dims(const std::array<int, 3>& dims, const BackboneConfig& config = {});

} // namespace hiermask
