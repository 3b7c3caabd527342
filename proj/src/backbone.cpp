#include "hiermask/backbone.hpp"

#include "hiermask/error.hpp"

#include <cmath>

namespace hiermask {

namespace {

template <typename T>
ag::Tensor<T> he_conv(Initializer& init, int out, int in, int k)
{
    return init.normal<T>({out, in, k, k, k}, std::sqrt(2.0 / (in * k * k * k)));
}

template <typename T>
ag::Tensor<T> zeros(int n)
{
    return Initializer::constant<T>({n}, 0.0);
}

template <typename T>
ag::Tensor<T> ones(int n)
{
    return Initializer::constant<T>({n}, 1.0);
}

} // namespace

void check_patch_dims(const std::array<int, 3>& dims, const BackboneConfig& config)
{
    const auto f = config.coarsest_factor();
    for (int a = 0; a < 3; ++a)
        if (dims[a] <= 0 || dims[a] % f[a] != 0)
            throw UsageError("patch dims must be positive multiples of " + std::to_string(f[0]) + "x" +
                             std::to_string(f[1]) + "x" + std::to_string(f[2]) + ", got " + std::to_string(dims[0]) +
                             "x" + std::to_string(dims[1]) + "x" + std::to_string(dims[2]));
}

template <typename T>
ConvBlock<T>::ConvBlock(int in, int out, Initializer& init)
    : w1(he_conv<T>(init, out, in, 3)),
      b1(zeros<T>(out)),
      g1(ones<T>(out)),
      beta1(zeros<T>(out)),
      w2(he_conv<T>(init, out, out, 3)),
      b2(zeros<T>(out)),
      g2(ones<T>(out)),
      beta2(zeros<T>(out))
{
}

template <typename T>
ag::Tensor<T> ConvBlock<T>::operator()(const ag::Tensor<T>& x) const
{
    auto h = ag::relu(ag::instance_norm(ag::conv3d(x, w1, b1), g1, beta1));
    return ag::relu(ag::instance_norm(ag::conv3d(h, w2, b2), g2, beta2));
}

template <typename T>
void ConvBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const
{
    out.push_back({prefix + ".conv1.weight", w1});
    out.push_back({prefix + ".conv1.bias", b1});
    out.push_back({prefix + ".norm1.weight", g1});
    out.push_back({prefix + ".norm1.bias", beta1});
    out.push_back({prefix + ".conv2.weight", w2});
    out.push_back({prefix + ".conv2.bias", b2});
    out.push_back({prefix + ".norm2.weight", g2});
    out.push_back({prefix + ".norm2.bias", beta2});
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, Initializer& init) : config_(config)
{
    if (config.d < 1) throw UsageError("backbone: d must be positive");
    for (int w : config.widths)
        if (w < 1) throw UsageError("backbone: widths must be positive");
    const auto& w = config.widths;
    enc_[0] = ConvBlock<T>(1, w[0], init);
    for (int l = 1; l < kLevels; ++l) {
        const auto k = config.down_kernel(l);
        down_w_[l - 1] = init.normal<T>({w[l], w[l - 1], k[0], k[1], k[2]}, std::sqrt(2.0 / (w[l - 1] * k[0] * k[1] * k[2])));
        down_b_[l - 1] = zeros<T>(w[l]);
        enc_[l] = ConvBlock<T>(w[l], w[l], init);
    }
    for (int l = kLevels - 2; l >= 0; --l) {
        const auto k = config.down_kernel(l + 1);
        up_w_[l] = init.normal<T>({w[l + 1], w[l], k[0], k[1], k[2]}, std::sqrt(1.0 / w[l + 1]));
        up_b_[l] = zeros<T>(w[l]);
        dec_[l] = ConvBlock<T>(2 * w[l], w[l], init);
    }
    for (int l = 0; l < kLevels; ++l) {
        proj_w_[l] = init.normal<T>({config.d, w[l]}, std::sqrt(1.0 / w[l]));
        proj_b_[l] = zeros<T>(config.d);
    }
}

template <typename T>
MultiScaleFeatures<T> Backbone<T>::forward(const ag::Tensor<T>& patch)
{
    if (patch.shape().size() != 4 || patch.dim(0) != 1)
        throw UsageError("backbone: expected patch [1,D,H,W], got " + ag::to_string(patch.shape()));
    check_patch_dims({patch.dim(1), patch.dim(2), patch.dim(3)}, config_);

    std::array<ag::Tensor<T>, kLevels> skips;
    skips[0] = enc_[0](patch);
    for (int l = 1; l < kLevels; ++l) skips[l] = enc_[l](ag::conv_down2(skips[l - 1], down_w_[l - 1], down_b_[l - 1]));

    MultiScaleFeatures<T> out;
    auto h = skips[kLevels - 1];
    out.levels[kLevels - 1] = ag::pointwise(h, proj_w_[kLevels - 1], proj_b_[kLevels - 1]);
    for (int l = kLevels - 2; l >= 0; --l) {
        auto up = ag::conv_up2(h, up_w_[l], up_b_[l]);
        h = dec_[l](ag::concat<T>({up, skips[l]}));
        out.levels[l] = ag::pointwise(h, proj_w_[l], proj_b_[l]);
    }
    if (ag::grad_enabled()) cached_ = out;
    return out;
}

template <typename T>
void Backbone<T>::backward(const std::array<std::vector<T>, kLevels>& grads)
{
    if (!cached_) throw UsageError("backbone: backward called without a cached forward");
    std::vector<ag::Tensor<T>> roots;
    std::vector<std::vector<T>> seeds;
    for (int l = 0; l < kLevels; ++l) {
        const auto& f = cached_->levels[l];
        if (grads[l].empty()) continue;
        if (static_cast<std::int64_t>(grads[l].size()) != f.numel())
            throw UsageError("backbone: gradient for level " + std::to_string(l + 1) + " has wrong size");
        roots.push_back(f);
        seeds.push_back(grads[l]);
    }
    ag::backward<T>(std::span<const ag::Tensor<T>>(roots), std::span<const std::vector<T>>(seeds));
    cached_.reset();
}

template <typename T>
ParamList<T> Backbone<T>::params() const
{
    ParamList<T> out;
    for (int l = 0; l < kLevels; ++l) {
        const std::string lvl = std::to_string(l);
        if (l > 0) {
            out.push_back({"backbone.down" + lvl + ".weight", down_w_[l - 1]});
            out.push_back({"backbone.down" + lvl + ".bias", down_b_[l - 1]});
        }
        enc_[l].collect("backbone.enc" + lvl, out);
    }
    for (int l = kLevels - 2; l >= 0; --l) {
        const std::string lvl = std::to_string(l);
        out.push_back({"backbone.up" + lvl + ".weight", up_w_[l]});
        out.push_back({"backbone.up" + lvl + ".bias", up_b_[l]});
        dec_[l].collect("backbone.dec" + lvl, out);
    }
    for (int l = 0; l < kLevels; ++l) {
        const std::string lvl = std::to_string(l + 1);
        out.push_back({"backbone.proj" + lvl + ".weight", proj_w_[l]});
        out.push_back({"backbone.proj" + lvl + ".bias", proj_b_[l]});
    }
    return out;
}

template struct ConvBlock<float>;
template struct ConvBlock<double>;
template class Backbone<float>;
template class Backbone<double>;

} // namespace hiermask
