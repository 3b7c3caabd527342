#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace hiermask::ag {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until a gradient reaches the node
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    /// Zero-initialized gradient buffer, allocated on first use.
    T* grad_buffer()
    {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad.data();
    }
};

/// Reference-counted handle to a node of a dynamically recorded graph.
/// Copies share the node.
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(int axis) const { return node_->shape.at(axis); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<T> data() { return node_->value; }
    std::span<const T> data() const { return node_->value; }
    /// Gradient accumulated by the last backward pass; zeros if none arrived.
    std::span<T> grad() const { return {node_->grad_buffer(), node_->value.size()}; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() const { node_->grad.clear(); }
    T item() const { return node_->value.at(0); }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& shared() const { return node_; }

    /// Leaf copy of the values with no history.
    Tensor detach() const { return from(shape(), node_->value, false); }

private:
    std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

/// Disables graph recording for its lifetime (inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// While alive, relu() folds the sign pattern of every input it sees into a
/// running hash. Finite-difference checks compare hashes to detect
/// perturbations that cross a ReLU kink.
class ReluPatternProbe {
public:
    ReluPatternProbe();
    ~ReluPatternProbe();
    ReluPatternProbe(const ReluPatternProbe&) = delete;
    ReluPatternProbe& operator=(const ReluPatternProbe&) = delete;

    std::uint64_t hash() const;
    void reset();
};

/// Reverse-mode sweep from a scalar root seeded with 1.
template <typename T>
void backward(const Tensor<T>& root);

/// Reverse-mode sweep from several roots with explicit upstream gradients.
template <typename T>
void backward(std::span<const Tensor<T>> roots, std::span<const std::vector<T>> seeds);

// ---- elementwise and structural ops ----------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Concatenation along axis 0.
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts);
/// Rows [begin, end) along axis 0.
template <typename T> Tensor<T> slice(const Tensor<T>& a, int begin, int end);
/// Columns [begin, end) of a matrix.
template <typename T> Tensor<T> slice_cols(const Tensor<T>& a, int begin, int end);
/// Column-wise concatenation of matrices with equal row counts.
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
/// Transpose of a matrix.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);

// ---- matrix ops --------------------------------------------------------------

/// op(a) x op(b) for 2-D tensors, op = transpose when the flag is set.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false, bool trans_b = false);
/// x[M,N] + bias[N] broadcast over rows.
template <typename T> Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias);
/// x[C,...] + bias[C] broadcast over trailing axes.
template <typename T> Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias);
/// x W^T + b with W[out,in].
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
/// Softmax down each column of a [K,N] matrix.
template <typename T> Tensor<T> softmax_cols(const Tensor<T>& x);
template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);
/// Each column divided by sqrt(|col|^2 + eps^2).
template <typename T> Tensor<T> l2_normalize_cols(const Tensor<T>& x, double eps = 1e-8);
/// out[g,:] = sum of rows k with group[k] == g.
template <typename T> Tensor<T> group_sum_rows(const Tensor<T>& x, std::span<const int> group, int n_groups);

// ---- volumetric ops on [C, D, H, W] -----------------------------------------

/// 3x3x3 convolution, stride 1, zero padding 1. weight[Co,Ci,3,3,3].
template <typename T> Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
/// Strided convolution with kernel = stride per axis, each 1 or 2. weight[Co,Ci,kz,ky,kx].
template <typename T> Tensor<T> conv_down2(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
/// Transposed counterpart of conv_down2. weight[Ci,Co,kz,ky,kx].
template <typename T> Tensor<T> conv_up2(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
/// 1x1x1 convolution. weight[Co,Ci].
template <typename T> Tensor<T> pointwise(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = 1e-5);

// ---- losses over per-voxel class probabilities P[C,N] ---------------------------

/// Mean over voxels of -log(max(P[label], floor)).
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const std::uint8_t> labels, double floor = 1e-12);
/// 1 - mean over `classes` of (2|P.G| + smooth) / (|P| + |G| + smooth); 0 when `classes` is empty.
template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, std::span<const std::uint8_t> labels, std::span<const int> classes,
                         double smooth = 1.0);

/// Raw GEMM in row-major layout backed by CBLAS.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a, int lda, const T* b, int ldb, T beta,
          T* c, int ldc);

} // namespace hiermask::ag
