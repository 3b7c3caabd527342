#include "hiermask/tensor.hpp"

#include "hiermask/error.hpp"

#include <cblas.h>

#include <algorithm>
#include <array>
#include <limits>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace hiermask::ag {

std::int64_t numel(const Shape& shape)
{
    std::int64_t n = 1;
    for (int s : shape) n *= s;
    return n;
}

std::string to_string(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_probe_active = false;
thread_local std::uint64_t g_probe_hash = 0;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

[[noreturn]] void shape_error(const char* op, const std::string& detail)
{
    throw UsageError(std::string(op) + ": " + detail);
}

void require(bool ok, const char* op, const std::string& detail)
{
    if (!ok) shape_error(op, detail);
}

// Creates a result node and wires it into the graph when any parent tracks gradients.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value, std::vector<NodePtr<T>> parents,
                      std::function<void(Node<T>&)> fn)
{
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    const bool track =
        g_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const NodePtr<T>& p) { return p->requires_grad; });
    if (track) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward = std::move(fn);
    }
    return Tensor<T>(std::move(node));
}

// Gradient buffer of a parent, or nullptr when it does not track gradients.
template <typename T>
T* parent_grad(Node<T>& self, std::size_t i)
{
    auto& p = *self.parents[i];
    return p.requires_grad ? p.grad_buffer() : nullptr;
}

} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

ReluPatternProbe::ReluPatternProbe()
{
    g_probe_active = true;
    g_probe_hash = 0;
}
ReluPatternProbe::~ReluPatternProbe() { g_probe_active = false; }
std::uint64_t ReluPatternProbe::hash() const { return g_probe_hash; }
void ReluPatternProbe::reset() { g_probe_hash = 0; }

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad)
{
    const auto n = ag::numel(shape);
    return from(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad)
{
    if (ag::numel(shape) != static_cast<std::int64_t>(values.size()))
        throw UsageError("tensor: " + std::to_string(values.size()) + " values do not fill shape " + ag::to_string(shape));
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor<T>(std::move(node));
}

template <typename T>
void backward(std::span<const Tensor<T>> roots, std::span<const std::vector<T>> seeds)
{
    if (roots.size() != seeds.size()) throw UsageError("backward: one seed per root is required");
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    for (const auto& r : roots) {
        if (!r.defined() || !r.requires_grad() || visited.count(r.node())) continue;
        stack.emplace_back(r.node(), 0);
        visited.insert(r.node());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node<T>* p = node->parents[next++].get();
                if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
    for (std::size_t i = 0; i < roots.size(); ++i) {
        if (!roots[i].defined() || !roots[i].requires_grad()) continue;
        auto* node = roots[i].node();
        if (seeds[i].size() != node->value.size()) throw UsageError("backward: seed size does not match root");
        T* g = node->grad_buffer();
        for (std::size_t k = 0; k < seeds[i].size(); ++k) g[k] += seeds[i][k];
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

template <typename T>
void backward(const Tensor<T>& root)
{
    if (root.numel() != 1) throw UsageError("backward: root must be a scalar, got " + to_string(root.shape()));
    const std::vector<T> seed{T(1)};
    backward<T>(std::span<const Tensor<T>>(&root, 1), std::span<const std::vector<T>>(&seed, 1));
}

// ---- gemm --------------------------------------------------------------------

template <>
void gemm<float>(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda, const float* b, int ldb,
                 float beta, float* c, int ldc)
{
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
                ldb, beta, c, ldc);
}

template <>
void gemm<double>(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
                  int ldb, double beta, double* c, int ldc)
{
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
                ldb, beta, c, ldc);
}

// ---- elementwise and structural ------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    require(a.shape() == b.shape(), "add", to_string(a.shape()) + " vs " + to_string(b.shape()));
    std::vector<T> out(a.data().begin(), a.data().end());
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    return make_result<T>("add", a.shape(), std::move(out), {a.shared(), b.shared()}, [](Node<T>& self) {
        for (std::size_t p = 0; p < 2; ++p)
            if (T* g = parent_grad(self, p))
                for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor)
{
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= factor;
    return make_result<T>("scale", a.shape(), std::move(out), {a.shared()}, [factor](Node<T>& self) {
        if (T* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
    });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a)
{
    std::vector<T> out(a.data().begin(), a.data().end());
    if (g_probe_active) {
        std::uint64_t h = g_probe_hash;
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out[i] > T(0)) h = (h ^ (i + 0x9e3779b97f4a7c15ULL)) * 0x100000001b3ULL;
        g_probe_hash = h * 0x100000001b3ULL + out.size();
    }
    for (auto& v : out) v = v > T(0) ? v : T(0);
    return make_result<T>("relu", a.shape(), std::move(out), {a.shared()}, [](Node<T>& self) {
        if (T* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (self.value[i] > T(0)) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape)
{
    require(numel(shape) == a.numel(), "reshape", to_string(a.shape()) + " -> " + to_string(shape));
    std::vector<T> out(a.data().begin(), a.data().end());
    return make_result<T>("reshape", std::move(shape), std::move(out), {a.shared()}, [](Node<T>& self) {
        if (T* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts)
{
    require(!parts.empty(), "concat", "no inputs");
    Shape shape = parts[0].shape();
    require(!shape.empty(), "concat", "scalar input");
    int rows = 0;
    std::vector<NodePtr<T>> parents;
    std::vector<T> out;
    for (const auto& p : parts) {
        Shape tail(p.shape().begin() + 1, p.shape().end());
        Shape want(shape.begin() + 1, shape.end());
        require(tail == want, "concat", to_string(p.shape()) + " vs " + to_string(shape));
        rows += p.dim(0);
        out.insert(out.end(), p.data().begin(), p.data().end());
        parents.push_back(p.shared());
    }
    shape[0] = rows;
    return make_result<T>("concat", std::move(shape), std::move(out), std::move(parents), [](Node<T>& self) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const std::size_t n = self.parents[p]->value.size();
            if (T* g = parent_grad(self, p))
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
            offset += n;
        }
    });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int begin, int end)
{
    require(!a.shape().empty() && 0 <= begin && begin <= end && end <= a.dim(0), "slice",
            "rows [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + to_string(a.shape()));
    const std::int64_t row = a.numel() / std::max(1, a.dim(0));
    Shape shape = a.shape();
    shape[0] = end - begin;
    std::vector<T> out(a.data().begin() + begin * row, a.data().begin() + end * row);
    const std::int64_t offset = begin * row;
    return make_result<T>("slice", std::move(shape), std::move(out), {a.shared()}, [offset](Node<T>& self) {
        if (T* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int begin, int end)
{
    require(a.shape().size() == 2 && 0 <= begin && begin <= end && end <= a.dim(1), "slice_cols", to_string(a.shape()));
    const int rows = a.dim(0), cols = a.dim(1), w = end - begin;
    std::vector<T> out(static_cast<std::size_t>(rows) * w);
    for (int r = 0; r < rows; ++r)
        std::copy_n(a.data().begin() + r * cols + begin, w, out.begin() + r * w);
    return make_result<T>("slice_cols", {rows, w}, std::move(out), {a.shared()}, [=](Node<T>& self) {
        if (T* g = parent_grad(self, 0))
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < w; ++c) g[r * cols + begin + c] += self.grad[r * w + c];
    });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts)
{
    require(!parts.empty(), "concat_cols", "no inputs");
    const int rows = parts[0].dim(0);
    int cols = 0;
    std::vector<NodePtr<T>> parents;
    for (const auto& p : parts) {
        require(p.shape().size() == 2 && p.dim(0) == rows, "concat_cols", to_string(p.shape()));
        cols += p.dim(1);
        parents.push_back(p.shared());
    }
    std::vector<T> out(static_cast<std::size_t>(rows) * cols);
    int c0 = 0;
    for (const auto& p : parts) {
        const int w = p.dim(1);
        for (int r = 0; r < rows; ++r) std::copy_n(p.data().begin() + r * w, w, out.begin() + r * cols + c0);
        c0 += w;
    }
    return make_result<T>("concat_cols", {rows, cols}, std::move(out), std::move(parents), [rows, cols](Node<T>& self) {
        int c0 = 0;
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
            const int w = self.parents[p]->shape[1];
            if (T* g = parent_grad(self, p))
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < w; ++c) g[r * w + c] += self.grad[r * cols + c0 + c];
            c0 += w;
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a)
{
    double s = 0.0;
    for (T v : a.data()) s += v;
    return make_result<T>("sum", {1}, {static_cast<T>(s)}, {a.shared()}, [](Node<T>& self) {
        if (T* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.parents[0]->value.size(); ++i) g[i] += self.grad[0];
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a)
{
    require(a.shape().size() == 2, "transpose", to_string(a.shape()));
    const int rows = a.dim(0), cols = a.dim(1);
    std::vector<T> out(a.numel());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out[static_cast<std::int64_t>(c) * rows + r] = a.data()[static_cast<std::int64_t>(r) * cols + c];
    return make_result<T>("transpose", {cols, rows}, std::move(out), {a.shared()}, [rows, cols](Node<T>& self) {
        if (T* g = parent_grad(self, 0))
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c)
                    g[static_cast<std::int64_t>(r) * cols + c] += self.grad[static_cast<std::int64_t>(c) * rows + r];
    });
}

// ---- matrix ops ----------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta, bool tb)
{
    require(a.shape().size() == 2 && b.shape().size() == 2, "matmul", "2-D operands required");
    const int m = ta ? a.dim(1) : a.dim(0);
    const int k = ta ? a.dim(0) : a.dim(1);
    const int kb = tb ? b.dim(1) : b.dim(0);
    const int n = tb ? b.dim(0) : b.dim(1);
    require(k == kb, "matmul", to_string(a.shape()) + " x " + to_string(b.shape()));
    std::vector<T> out(static_cast<std::size_t>(m) * n, T(0));
    if (m && n && k) gemm<T>(ta, tb, m, n, k, T(1), a.data().data(), a.dim(1), b.data().data(), b.dim(1), T(0), out.data(), n);
    return make_result<T>("matmul", {m, n}, std::move(out), {a.shared(), b.shared()}, [=](Node<T>& self) {
        const T* A = self.parents[0]->value.data();
        const T* B = self.parents[1]->value.data();
        const T* G = self.grad.data();
        const int lda = self.parents[0]->shape[1];
        const int ldb = self.parents[1]->shape[1];
        if (m == 0 || n == 0 || k == 0) return;
        if (T* ga = parent_grad(self, 0)) {
            // C = op(A) op(B): dA = G op(B)^T (or its transpose when A was transposed)
            if (!ta) gemm<T>(false, !tb, m, k, n, T(1), G, n, B, ldb, T(1), ga, lda);
            else gemm<T>(tb, true, k, m, n, T(1), B, ldb, G, n, T(1), ga, lda);
        }
        if (T* gb = parent_grad(self, 1)) {
            if (!tb) gemm<T>(!ta, false, k, n, m, T(1), A, lda, G, n, T(1), gb, ldb);
            else gemm<T>(true, ta, n, k, m, T(1), G, n, A, lda, T(1), gb, ldb);
        }
    });
}

template <typename T>
Tensor<T> add_row_bias(const Tensor<T>& x, const Tensor<T>& bias)
{
    require(x.shape().size() == 2 && bias.numel() == x.dim(1), "add_row_bias", to_string(x.shape()) + " + " + to_string(bias.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<T> out(x.data().begin(), x.data().end());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out[r * cols + c] += bias.data()[c];
    return make_result<T>("add_row_bias", x.shape(), std::move(out), {x.shared(), bias.shared()}, [rows, cols](Node<T>& self) {
        if (T* g = parent_grad(self, 0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        if (T* g = parent_grad(self, 1))
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) g[c] += self.grad[r * cols + c];
    });
}

template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias)
{
    require(!x.shape().empty() && bias.numel() == x.dim(0), "add_channel_bias", to_string(x.shape()) + " + " + to_string(bias.shape()));
    const int channels = x.dim(0);
    const std::int64_t inner = x.numel() / std::max(1, channels);
    std::vector<T> out(x.data().begin(), x.data().end());
    for (int c = 0; c < channels; ++c)
        for (std::int64_t i = 0; i < inner; ++i) out[c * inner + i] += bias.data()[c];
    return make_result<T>("add_channel_bias", x.shape(), std::move(out), {x.shared(), bias.shared()},
                          [channels, inner](Node<T>& self) {
                              if (T* g = parent_grad(self, 0))
                                  for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                              if (T* g = parent_grad(self, 1))
                                  for (int c = 0; c < channels; ++c) {
                                      double s = 0.0;
                                      for (std::int64_t i = 0; i < inner; ++i) s += self.grad[c * inner + i];
                                      g[c] += static_cast<T>(s);
                                  }
                          });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias)
{
    return add_row_bias(matmul(x, weight, false, true), bias);
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x)
{
    require(x.shape().size() == 2, "softmax_rows", to_string(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<T> out(x.data().begin(), x.data().end());
    for (int r = 0; r < rows; ++r) {
        T* row = out.data() + static_cast<std::int64_t>(r) * cols;
        const T mx = *std::max_element(row, row + cols);
        double s = 0.0;
        for (int c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            s += row[c];
        }
        for (int c = 0; c < cols; ++c) row[c] = static_cast<T>(row[c] / s);
    }
    return make_result<T>("softmax_rows", x.shape(), std::move(out), {x.shared()}, [rows, cols](Node<T>& self) {
        T* g = parent_grad(self, 0);
        if (!g) return;
        for (int r = 0; r < rows; ++r) {
            const std::int64_t o = static_cast<std::int64_t>(r) * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += self.grad[o + c] * self.value[o + c];
            for (int c = 0; c < cols; ++c) g[o + c] += static_cast<T>(self.value[o + c] * (self.grad[o + c] - dot));
        }
    });
}

template <typename T>
Tensor<T> softmax_cols(const Tensor<T>& x)
{
    require(x.shape().size() == 2, "softmax_cols", to_string(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<T> out(x.data().begin(), x.data().end());
    std::vector<T> mx(cols, -std::numeric_limits<T>::infinity());
    std::vector<double> s(cols, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) mx[c] = std::max(mx[c], out[r * cols + c]);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            T& v = out[static_cast<std::int64_t>(r) * cols + c];
            v = std::exp(v - mx[c]);
            s[c] += v;
        }
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            T& v = out[static_cast<std::int64_t>(r) * cols + c];
            v = static_cast<T>(v / s[c]);
        }
    return make_result<T>("softmax_cols", x.shape(), std::move(out), {x.shared()}, [rows, cols](Node<T>& self) {
        T* g = parent_grad(self, 0);
        if (!g) return;
        std::vector<double> dot(cols, 0.0);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const auto i = static_cast<std::int64_t>(r) * cols + c;
                dot[c] += self.grad[i] * self.value[i];
            }
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const auto i = static_cast<std::int64_t>(r) * cols + c;
                g[i] += static_cast<T>(self.value[i] * (self.grad[i] - dot[c]));
            }
    });
}

template <typename T>
Tensor<T> layer_norm_rows(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps)
{
    require(x.shape().size() == 2 && gamma.numel() == x.dim(1) && beta.numel() == x.dim(1), "layer_norm_rows",
            to_string(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<T> xhat(x.numel()), out(x.numel());
    std::vector<double> inv_std(rows);
    for (int r = 0; r < rows; ++r) {
        const T* row = x.data().data() + static_cast<std::int64_t>(r) * cols;
        double mean = 0.0, var = 0.0;
        for (int c = 0; c < cols; ++c) mean += row[c];
        mean /= cols;
        for (int c = 0; c < cols; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= cols;
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (int c = 0; c < cols; ++c) {
            const auto i = static_cast<std::int64_t>(r) * cols + c;
            xhat[i] = static_cast<T>((row[c] - mean) * inv_std[r]);
            out[i] = gamma.data()[c] * xhat[i] + beta.data()[c];
        }
    }
    return make_result<T>(
        "layer_norm", x.shape(), std::move(out), {x.shared(), gamma.shared(), beta.shared()},
        [rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
            const T* gam = self.parents[1]->value.data();
            T* gx = parent_grad(self, 0);
            T* gg = parent_grad(self, 1);
            T* gb = parent_grad(self, 2);
            for (int r = 0; r < rows; ++r) {
                const auto o = static_cast<std::int64_t>(r) * cols;
                double sum_d = 0.0, sum_dx = 0.0;
                for (int c = 0; c < cols; ++c) {
                    const double d = self.grad[o + c] * gam[c];
                    sum_d += d;
                    sum_dx += d * xhat[o + c];
                    if (gg) gg[c] += self.grad[o + c] * xhat[o + c];
                    if (gb) gb[c] += self.grad[o + c];
                }
                if (gx)
                    for (int c = 0; c < cols; ++c) {
                        const double d = self.grad[o + c] * gam[c];
                        gx[o + c] += static_cast<T>(inv_std[r] * (d - sum_d / cols - xhat[o + c] * sum_dx / cols));
                    }
            }
        });
}

template <typename T>
Tensor<T> l2_normalize_cols(const Tensor<T>& x, double eps)
{
    require(x.shape().size() == 2, "l2_normalize_cols", to_string(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<double> norm(cols, 0.0);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const double v = x.data()[static_cast<std::int64_t>(r) * cols + c];
            norm[c] += v * v;
        }
    for (auto& n : norm) n = std::sqrt(n + eps * eps);
    std::vector<T> out(x.numel());
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const auto i = static_cast<std::int64_t>(r) * cols + c;
            out[i] = static_cast<T>(x.data()[i] / norm[c]);
        }
    return make_result<T>("l2_normalize_cols", x.shape(), std::move(out), {x.shared()},
                          [rows, cols, norm = std::move(norm)](Node<T>& self) {
                              T* g = parent_grad(self, 0);
                              if (!g) return;
                              std::vector<double> dot(cols, 0.0);
                              for (int r = 0; r < rows; ++r)
                                  for (int c = 0; c < cols; ++c) {
                                      const auto i = static_cast<std::int64_t>(r) * cols + c;
                                      dot[c] += self.grad[i] * self.value[i];
                                  }
                              for (int r = 0; r < rows; ++r)
                                  for (int c = 0; c < cols; ++c) {
                                      const auto i = static_cast<std::int64_t>(r) * cols + c;
                                      g[i] += static_cast<T>((self.grad[i] - self.value[i] * dot[c]) / norm[c]);
                                  }
                          });
}

template <typename T>
Tensor<T> group_sum_rows(const Tensor<T>& x, std::span<const int> group, int n_groups)
{
    require(x.shape().size() == 2 && static_cast<int>(group.size()) == x.dim(0), "group_sum_rows", to_string(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    std::vector<int> groups(group.begin(), group.end());
    for (int g : groups) require(g >= 0 && g < n_groups, "group_sum_rows", "group index out of range");
    std::vector<T> out(static_cast<std::size_t>(n_groups) * cols, T(0));
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out[static_cast<std::int64_t>(groups[r]) * cols + c] += x.data()[static_cast<std::int64_t>(r) * cols + c];
    return make_result<T>("group_sum_rows", {n_groups, cols}, std::move(out), {x.shared()},
                          [rows, cols, groups = std::move(groups)](Node<T>& self) {
                              if (T* g = parent_grad(self, 0))
                                  for (int r = 0; r < rows; ++r)
                                      for (int c = 0; c < cols; ++c)
                                          g[static_cast<std::int64_t>(r) * cols + c] +=
                                              self.grad[static_cast<std::int64_t>(groups[r]) * cols + c];
                          });
}

// ---- volumetric ops -------------------------------------------------------------

namespace {

struct Vol {
    int c, d, h, w;
    std::int64_t spatial() const { return static_cast<std::int64_t>(d) * h * w; }
};

Vol vol_shape(const Shape& s, const char* op)
{
    require(s.size() == 4, op, "expected [C,D,H,W], got " + to_string(s));
    return {s[0], s[1], s[2], s[3]};
}

} // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias)
{
    const Vol in = vol_shape(x.shape(), "conv3d");
    require(weight.shape().size() == 5 && weight.dim(1) == in.c && weight.dim(2) == 3 && weight.dim(3) == 3 &&
                weight.dim(4) == 3,
            "conv3d", "weight " + to_string(weight.shape()) + " for input " + to_string(x.shape()));
    const int co = weight.dim(0), ci = in.c;
    require(bias.numel() == co, "conv3d", "bias size");
    const int dp = in.d + 2, hp = in.h + 2, wp = in.w + 2;
    const std::int64_t plane = static_cast<std::int64_t>(hp) * wp;
    const std::int64_t padded = plane * dp;
    const std::int64_t p0 = plane + wp + 1;
    const std::int64_t p1 = static_cast<std::int64_t>(in.d) * plane + static_cast<std::int64_t>(in.h) * wp + in.w;
    const int span = static_cast<int>(p1 - p0 + 1);

    std::vector<T> xpad(static_cast<std::size_t>(ci) * padded, T(0));
    for (int c = 0; c < ci; ++c)
        for (int z = 0; z < in.d; ++z)
            for (int y = 0; y < in.h; ++y)
                std::copy_n(x.data().data() + ((static_cast<std::int64_t>(c) * in.d + z) * in.h + y) * in.w, in.w,
                            xpad.data() + c * padded + (z + 1) * plane + (y + 1) * wp + 1);

    // Wr[k][o][i] = weight[o][i][k]
    std::vector<T> wr(static_cast<std::size_t>(27) * co * ci);
    for (int o = 0; o < co; ++o)
        for (int i = 0; i < ci; ++i)
            for (int k = 0; k < 27; ++k) wr[(static_cast<std::size_t>(k) * co + o) * ci + i] = weight.data()[(static_cast<std::size_t>(o) * ci + i) * 27 + k];
    std::array<std::int64_t, 27> offsets{};
    for (int kz = 0; kz < 3; ++kz)
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) offsets[(kz * 3 + ky) * 3 + kx] = (kz - 1) * plane + (ky - 1) * wp + (kx - 1);

    std::vector<T> opad(static_cast<std::size_t>(co) * padded, T(0));
    for (int k = 0; k < 27; ++k)
        gemm<T>(false, false, co, span, ci, T(1), wr.data() + static_cast<std::size_t>(k) * co * ci, ci,
                xpad.data() + p0 + offsets[k], static_cast<int>(padded), T(1), opad.data() + p0, static_cast<int>(padded));

    std::vector<T> out(static_cast<std::size_t>(co) * in.spatial());
    for (int o = 0; o < co; ++o) {
        const T b = bias.data()[o];
        for (int z = 0; z < in.d; ++z)
            for (int y = 0; y < in.h; ++y) {
                const T* src = opad.data() + o * padded + (z + 1) * plane + (y + 1) * wp + 1;
                T* dst = out.data() + ((static_cast<std::int64_t>(o) * in.d + z) * in.h + y) * in.w;
                for (int xx = 0; xx < in.w; ++xx) dst[xx] = src[xx] + b;
            }
    }
    opad.clear();
    opad.shrink_to_fit();

    return make_result<T>(
        "conv3d", {co, in.d, in.h, in.w}, std::move(out), {x.shared(), weight.shared(), bias.shared()},
        [=, xpad = std::move(xpad), wr = std::move(wr)](Node<T>& self) {
            T* gx = parent_grad(self, 0);
            T* gw = parent_grad(self, 1);
            T* gb = parent_grad(self, 2);
            std::vector<T> gpad(static_cast<std::size_t>(co) * padded, T(0));
            for (int o = 0; o < co; ++o)
                for (int z = 0; z < in.d; ++z)
                    for (int y = 0; y < in.h; ++y)
                        std::copy_n(self.grad.data() + ((static_cast<std::int64_t>(o) * in.d + z) * in.h + y) * in.w, in.w,
                                    gpad.data() + o * padded + (z + 1) * plane + (y + 1) * wp + 1);
            if (gb)
                for (int o = 0; o < co; ++o) {
                    double s = 0.0;
                    const T* g = self.grad.data() + o * in.spatial();
                    for (std::int64_t i = 0; i < in.spatial(); ++i) s += g[i];
                    gb[o] += static_cast<T>(s);
                }
            if (gw) {
                std::vector<T> gwr(static_cast<std::size_t>(co) * ci);
                for (int k = 0; k < 27; ++k) {
                    gemm<T>(false, true, co, ci, span, T(1), gpad.data() + p0, static_cast<int>(padded),
                            xpad.data() + p0 + offsets[k], static_cast<int>(padded), T(0), gwr.data(), ci);
                    for (int o = 0; o < co; ++o)
                        for (int i = 0; i < ci; ++i) gw[(static_cast<std::size_t>(o) * ci + i) * 27 + k] += gwr[static_cast<std::size_t>(o) * ci + i];
                }
            }
            if (gx) {
                std::vector<T> xgpad(static_cast<std::size_t>(ci) * padded, T(0));
                for (int k = 0; k < 27; ++k)
                    gemm<T>(true, false, ci, span, co, T(1), wr.data() + static_cast<std::size_t>(k) * co * ci, ci,
                            gpad.data() + p0, static_cast<int>(padded), T(1), xgpad.data() + p0 + offsets[k],
                            static_cast<int>(padded));
                for (int c = 0; c < ci; ++c)
                    for (int z = 0; z < in.d; ++z)
                        for (int y = 0; y < in.h; ++y) {
                            const T* src = xgpad.data() + c * padded + (z + 1) * plane + (y + 1) * wp + 1;
                            T* dst = gx + ((static_cast<std::int64_t>(c) * in.d + z) * in.h + y) * in.w;
                            for (int xx = 0; xx < in.w; ++xx) dst[xx] += src[xx];
                        }
            }
        });
}

namespace {

// Space-to-depth: [C,D,H,W] -> [C*8, D/2*H/2*W/2], row index c*8 + (kz*2+ky)*2+kx.
// Per-axis block sizes of a strided convolution, each 1 or 2.
struct Stride {
    int z = 2, y = 2, x = 2;
    int volume() const { return z * y * x; }
};

Stride kernel_stride(const Shape& weight, const char* op)
{
    require(weight.size() == 5, op, "weight must be 5-D, got " + to_string(weight));
    for (int a = 2; a < 5; ++a) require(weight[a] == 1 || weight[a] == 2, op, "kernel extents must be 1 or 2");
    return {weight[2], weight[3], weight[4]};
}

// Rearranges [C, D, H, W] into [C * K, D/sz * H/sy * W/sx] with K = sz*sy*sx.
template <typename T>
void space_to_depth(const T* src, const Vol& in, const Stride& s, T* dst)
{
    const int d2 = in.d / s.z, h2 = in.h / s.y, w2 = in.w / s.x;
    const int kk = s.volume();
    const std::int64_t n = static_cast<std::int64_t>(d2) * h2 * w2;
    for (int c = 0; c < in.c; ++c)
        for (int z = 0; z < in.d; ++z)
            for (int y = 0; y < in.h; ++y)
                for (int x = 0; x < in.w; ++x) {
                    const int k = ((z % s.z) * s.y + (y % s.y)) * s.x + (x % s.x);
                    const std::int64_t col = (static_cast<std::int64_t>(z / s.z) * h2 + (y / s.y)) * w2 + (x / s.x);
                    dst[(static_cast<std::int64_t>(c) * kk + k) * n + col] =
                        src[((static_cast<std::int64_t>(c) * in.d + z) * in.h + y) * in.w + x];
                }
}

// Inverse of space_to_depth, accumulating into dst.
template <typename T>
void depth_to_space_add(const T* src, const Vol& out, const Stride& s, T* dst)
{
    const int d2 = out.d / s.z, h2 = out.h / s.y, w2 = out.w / s.x;
    const int kk = s.volume();
    const std::int64_t n = static_cast<std::int64_t>(d2) * h2 * w2;
    for (int c = 0; c < out.c; ++c)
        for (int z = 0; z < out.d; ++z)
            for (int y = 0; y < out.h; ++y)
                for (int x = 0; x < out.w; ++x) {
                    const int k = ((z % s.z) * s.y + (y % s.y)) * s.x + (x % s.x);
                    const std::int64_t col = (static_cast<std::int64_t>(z / s.z) * h2 + (y / s.y)) * w2 + (x / s.x);
                    dst[((static_cast<std::int64_t>(c) * out.d + z) * out.h + y) * out.w + x] +=
                        src[(static_cast<std::int64_t>(c) * kk + k) * n + col];
                }
}

} // namespace

template <typename T>
Tensor<T> conv_down2(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias)
{
    const Vol in = vol_shape(x.shape(), "conv_down2");
    const Stride st = kernel_stride(weight.shape(), "conv_down2");
    require(in.d % st.z == 0 && in.h % st.y == 0 && in.w % st.x == 0, "conv_down2",
            "spatial dims must be divisible by the stride, got " + to_string(x.shape()));
    require(weight.dim(1) == in.c, "conv_down2", "weight " + to_string(weight.shape()));
    const int co = weight.dim(0), ci = in.c, kk = st.volume();
    require(bias.numel() == co, "conv_down2", "bias size");
    const Vol out_shape{co, in.d / st.z, in.h / st.y, in.w / st.x};
    const int n = static_cast<int>(out_shape.spatial());
    std::vector<T> cols(static_cast<std::size_t>(ci) * kk * n);
    space_to_depth(x.data().data(), in, st, cols.data());
    std::vector<T> out(static_cast<std::size_t>(co) * n);
    gemm<T>(false, false, co, n, ci * kk, T(1), weight.data().data(), ci * kk, cols.data(), n, T(0), out.data(), n);
    for (int o = 0; o < co; ++o)
        for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(o) * n + i] += bias.data()[o];
    return make_result<T>("conv_down2", {co, out_shape.d, out_shape.h, out_shape.w}, std::move(out),
                          {x.shared(), weight.shared(), bias.shared()},
                          [=, cols = std::move(cols)](Node<T>& self) {
                              const T* G = self.grad.data();
                              if (T* gb = parent_grad(self, 2))
                                  for (int o = 0; o < co; ++o) {
                                      double s = 0.0;
                                      for (int i = 0; i < n; ++i) s += G[static_cast<std::size_t>(o) * n + i];
                                      gb[o] += static_cast<T>(s);
                                  }
                              if (T* gw = parent_grad(self, 1))
                                  gemm<T>(false, true, co, ci * kk, n, T(1), G, n, cols.data(), n, T(1), gw, ci * kk);
                              if (T* gx = parent_grad(self, 0)) {
                                  std::vector<T> gcols(static_cast<std::size_t>(ci) * kk * n);
                                  gemm<T>(true, false, ci * kk, n, co, T(1), self.parents[1]->value.data(), ci * kk, G, n,
                                          T(0), gcols.data(), n);
                                  depth_to_space_add(gcols.data(), in, st, gx);
                              }
                          });
}

template <typename T>
Tensor<T> conv_up2(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias)
{
    const Vol in = vol_shape(x.shape(), "conv_up2");
    const Stride st = kernel_stride(weight.shape(), "conv_up2");
    require(weight.dim(0) == in.c, "conv_up2", "weight " + to_string(weight.shape()));
    const int ci = in.c, co = weight.dim(1), kk = st.volume();
    require(bias.numel() == co, "conv_up2", "bias size");
    const int n = static_cast<int>(in.spatial());
    const Vol out_shape{co, in.d * st.z, in.h * st.y, in.w * st.x};
    std::vector<T> tmp(static_cast<std::size_t>(co) * kk * n);
    gemm<T>(true, false, co * kk, n, ci, T(1), weight.data().data(), co * kk, x.data().data(), n, T(0), tmp.data(), n);
    std::vector<T> out(static_cast<std::size_t>(co) * out_shape.spatial(), T(0));
    depth_to_space_add(tmp.data(), out_shape, st, out.data());
    for (int o = 0; o < co; ++o)
        for (std::int64_t i = 0; i < out_shape.spatial(); ++i) out[o * out_shape.spatial() + i] += bias.data()[o];
    return make_result<T>("conv_up2", {co, out_shape.d, out_shape.h, out_shape.w}, std::move(out),
                          {x.shared(), weight.shared(), bias.shared()}, [=](Node<T>& self) {
                              const T* G = self.grad.data();
                              if (T* gb = parent_grad(self, 2))
                                  for (int o = 0; o < co; ++o) {
                                      double s = 0.0;
                                      for (std::int64_t i = 0; i < out_shape.spatial(); ++i) s += G[o * out_shape.spatial() + i];
                                      gb[o] += static_cast<T>(s);
                                  }
                              T* gx = parent_grad(self, 0);
                              T* gw = parent_grad(self, 1);
                              if (!gx && !gw) return;
                              std::vector<T> gtmp(static_cast<std::size_t>(co) * kk * n);
                              space_to_depth(G, out_shape, st, gtmp.data());
                              if (gx)
                                  gemm<T>(false, false, ci, n, co * kk, T(1), self.parents[1]->value.data(), co * kk,
                                          gtmp.data(), n, T(1), gx, n);
                              if (gw)
                                  gemm<T>(false, true, ci, co * kk, n, T(1), self.parents[0]->value.data(), n, gtmp.data(),
                                          n, T(1), gw, co * kk);
                          });
}

template <typename T>
Tensor<T> pointwise(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias)
{
    const Vol in = vol_shape(x.shape(), "pointwise");
    require(weight.shape().size() == 2 && weight.dim(1) == in.c, "pointwise", "weight " + to_string(weight.shape()));
    const int co = weight.dim(0);
    auto flat = reshape(x, {in.c, static_cast<int>(in.spatial())});
    auto y = add_channel_bias(matmul(weight, flat), bias);
    return reshape(y, {co, in.d, in.h, in.w});
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps)
{
    require(x.shape().size() >= 2, "instance_norm", to_string(x.shape()));
    const int channels = x.dim(0);
    require(gamma.numel() == channels && beta.numel() == channels, "instance_norm", "affine size");
    const std::int64_t inner = x.numel() / channels;
    std::vector<T> xhat(x.numel()), out(x.numel());
    std::vector<double> inv_std(channels);
    for (int c = 0; c < channels; ++c) {
        const T* src = x.data().data() + c * inner;
        double mean = 0.0, var = 0.0;
        for (std::int64_t i = 0; i < inner; ++i) mean += src[i];
        mean /= static_cast<double>(inner);
        for (std::int64_t i = 0; i < inner; ++i) var += (src[i] - mean) * (src[i] - mean);
        var /= static_cast<double>(inner);
        inv_std[c] = 1.0 / std::sqrt(var + eps);
        const T g = gamma.data()[c], b = beta.data()[c];
        for (std::int64_t i = 0; i < inner; ++i) {
            xhat[c * inner + i] = static_cast<T>((src[i] - mean) * inv_std[c]);
            out[c * inner + i] = g * xhat[c * inner + i] + b;
        }
    }
    return make_result<T>("instance_norm", x.shape(), std::move(out), {x.shared(), gamma.shared(), beta.shared()},
                          [channels, inner, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
                              const T* gam = self.parents[1]->value.data();
                              T* gx = parent_grad(self, 0);
                              T* gg = parent_grad(self, 1);
                              T* gb = parent_grad(self, 2);
                              for (int c = 0; c < channels; ++c) {
                                  const T* G = self.grad.data() + c * inner;
                                  const T* xh = xhat.data() + c * inner;
                                  double sum_g = 0.0, sum_gx = 0.0;
                                  for (std::int64_t i = 0; i < inner; ++i) {
                                      sum_g += G[i];
                                      sum_gx += G[i] * xh[i];
                                  }
                                  if (gg) gg[c] += static_cast<T>(sum_gx);
                                  if (gb) gb[c] += static_cast<T>(sum_g);
                                  if (!gx) continue;
                                  const double k = gam[c] * inv_std[c];
                                  const double mg = sum_g / static_cast<double>(inner);
                                  const double mgx = sum_gx / static_cast<double>(inner);
                                  T* dst = gx + c * inner;
                                  for (std::int64_t i = 0; i < inner; ++i)
                                      dst[i] += static_cast<T>(k * (G[i] - mg - xh[i] * mgx));
                              }
                          });
}

// ---- losses ----------------------------------------------------------------------

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& probs, std::span<const std::uint8_t> labels, double floor)
{
    require(probs.shape().size() == 2 && static_cast<std::int64_t>(labels.size()) == probs.dim(1), "cross_entropy",
            to_string(probs.shape()) + " vs " + std::to_string(labels.size()) + " labels");
    const int classes = probs.dim(0), n = probs.dim(1);
    std::vector<std::uint8_t> lab(labels.begin(), labels.end());
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        require(lab[i] < classes, "cross_entropy", "label out of range");
        total -= std::log(std::max<double>(probs.data()[static_cast<std::int64_t>(lab[i]) * n + i], floor));
    }
    return make_result<T>("cross_entropy", {1}, {static_cast<T>(total / n)}, {probs.shared()},
                          [n, floor, lab = std::move(lab)](Node<T>& self) {
                              T* g = parent_grad(self, 0);
                              if (!g) return;
                              const T* p = self.parents[0]->value.data();
                              for (int i = 0; i < n; ++i) {
                                  const auto k = static_cast<std::int64_t>(lab[i]) * n + i;
                                  if (p[k] > floor) g[k] += static_cast<T>(-self.grad[0] / (n * static_cast<double>(p[k])));
                              }
                          });
}

template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, std::span<const std::uint8_t> labels, std::span<const int> classes,
                         double smooth)
{
    require(probs.shape().size() == 2 && static_cast<std::int64_t>(labels.size()) == probs.dim(1), "soft_dice_loss",
            to_string(probs.shape()));
    const int n = probs.dim(1);
    std::vector<std::uint8_t> lab(labels.begin(), labels.end());
    std::vector<int> cls(classes.begin(), classes.end());
    std::vector<double> inter(cls.size(), 0.0), psum(cls.size(), 0.0), gsum(cls.size(), 0.0);
    double mean_dice = 0.0;
    for (std::size_t j = 0; j < cls.size(); ++j) {
        require(cls[j] >= 0 && cls[j] < probs.dim(0), "soft_dice_loss", "class out of range");
        const T* p = probs.data().data() + static_cast<std::int64_t>(cls[j]) * n;
        for (int i = 0; i < n; ++i) {
            psum[j] += p[i];
            if (lab[i] == cls[j]) {
                inter[j] += p[i];
                gsum[j] += 1.0;
            }
        }
        mean_dice += (2.0 * inter[j] + smooth) / (psum[j] + gsum[j] + smooth);
    }
    const double loss = cls.empty() ? 0.0 : 1.0 - mean_dice / static_cast<double>(cls.size());
    return make_result<T>("soft_dice_loss", {1}, {static_cast<T>(loss)}, {probs.shared()},
                          [=, lab = std::move(lab), cls = std::move(cls), inter = std::move(inter),
                           psum = std::move(psum), gsum = std::move(gsum)](Node<T>& self) {
                              T* g = parent_grad(self, 0);
                              if (!g || cls.empty()) return;
                              const double up = self.grad[0] / static_cast<double>(cls.size());
                              for (std::size_t j = 0; j < cls.size(); ++j) {
                                  const double den = psum[j] + gsum[j] + smooth;
                                  const double num = 2.0 * inter[j] + smooth;
                                  const double d_fg = -up * (2.0 * den - num) / (den * den);
                                  const double d_bg = -up * (-num) / (den * den);
                                  T* row = g + static_cast<std::int64_t>(cls[j]) * n;
                                  for (int i = 0; i < n; ++i) row[i] += static_cast<T>(lab[i] == cls[j] ? d_fg : d_bg);
                              }
                          });
}

// ---- explicit instantiation -----------------------------------------------------

#define HIERMASK_INSTANTIATE(T)                                                                                       \
    template class Tensor<T>;                                                                                         \
    template void backward<T>(const Tensor<T>&);                                                                      \
    template void backward<T>(std::span<const Tensor<T>>, std::span<const std::vector<T>>);                           \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                                 \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                                     \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                           \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&);                                                      \
    template Tensor<T> slice<T>(const Tensor<T>&, int, int);                                                          \
    template Tensor<T> slice_cols<T>(const Tensor<T>&, int, int);                                                     \
    template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);                                                 \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                                      \
    template Tensor<T> transpose<T>(const Tensor<T>&);                                                                \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, bool, bool);                                     \
    template Tensor<T> add_row_bias<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> add_channel_bias<T>(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> softmax_rows<T>(const Tensor<T>&);                                                             \
    template Tensor<T> softmax_cols<T>(const Tensor<T>&);                                                             \
    template Tensor<T> layer_norm_rows<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);              \
    template Tensor<T> l2_normalize_cols<T>(const Tensor<T>&, double);                                                \
    template Tensor<T> group_sum_rows<T>(const Tensor<T>&, std::span<const int>, int);                                \
    template Tensor<T> conv3d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> conv_down2<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> conv_up2<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                             \
    template Tensor<T> pointwise<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> instance_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);                \
    template Tensor<T> cross_entropy<T>(const Tensor<T>&, std::span<const std::uint8_t>, double);                     \
    template Tensor<T> soft_dice_loss<T>(const Tensor<T>&, std::span<const std::uint8_t>, std::span<const int>, double);

HIERMASK_INSTANTIATE(float)
HIERMASK_INSTANTIATE(double)

#undef HIERMASK_INSTANTIATE

} // namespace hiermask::ag
