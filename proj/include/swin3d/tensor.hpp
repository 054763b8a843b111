#pragma once

// Dense row-major tensors with a reverse-mode tape.
//
// A Tensor is a cheap handle onto shared storage. Every op that touches a
// tensor with requires_grad() records a Node on the result; backward() walks
// those nodes in reverse topological order. Leaves (parameters and user
// inputs) accumulate gradients across backward() calls until zero_grad().

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "swin3d/errors.hpp"

namespace swin3d {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ')';
    return os.str();
}

/// Row-major strides for `shape`.
inline std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) {
        strides[i - 1] = strides[i] * shape[i];
    }
    return strides;
}

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

template <typename T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "float or double only");
    return std::is_same_v<T, float> ? DType::Float32 : DType::Float64;
}

namespace detail {

inline thread_local bool grad_enabled = true;

template <typename T>
struct Node;

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until the first backward pass reaches this tensor
    bool requires_grad = false;
    std::shared_ptr<Node<T>> node;

    /// Gradient buffer, zero-filled on first use.
    std::vector<T>& grad_buffer() {
        if (grad.size() != data.size()) {
            grad.assign(data.size(), T(0));
        }
        return grad;
    }
};

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

template <typename T>
struct Node {
    std::string op;
    std::vector<ImplPtr<T>> inputs;
    // Reads out.grad and accumulates into inputs that require grad.
    std::function<void(const TensorImpl<T>& out)> backward;
};

}  // namespace detail

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() : impl_(std::make_shared<detail::TensorImpl<T>>()) {}

    /// Zero-filled tensor of the given shape.
    explicit Tensor(Shape shape) : Tensor() {
        impl_->data.assign(swin3d::numel(shape), T(0));
        impl_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : Tensor() {
        if (swin3d::numel(shape) != values.size()) {
            throw DimensionError("tensor of shape " + to_string(shape) + " cannot hold " +
                                 std::to_string(values.size()) + " values");
        }
        impl_->shape = std::move(shape);
        impl_->data = std::move(values);
    }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
        return t;
    }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

    explicit Tensor(detail::ImplPtr<T> impl) : impl_(std::move(impl)) {}

    const Shape& shape() const { return impl_->shape; }
    std::size_t rank() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }
    std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }

    std::span<const T> data() const { return impl_->data; }
    /// Direct write access. Mutating a tensor that is an input of a live
    /// graph invalidates that graph's backward pass.
    std::span<T> mutable_data() { return impl_->data; }
    const std::vector<T>& values() const { return impl_->data; }

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        if (impl_->node) {
            throw ContractError("requires_grad can only be set on leaf tensors");
        }
        impl_->requires_grad = on;
        return *this;
    }
    bool is_leaf() const { return !impl_->node; }

    bool has_grad() const { return !impl_->grad.empty(); }
    std::span<const T> grad() const { return impl_->grad; }
    std::span<T> mutable_grad() { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    T item() const {
        if (numel() != 1) {
            throw ContractError("item() needs a one-element tensor, got shape " + to_string(shape()));
        }
        return impl_->data[0];
    }

    T at(std::initializer_list<std::size_t> index) const {
        if (index.size() != rank()) {
            throw DimensionError("index rank " + std::to_string(index.size()) + " for tensor of shape " +
                                 to_string(shape()));
        }
        std::size_t flat = 0;
        std::size_t axis = 0;
        for (std::size_t i : index) {
            if (i >= impl_->shape[axis]) {
                throw DimensionError("index out of range for shape " + to_string(shape()));
            }
            flat = flat * impl_->shape[axis] + i;
            ++axis;
        }
        return impl_->data[flat];
    }

    /// Copy of the values with no tape history.
    Tensor detach() const { return Tensor(impl_->shape, impl_->data); }

    /// True when both handles refer to the same storage.
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

    const detail::ImplPtr<T>& impl() const { return impl_; }

private:
    detail::ImplPtr<T> impl_;
};

namespace detail {

/// Wraps freshly computed values into a tensor and, when any input is being
/// tracked, attaches a tape node.
template <typename T, typename Backward>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::vector<ImplPtr<T>> inputs, const char* op,
                      Backward&& backward) {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    bool track = grad_enabled &&
                 std::any_of(inputs.begin(), inputs.end(), [](const ImplPtr<T>& p) { return p->requires_grad; });
    if (track) {
        impl->requires_grad = true;
        auto node = std::make_shared<Node<T>>();
        node->op = op;
        node->inputs = std::move(inputs);
        node->backward = std::forward<Backward>(backward);
        impl->node = std::move(node);
    }
    return Tensor<T>(std::move(impl));
}

}  // namespace detail

/// Topologically ordered view of the graph reachable from a root tensor.
template <typename T>
class Tape {
public:
    static Tape record(const Tensor<T>& root) {
        Tape tape;
        std::unordered_set<const detail::TensorImpl<T>*> seen;
        // Iterative post-order DFS: inputs are emitted before their consumers.
        std::vector<std::pair<detail::TensorImpl<T>*, std::size_t>> stack;
        stack.emplace_back(root.impl().get(), 0);
        seen.insert(root.impl().get());
        while (!stack.empty()) {
            auto& [impl, next] = stack.back();
            if (impl->node && next < impl->node->inputs.size()) {
                auto* child = impl->node->inputs[next++].get();
                if (child->requires_grad && seen.insert(child).second) {
                    stack.emplace_back(child, 0);
                }
                continue;
            }
            tape.order_.push_back(impl);
            stack.pop_back();
        }
        return tape;
    }

    std::span<detail::TensorImpl<T>* const> nodes() const { return order_; }
    std::size_t size() const { return order_.size(); }

private:
    std::vector<detail::TensorImpl<T>*> order_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward() on a tensor that was not produced on the tape");
    }
    auto tape = Tape<T>::record(loss);
    // Interior gradients are per-pass; only leaves accumulate across passes.
    for (auto* impl : tape.nodes()) {
        if (impl->node) {
            impl->grad.clear();
        }
    }
    loss.impl()->grad_buffer()[0] += T(1);
    auto order = tape.nodes();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto* impl = *it;
        if (impl->node && !impl->grad.empty()) {
            impl->node->backward(*impl);
        }
    }
    for (auto* impl : order) {
        if (impl->node && impl != loss.impl().get()) {
            impl->grad.clear();
            impl->grad.shrink_to_fit();
        }
    }
}

}  // namespace swin3d
