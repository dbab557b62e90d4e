#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace swan {

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class ValueError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until something flows into it
    bool requires_grad = false;
};

/// Ordered record of differentiable operations executed on this thread.
///
/// Each entry is the backward rule of one operation; rules capture their
/// inputs and output by shared ownership, so recording order is a valid
/// topological order. One tape per thread and scalar type.
template <typename T>
class Tape {
   public:
    using Rule = std::function<void()>;

    static Tape& current() {
        thread_local Tape tape;
        return tape;
    }

    void record(Rule rule) { rules_.push_back(std::move(rule)); }
    std::size_t size() const { return rules_.size(); }
    bool empty() const { return rules_.empty(); }
    void clear() { rules_.clear(); }

    void run_backward() {
        for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
        rules_.clear();
    }

   private:
    std::vector<Rule> rules_;
};

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Disables tape recording for the lifetime of the guard.
class NoGradGuard {
   public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Dense row-major N-D array with an optional gradient slot.
///
/// Copies share storage (handle semantics); use `clone()` for a deep copy.
/// Image tensors use N x C x H x W layout.
template <typename T>
class Tensor {
   public:
    using value_type = T;

    Tensor() : node_(std::make_shared<TensorNode<T>>()) {}

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<TensorNode<T>>()) {
        validate_shape(shape);
        node_->data.assign(swan::numel(shape), fill);
        node_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<TensorNode<T>>()) {
        validate_shape(shape);
        if (swan::numel(shape) != data.size()) {
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + swan::to_string(shape));
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
    static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    std::span<T> mutable_data() { return node_->data; }
    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + swan::to_string(shape()));
        return node_->data[0];
    }
    T operator[](std::size_t i) const { return node_->data[i]; }

    T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        const auto& s = node_->shape;
        return node_->data[((n * s[1] + c) * s[2] + h) * s[3] + w];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on = true) {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T(0));
        return node_->grad;
    }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), T(0)); }
    void drop_grad() { node_->grad.clear(); }

    Tensor clone() const {
        Tensor out(node_->shape, node_->data);
        return out;
    }

    /// Copy of the values without tape history or grad.
    Tensor detach() const { return clone(); }

    const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

   private:
    static void validate_shape(const Shape& shape) {
        for (auto e : shape) {
            if (e == 0) throw ShapeError("zero extent in shape " + swan::to_string(shape));
        }
    }

    std::shared_ptr<TensorNode<T>> node_;
};

template <typename T>
Tensor<T> cast_from(const Tensor<double>& src) {
    std::vector<T> data(src.data().begin(), src.data().end());
    return Tensor<T>(src.shape(), std::move(data));
}

namespace detail {

template <typename T>
std::vector<T>& ensure_grad(TensorNode<T>& node) {
    if (node.grad.empty()) node.grad.assign(node.data.size(), T(0));
    return node.grad;
}

template <typename T, typename... Ts>
bool tracks(const Tensor<T>& first, const Ts&... rest) {
    if (!grad_enabled()) return false;
    return first.requires_grad() || (rest.requires_grad() || ...);
}

template <typename T>
bool tracks_any(const std::vector<Tensor<T>>& xs) {
    if (!grad_enabled()) return false;
    return std::any_of(xs.begin(), xs.end(), [](const auto& x) { return x.requires_grad(); });
}

/// Marks `out` as a non-leaf and records `rule` on the tape.
template <typename T, typename Rule>
void record(Tensor<T>& out, Rule&& rule) {
    out.set_requires_grad(true);
    Tape<T>::current().record(std::forward<Rule>(rule));
}

inline void require_rank(const Shape& s, std::size_t rank, const char* what) {
    if (s.size() != rank) {
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         to_string(s));
    }
}

}  // namespace detail

/// Reverse pass from a scalar loss. Gradients accumulate into every tensor
/// that requires grad; the tape is cleared afterwards.
template <typename T>
void backprop(const Tensor<T>& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backprop needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    auto& tape = Tape<T>::current();
    if (!loss.requires_grad() || tape.empty()) {
        throw ValueError("backprop: loss is not connected to any recorded operation");
    }
    auto& g = detail::ensure_grad(*loss.node());
    g[0] += T(1);
    tape.run_backward();
}

}  // namespace swan
