#pragma once

// Parameterized building blocks shared by the SWAN modules.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>

#include "swan/batchnorm.hpp"
#include "swan/conv.hpp"

namespace swan {

enum class Slot { parameter, buffer };

template <typename T>
using Visitor = std::function<void(const std::string& name, Tensor<T>& tensor, Slot slot)>;

/// Derives an independent stream seed for `consumer` from a root seed (splitmix64).
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t consumer) {
    std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (consumer + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

/// Kaiming-normal weights (fan-in, relu gain) and uniform(+-1/sqrt(fan_in)) biases.
template <typename T>
void kaiming_init(Tensor<T>& weight, std::size_t fan_in, Rng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : weight.mutable_data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void bias_init(Tensor<T>& bias, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : bias.mutable_data()) v = static_cast<T>(dist(rng));
}

template <typename T>
struct Conv2d {
    Tensor<T> weight, bias;
    std::size_t stride = 1, pad = 0;

    Conv2d() = default;
    Conv2d(std::size_t cin, std::size_t cout, std::size_t k, Rng& rng)
        : weight(Tensor<T>::zeros({cout, cin, k, k})), bias(Tensor<T>::zeros({cout})), pad(k / 2) {
        kaiming_init(weight, cin * k * k, rng);
        bias_init(bias, cin * k * k, rng);
    }

    std::size_t in_channels() const { return weight.dim(1); }
    std::size_t out_channels() const { return weight.dim(0); }
    std::size_t kernel() const { return weight.dim(2); }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, std::optional<Tensor<T>>(bias), stride, pad); }

    /// Sets the kernel to a channel-preserving identity (requires cin == cout).
    void make_identity() {
        if (in_channels() != out_channels()) throw ShapeError("identity kernel needs cin == cout");
        const std::size_t k = kernel();
        auto w = weight.mutable_data();
        std::fill(w.begin(), w.end(), T(0));
        for (std::size_t c = 0; c < out_channels(); ++c) w[((c * in_channels() + c) * k + k / 2) * k + k / 2] = T(1);
        std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), T(0));
    }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        f(prefix + ".weight", weight, Slot::parameter);
        f(prefix + ".bias", bias, Slot::parameter);
    }
};

template <typename T>
struct BatchNorm2d {
    Tensor<T> gamma, beta;
    BatchNormState<T> state;

    BatchNorm2d() = default;
    explicit BatchNorm2d(std::size_t channels)
        : gamma(Tensor<T>::full({channels}, T(1))), beta(Tensor<T>::zeros({channels})), state(channels) {}

    Tensor<T> operator()(const Tensor<T>& x, bool training) { return batchnorm2d(x, gamma, beta, state, training); }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        f(prefix + ".gamma", gamma, Slot::parameter);
        f(prefix + ".beta", beta, Slot::parameter);
        f(prefix + ".running_mean", state.running_mean, Slot::buffer);
        f(prefix + ".running_var", state.running_var, Slot::buffer);
    }
};

/// conv -> BN -> relu
template <typename T>
struct ConvBnRelu {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;

    ConvBnRelu() = default;
    ConvBnRelu(std::size_t cin, std::size_t cout, std::size_t k, Rng& rng) : conv(cin, cout, k, rng), bn(cout) {}

    Tensor<T> operator()(const Tensor<T>& x, bool training) { return relu(bn(conv(x), training)); }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        conv.visit(f, prefix + ".conv");
        bn.visit(f, prefix + ".bn");
    }
};

template <typename T>
struct Linear {
    Tensor<T> weight, bias;

    Linear() = default;
    Linear(std::size_t din, std::size_t dout, Rng& rng)
        : weight(Tensor<T>::zeros({dout, din})), bias(Tensor<T>::zeros({dout})) {
        kaiming_init(weight, din, rng);
        bias_init(bias, din, rng);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, std::optional<Tensor<T>>(bias)); }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        f(prefix + ".weight", weight, Slot::parameter);
        f(prefix + ".bias", bias, Slot::parameter);
    }
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma, beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t features)
        : gamma(Tensor<T>::full({features}, T(1))), beta(Tensor<T>::zeros({features})) {}

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        f(prefix + ".gamma", gamma, Slot::parameter);
        f(prefix + ".beta", beta, Slot::parameter);
    }
};

template <typename T>
struct DepthwiseConv {
    Tensor<T> weight, bias;

    DepthwiseConv() = default;
    DepthwiseConv(std::size_t channels, std::size_t k, Rng& rng)
        : weight(Tensor<T>::zeros({channels, 1, k, k})), bias(Tensor<T>::zeros({channels})) {
        kaiming_init(weight, k * k, rng);
        bias_init(bias, k * k, rng);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return depthwise_conv2d(x, weight, std::optional<Tensor<T>>(bias)); }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        f(prefix + ".weight", weight, Slot::parameter);
        f(prefix + ".bias", bias, Slot::parameter);
    }
};

}  // namespace swan
