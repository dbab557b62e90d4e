#pragma once

// Residual dual-channel attention: fuses upsampled deep features with the
// attention-processed skip features of the same resolution.

#include "swan/layers.hpp"

namespace swan {

/// 1x1 projection -> global average pool -> flatten -> linear.
template <typename T>
struct DescriptorPath {
    Conv2d<T> halve;
    Linear<T> lin;

    DescriptorPath() = default;
    DescriptorPath(std::size_t cin, std::size_t cout, Rng& rng) : halve(cin, cout, 1, rng), lin(cout, cout, rng) {}

    /// The C -> C/2 path.
    static DescriptorPath halving(std::size_t channels, Rng& rng) {
        if (channels % 2) throw ShapeError("channel_descriptor: channel count must be even, got " + std::to_string(channels));
        return DescriptorPath(channels, channels / 2, rng);
    }

    std::size_t out_channels() const { return halve.out_channels(); }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        halve.visit(f, prefix + ".halve");
        lin.visit(f, prefix + ".lin");
    }
};

/// Descriptor from an already projected map: pool -> flatten -> linear. Returns [N, C'].
template <typename T>
Tensor<T> descriptor_from_projection(const Tensor<T>& projected, const Linear<T>& lin) {
    const auto pooled = global_avgpool(projected);
    return lin(reshape(pooled, Shape{projected.dim(0), projected.dim(1)}));
}

/// Channel descriptor [N, C'] of a feature map.
template <typename T>
Tensor<T> channel_descriptor(const Tensor<T>& f, const DescriptorPath<T>& path) {
    detail::require_rank(f.shape(), 4, "channel_descriptor");
    if (f.dim(1) != path.halve.in_channels()) throw ShapeError("channel_descriptor: channel mismatch");
    return descriptor_from_projection(path.halve(f), path.lin);
}

template <typename T>
struct RdcaParts {
    Tensor<T> deep_descriptor, skip_descriptor;
    Tensor<T> weights;  // sigmoid(deep + skip), [N, C']
    Tensor<T> calibrated;  // relu(weights * projected skip)
    Tensor<T> out;
};

/// Fusion module. With equal deep and skip widths C and out = C/2 this is
/// the textbook configuration; inside the decoder the skip width is the
/// output width and the deep width is twice that.
template <typename T>
struct Rdca {
    DescriptorPath<T> deep, skip;
    ConvBnRelu<T> fuse;

    Rdca() = default;
    Rdca(std::size_t deep_channels, std::size_t skip_channels, std::size_t out_channels, Rng& rng)
        : deep(deep_channels, out_channels, rng),
          skip(skip_channels, out_channels, rng),
          fuse(deep_channels + out_channels, out_channels, 3, rng) {}

    /// The C -> C/2 configuration.
    static Rdca halving(std::size_t channels, Rng& rng) {
        if (channels % 2) throw ShapeError("rdca: channel count must be even, got " + std::to_string(channels));
        return Rdca(channels, channels, channels / 2, rng);
    }

    RdcaParts<T> forward_parts(const Tensor<T>& up, const Tensor<T>& f_skip, bool training) {
        detail::require_rank(up.shape(), 4, "rdca deep input");
        detail::require_rank(f_skip.shape(), 4, "rdca skip input");
        if (up.dim(0) != f_skip.dim(0) || up.dim(2) != f_skip.dim(2) || up.dim(3) != f_skip.dim(3)) {
            throw ShapeError("rdca: deep " + to_string(up.shape()) + " and skip " + to_string(f_skip.shape()) +
                             " are not spatially aligned; upsample first");
        }
        if (up.dim(1) != deep.halve.in_channels() || f_skip.dim(1) != skip.halve.in_channels()) {
            throw ShapeError("rdca: channel mismatch");
        }
        const auto dd = channel_descriptor(up, deep);
        const auto projected_skip = skip.halve(f_skip);
        const auto ss = descriptor_from_projection(projected_skip, skip.lin);
        const auto weights = sigmoid(add(dd, ss));
        const auto calibrated = relu(scale_channels(projected_skip, weights));
        auto out = fuse(concat_channels<T>({up, calibrated}), training);
        return {dd, ss, weights, calibrated, out};
    }

    Tensor<T> operator()(const Tensor<T>& up, const Tensor<T>& f_skip, bool training) {
        return forward_parts(up, f_skip, training).out;
    }

    void visit(const Visitor<T>& f, const std::string& prefix) {
        deep.visit(f, prefix + ".deep");
        skip.visit(f, prefix + ".skip");
        fuse.visit(f, prefix + ".fuse");
    }
};

}  // namespace swan
