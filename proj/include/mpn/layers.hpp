#pragma once

// Closed set of differentiable kernels the motion networks are built from.
// Every forward kernel has a matching backward that consumes the upstream
// gradient and produces gradients for its inputs (and weights, where it has
// any). Tensors are dense (channels, height, width), row-major, double.

#include <span>
#include <vector>

#include "mpn/grid.hpp"

namespace mpn {

struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int channels, int height, int width)
        : c(channels), h(height), w(width), data(static_cast<std::size_t>(channels) * height * width, 0.0) {}

    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    double* channel(int k) { return data.data() + k * plane(); }
    const double* channel(int k) const { return data.data() + k * plane(); }
    double& at(int k, int y, int x) { return data[k * plane() + static_cast<std::size_t>(y) * w + x]; }
    double at(int k, int y, int x) const { return data[k * plane() + static_cast<std::size_t>(y) * w + x]; }
    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

Tensor image_to_tensor(const Image& img);
/// Two-channel (dy, dx) tensor <-> interleaved flow field.
Tensor flow_to_tensor(const FlowField& flow);
FlowField tensor_to_flow(const Tensor& t);

/// Weight view of a convolution: weights [out, in, k, k] and bias [out].
struct ConvWeights {
    std::span<const double> weight;
    std::span<const double> bias;
    int out_channels;
    int in_channels;
    int kernel;
};

struct ConvGrads {
    std::span<double> weight;
    std::span<double> bias;
};

/// Zero-padded (k/2) convolution with the given stride. Output extent is
/// ceil(n / stride).
Tensor conv2d(const Tensor& in, const ConvWeights& cw, int stride);

/// Accumulates weight/bias gradients into `grads` and returns dL/d(in)
/// (empty when `need_input_grad` is false).
Tensor conv2d_backward(const Tensor& in, const ConvWeights& cw, int stride, const Tensor& grad_out, ConvGrads grads,
                       bool need_input_grad = true);

void leaky_relu_inplace(Tensor& t, double slope);
/// `activated` is the forward output; its sign equals the pre-activation sign.
void leaky_relu_backward_inplace(const Tensor& activated, Tensor& grad, double slope);

/// Bilinear resize, half-pixel convention (see resample.hpp), optional scale.
Tensor resize_bilinear(const Tensor& in, int out_h, int out_w, double scale = 1.0);
Tensor resize_bilinear_backward(const Tensor& grad_out, int in_h, int in_w, double scale = 1.0);

Tensor concat_channels(std::span<const Tensor* const> parts);
/// Copy of channels [first, first + count).
Tensor slice_channels(const Tensor& t, int first, int count);
void add_inplace(Tensor& dst, const Tensor& src, double scale = 1.0);

}  // namespace mpn
