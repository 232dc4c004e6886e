#include "mpn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <stdexcept>

#include "mpn/resample.hpp"

namespace mpn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using StridedMat = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMat = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

int out_extent(int n, int stride) { return (n + stride - 1) / stride; }

bool is_pointwise(const ConvWeights& cw, int stride) { return cw.kernel == 1 && stride == 1; }

// Output rows are processed in chunks whose column block stays cache-resident.
constexpr std::size_t kChunkValues = 16384;

int rows_per_chunk(int kdim, int ow) {
    return std::max(1, static_cast<int>(kChunkValues / (static_cast<std::size_t>(kdim) * ow)));
}

// Columns for output rows [oy0, oy1): layout (ci, ky, kx) x ((oy - oy0) * ow + ox).
void im2col(const Tensor& in, int k, int stride, int oy0, int oy1, int ow, std::vector<double>& cols) {
    const int pad = k / 2;
    const std::size_t npix = static_cast<std::size_t>(oy1 - oy0) * ow;
    cols.assign(static_cast<std::size_t>(in.c) * k * k * npix, 0.0);
    for (int ci = 0; ci < in.c; ++ci) {
        const double* src = in.channel(ci);
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * npix;
                for (int oy = oy0; oy < oy1; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= in.h) continue;
                    double* dst = row + static_cast<std::size_t>(oy - oy0) * ow;
                    const double* srow = src + static_cast<std::size_t>(iy) * in.w;
                    if (stride == 1) {
                        const int x_lo = std::max(0, pad - kx);
                        const int x_hi = std::min(ow, in.w + pad - kx);
                        for (int ox = x_lo; ox < x_hi; ++ox) dst[ox] = srow[ox + kx - pad];
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < in.w) dst[ox] = srow[ix];
                        }
                    }
                }
            }
        }
    }
}

void col2im(const std::vector<double>& cols, int k, int stride, int oy0, int oy1, int ow, Tensor& out) {
    const int pad = k / 2;
    const std::size_t npix = static_cast<std::size_t>(oy1 - oy0) * ow;
    for (int ci = 0; ci < out.c; ++ci) {
        double* dst = out.channel(ci);
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * npix;
                for (int oy = oy0; oy < oy1; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= out.h) continue;
                    const double* src = row + static_cast<std::size_t>(oy - oy0) * ow;
                    double* drow = dst + static_cast<std::size_t>(iy) * out.w;
                    if (stride == 1) {
                        const int x_lo = std::max(0, pad - kx);
                        const int x_hi = std::min(ow, out.w + pad - kx);
                        for (int ox = x_lo; ox < x_hi; ++ox) drow[ox + kx - pad] += src[ox];
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < out.w) drow[ix] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

void check_conv(const Tensor& in, const ConvWeights& cw) {
    if (in.c != cw.in_channels) throw std::invalid_argument("conv2d: input channel count mismatch");
    if (cw.weight.size() != static_cast<std::size_t>(cw.out_channels) * cw.in_channels * cw.kernel * cw.kernel ||
        cw.bias.size() != static_cast<std::size_t>(cw.out_channels)) {
        throw std::invalid_argument("conv2d: weight shape mismatch");
    }
}

}  // namespace

Tensor image_to_tensor(const Image& img) {
    Tensor t(1, img.height(), img.width());
    std::copy(img.pixels().begin(), img.pixels().end(), t.data.begin());
    return t;
}

Tensor flow_to_tensor(const FlowField& flow) {
    Tensor t(2, flow.height(), flow.width());
    const auto d = flow.data();
    for (std::size_t i = 0; i < flow.num_pixels(); ++i) {
        t.data[i] = d[2 * i];
        t.data[t.plane() + i] = d[2 * i + 1];
    }
    return t;
}

FlowField tensor_to_flow(const Tensor& t) {
    if (t.c != 2) throw std::invalid_argument("tensor_to_flow: expected 2 channels");
    FlowField f(t.h, t.w);
    auto d = f.data();
    for (std::size_t i = 0; i < t.plane(); ++i) {
        d[2 * i] = t.data[i];
        d[2 * i + 1] = t.data[t.plane() + i];
    }
    return f;
}

Tensor conv2d(const Tensor& in, const ConvWeights& cw, int stride) {
    check_conv(in, cw);
    const int oh = out_extent(in.h, stride), ow = out_extent(in.w, stride);
    const int kdim = cw.in_channels * cw.kernel * cw.kernel;
    const Eigen::Index npix = static_cast<Eigen::Index>(oh) * ow;
    Tensor out(cw.out_channels, oh, ow);
    ConstMapMat wmat(cw.weight.data(), cw.out_channels, kdim);

    if (is_pointwise(cw, stride)) {
        MapMat(out.data.data(), cw.out_channels, npix).noalias() = wmat * ConstMapMat(in.data.data(), kdim, npix);
    } else {
        std::vector<double> cols;
        const int step = rows_per_chunk(kdim, ow);
        for (int oy0 = 0; oy0 < oh; oy0 += step) {
            const int oy1 = std::min(oh, oy0 + step);
            const Eigen::Index n = static_cast<Eigen::Index>(oy1 - oy0) * ow;
            im2col(in, cw.kernel, stride, oy0, oy1, ow, cols);
            StridedMat o(out.data.data() + static_cast<std::size_t>(oy0) * ow, cw.out_channels, n,
                         Eigen::OuterStride<>(npix));
            o.noalias() = wmat * ConstMapMat(cols.data(), kdim, n);
        }
    }
    MapMat omat(out.data.data(), cw.out_channels, npix);
    for (int co = 0; co < cw.out_channels; ++co) omat.row(co).array() += cw.bias[co];
    return out;
}

Tensor conv2d_backward(const Tensor& in, const ConvWeights& cw, int stride, const Tensor& grad_out, ConvGrads grads,
                       bool need_input_grad) {
    check_conv(in, cw);
    const int oh = out_extent(in.h, stride), ow = out_extent(in.w, stride);
    if (grad_out.c != cw.out_channels || grad_out.h != oh || grad_out.w != ow) {
        throw std::invalid_argument("conv2d_backward: gradient shape mismatch");
    }
    const int kdim = cw.in_channels * cw.kernel * cw.kernel;
    const Eigen::Index npix = static_cast<Eigen::Index>(oh) * ow;
    ConstMapMat gmat(grad_out.data.data(), cw.out_channels, npix);
    ConstMapMat wmat(cw.weight.data(), cw.out_channels, kdim);
    MapMat gw(grads.weight.data(), cw.out_channels, kdim);
    // Plain loop: Eigen's vectorised reduction order depends on pointer
    // alignment, which would make training depend on heap layout.
    for (int co = 0; co < cw.out_channels; ++co) {
        const double* row = grad_out.data.data() + co * npix;
        double s = 0.0;
        for (Eigen::Index i = 0; i < npix; ++i) s += row[i];
        grads.bias[co] += s;
    }

    Tensor grad_in;
    if (need_input_grad) grad_in = Tensor(in.c, in.h, in.w);
    if (is_pointwise(cw, stride)) {
        ConstMapMat cmat(in.data.data(), kdim, npix);
        gw.noalias() += gmat * cmat.transpose();
        if (need_input_grad) MapMat(grad_in.data.data(), kdim, npix).noalias() = wmat.transpose() * gmat;
        return grad_in;
    }

    // Columns are rebuilt per chunk rather than kept from the forward pass.
    std::vector<double> cols, gcols;
    const int step = rows_per_chunk(kdim, ow);
    for (int oy0 = 0; oy0 < oh; oy0 += step) {
        const int oy1 = std::min(oh, oy0 + step);
        const Eigen::Index n = static_cast<Eigen::Index>(oy1 - oy0) * ow;
        im2col(in, cw.kernel, stride, oy0, oy1, ow, cols);
        ConstStridedMat g(grad_out.data.data() + static_cast<std::size_t>(oy0) * ow, cw.out_channels, n,
                          Eigen::OuterStride<>(npix));
        gw.noalias() += g * ConstMapMat(cols.data(), kdim, n).transpose();
        if (need_input_grad) {
            gcols.resize(static_cast<std::size_t>(kdim) * n);
            MapMat(gcols.data(), kdim, n).noalias() = wmat.transpose() * g;
            col2im(gcols, cw.kernel, stride, oy0, oy1, ow, grad_in);
        }
    }
    return grad_in;
}

void leaky_relu_inplace(Tensor& t, double slope) {
    for (double& v : t.data) v = v > 0.0 ? v : slope * v;
}

void leaky_relu_backward_inplace(const Tensor& activated, Tensor& grad, double slope) {
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        if (!(activated.data[i] > 0.0)) grad.data[i] *= slope;
    }
}

Tensor resize_bilinear(const Tensor& in, int out_h, int out_w, double scale) {
    const auto ay = detail::make_linear_axis(in.h, out_h);
    const auto ax = detail::make_linear_axis(in.w, out_w);
    Tensor out(in.c, out_h, out_w);
    for (int k = 0; k < in.c; ++k) {
        const double* src = in.channel(k);
        double* dst = out.channel(k);
        for (int y = 0; y < out_h; ++y) {
            const double wy = ay.w_hi[y];
            const double* r0 = src + static_cast<std::size_t>(ay.lo[y]) * in.w;
            const double* r1 = src + static_cast<std::size_t>(ay.hi[y]) * in.w;
            for (int x = 0; x < out_w; ++x) {
                const double wx = ax.w_hi[x];
                const double top = (1 - wx) * r0[ax.lo[x]] + wx * r0[ax.hi[x]];
                const double bot = (1 - wx) * r1[ax.lo[x]] + wx * r1[ax.hi[x]];
                dst[static_cast<std::size_t>(y) * out_w + x] = scale * ((1 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

Tensor resize_bilinear_backward(const Tensor& grad_out, int in_h, int in_w, double scale) {
    const auto ay = detail::make_linear_axis(in_h, grad_out.h);
    const auto ax = detail::make_linear_axis(in_w, grad_out.w);
    Tensor grad_in(grad_out.c, in_h, in_w);
    for (int k = 0; k < grad_out.c; ++k) {
        const double* g = grad_out.channel(k);
        double* dst = grad_in.channel(k);
        for (int y = 0; y < grad_out.h; ++y) {
            const double wy = ay.w_hi[y];
            double* r0 = dst + static_cast<std::size_t>(ay.lo[y]) * in_w;
            double* r1 = dst + static_cast<std::size_t>(ay.hi[y]) * in_w;
            for (int x = 0; x < grad_out.w; ++x) {
                const double wx = ax.w_hi[x];
                const double v = scale * g[static_cast<std::size_t>(y) * grad_out.w + x];
                r0[ax.lo[x]] += v * (1 - wy) * (1 - wx);
                r0[ax.hi[x]] += v * (1 - wy) * wx;
                r1[ax.lo[x]] += v * wy * (1 - wx);
                r1[ax.hi[x]] += v * wy * wx;
            }
        }
    }
    return grad_in;
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    int total = 0;
    for (const Tensor* p : parts) {
        if (p->h != parts[0]->h || p->w != parts[0]->w) {
            throw std::invalid_argument("concat_channels: spatial size mismatch");
        }
        total += p->c;
    }
    Tensor out(total, parts[0]->h, parts[0]->w);
    auto it = out.data.begin();
    for (const Tensor* p : parts) it = std::copy(p->data.begin(), p->data.end(), it);
    return out;
}

Tensor slice_channels(const Tensor& t, int first, int count) {
    if (first < 0 || count < 0 || first + count > t.c) throw std::invalid_argument("slice_channels: out of range");
    Tensor out(count, t.h, t.w);
    std::copy(t.channel(first), t.channel(first) + count * t.plane(), out.data.begin());
    return out;
}

void add_inplace(Tensor& dst, const Tensor& src, double scale) {
    if (!dst.same_shape(src)) throw std::invalid_argument("add_inplace: shape mismatch");
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += scale * src.data[i];
}

}  // namespace mpn
