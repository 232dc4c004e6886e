#include "mpn/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mpn/resample.hpp"

namespace mpn {

namespace {

void require_dims(int h, int w, const char* what) {
    if (h <= 0 || w <= 0) {
        throw std::invalid_argument(std::string(what) + ": dimensions must be positive");
    }
}

void require_spacing(Spacing s) {
    if (!(s.row > 0.0) || !(s.col > 0.0) || !std::isfinite(s.row) || !std::isfinite(s.col)) {
        throw std::invalid_argument("spacing_mm components must be positive and finite");
    }
}

struct Corner {
    int y0, y1, x0, x1;
    double fy, fx;
    bool clamped_y, clamped_x;
};

Corner locate(int h, int w, double y, double x) {
    Corner c{};
    c.clamped_y = y < 0.0 || y > h - 1 || h == 1;
    c.clamped_x = x < 0.0 || x > w - 1 || w == 1;
    const double yc = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const double xc = std::clamp(x, 0.0, static_cast<double>(w - 1));
    // The last row/column is addressed as the far corner of the previous cell
    // so the derivative there is the one-sided difference, not zero.
    c.y0 = std::min(static_cast<int>(std::floor(yc)), std::max(h - 2, 0));
    c.x0 = std::min(static_cast<int>(std::floor(xc)), std::max(w - 2, 0));
    c.y1 = std::min(c.y0 + 1, h - 1);
    c.x1 = std::min(c.x0 + 1, w - 1);
    c.fy = yc - c.y0;
    c.fx = xc - c.x0;
    return c;
}

// std::lerp is exact at both endpoints and for equal inputs, which keeps
// constant fields and lattice-point samples bit-exact.
Vec2 lerp2(Vec2 v00, Vec2 v01, Vec2 v10, Vec2 v11, double fy, double fx) {
    return {std::lerp(std::lerp(v00.dy, v01.dy, fx), std::lerp(v10.dy, v11.dy, fx), fy),
            std::lerp(std::lerp(v00.dx, v01.dx, fx), std::lerp(v10.dx, v11.dx, fx), fy)};
}

}  // namespace

namespace detail {

LinearAxis make_linear_axis(int src_n, int dst_n) {
    LinearAxis a;
    a.lo.resize(dst_n);
    a.hi.resize(dst_n);
    a.w_hi.resize(dst_n);
    const double ratio = static_cast<double>(src_n) / dst_n;
    for (int d = 0; d < dst_n; ++d) {
        double s = (d + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(src_n - 1));
        const int lo = static_cast<int>(std::floor(s));
        a.lo[d] = lo;
        a.hi[d] = std::min(lo + 1, src_n - 1);
        a.w_hi[d] = s - lo;
    }
    return a;
}

}  // namespace detail

// ---- types ----------------------------------------------------------------

Image::Image(int height, int width, Spacing spacing)
    : height_(height), width_(width), pixels_(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0), 0.0),
      spacing_(spacing) {
    require_dims(height, width, "Image");
    require_spacing(spacing);
}

Image::Image(int height, int width, std::vector<double> pixels, Spacing spacing)
    : height_(height), width_(width), pixels_(std::move(pixels)), spacing_(spacing) {
    require_dims(height, width, "Image");
    require_spacing(spacing);
    if (pixels_.size() != static_cast<std::size_t>(height) * width) {
        throw std::invalid_argument("Image: pixel count does not match height*width");
    }
    for (double v : pixels_) {
        if (!std::isfinite(v)) throw std::invalid_argument("Image: non-finite pixel value");
    }
}

void Image::set_spacing(Spacing s) {
    require_spacing(s);
    spacing_ = s;
}

FlowField::FlowField(int height, int width) : FlowField(height, width, Vec2{}) {}

FlowField::FlowField(int height, int width, Vec2 fill) : height_(height), width_(width) {
    require_dims(height, width, "FlowField");
    data_.resize(2 * num_pixels());
    for (std::size_t i = 0; i < num_pixels(); ++i) {
        data_[2 * i] = fill.dy;
        data_[2 * i + 1] = fill.dx;
    }
}

const char* label_name(Label l) {
    switch (l) {
        case Label::Background: return "BG";
        case Label::LV: return "LV";
        case Label::MYO: return "MYO";
        case Label::RV: return "RV";
    }
    return "?";
}

LabelMask::LabelMask(int height, int width, Spacing spacing)
    : height_(height), width_(width),
      labels_(static_cast<std::size_t>(std::max(height, 0)) * std::max(width, 0), 0), spacing_(spacing) {
    require_dims(height, width, "LabelMask");
    require_spacing(spacing);
}

LabelMask::LabelMask(int height, int width, std::vector<std::uint8_t> labels, Spacing spacing)
    : height_(height), width_(width), labels_(std::move(labels)), spacing_(spacing) {
    require_dims(height, width, "LabelMask");
    require_spacing(spacing);
    if (labels_.size() != static_cast<std::size_t>(height) * width) {
        throw std::invalid_argument("LabelMask: label count does not match height*width");
    }
    for (auto v : labels_) {
        if (v > 3) throw std::invalid_argument("LabelMask: label outside {0,1,2,3}: " + std::to_string(v));
    }
}

void LabelMask::set_spacing(Spacing s) {
    require_spacing(s);
    spacing_ = s;
}

std::size_t LabelMask::count(Label l) const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), static_cast<std::uint8_t>(l)));
}

// ---- sampling ---------------------------------------------------------------

double bilinear_sample(const Image& img, double y, double x) {
    const Corner c = locate(img.height(), img.width(), y, x);
    const double top = std::lerp(img(c.y0, c.x0), img(c.y0, c.x1), c.fx);
    const double bot = std::lerp(img(c.y1, c.x0), img(c.y1, c.x1), c.fx);
    return std::lerp(top, bot, c.fy);
}

SampleWithGrad bilinear_sample_grad(const Image& img, double y, double x) {
    const Corner c = locate(img.height(), img.width(), y, x);
    const double v00 = img(c.y0, c.x0), v01 = img(c.y0, c.x1);
    const double v10 = img(c.y1, c.x0), v11 = img(c.y1, c.x1);
    const double top = std::lerp(v00, v01, c.fx);
    const double bot = std::lerp(v10, v11, c.fx);
    SampleWithGrad s{};
    s.value = std::lerp(top, bot, c.fy);
    s.d_dy = c.clamped_y ? 0.0 : bot - top;
    s.d_dx = c.clamped_x ? 0.0 : (1.0 - c.fy) * (v01 - v00) + c.fy * (v11 - v10);
    return s;
}

Vec2 sample_flow(const FlowField& flow, double y, double x) {
    const Corner c = locate(flow.height(), flow.width(), y, x);
    const Vec2 v00 = flow(c.y0, c.x0), v01 = flow(c.y0, c.x1);
    const Vec2 v10 = flow(c.y1, c.x0), v11 = flow(c.y1, c.x1);
    return lerp2(v00, v01, v10, v11, c.fy, c.fx);
}

Image warp(const Image& source, const FlowField& flow) {
    if (!flow.same_shape_as(source)) throw std::invalid_argument("warp: image and flow dimensions differ");
    Image out(source.height(), source.width(), source.spacing());
    for (int y = 0; y < source.height(); ++y) {
        for (int x = 0; x < source.width(); ++x) {
            const Vec2 d = flow(y, x);
            out(y, x) = bilinear_sample(source, y + d.dy, x + d.dx);
        }
    }
    return out;
}

void warp_backward(const Image& source, const FlowField& flow, const Image& grad_out,
                   FlowField* grad_flow, Image* grad_source) {
    if (!flow.same_shape_as(source) || !grad_out.same_shape(source)) {
        throw std::invalid_argument("warp_backward: dimension mismatch");
    }
    const int h = source.height(), w = source.width();
    if (grad_flow) *grad_flow = FlowField(h, w);
    if (grad_source) *grad_source = Image(h, w, source.spacing());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double g = grad_out(y, x);
            if (g == 0.0) continue;
            const Vec2 d = flow(y, x);
            const double sy = y + d.dy, sx = x + d.dx;
            if (grad_flow) {
                const SampleWithGrad s = bilinear_sample_grad(source, sy, sx);
                grad_flow->set(y, x, {g * s.d_dy, g * s.d_dx});
            }
            if (grad_source) {
                const Corner c = locate(h, w, sy, sx);
                (*grad_source)(c.y0, c.x0) += g * (1.0 - c.fy) * (1.0 - c.fx);
                (*grad_source)(c.y0, c.x1) += g * (1.0 - c.fy) * c.fx;
                (*grad_source)(c.y1, c.x0) += g * c.fy * (1.0 - c.fx);
                (*grad_source)(c.y1, c.x1) += g * c.fy * c.fx;
            }
        }
    }
}

LabelMask warp_mask(const LabelMask& mask, const FlowField& flow) {
    if (!flow.same_shape_as(mask)) throw std::invalid_argument("warp_mask: mask and flow dimensions differ");
    const int h = mask.height(), w = mask.width();
    LabelMask out(h, w, mask.spacing());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Vec2 d = flow(y, x);
            const int sy = std::clamp(static_cast<int>(std::lround(y + d.dy)), 0, h - 1);
            const int sx = std::clamp(static_cast<int>(std::lround(x + d.dx)), 0, w - 1);
            out.set(y, x, mask(sy, sx));
        }
    }
    return out;
}

FlowField compose_flows(const FlowField& inner, const FlowField& outer) {
    if (!inner.same_shape(outer)) throw std::invalid_argument("compose_flows: dimension mismatch");
    FlowField out(outer.height(), outer.width());
    for (int y = 0; y < outer.height(); ++y) {
        for (int x = 0; x < outer.width(); ++x) {
            const Vec2 o = outer(y, x);
            out.set(y, x, o + sample_flow(inner, y + o.dy, x + o.dx));
        }
    }
    return out;
}

// ---- pyramids ---------------------------------------------------------------

Image downsample_2x(const Image& img) {
    const int h = level_extent(img.height(), 1), w = level_extent(img.width(), 1);
    Image out(h, w, Spacing{img.spacing().row * 2.0, img.spacing().col * 2.0});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sum = 0.0;
            int n = 0;
            for (int yy = 2 * y; yy < std::min(2 * y + 2, img.height()); ++yy) {
                for (int xx = 2 * x; xx < std::min(2 * x + 2, img.width()); ++xx) {
                    sum += img(yy, xx);
                    ++n;
                }
            }
            out(y, x) = sum / n;
        }
    }
    return out;
}

Pyramid<Image> downsample_image(const Image& img, int levels) {
    if (levels < 1) throw std::invalid_argument("downsample_image: need at least one level");
    if (std::min(img.height(), img.width()) < 4 * (1 << (levels - 1))) {
        throw std::invalid_argument("downsample_image: image too small for " + std::to_string(levels) + " levels");
    }
    Pyramid<Image> pyr;
    pyr.levels.reserve(levels);
    pyr.levels.push_back(img);
    for (int l = 1; l < levels; ++l) pyr.levels.push_back(downsample_2x(pyr.levels.back()));
    return pyr;
}

FlowField upsample_flow(const FlowField& flow, int target_h, int target_w, double magnitude_scale) {
    if (target_h < flow.height() || target_w < flow.width()) {
        throw std::invalid_argument("upsample_flow: target smaller than source");
    }
    const auto ay = detail::make_linear_axis(flow.height(), target_h);
    const auto ax = detail::make_linear_axis(flow.width(), target_w);
    FlowField out(target_h, target_w);
    for (int y = 0; y < target_h; ++y) {
        const double wy = ay.w_hi[y];
        for (int x = 0; x < target_w; ++x) {
            const double wx = ax.w_hi[x];
            const Vec2 v00 = flow(ay.lo[y], ax.lo[x]), v01 = flow(ay.lo[y], ax.hi[x]);
            const Vec2 v10 = flow(ay.hi[y], ax.lo[x]), v11 = flow(ay.hi[y], ax.hi[x]);
            out.set(y, x, magnitude_scale * lerp2(v00, v01, v10, v11, wy, wx));
        }
    }
    return out;
}

// ---- visualisation ----------------------------------------------------------

std::array<std::uint8_t, 3> hsv_to_rgb(double hue_deg, double sat, double val) {
    const double c = val * sat;
    const double hp = std::fmod(hue_deg, 360.0) / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(hp)) {
        case 0: r = c, g = x; break;
        case 1: r = x, g = c; break;
        case 2: g = c, b = x; break;
        case 3: g = x, b = c; break;
        case 4: r = x, b = c; break;
        default: r = c, b = x; break;
    }
    const double m = val - c;
    auto to_byte = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    return {to_byte(r + m), to_byte(g + m), to_byte(b + m)};
}

RgbImage flow_to_hsv(const FlowField& flow, double max_magnitude) {
    if (!(max_magnitude > 0.0)) throw std::invalid_argument("flow_to_hsv: max_magnitude must be positive");
    RgbImage out{flow.height(), flow.width(), {}};
    out.rgb.reserve(3 * flow.num_pixels());
    for (int y = 0; y < flow.height(); ++y) {
        for (int x = 0; x < flow.width(); ++x) {
            const Vec2 v = flow(y, x);
            double hue = std::atan2(v.dy, v.dx) * 180.0 / std::numbers::pi;
            if (hue < 0.0) hue += 360.0;
            if (hue >= 360.0) hue -= 360.0;
            const double sat = std::min(std::hypot(v.dy, v.dx) / max_magnitude, 1.0);
            const auto px = hsv_to_rgb(hue, sat, 1.0);
            out.rgb.insert(out.rgb.end(), px.begin(), px.end());
        }
    }
    return out;
}

RgbImage flow_to_hsv(const FlowField& flow) {
    double m = 0.0;
    for (int y = 0; y < flow.height(); ++y) {
        for (int x = 0; x < flow.width(); ++x) m = std::max(m, std::hypot(flow(y, x).dy, flow(y, x).dx));
    }
    return flow_to_hsv(flow, m > 0.0 ? m : 1.0);
}

}  // namespace mpn
