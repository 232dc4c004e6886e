#pragma once

// Images, flow fields, label masks and the resampling kernels shared by every
// other part of the toolkit.
//
// Flow convention: a flow estimated from (source, target) lives on the target
// grid. Target pixel x corresponds to source location x + flow(x), so
// warp(source, flow) reconstructs the target (backward warping).

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace mpn {

/// Physical pixel size in millimetres, (row, col).
struct Spacing {
    double row = 1.0;
    double col = 1.0;
    bool operator==(const Spacing&) const = default;
};

/// A displacement or a position, stored (dy, dx) in pixel units.
struct Vec2 {
    double dy = 0.0;
    double dx = 0.0;
    bool operator==(const Vec2&) const = default;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.dy + b.dy, a.dx + b.dx}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.dy - b.dy, a.dx - b.dx}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.dy, s * a.dx}; }

/// Single-channel intensity grid, nominal range [0, 1].
class Image {
  public:
    Image() = default;
    Image(int height, int width, Spacing spacing = {});
    Image(int height, int width, std::vector<double> pixels, Spacing spacing = {});

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return pixels_.size(); }
    Spacing spacing() const { return spacing_; }
    void set_spacing(Spacing s);

    double operator()(int y, int x) const { return pixels_[index(y, x)]; }
    double& operator()(int y, int x) { return pixels_[index(y, x)]; }

    std::span<const double> pixels() const { return pixels_; }
    std::span<double> pixels() { return pixels_; }

    bool same_shape(const Image& o) const { return height_ == o.height_ && width_ == o.width_; }
    bool operator==(const Image&) const = default;

  private:
    std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width_ + x; }

    int height_ = 0;
    int width_ = 0;
    std::vector<double> pixels_;
    Spacing spacing_;
};

/// Dense 2D displacement field, interleaved (dy, dx) per pixel, pixel units.
class FlowField {
  public:
    FlowField() = default;
    FlowField(int height, int width);
    FlowField(int height, int width, Vec2 fill);

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t num_pixels() const { return static_cast<std::size_t>(height_) * width_; }

    Vec2 operator()(int y, int x) const {
        const auto i = 2 * index(y, x);
        return {data_[i], data_[i + 1]};
    }
    void set(int y, int x, Vec2 v) {
        const auto i = 2 * index(y, x);
        data_[i] = v.dy;
        data_[i + 1] = v.dx;
    }

    /// Raw interleaved storage, length 2*H*W.
    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }

    bool same_shape(const FlowField& o) const { return height_ == o.height_ && width_ == o.width_; }
    template <class G>
    bool same_shape_as(const G& g) const {
        return height_ == g.height() && width_ == g.width();
    }

    bool operator==(const FlowField&) const = default;

  private:
    std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width_ + x; }

    int height_ = 0;
    int width_ = 0;
    std::vector<double> data_;
};

enum class Label : std::uint8_t { Background = 0, LV = 1, MYO = 2, RV = 3 };
inline constexpr std::array<Label, 3> kForegroundLabels{Label::LV, Label::MYO, Label::RV};

const char* label_name(Label l);

/// Integer segmentation grid with values in {0,1,2,3}.
class LabelMask {
  public:
    LabelMask() = default;
    LabelMask(int height, int width, Spacing spacing = {});
    LabelMask(int height, int width, std::vector<std::uint8_t> labels, Spacing spacing = {});

    int height() const { return height_; }
    int width() const { return width_; }
    Spacing spacing() const { return spacing_; }
    void set_spacing(Spacing s);

    Label operator()(int y, int x) const { return static_cast<Label>(labels_[index(y, x)]); }
    void set(int y, int x, Label l) { labels_[index(y, x)] = static_cast<std::uint8_t>(l); }

    std::span<const std::uint8_t> raw() const { return labels_; }
    std::size_t count(Label l) const;

    bool same_shape(const LabelMask& o) const { return height_ == o.height_ && width_ == o.width_; }
    bool operator==(const LabelMask&) const = default;

  private:
    std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width_ + x; }

    int height_ = 0;
    int width_ = 0;
    std::vector<std::uint8_t> labels_;
    Spacing spacing_;
};

/// Multi-resolution stack; level 0 is full resolution and level l has
/// ceil(H/2^l) x ceil(W/2^l) pixels.
template <class T>
struct Pyramid {
    std::vector<T> levels;

    std::size_t num_levels() const { return levels.size(); }
    const T& operator[](std::size_t l) const { return levels[l]; }
    T& operator[](std::size_t l) { return levels[l]; }
};

/// ceil(n / 2^level)
inline int level_extent(int n, int level) { return (n + (1 << level) - 1) >> level; }

// ---- sampling and warping -------------------------------------------------

/// Bilinear interpolation with clamp-to-edge for out-of-range coordinates.
double bilinear_sample(const Image& img, double y, double x);

/// Bilinear sample plus its partial derivatives w.r.t. y and x. Derivatives
/// are zero along an axis where the coordinate was clamped.
struct SampleWithGrad {
    double value;
    double d_dy;
    double d_dx;
};
SampleWithGrad bilinear_sample_grad(const Image& img, double y, double x);

/// Bilinear sample of a flow field (both components), clamp-to-edge.
Vec2 sample_flow(const FlowField& flow, double y, double x);

Image warp(const Image& source, const FlowField& flow);

/// Adjoint of warp: given dL/d(out), accumulate dL/d(flow) and dL/d(source).
/// Either output pointer may be null.
void warp_backward(const Image& source, const FlowField& flow, const Image& grad_out,
                   FlowField* grad_flow, Image* grad_source);

/// Nearest-neighbour label transfer at x + flow(x), clamp-to-edge.
LabelMask warp_mask(const LabelMask& mask, const FlowField& flow);

/// result(x) = outer(x) + inner(x + outer(x)); warp(I, result) matches
/// warp(warp(I, inner), outer) up to interpolation error.
FlowField compose_flows(const FlowField& inner, const FlowField& outer);

// ---- pyramids and resizing ------------------------------------------------

/// 2x2 average pooling with ceiling dimensions; partial windows average over
/// the valid pixels only.
Image downsample_2x(const Image& img);
Pyramid<Image> downsample_image(const Image& img, int levels);

/// Bilinear resize using the half-pixel convention
/// src = (dst + 0.5) * (src_n / dst_n) - 0.5, clamped to the source extent.
FlowField upsample_flow(const FlowField& flow, int target_h, int target_w, double magnitude_scale);

// ---- visualisation --------------------------------------------------------

/// Interleaved RGB bytes, row-major.
struct RgbImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> rgb;
};

/// Hue = direction (atan2(dy, dx) in [0, 360)), saturation = |v| / max_magnitude
/// capped at 1, value = 1.
RgbImage flow_to_hsv(const FlowField& flow, double max_magnitude);
/// Same, normalised by the field's own largest magnitude. A zero field is white.
RgbImage flow_to_hsv(const FlowField& flow);

/// HSV (h in degrees, s and v in [0,1]) to 8-bit RGB.
std::array<std::uint8_t, 3> hsv_to_rgb(double hue_deg, double sat, double val);

}  // namespace mpn
