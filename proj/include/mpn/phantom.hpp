#pragma once

// Synthetic short-axis cardiac phantom with analytic ground truth.
//
// The source frame is a textured LV cavity / myocardium annulus with an RV
// crescent attached at two insertion points. The motion is a rotation about
// the LV centre composed with a radial scaling by (1 - contraction):
//
//   m(p) = c + (1 - contraction) R(theta) (p - c)        source -> target
//
// The target frame is rendered by evaluating the continuous source intensity
// at m^-1(x), so images and ground-truth flow are built independently of the
// warping code. gt_flow(x) = m^-1(x) - x on the target grid.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpn/grid.hpp"

namespace mpn {

/// Rotation plus radial scaling about a fixed centre.
struct PhantomMotion {
    double center_y = 32.0;
    double center_x = 32.0;
    double contraction = 0.0;  // fraction of radius; target radius = (1 - c) * source radius
    double rotation_deg = 0.0;

    Vec2 forward(Vec2 p) const;  // source -> target position
    Vec2 inverse(Vec2 x) const;  // target -> source position
};

/// Target-anchored ground-truth flow of a motion on an h x w grid.
FlowField analytic_flow(const PhantomMotion& m, int height, int width);

struct PhantomSpec {
    int height = 64;
    int width = 64;
    double center_y = 32.0;
    double center_x = 32.0;
    double endo_radius = 10.0;
    double epi_radius = 16.0;
    double lv_intensity = 0.85;
    double myo_intensity = 0.35;
    double rv_intensity = 0.7;
    double background_intensity = 0.15;
    double edge_width = 0.6;  // px, logistic edge softness
    double texture_amplitude = 0.06;
    std::uint64_t texture_seed = 0;
    double contraction = 0.1;
    double rotation_deg = 5.0;
    /// Angles (degrees, atan2(dy, dx) convention) of the two RV insertion
    /// points on the epicardial contour.
    double keypoint_angle1_deg = 130.0;
    double keypoint_angle2_deg = 220.0;
    Spacing spacing;

    void validate() const;
    PhantomMotion motion() const { return {center_y, center_x, contraction, rotation_deg}; }
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

struct PhantomPair {
    PhantomSpec spec;
    Image source;
    Image target;
    FlowField gt_flow;
    LabelMask source_mask;
    LabelMask target_mask;
    std::vector<Vec2> source_keypoints;
    std::vector<Vec2> target_keypoints;
};

/// Continuous source-frame intensity, clamped to [0, 1].
double phantom_intensity(const PhantomSpec& spec, Vec2 p);
/// Source-frame label at a continuous position.
Label phantom_label(const PhantomSpec& spec, Vec2 p);

PhantomPair render_pair(const PhantomSpec& spec);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Sampling ranges for dataset generation. Geometric quantities are
/// fractions of min(height, width).
struct PhantomRanges {
    int size = 64;
    Range center_offset{-0.05, 0.05};
    Range endo_radius{0.125, 0.17};
    Range wall_thickness{0.08, 0.11};
    Range contraction{-0.15, 0.15};
    Range rotation_deg{-10.0, 10.0};
    Range rv_center_angle_deg{160.0, 200.0};
    Range rv_half_spread_deg{35.0, 45.0};
    Range texture_amplitude{0.05, 0.08};
    Spacing spacing;

    void validate() const;
};

void to_json(nlohmann::json& j, const PhantomRanges& r);
void from_json(const nlohmann::json& j, PhantomRanges& r);

/// Deterministic draw of the i-th pair's spec for a given seed.
PhantomSpec draw_spec(const PhantomRanges& ranges, std::uint64_t seed, std::size_t index);

/// n pairs drawn from the ranges, deterministic per seed.
std::vector<PhantomPair> sample_dataset(std::size_t n, const PhantomRanges& ranges, std::uint64_t seed);

/// Writes pairs/NNNN_{src,tgt}.png, pairs/NNNN_gt.flo, pairs/NNNN_{src,tgt}_mask.png
/// and manifest.json under `dir`. Returns the manifest.
nlohmann::json generate_dataset(const std::filesystem::path& dir, std::size_t n, const PhantomRanges& ranges,
                                std::uint64_t seed);

/// Reads a dataset written by generate_dataset.
std::vector<PhantomPair> load_dataset(const std::filesystem::path& dir);

}  // namespace mpn
