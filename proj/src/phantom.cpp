#include "mpn/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "mpn/io.hpp"
#include "mpn/rng.hpp"

namespace mpn {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double logistic(double t) { return 1.0 / (1.0 + std::exp(-t)); }

/// Vector rotation in the (dx, dy) plane by theta (radians).
Vec2 rotate(Vec2 v, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {s * v.dx + c * v.dy, c * v.dx - s * v.dy};
}

struct TextureComponent {
    double fy, fx, phase;
};

std::vector<TextureComponent> texture_components(std::uint64_t seed) {
    constexpr int kComponents = 24;
    Rng rng(seed, Stream::Texture);
    std::vector<TextureComponent> comps;
    comps.reserve(kComponents);
    for (int k = 0; k < kComponents; ++k) {
        const double freq = rng.uniform(1.0 / 12.0, 1.0 / 5.0);
        const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
        comps.push_back({freq * std::sin(dir), freq * std::cos(dir), rng.uniform(0.0, 2.0 * std::numbers::pi)});
    }
    return comps;
}

struct RvDisk {
    Vec2 center;
    double radius;
};

/// Disk centred on the epicardium, passing through both insertion points.
RvDisk rv_disk(const PhantomSpec& s) {
    const double mid = 0.5 * (s.keypoint_angle1_deg + s.keypoint_angle2_deg) * kDeg;
    const double half = 0.5 * std::abs(s.keypoint_angle2_deg - s.keypoint_angle1_deg) * kDeg;
    return {{s.center_y + s.epi_radius * std::sin(mid), s.center_x + s.epi_radius * std::cos(mid)},
            2.0 * s.epi_radius * std::sin(0.5 * half)};
}

double distance(Vec2 a, Vec2 b) { return std::hypot(a.dy - b.dy, a.dx - b.dx); }

/// Evaluates the continuous source intensity with precomputed texture.
class Renderer {
  public:
    explicit Renderer(const PhantomSpec& s) : spec_(s), texture_(texture_components(s.texture_seed)), rv_(rv_disk(s)) {
        texture_scale_ = s.texture_amplitude * std::sqrt(2.0 / static_cast<double>(texture_.size()));
    }

    double intensity(Vec2 p) const {
        const Vec2 c{spec_.center_y, spec_.center_x};
        const double r = distance(p, c);
        const double w = spec_.edge_width;
        const double in_endo = logistic((spec_.endo_radius - r) / w);
        const double in_epi = logistic((spec_.epi_radius - r) / w);
        const double in_rv = logistic((rv_.radius - distance(p, rv_.center)) / w) * (1.0 - in_epi);
        const double bg = 1.0 - in_epi - in_rv;
        double v = in_endo * spec_.lv_intensity + (in_epi - in_endo) * spec_.myo_intensity +
                   in_rv * spec_.rv_intensity + bg * spec_.background_intensity;
        double tex = 0.0;
        const double ty = p.dy - c.dy, tx = p.dx - c.dx;
        for (const auto& t : texture_) tex += std::cos(2.0 * std::numbers::pi * (t.fy * ty + t.fx * tx) + t.phase);
        v += texture_scale_ * tex;
        return std::clamp(v, 0.0, 1.0);
    }

    Label label(Vec2 p) const {
        const double r = distance(p, {spec_.center_y, spec_.center_x});
        if (r < spec_.endo_radius) return Label::LV;
        if (r < spec_.epi_radius) return Label::MYO;
        if (distance(p, rv_.center) < rv_.radius) return Label::RV;
        return Label::Background;
    }

  private:
    PhantomSpec spec_;
    std::vector<TextureComponent> texture_;
    RvDisk rv_;
    double texture_scale_ = 0.0;
};

void check_range(const Range& r, const char* name) {
    if (!(r.lo <= r.hi) || !std::isfinite(r.lo) || !std::isfinite(r.hi)) {
        throw std::invalid_argument(std::string("PhantomRanges: invalid range for ") + name);
    }
}

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }

Range parse_range(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 2) throw std::invalid_argument("range must be a [lo, hi] pair");
    return {j[0].get<double>(), j[1].get<double>()};
}

std::string pair_stem(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu", i);
    return buf;
}

}  // namespace

// ---- motion ------------------------------------------------------------------

Vec2 PhantomMotion::forward(Vec2 p) const {
    const Vec2 c{center_y, center_x};
    return c + (1.0 - contraction) * rotate(p - c, rotation_deg * kDeg);
}

Vec2 PhantomMotion::inverse(Vec2 x) const {
    const Vec2 c{center_y, center_x};
    return c + (1.0 / (1.0 - contraction)) * rotate(x - c, -rotation_deg * kDeg);
}

FlowField analytic_flow(const PhantomMotion& m, int height, int width) {
    FlowField f(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const Vec2 px{static_cast<double>(y), static_cast<double>(x)};
            f.set(y, x, m.inverse(px) - px);
        }
    }
    return f;
}

// ---- spec ----------------------------------------------------------------------

void PhantomSpec::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("PhantomSpec: " + what); };
    if (height <= 0 || width <= 0) fail("image size must be positive");
    if (!(endo_radius > 0.0)) fail("endo_radius must be > 0");
    if (!(endo_radius < epi_radius)) fail("endo_radius must be < epi_radius");
    if (!(epi_radius < std::min(height, width) / 2.0)) fail("epi_radius must be < min(height, width) / 2");
    for (double v : {lv_intensity, myo_intensity, rv_intensity, background_intensity}) {
        if (!(v >= 0.0 && v <= 1.0)) fail("intensities must lie in [0, 1]");
    }
    if (!(texture_amplitude >= 0.0 && texture_amplitude <= 1.0)) fail("texture_amplitude must lie in [0, 1]");
    if (!(edge_width > 0.0)) fail("edge_width must be > 0");
    if (!(contraction >= -0.3 && contraction <= 0.3)) fail("contraction must lie in [-0.3, 0.3]");
    if (!(rotation_deg >= -20.0 && rotation_deg <= 20.0)) fail("rotation_deg must lie in [-20, 20]");
    if (!(std::abs(keypoint_angle2_deg - keypoint_angle1_deg) > 0.0 &&
          std::abs(keypoint_angle2_deg - keypoint_angle1_deg) < 180.0)) {
        fail("keypoint angles must differ by less than 180 degrees");
    }
    if (!(spacing.row > 0.0 && spacing.col > 0.0)) fail("spacing must be positive");
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
    j = nlohmann::json{{"height", s.height},
                       {"width", s.width},
                       {"center_y", s.center_y},
                       {"center_x", s.center_x},
                       {"endo_radius", s.endo_radius},
                       {"epi_radius", s.epi_radius},
                       {"lv_intensity", s.lv_intensity},
                       {"myo_intensity", s.myo_intensity},
                       {"rv_intensity", s.rv_intensity},
                       {"background_intensity", s.background_intensity},
                       {"edge_width", s.edge_width},
                       {"texture_amplitude", s.texture_amplitude},
                       {"texture_seed", s.texture_seed},
                       {"contraction", s.contraction},
                       {"rotation_deg", s.rotation_deg},
                       {"keypoint_angle1_deg", s.keypoint_angle1_deg},
                       {"keypoint_angle2_deg", s.keypoint_angle2_deg},
                       {"spacing_mm", {s.spacing.row, s.spacing.col}}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
    for (const auto& [key, v] : j.items()) {
        if (key == "height") v.get_to(s.height);
        else if (key == "width") v.get_to(s.width);
        else if (key == "center_y") v.get_to(s.center_y);
        else if (key == "center_x") v.get_to(s.center_x);
        else if (key == "endo_radius") v.get_to(s.endo_radius);
        else if (key == "epi_radius") v.get_to(s.epi_radius);
        else if (key == "lv_intensity") v.get_to(s.lv_intensity);
        else if (key == "myo_intensity") v.get_to(s.myo_intensity);
        else if (key == "rv_intensity") v.get_to(s.rv_intensity);
        else if (key == "background_intensity") v.get_to(s.background_intensity);
        else if (key == "edge_width") v.get_to(s.edge_width);
        else if (key == "texture_amplitude") v.get_to(s.texture_amplitude);
        else if (key == "texture_seed") v.get_to(s.texture_seed);
        else if (key == "contraction") v.get_to(s.contraction);
        else if (key == "rotation_deg") v.get_to(s.rotation_deg);
        else if (key == "keypoint_angle1_deg") v.get_to(s.keypoint_angle1_deg);
        else if (key == "keypoint_angle2_deg") v.get_to(s.keypoint_angle2_deg);
        else if (key == "spacing_mm") s.spacing = {v.at(0).get<double>(), v.at(1).get<double>()};
        else throw std::invalid_argument("unknown phantom key: " + key);
    }
    s.validate();
}

// ---- rendering -------------------------------------------------------------------

double phantom_intensity(const PhantomSpec& spec, Vec2 p) { return Renderer(spec).intensity(p); }

Label phantom_label(const PhantomSpec& spec, Vec2 p) { return Renderer(spec).label(p); }

PhantomPair render_pair(const PhantomSpec& spec) {
    spec.validate();
    const Renderer r(spec);
    const PhantomMotion m = spec.motion();
    const int h = spec.height, w = spec.width;
    PhantomPair out{spec,
                    Image(h, w, spec.spacing),
                    Image(h, w, spec.spacing),
                    analytic_flow(m, h, w),
                    LabelMask(h, w, spec.spacing),
                    LabelMask(h, w, spec.spacing),
                    {},
                    {}};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Vec2 px{static_cast<double>(y), static_cast<double>(x)};
            const Vec2 src_pos = m.inverse(px);
            out.source(y, x) = r.intensity(px);
            out.target(y, x) = r.intensity(src_pos);
            out.source_mask.set(y, x, r.label(px));
            out.target_mask.set(y, x, r.label(src_pos));
        }
    }
    for (double a : {spec.keypoint_angle1_deg, spec.keypoint_angle2_deg}) {
        const Vec2 p{spec.center_y + spec.epi_radius * std::sin(a * kDeg), spec.center_x + spec.epi_radius * std::cos(a * kDeg)};
        out.source_keypoints.push_back(p);
        out.target_keypoints.push_back(m.forward(p));
    }
    return out;
}

// ---- datasets --------------------------------------------------------------------

void PhantomRanges::validate() const {
    if (size < 16) throw std::invalid_argument("PhantomRanges: size must be >= 16");
    check_range(center_offset, "center_offset");
    check_range(endo_radius, "endo_radius");
    check_range(wall_thickness, "wall_thickness");
    check_range(contraction, "contraction");
    check_range(rotation_deg, "rotation_deg");
    check_range(rv_center_angle_deg, "rv_center_angle_deg");
    check_range(rv_half_spread_deg, "rv_half_spread_deg");
    check_range(texture_amplitude, "texture_amplitude");
    if (!(endo_radius.lo > 0.0)) throw std::invalid_argument("PhantomRanges: endo_radius must be > 0");
    if (!(wall_thickness.lo > 0.0)) throw std::invalid_argument("PhantomRanges: epi radius must exceed endo radius (wall_thickness must be > 0)");
    const double offset = std::max(std::abs(center_offset.lo), std::abs(center_offset.hi));
    if (!(offset + endo_radius.hi + wall_thickness.hi < 0.5)) {
        throw std::invalid_argument("PhantomRanges: epicardium may leave the image (epi_radius >= size/2)");
    }
    if (contraction.lo < -0.3 || contraction.hi > 0.3) {
        throw std::invalid_argument("PhantomRanges: contraction must stay within [-0.3, 0.3]");
    }
    if (rotation_deg.lo < -20.0 || rotation_deg.hi > 20.0) {
        throw std::invalid_argument("PhantomRanges: rotation_deg must stay within [-20, 20]");
    }
    if (!(rv_half_spread_deg.lo > 0.0 && rv_half_spread_deg.hi < 90.0)) {
        throw std::invalid_argument("PhantomRanges: rv_half_spread_deg must lie in (0, 90)");
    }
}

void to_json(nlohmann::json& j, const PhantomRanges& r) {
    j = nlohmann::json{{"size", r.size},
                       {"center_offset", range_json(r.center_offset)},
                       {"endo_radius", range_json(r.endo_radius)},
                       {"wall_thickness", range_json(r.wall_thickness)},
                       {"contraction", range_json(r.contraction)},
                       {"rotation_deg", range_json(r.rotation_deg)},
                       {"rv_center_angle_deg", range_json(r.rv_center_angle_deg)},
                       {"rv_half_spread_deg", range_json(r.rv_half_spread_deg)},
                       {"texture_amplitude", range_json(r.texture_amplitude)},
                       {"spacing_mm", {r.spacing.row, r.spacing.col}}};
}

void from_json(const nlohmann::json& j, PhantomRanges& r) {
    for (const auto& [key, v] : j.items()) {
        if (key == "size") v.get_to(r.size);
        else if (key == "center_offset") r.center_offset = parse_range(v);
        else if (key == "endo_radius") r.endo_radius = parse_range(v);
        else if (key == "wall_thickness") r.wall_thickness = parse_range(v);
        else if (key == "contraction") r.contraction = parse_range(v);
        else if (key == "rotation_deg") r.rotation_deg = parse_range(v);
        else if (key == "rv_center_angle_deg") r.rv_center_angle_deg = parse_range(v);
        else if (key == "rv_half_spread_deg") r.rv_half_spread_deg = parse_range(v);
        else if (key == "texture_amplitude") r.texture_amplitude = parse_range(v);
        else if (key == "spacing_mm") r.spacing = {v.at(0).get<double>(), v.at(1).get<double>()};
        else throw std::invalid_argument("unknown phantom range key: " + key);
    }
    r.validate();
}

PhantomSpec draw_spec(const PhantomRanges& ranges, std::uint64_t seed, std::size_t index) {
    Rng rng(seed, Stream::Phantom, index);
    auto draw = [&rng](const Range& r) { return rng.uniform(r.lo, r.hi); };
    const double n = ranges.size;
    PhantomSpec s;
    s.height = ranges.size;
    s.width = ranges.size;
    s.center_y = 0.5 * (ranges.size - 1) + n * draw(ranges.center_offset);
    s.center_x = 0.5 * (ranges.size - 1) + n * draw(ranges.center_offset);
    s.endo_radius = n * draw(ranges.endo_radius);
    s.epi_radius = s.endo_radius + n * draw(ranges.wall_thickness);
    s.contraction = draw(ranges.contraction);
    s.rotation_deg = draw(ranges.rotation_deg);
    const double rv_mid = draw(ranges.rv_center_angle_deg);
    const double rv_half = draw(ranges.rv_half_spread_deg);
    s.keypoint_angle1_deg = rv_mid - rv_half;
    s.keypoint_angle2_deg = rv_mid + rv_half;
    s.texture_amplitude = draw(ranges.texture_amplitude);
    s.texture_seed = rng.next();
    s.spacing = ranges.spacing;
    return s;
}

std::vector<PhantomPair> sample_dataset(std::size_t n, const PhantomRanges& ranges, std::uint64_t seed) {
    ranges.validate();
    std::vector<PhantomPair> pairs;
    pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) pairs.push_back(render_pair(draw_spec(ranges, seed, i)));
    return pairs;
}

nlohmann::json generate_dataset(const std::filesystem::path& dir, std::size_t n, const PhantomRanges& ranges,
                                std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_dataset: need at least one pair");
    ranges.validate();
    const auto pairs_dir = dir / "pairs";
    std::filesystem::create_directories(pairs_dir);

    nlohmann::json manifest;
    manifest["seed"] = seed;
    manifest["ranges"] = ranges;
    manifest["spacing_mm"] = {ranges.spacing.row, ranges.spacing.col};
    manifest["pairs"] = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
        const PhantomPair p = render_pair(draw_spec(ranges, seed, i));
        const std::string stem = pair_stem(i);
        write_png16(pairs_dir / (stem + "_src.png"), p.source);
        write_png16(pairs_dir / (stem + "_tgt.png"), p.target);
        write_flo(pairs_dir / (stem + "_gt.flo"), p.gt_flow);
        write_mask_png(pairs_dir / (stem + "_src_mask.png"), p.source_mask);
        write_mask_png(pairs_dir / (stem + "_tgt_mask.png"), p.target_mask);

        nlohmann::json kp_src = nlohmann::json::array(), kp_tgt = nlohmann::json::array();
        for (const auto& k : p.source_keypoints) kp_src.push_back({k.dy, k.dx});
        for (const auto& k : p.target_keypoints) kp_tgt.push_back({k.dy, k.dx});
        manifest["pairs"].push_back({{"id", stem},
                                     {"source", "pairs/" + stem + "_src.png"},
                                     {"target", "pairs/" + stem + "_tgt.png"},
                                     {"gt_flow", "pairs/" + stem + "_gt.flo"},
                                     {"source_mask", "pairs/" + stem + "_src_mask.png"},
                                     {"target_mask", "pairs/" + stem + "_tgt_mask.png"},
                                     {"spec", p.spec},
                                     {"source_keypoints", kp_src},
                                     {"target_keypoints", kp_tgt}});
    }
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing manifest");
    return manifest;
}

std::vector<PhantomPair> load_dataset(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
    const nlohmann::json manifest = nlohmann::json::parse(in);
    Spacing spacing{1.0, 1.0};
    if (manifest.contains("spacing_mm")) {
        spacing = {manifest["spacing_mm"].at(0).get<double>(), manifest["spacing_mm"].at(1).get<double>()};
    }
    std::vector<PhantomPair> pairs;
    for (const auto& e : manifest.at("pairs")) {
        PhantomPair p;
        p.spec = e.at("spec").get<PhantomSpec>();
        p.source = read_image(dir / e.at("source").get<std::string>());
        p.target = read_image(dir / e.at("target").get<std::string>());
        p.source.set_spacing(spacing);
        p.target.set_spacing(spacing);
        p.gt_flow = read_flo(dir / e.at("gt_flow").get<std::string>());
        p.source_mask = read_mask_png(dir / e.at("source_mask").get<std::string>());
        p.target_mask = read_mask_png(dir / e.at("target_mask").get<std::string>());
        p.source_mask.set_spacing(spacing);
        p.target_mask.set_spacing(spacing);
        for (const auto& k : e.at("source_keypoints")) p.source_keypoints.push_back({k.at(0).get<double>(), k.at(1).get<double>()});
        for (const auto& k : e.at("target_keypoints")) p.target_keypoints.push_back({k.at(0).get<double>(), k.at(1).get<double>()});
        pairs.push_back(std::move(p));
    }
    return pairs;
}

}  // namespace mpn
