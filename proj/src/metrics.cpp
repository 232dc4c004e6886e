#include "mpn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mpn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vec2 to_mm(Vec2 v, Spacing s) { return {v.dy * s.row, v.dx * s.col}; }
double norm(Vec2 v) { return std::hypot(v.dy, v.dx); }

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) over one line.
// Sample i sits at coordinate i * step; infinite samples are ignored.
void edt_1d(const double* f, double* out, int n, double step, std::vector<int>& v, std::vector<double>& z) {
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    int k = -1;
    auto pos = [step](int i) { return i * step; };
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        while (true) {
            if (k < 0) {
                ++k;
                v[k] = q;
                z[k] = -kInf;
                z[k + 1] = kInf;
                break;
            }
            const double pq = pos(q), pv = pos(v[k]);
            const double s = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
            if (s <= z[k]) {
                --k;
                continue;
            }
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = kInf;
            break;
        }
    }
    if (k < 0) {
        std::fill(out, out + n, kInf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < pos(q)) ++j;
        const double d = (q - v[j]) * step;
        out[q] = d * d + f[v[j]];
    }
}

void check_same_grid(const Contour& a, const Contour& b) {
    if (a.empty() || b.empty()) throw std::invalid_argument("contour distance: empty contour");
    if (a.height != b.height || a.width != b.width || a.spacing.row != b.spacing.row ||
        a.spacing.col != b.spacing.col) {
        throw std::invalid_argument("contour distance: contours live on different grids");
    }
}

// Distances (mm) from each point of `from` to the nearest point of `to`.
std::vector<double> directed_distances(const Contour& from, const Contour& to) {
    std::vector<bool> set(static_cast<std::size_t>(to.height) * to.width, false);
    for (auto [y, x] : to.points) set[static_cast<std::size_t>(y) * to.width + x] = true;
    const std::vector<double> d2 = squared_edt(set, to.height, to.width, to.spacing);
    std::vector<double> out;
    out.reserve(from.points.size());
    for (auto [y, x] : from.points) out.push_back(std::sqrt(d2[static_cast<std::size_t>(y) * from.width + x]));
    return out;
}

void check_flow_region(const FlowField& est, const FlowField& gt, const LabelMask& region) {
    if (!est.same_shape(gt) || est.height() != region.height() || est.width() != region.width()) {
        throw std::invalid_argument("epe: dimension mismatch");
    }
}

}  // namespace

double dice(const LabelMask& a, const LabelMask& b, Label label) {
    if (a.height() != b.height() || a.width() != b.width()) throw std::invalid_argument("dice: dimension mismatch");
    const auto ra = a.raw(), rb = b.raw();
    const auto l = static_cast<std::uint8_t>(label);
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        na += ra[i] == l;
        nb += rb[i] == l;
        both += ra[i] == l && rb[i] == l;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Contour extract_contour(const LabelMask& mask, Label label) {
    Contour c;
    c.height = mask.height();
    c.width = mask.width();
    c.spacing = mask.spacing();
    const int h = mask.height(), w = mask.width();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (mask(y, x) != label) continue;
            const bool boundary = y == 0 || x == 0 || y == h - 1 || x == w - 1 || mask(y - 1, x) != label ||
                                  mask(y + 1, x) != label || mask(y, x - 1) != label || mask(y, x + 1) != label;
            if (boundary) c.points.emplace_back(y, x);
        }
    }
    return c;
}

std::vector<double> squared_edt(const std::vector<bool>& set, int height, int width, Spacing spacing) {
    if (set.size() != static_cast<std::size_t>(height) * width) throw std::invalid_argument("squared_edt: size mismatch");
    std::vector<double> grid(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) grid[i] = set[i] ? 0.0 : kInf;

    std::vector<int> v;
    std::vector<double> z;
    std::vector<double> line(std::max(height, width)), out(std::max(height, width));
    for (int x = 0; x < width; ++x) {
        for (int y = 0; y < height; ++y) line[y] = grid[static_cast<std::size_t>(y) * width + x];
        edt_1d(line.data(), out.data(), height, spacing.row, v, z);
        for (int y = 0; y < height; ++y) grid[static_cast<std::size_t>(y) * width + x] = out[y];
    }
    for (int y = 0; y < height; ++y) {
        double* row = grid.data() + static_cast<std::size_t>(y) * width;
        edt_1d(row, out.data(), width, spacing.col, v, z);
        std::copy(out.begin(), out.begin() + width, row);
    }
    return grid;
}

double hausdorff(const Contour& a, const Contour& b) {
    check_same_grid(a, b);
    const auto ab = directed_distances(a, b);
    const auto ba = directed_distances(b, a);
    return std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
}

double assd(const Contour& a, const Contour& b) {
    check_same_grid(a, b);
    double sum = 0.0;
    for (double d : directed_distances(a, b)) sum += d;
    for (double d : directed_distances(b, a)) sum += d;
    return sum / static_cast<double>(a.points.size() + b.points.size());
}

Stats summarize(std::span<const double> values) {
    Stats s;
    s.n = values.size();
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(s.n);
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(var / static_cast<double>(s.n));
    return s;
}

Stats epe(const FlowField& est, const FlowField& gt, const LabelMask& region, Label label) {
    check_flow_region(est, gt, region);
    std::vector<double> errs;
    for (int y = 0; y < est.height(); ++y) {
        for (int x = 0; x < est.width(); ++x) {
            if (region(y, x) == label) errs.push_back(norm(to_mm(est(y, x) - gt(y, x), region.spacing())));
        }
    }
    if (errs.empty()) throw std::invalid_argument("epe: empty region");
    return summarize(errs);
}

ErrorParts decompose_error(Vec2 e, Vec2 d) {
    const double along = e.dy * d.dy + e.dx * d.dx;
    const Vec2 radial = along * d;
    return {radial, e - radial};
}

EpeDecomposition epe_decompose(const FlowField& est, const FlowField& gt, const LabelMask& region, Label label) {
    check_flow_region(est, gt, region);
    const Spacing s = region.spacing();
    // Integer sums decide exact coincidence with the centroid.
    long long n = 0, sum_y = 0, sum_x = 0;
    for (int y = 0; y < region.height(); ++y) {
        for (int x = 0; x < region.width(); ++x) {
            if (region(y, x) != label) continue;
            ++n;
            sum_y += y;
            sum_x += x;
        }
    }
    if (n == 0) throw std::invalid_argument("epe_decompose: empty region");
    const Vec2 centroid = to_mm({static_cast<double>(sum_y) / n, static_cast<double>(sum_x) / n}, s);

    std::vector<double> rr, cc;
    for (int y = 0; y < region.height(); ++y) {
        for (int x = 0; x < region.width(); ++x) {
            if (region(y, x) != label) continue;
            if (y * n == sum_y && x * n == sum_x) continue;
            const Vec2 r = to_mm({static_cast<double>(y), static_cast<double>(x)}, s) - centroid;
            const ErrorParts parts = decompose_error(to_mm(gt(y, x) - est(y, x), s), (1.0 / norm(r)) * r);
            rr.push_back(norm(parts.radial));
            cc.push_back(norm(parts.circumferential));
        }
    }
    if (rr.empty()) throw std::invalid_argument("epe_decompose: region is a single pixel at its centroid");
    return {summarize(rr), summarize(cc)};
}

Stats kpte(std::span<const Vec2> predicted, std::span<const Vec2> truth, Spacing spacing) {
    if (predicted.size() != truth.size()) throw std::invalid_argument("kpte: point list lengths differ");
    if (predicted.empty()) throw std::invalid_argument("kpte: no points");
    std::vector<double> d;
    for (std::size_t i = 0; i < predicted.size(); ++i) d.push_back(norm(to_mm(predicted[i] - truth[i], spacing)));
    return summarize(d);
}

namespace {

void check_inside(const FlowField& flow, Vec2 p) {
    if (!(p.dy >= 0.0 && p.dx >= 0.0 && p.dy <= flow.height() - 1 && p.dx <= flow.width() - 1)) {
        throw std::out_of_range("keypoint outside the image");
    }
}

}  // namespace

std::vector<Vec2> map_to_source(const FlowField& flow, std::span<const Vec2> target_points) {
    std::vector<Vec2> out;
    for (Vec2 p : target_points) {
        check_inside(flow, p);
        out.push_back(p + sample_flow(flow, p.dy, p.dx));
    }
    return out;
}

std::vector<Vec2> track_keypoints(const FlowField& flow, std::span<const Vec2> source_points, int max_iter,
                                  double tol) {
    std::vector<Vec2> out;
    for (Vec2 p : source_points) {
        check_inside(flow, p);
        Vec2 q = p;
        bool converged = false;
        for (int it = 0; it < max_iter; ++it) {
            const Vec2 next = p - sample_flow(flow, q.dy, q.dx);
            const double step = norm(next - q);
            q = next;
            if (step < tol) {
                converged = true;
                break;
            }
        }
        if (!converged) throw InversionError("track_keypoints: flow inversion did not converge");
        out.push_back(q);
    }
    return out;
}

const LabelScores& MetricsReport::scores(Label l) const {
    switch (l) {
        case Label::LV: return lv;
        case Label::MYO: return myo;
        case Label::RV: return rv;
        default: throw std::invalid_argument("no scores for background");
    }
}

LabelScores& MetricsReport::scores(Label l) {
    return const_cast<LabelScores&>(static_cast<const MetricsReport&>(*this).scores(l));
}

namespace {

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json stats_json(const Stats& s) { return {{"mean", num(s.mean)}, {"std", num(s.std)}, {"n", s.n}}; }

}  // namespace

void to_json(nlohmann::json& j, const MetricsReport& r) {
    j = nlohmann::json::object();
    for (Label l : kForegroundLabels) {
        const LabelScores& s = r.scores(l);
        j["labels"][label_name(l)] = {{"dice", num(s.dice)}, {"hd_mm", num(s.hd_mm)}, {"assd_mm", num(s.assd_mm)}};
    }
    j["epe_mm"] = stats_json(r.epe_mm);
    j["eps_rr_mm"] = stats_json(r.eps_rr_mm);
    j["eps_cc_mm"] = stats_json(r.eps_cc_mm);
    j["kpte_mm"] = stats_json(r.kpte_mm);
    j["n_samples"] = r.n_samples;
    j["kpte_failures"] = r.kpte_failures;
}

MetricsReport evaluate_pair(const EvalInput& in) {
    if (!in.est || !in.gt || !in.source_mask || !in.target_mask) {
        throw std::invalid_argument("evaluate_pair: missing input");
    }
    MetricsReport r;
    r.n_samples = 1;
    const LabelMask warped = warp_mask(*in.source_mask, *in.est);
    for (Label l : kForegroundLabels) {
        LabelScores& s = r.scores(l);
        s.dice = dice(warped, *in.target_mask, l);
        const Contour a = extract_contour(warped, l), b = extract_contour(*in.target_mask, l);
        if (a.empty() || b.empty()) {
            // A label that vanished has no surface distance.
            s.hd_mm = s.assd_mm = std::numeric_limits<double>::quiet_NaN();
        } else {
            s.hd_mm = hausdorff(a, b);
            s.assd_mm = assd(a, b);
        }
    }
    r.epe_mm = epe(*in.est, *in.gt, *in.source_mask);
    const EpeDecomposition dec = epe_decompose(*in.est, *in.gt, *in.source_mask);
    r.eps_rr_mm = dec.radial;
    r.eps_cc_mm = dec.circumferential;
    if (!in.source_keypoints.empty()) {
        try {
            const auto tracked = track_keypoints(*in.est, in.source_keypoints);
            r.kpte_mm = kpte(tracked, in.target_keypoints, in.source_mask->spacing());
        } catch (const InversionError&) {
            r.kpte_failures = 1;
        }
    }
    return r;
}

MetricsReport aggregate(std::span<const MetricsReport> reports) {
    MetricsReport out;
    out.n_samples = reports.size();
    if (reports.empty()) return out;
    for (const auto& r : reports) out.kpte_failures += r.kpte_failures;
    auto collect = [&](auto getter) {
        std::vector<double> v;
        for (const auto& r : reports) {
            const double x = getter(r);
            if (std::isfinite(x)) v.push_back(x);
        }
        return v.empty() ? Stats{std::numeric_limits<double>::quiet_NaN(), 0.0, 0} : summarize(v);
    };
    for (Label l : kForegroundLabels) {
        LabelScores& s = out.scores(l);
        s.dice = collect([l](const MetricsReport& r) { return r.scores(l).dice; }).mean;
        s.hd_mm = collect([l](const MetricsReport& r) { return r.scores(l).hd_mm; }).mean;
        s.assd_mm = collect([l](const MetricsReport& r) { return r.scores(l).assd_mm; }).mean;
    }
    out.epe_mm = collect([](const MetricsReport& r) { return r.epe_mm.mean; });
    out.eps_rr_mm = collect([](const MetricsReport& r) { return r.eps_rr_mm.mean; });
    out.eps_cc_mm = collect([](const MetricsReport& r) { return r.eps_cc_mm.mean; });
    out.kpte_mm = collect([](const MetricsReport& r) { return r.kpte_mm.n ? r.kpte_mm.mean : std::nan(""); });
    return out;
}

}  // namespace mpn
