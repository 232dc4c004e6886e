#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <set>

#include "mpn/distill.hpp"
#include "mpn/losses.hpp"

namespace mpn::testing {

namespace {

constexpr double kPi = std::numbers::pi;

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

PropertyResult make_result(std::string name, double worst, double limit, int cases, bool pass) {
    PropertyResult r;
    r.name = std::move(name);
    r.worst = worst;
    r.limit = limit;
    r.cases = cases;
    r.pass = pass;
    return r;
}

// Largest |a - b| over two flows' raw components.
double max_flow_diff(const FlowField& a, const FlowField& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
    return worst;
}

double max_image_diff(const Image& a, const Image& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.pixels()[i] - b.pixels()[i]));
    return worst;
}

// Flow whose components keep x + flow(x) inside the image: each component is
// tapered by the distance to the border along its own axis.
FlowField inward_smooth_flow(int h, int w, double amplitude, Rng& rng) {
    FlowField f = random_smooth_flow(h, w, amplitude, rng);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Vec2 v = f(y, x);
            const double ty = std::min(1.0, std::min(y, h - 1 - y) / amplitude);
            const double tx = std::min(1.0, std::min(x, w - 1 - x) / amplitude);
            f.set(y, x, {v.dy * ty, v.dx * tx});
        }
    }
    return f;
}

// Flow pointing every pixel at a coordinate whose fractional parts lie in
// [0.15, 0.85] and that stays inside the image, so bilinear sampling is smooth
// in a neighbourhood of the sample.
FlowField off_lattice_flow(int h, int w, double amplitude, Rng& rng) {
    FlowField f(h, w);
    auto pick = [&](int i, int n) {
        const double lo = std::max(0.0, i - amplitude), hi = std::min(n - 1.0, i + amplitude);
        const int cell = static_cast<int>(std::floor(rng.uniform(lo, hi - 1e-9)));
        const int c = std::min(cell, n - 2);
        return c + rng.uniform(0.15, 0.85) - i;
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) f.set(y, x, {pick(y, h), pick(x, w)});
    return f;
}

// Max over samples of rel err between an analytic gradient vector and central
// differences of f over the same entries.
double gradcheck_entries(std::span<double> xs, std::span<const double> analytic, const std::function<double()>& f,
                         double h, double floor) {
    double worst = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double n = central_difference(f, xs[i], h);
        worst = std::max(worst, relative_error(analytic[i], n, floor));
    }
    return worst;
}

}  // namespace

// ---- generators -------------------------------------------------------------------

Image random_smooth_image(int h, int w, Rng& rng) {
    Image img(h, w);
    const int blobs = 3 + static_cast<int>(rng.below(4));
    struct Blob {
        double cy, cx, sigma, amp;
    };
    std::vector<Blob> bs;
    for (int i = 0; i < blobs; ++i) {
        bs.push_back({rng.uniform(0, h - 1), rng.uniform(0, w - 1), rng.uniform(0.12, 0.3) * std::min(h, w),
                      rng.uniform(-0.4, 0.4)});
    }
    const double base = rng.uniform(0.35, 0.65);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = base;
            for (const auto& b : bs) {
                const double r2 = (y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx);
                v += b.amp * std::exp(-r2 / (2 * b.sigma * b.sigma));
            }
            img(y, x) = clampd(v, 0.0, 1.0);
        }
    }
    return img;
}

Image random_noise_image(int h, int w, Rng& rng) {
    Image img(h, w);
    for (double& p : img.pixels()) p = rng.uniform();
    return img;
}

FlowField random_smooth_flow(int h, int w, double amplitude, Rng& rng) {
    FlowField f(h, w);
    for (int c = 0; c < 2; ++c) {
        const int terms = 3;
        double ky[terms], kx[terms], ph[terms], a[terms];
        double total = 0.0;
        for (int t = 0; t < terms; ++t) {
            ky[t] = rng.uniform(0.0, 2.0) * kPi / h;
            kx[t] = rng.uniform(0.0, 2.0) * kPi / w;
            ph[t] = rng.uniform(0.0, 2 * kPi);
            a[t] = rng.uniform(0.2, 1.0);
            total += a[t];
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double v = 0.0;
                for (int t = 0; t < terms; ++t) v += a[t] * std::cos(ky[t] * y + kx[t] * x + ph[t]);
                v *= amplitude / total;
                Vec2 cur = f(y, x);
                (c == 0 ? cur.dy : cur.dx) = v;
                f.set(y, x, cur);
            }
        }
    }
    return f;
}

FlowField random_noise_flow(int h, int w, double amplitude, Rng& rng) {
    FlowField f(h, w);
    for (double& v : f.data()) v = rng.uniform(-amplitude, amplitude);
    return f;
}

LabelMask random_mask(int h, int w, Rng& rng, Spacing spacing) {
    LabelMask m(h, w, spacing);
    const int shapes = 2 + static_cast<int>(rng.below(5));
    for (int s = 0; s < shapes; ++s) {
        const auto label = static_cast<Label>(1 + rng.below(3));
        const double cy = rng.uniform(-2, h + 1), cx = rng.uniform(-2, w + 1);
        const double ry = rng.uniform(1.0, h / 3.0), rx = rng.uniform(1.0, w / 3.0);
        const bool disk = rng.below(2) == 0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double u = (y - cy) / ry, v = (x - cx) / rx;
                const bool inside = disk ? u * u + v * v <= 1.0 : std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
                if (inside) m.set(y, x, label);
            }
        }
    }
    // A few isolated pixels exercise one-pixel contours.
    for (int i = 0; i < 3; ++i) {
        m.set(static_cast<int>(rng.below(h)), static_cast<int>(rng.below(w)), static_cast<Label>(rng.below(4)));
    }
    return m;
}

// ---- oracles ----------------------------------------------------------------------

double oracle_bilinear(const Image& img, double y, double x) {
    const int h = img.height(), w = img.width();
    y = clampd(y, 0.0, h - 1.0);
    x = clampd(x, 0.0, w - 1.0);
    const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double a = y - y0, b = x - x0;
    return (1 - a) * (1 - b) * img(y0, x0) + (1 - a) * b * img(y0, x1) + a * (1 - b) * img(y1, x0) +
           a * b * img(y1, x1);
}

double oracle_dice(const LabelMask& a, const LabelMask& b, Label label) {
    long inter = 0, na = 0, nb = 0;
    for (int y = 0; y < a.height(); ++y) {
        for (int x = 0; x < a.width(); ++x) {
            const bool ia = a(y, x) == label, ib = b(y, x) == label;
            na += ia;
            nb += ib;
            inter += ia && ib;
        }
    }
    if (na == 0 && nb == 0) return 1.0;
    return 2.0 * inter / static_cast<double>(na + nb);
}

std::vector<std::pair<int, int>> oracle_contour(const LabelMask& m, Label label) {
    std::vector<std::pair<int, int>> out;
    const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (m(y, x) != label) continue;
            bool edge = false;
            for (int k = 0; k < 4; ++k) {
                const int ny = y + dy[k], nx = x + dx[k];
                if (ny < 0 || nx < 0 || ny >= m.height() || nx >= m.width() || m(ny, nx) != label) edge = true;
            }
            if (edge) out.emplace_back(y, x);
        }
    }
    return out;
}

namespace {

double point_distance(std::pair<int, int> p, std::pair<int, int> q, Spacing s) {
    const double ry = (p.first - q.first) * s.row, rx = (p.second - q.second) * s.col;
    return std::sqrt(ry * ry + rx * rx);
}

std::vector<double> nearest_distances(const std::vector<std::pair<int, int>>& from,
                                      const std::vector<std::pair<int, int>>& to, Spacing s) {
    std::vector<double> out;
    for (auto p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (auto q : to) best = std::min(best, point_distance(p, q, s));
        out.push_back(best);
    }
    return out;
}

}  // namespace

double oracle_hausdorff(const std::vector<std::pair<int, int>>& a, const std::vector<std::pair<int, int>>& b,
                        Spacing s) {
    double worst = 0.0;
    for (double d : nearest_distances(a, b, s)) worst = std::max(worst, d);
    for (double d : nearest_distances(b, a, s)) worst = std::max(worst, d);
    return worst;
}

double oracle_assd(const std::vector<std::pair<int, int>>& a, const std::vector<std::pair<int, int>>& b, Spacing s) {
    double sum = 0.0;
    for (double d : nearest_distances(a, b, s)) sum += d;
    for (double d : nearest_distances(b, a, s)) sum += d;
    return sum / static_cast<double>(a.size() + b.size());
}

double oracle_epe_mean(const FlowField& est, const FlowField& gt, const LabelMask& region, Label label) {
    const Spacing s = region.spacing();
    double sum = 0.0;
    long n = 0;
    for (int y = 0; y < region.height(); ++y) {
        for (int x = 0; x < region.width(); ++x) {
            if (region(y, x) != label) continue;
            const double ey = (est(y, x).dy - gt(y, x).dy) * s.row, ex = (est(y, x).dx - gt(y, x).dx) * s.col;
            sum += std::sqrt(ey * ey + ex * ex);
            ++n;
        }
    }
    return sum / static_cast<double>(n);
}

OracleDecomposition oracle_decompose(const FlowField& est, const FlowField& gt, const LabelMask& region, Label label) {
    const Spacing s = region.spacing();
    double cy = 0.0, cx = 0.0;
    long n = 0;
    for (int y = 0; y < region.height(); ++y) {
        for (int x = 0; x < region.width(); ++x) {
            if (region(y, x) != label) continue;
            cy += y * s.row;
            cx += x * s.col;
            ++n;
        }
    }
    cy /= n;
    cx /= n;
    OracleDecomposition out;
    double rr = 0.0, cc = 0.0;
    long used = 0;
    for (int y = 0; y < region.height(); ++y) {
        for (int x = 0; x < region.width(); ++x) {
            if (region(y, x) != label) continue;
            const double ry = y * s.row - cy, rx = x * s.col - cx;
            if (std::hypot(ry, rx) < 1e-9) continue;
            const double theta = std::atan2(ry, rx);
            const double ey = (gt(y, x).dy - est(y, x).dy) * s.row, ex = (gt(y, x).dx - est(y, x).dx) * s.col;
            // Coordinates of e in the frame (radial, tangential).
            const double along = ey * std::sin(theta) + ex * std::cos(theta);
            const double across = ey * std::cos(theta) - ex * std::sin(theta);
            rr += std::abs(along);
            cc += std::abs(across);
            ++used;
        }
    }
    out.rr_mean = rr / used;
    out.cc_mean = cc / used;
    return out;
}

double oracle_kpte_mean(const std::vector<Vec2>& a, const std::vector<Vec2>& b, Spacing s) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double ey = (a[i].dy - b[i].dy) * s.row, ex = (a[i].dx - b[i].dx) * s.col;
        sum += std::sqrt(ey * ey + ex * ex);
    }
    return sum / static_cast<double>(a.size());
}

// ---- finite differences -------------------------------------------------------------

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

double central_difference(const std::function<double()>& f, double& xi, double h) {
    const double saved = xi;
    xi = saved + h;
    const double fp = f();
    xi = saved - h;
    const double fm = f();
    xi = saved;
    return (fp - fm) / (2 * h);
}

// ---- property suites ----------------------------------------------------------------

bool all_pass(const std::vector<PropertyResult>& rs) {
    return std::all_of(rs.begin(), rs.end(), [](const PropertyResult& r) { return r.pass; });
}

std::string describe(const PropertyResult& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s %s: worst %.3g (limit %.3g) over %d cases", r.pass ? "ok  " : "FAIL",
                  r.name.c_str(), r.worst, r.limit, r.cases);
    return buf;
}

std::vector<PropertyResult> geometric_properties(int instances, std::uint64_t seed) {
    Rng rng(seed, Stream::Test);
    double identity_worst = 0.0, clamp_worst = 0.0, compose_id_worst = 0.0, compose_const_worst = 0.0;
    double linear_worst = 0.0, convex_worst = 0.0;
    double dw_exact_worst = 0.0;  // |composed - double| minus the oracle's pointwise interpolation error
    double dw_ratio_worst = 0.0;  // |composed - double| / supersampled bound
    constexpr double kSafety = 1.25;

    for (int n = 0; n < instances; ++n) {
        const int h = 8 + static_cast<int>(rng.below(25)), w = 8 + static_cast<int>(rng.below(25));
        const Image img = rng.below(2) ? random_smooth_image(h, w, rng) : random_noise_image(h, w, rng);

        // warp identity
        const Image same = warp(img, FlowField(h, w));
        identity_worst = std::max(identity_worst, max_image_diff(same, img));

        // clamp rule: out-of-range coordinates equal the clamped ones
        for (int k = 0; k < 20; ++k) {
            const double y = rng.uniform(-10, h + 10), x = rng.uniform(-10, w + 10);
            const double got = bilinear_sample(img, y, x);
            const double want = oracle_bilinear(img, y, x);
            const double clamped = bilinear_sample(img, clampd(y, 0, h - 1), clampd(x, 0, w - 1));
            clamp_worst = std::max({clamp_worst, std::abs(got - want), std::abs(got - clamped)});
        }
        clamp_worst = std::max(clamp_worst, std::abs(bilinear_sample(img, -5.0, -5.0) - img(0, 0)));

        // compose identity and constants
        const FlowField phi = random_noise_flow(h, w, 3.0, rng);
        const FlowField zero(h, w);
        compose_id_worst = std::max(compose_id_worst, max_flow_diff(compose_flows(zero, phi), phi));
        compose_id_worst = std::max(compose_id_worst, max_flow_diff(compose_flows(phi, zero), phi));
        const Vec2 u{rng.uniform(-4, 4), rng.uniform(-4, 4)}, v{rng.uniform(-4, 4), rng.uniform(-4, 4)};
        const FlowField cu = compose_flows(FlowField(h, w, u), FlowField(h, w, v));
        compose_const_worst = std::max(compose_const_worst, max_flow_diff(cu, FlowField(h, w, v + u)));

        // linearity and convexity of warp
        const Image other = random_noise_image(h, w, rng);
        const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
        Image mix(h, w);
        for (std::size_t i = 0; i < mix.size(); ++i) mix.pixels()[i] = a * img.pixels()[i] + b * other.pixels()[i];
        const Image wm = warp(mix, phi), wi = warp(img, phi), wo = warp(other, phi);
        const auto [lo, hi] = std::minmax_element(img.pixels().begin(), img.pixels().end());
        for (std::size_t i = 0; i < mix.size(); ++i) {
            linear_worst = std::max(linear_worst, std::abs(wm.pixels()[i] - (a * wi.pixels()[i] + b * wo.pixels()[i])));
            convex_worst = std::max({convex_worst, *lo - wi.pixels()[i], wi.pixels()[i] - *hi});
        }

        // double-warp equivalence on smooth data
        const Image smooth = random_smooth_image(h, w, rng);
        const double amp = rng.uniform(0.5, 3.0);
        const FlowField inner = inward_smooth_flow(h, w, amp, rng);
        const FlowField outer = inward_smooth_flow(h, w, amp, rng);
        const Image composed = warp(smooth, compose_flows(inner, outer));
        const Image twice = warp(warp(smooth, inner), outer);
        // g(z) = I(z + inner(z)) on the continuum; the double warp sees g on the
        // lattice only, so the two results differ by g's interpolation error.
        auto inner_at = [&](double y, double x) {
            y = clampd(y, 0, h - 1);
            x = clampd(x, 0, w - 1);
            const int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
            const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            const double fy = y - y0, fx = x - x0;
            Vec2 r{};
            const Vec2 c[4] = {inner(y0, x0), inner(y0, x1), inner(y1, x0), inner(y1, x1)};
            const double wts[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
            for (int k = 0; k < 4; ++k) r = r + wts[k] * c[k];
            return r;
        };
        auto g = [&](double y, double x) {
            const Vec2 d = inner_at(y, x);
            return oracle_bilinear(smooth, y + d.dy, x + d.dx);
        };
        double bound = 0.0;
        constexpr int kSuper = 8;
        for (int cy = 0; cy + 1 < h; ++cy) {
            for (int cx = 0; cx + 1 < w; ++cx) {
                const double g00 = g(cy, cx), g01 = g(cy, cx + 1), g10 = g(cy + 1, cx), g11 = g(cy + 1, cx + 1);
                for (int sy = 0; sy <= kSuper; ++sy) {
                    for (int sx = 0; sx <= kSuper; ++sx) {
                        const double fy = static_cast<double>(sy) / kSuper, fx = static_cast<double>(sx) / kSuper;
                        const double interp = (1 - fy) * (1 - fx) * g00 + (1 - fy) * fx * g01 + fy * (1 - fx) * g10 +
                                              fy * fx * g11;
                        bound = std::max(bound, std::abs(g(cy + fy, cx + fx) - interp));
                    }
                }
            }
        }
        double worst_here = 0.0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double diff = std::abs(composed(y, x) - twice(y, x));
                worst_here = std::max(worst_here, diff);
                // Pointwise the difference is exactly g's interpolation error at x + outer(x).
                const double py = y + outer(y, x).dy, px = x + outer(y, x).dx;
                const int y0 = std::min(static_cast<int>(std::floor(py)), h - 2);
                const int x0 = std::min(static_cast<int>(std::floor(px)), w - 2);
                const double fy = py - y0, fx = px - x0;
                const double interp = (1 - fy) * (1 - fx) * g(y0, x0) + (1 - fy) * fx * g(y0, x0 + 1) +
                                      fy * (1 - fx) * g(y0 + 1, x0) + fy * fx * g(y0 + 1, x0 + 1);
                const double pointwise = std::abs(g(py, px) - interp);
                dw_exact_worst = std::max(dw_exact_worst, std::abs(diff - pointwise));
            }
        }
        dw_ratio_worst = std::max(dw_ratio_worst, worst_here / (kSafety * bound + 1e-12));
    }

    std::vector<PropertyResult> out;
    out.push_back(make_result("warp(I, 0) == I", identity_worst, 0.0, instances, identity_worst == 0.0));
    out.push_back(make_result("bilinear clamp rule", clamp_worst, 1e-12, instances, clamp_worst <= 1e-12));
    out.push_back(make_result("compose zero identity", compose_id_worst, 0.0, instances, compose_id_worst == 0.0));
    out.push_back(make_result("compose constants exact", compose_const_worst, 0.0, instances, compose_const_worst == 0.0));
    out.push_back(make_result("warp linear in image", linear_worst, 1e-6, instances, linear_worst <= 1e-6));
    out.push_back(make_result("warp within source range", convex_worst, 1e-12, instances, convex_worst <= 1e-12));
    out.push_back(make_result("double warp pointwise oracle", dw_exact_worst, 1e-9, instances, dw_exact_worst <= 1e-9));
    out.push_back(make_result("double warp within supersampled bound", dw_ratio_worst, 1.0, instances,
                              dw_ratio_worst <= 1.0));
    return out;
}

std::vector<PropertyResult> loss_gradient_checks(int trials, std::uint64_t seed) {
    Rng rng(seed, Stream::Test, 2);
    constexpr int kH = 16, kW = 16;
    constexpr double kStep = 1e-5, kFloor = 1e-8, kLimit = 1e-3;
    double w_mse = 0, w_smooth = 0, w_flow = 0, w_multi = 0, w_distill = 0, w_warp_flow = 0, w_warp_img = 0,
           w_objective = 0;
    LossWeights lw;
    for (int t = 0; t < trials; ++t) {
        // photometric
        Image a = random_noise_image(kH, kW, rng);
        const Image b = random_noise_image(kH, kW, rng);
        {
            const ImageLoss l = photometric_mse(a, b);
            w_mse = std::max(w_mse, gradcheck_entries(a.pixels(), l.grad.pixels(),
                                                      [&] { return photometric_mse(a, b).value; }, kStep, kFloor));
        }
        // smoothness
        FlowField f = random_noise_flow(kH, kW, 2.0, rng);
        {
            const FlowLoss l = smoothness_2nd(f);
            w_smooth = std::max(w_smooth, gradcheck_entries(f.data(), l.grad.data(),
                                                            [&] { return smoothness_2nd(f).value; }, kStep, kFloor));
        }
        // flow distance
        const FlowField teacher = random_noise_flow(kH, kW, 2.0, rng);
        {
            const FlowLoss l = flow_distance(f, teacher);
            w_flow = std::max(w_flow, gradcheck_entries(f.data(), l.grad.data(),
                                                        [&] { return flow_distance(f, teacher).value; }, kStep, kFloor));
        }
        // multiscale, three levels
        {
            Pyramid<Image> warped, ref;
            Pyramid<FlowField> flows;
            for (int l = 0; l < 3; ++l) {
                const int h = level_extent(kH, l), w = level_extent(kW, l);
                warped.levels.push_back(random_noise_image(h, w, rng));
                ref.levels.push_back(random_noise_image(h, w, rng));
                flows.levels.push_back(random_noise_flow(h, w, 1.5, rng));
            }
            const MultiscaleGrad g = multiscale_total_grad(warped, ref, flows, lw);
            auto total = [&] { return multiscale_total(warped, ref, flows, lw).total; };
            for (int l = 0; l < 3; ++l) {
                w_multi = std::max(w_multi, gradcheck_entries(warped[l].pixels(), g.d_warped[l].pixels(), total, kStep,
                                                              kFloor));
                w_multi = std::max(w_multi, gradcheck_entries(flows[l].data(), g.d_flow[l].data(), total, kStep, kFloor));
            }
        }
        // distillation total
        {
            const DistillGrad g = distill_total_grad(f, teacher, a, b, lw);
            auto total = [&] { return distill_total(f, teacher, a, b, lw).total; };
            w_distill = std::max(w_distill, gradcheck_entries(f.data(), g.d_student.data(), total, kStep, kFloor));
            w_distill = std::max(w_distill, gradcheck_entries(a.pixels(), g.d_warped.pixels(), total, kStep, kFloor));
        }
        // warp adjoint: d/dflow and d/dsource of <warp(src, flow), r>
        {
            // Textured source: a smooth one gives near-zero entries that sit
            // below the difference quotient's roundoff floor.
            Image src = random_noise_image(kH, kW, rng);
            FlowField flow = off_lattice_flow(kH, kW, 3.0, rng);
            const Image r = random_noise_image(kH, kW, rng);
            auto inner = [&] {
                const Image out = warp(src, flow);
                double s = 0.0;
                for (std::size_t i = 0; i < out.size(); ++i) s += out.pixels()[i] * r.pixels()[i];
                return s;
            };
            FlowField gf(kH, kW);
            Image gs(kH, kW);
            warp_backward(src, flow, r, &gf, &gs);
            w_warp_flow = std::max(w_warp_flow, gradcheck_entries(flow.data(), gf.data(), inner, kStep, kFloor));
            w_warp_img = std::max(w_warp_img, gradcheck_entries(src.pixels(), gs.pixels(), inner, kStep, kFloor));

            // distillation objective as a function of the student flow, through the warp
            const FlowField tflow = random_noise_flow(kH, kW, 2.0, rng);
            const FlowObjective obj = distill_objective(flow, tflow, src, r, lw);
            w_objective = std::max(
                w_objective, gradcheck_entries(flow.data(), obj.grad.data(),
                                               [&] { return distill_objective(flow, tflow, src, r, lw).report.total; },
                                               kStep, kFloor));
        }
    }
    std::vector<PropertyResult> out;
    auto add = [&](const char* name, double worst) {
        out.push_back(make_result(name, worst, kLimit, trials, worst < kLimit));
    };
    add("photometric_mse gradient", w_mse);
    add("smoothness_2nd gradient", w_smooth);
    add("flow_distance gradient", w_flow);
    add("multiscale_total gradient", w_multi);
    add("distill_total gradient", w_distill);
    add("warp gradient w.r.t. flow", w_warp_flow);
    add("warp gradient w.r.t. source", w_warp_img);
    add("distill objective gradient through warp", w_objective);
    return out;
}

ArchConfig gradcheck_config(Variant variant) {
    ArchConfig cfg;
    cfg.num_levels = 3;
    cfg.encoder_channels = {8, 16, 32};
    cfg.variant = variant;
    return cfg;
}

ModelParams randomized_params(const ArchConfig& cfg, std::uint64_t seed, double scale) {
    ModelParams p = init_model(cfg, seed);
    Rng rng(seed, Stream::Test, 7);
    for (ParamTensor& t : p.tensors) {
        const bool all_zero = std::all_of(t.values.begin(), t.values.end(), [](double v) { return v == 0.0; });
        if (!all_zero) continue;
        const double fan_in = t.shape.size() > 1 ? static_cast<double>(t.values.size()) / t.shape[0] : 1.0;
        const double bound = t.shape.size() > 1 ? scale * std::sqrt(3.0 / fan_in) : 0.1 * scale;
        for (double& v : t.values) v = rng.uniform(-bound, bound);
    }
    return p;
}

namespace {

// Everything the objective is only piecewise smooth in: the sign of every
// leaky-rectified activation and the lattice cell of every warp sample.
std::vector<std::int64_t> kink_signature(const ForwardTrace& t) {
    std::vector<std::int64_t> sig;
    auto signs = [&sig](const Tensor& a) {
        for (double v : a.data) sig.push_back(v > 0.0);
    };
    for (const Tensor& f : t.source_enc.features) signs(f);
    for (const Tensor& f : t.target_enc.features) signs(f);
    for (const HeadTrace& h : t.heads) signs(h.conv2.input);
    signs(t.decoder_conv2.input);
    signs(t.decoder_conv3.input);
    if (t.config.variant == Variant::Pyramid) signs(t.fusion_conv2.input);
    auto cells = [&sig](const FlowField& f) {
        for (int y = 0; y < f.height(); ++y) {
            for (int x = 0; x < f.width(); ++x) {
                sig.push_back(static_cast<std::int64_t>(std::floor(y + f(y, x).dy)));
                sig.push_back(static_cast<std::int64_t>(std::floor(x + f(y, x).dx)));
            }
        }
    };
    for (const FlowField& f : t.pyramid_flows) cells(f);
    cells(t.refined_flow);
    return sig;
}

}  // namespace

KinkAwareDifference kink_aware_difference(const std::function<std::pair<double, std::vector<std::int64_t>>()>& eval,
                                          double& xi, double h0) {
    const double saved = xi;
    const auto [f0, sig0] = eval();
    auto at = [&](double offset) {
        xi = saved + offset;
        auto r = eval();
        xi = saved;
        return r;
    };
    for (double h = h0; h >= h0 * 1e-2; h *= 0.1) {
        const auto [fp, sp] = at(h);
        const auto [fm, sm] = at(-h);
        if (sp == sig0 && sm == sig0) return {(fp - fm) / (2 * h), true, false};
        if (sp == sig0) {
            const auto [fp2, sp2] = at(2 * h);
            if (sp2 == sig0) return {(-3 * f0 + 4 * fp - fp2) / (2 * h), true, true};
        }
        if (sm == sig0) {
            const auto [fm2, sm2] = at(-2 * h);
            if (sm2 == sig0) return {(3 * f0 - 4 * fm + fm2) / (2 * h), true, true};
        }
    }
    const auto [fp, sp] = at(h0);
    const auto [fm, sm] = at(-h0);
    return {(fp - fm) / (2 * h0), false, false};
}

PropertyResult network_gradient_check(Variant variant, std::uint64_t seed) {
    constexpr int kH = 16, kW = 16;
    constexpr double kStep = 1e-4, kFloor = 1e-8, kLimit = 1e-3;
    const ArchConfig cfg = gradcheck_config(variant);
    ModelParams params = randomized_params(cfg, seed);
    Rng rng(seed, Stream::Test, 3);
    ImagePair pair{random_smooth_image(kH, kW, rng), random_smooth_image(kH, kW, rng)};
    const LossWeights lw;

    const ForwardTrace trace = forward(params, pair.source, pair.target);
    const ObjectiveResult obj = unsupervised_objective(trace, pair, lw);
    const ParamGrads grads = backward(trace, params, obj.grads);
    auto eval = [&] {
        const ForwardTrace t = forward(params, pair.source, pair.target);
        return std::make_pair(unsupervised_objective(t, pair, lw).report.total, kink_signature(t));
    };

    double worst = 0.0;
    int count = 0, unresolved = 0;
    for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
        auto& values = params.tensors[ti].values;
        for (std::size_t i = 0; i < values.size(); ++i) {
            const KinkAwareDifference d = kink_aware_difference(eval, values[i], kStep);
            if (!d.smooth) ++unresolved;
            worst = std::max(worst, relative_error(grads[ti][i], d.value, kFloor));
            ++count;
        }
    }
    std::string name = std::string("network gradient (") + variant_name(variant) + ")";
    if (unresolved) name += ", " + std::to_string(unresolved) + " entries straddle a kink";
    return make_result(name, worst, kLimit, count, worst < kLimit);
}

std::vector<PropertyResult> metric_parity(int instances, std::uint64_t seed) {
    Rng rng(seed, Stream::Test, 4);
    constexpr int kN = 32;
    double w_dice = 0, w_contour = 0, w_hd = 0, w_assd = 0, w_epe = 0, w_dec = 0, w_orth = 0, w_pyth = 0, w_kpte = 0;
    int pairs_measured = 0;
    for (int n = 0; n < instances; ++n) {
        const Spacing s = rng.below(2) ? Spacing{1.0, 1.0} : Spacing{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
        const LabelMask a = random_mask(kN, kN, rng, s), b = random_mask(kN, kN, rng, s);
        for (Label l : kForegroundLabels) {
            w_dice = std::max(w_dice, std::abs(dice(a, b, l) - oracle_dice(a, b, l)));
            const Contour ca = extract_contour(a, l), cb = extract_contour(b, l);
            const auto oa = oracle_contour(a, l), ob = oracle_contour(b, l);
            const std::set<std::pair<int, int>> sa(ca.points.begin(), ca.points.end()), so(oa.begin(), oa.end());
            if (sa != so || ca.points.size() != oa.size()) w_contour = 1.0;
            if (ca.empty() || cb.empty()) continue;
            ++pairs_measured;
            w_hd = std::max(w_hd, std::abs(hausdorff(ca, cb) - oracle_hausdorff(oa, ob, s)));
            w_assd = std::max(w_assd, std::abs(assd(ca, cb) - oracle_assd(oa, ob, s)));
        }

        const FlowField est = random_noise_flow(kN, kN, 3.0, rng), gt = random_noise_flow(kN, kN, 3.0, rng);
        for (Label l : kForegroundLabels) {
            if (a.count(l) < 2) continue;
            w_epe = std::max(w_epe, std::abs(epe(est, gt, a, l).mean - oracle_epe_mean(est, gt, a, l)));
            const EpeDecomposition d = epe_decompose(est, gt, a, l);
            const OracleDecomposition od = oracle_decompose(est, gt, a, l);
            w_dec = std::max({w_dec, std::abs(d.radial.mean - od.rr_mean), std::abs(d.circumferential.mean - od.cc_mean)});
        }
        for (int k = 0; k < 64; ++k) {
            const Vec2 e{rng.uniform(-5, 5), rng.uniform(-5, 5)};
            const double ang = rng.uniform(0, 2 * kPi);
            const ErrorParts parts = decompose_error(e, {std::sin(ang), std::cos(ang)});
            const Vec2 r = parts.radial, c = parts.circumferential;
            w_orth = std::max(w_orth, std::abs(r.dy * c.dy + r.dx * c.dx));
            const double e2 = e.dy * e.dy + e.dx * e.dx;
            w_pyth = std::max(w_pyth, std::abs(e2 - (r.dy * r.dy + r.dx * r.dx) - (c.dy * c.dy + c.dx * c.dx)));
        }

        std::vector<Vec2> p, q;
        const int m = 1 + static_cast<int>(rng.below(8));
        for (int k = 0; k < m; ++k) {
            p.push_back({rng.uniform(0, kN - 1), rng.uniform(0, kN - 1)});
            q.push_back({rng.uniform(0, kN - 1), rng.uniform(0, kN - 1)});
        }
        w_kpte = std::max(w_kpte, std::abs(kpte(p, q, s).mean - oracle_kpte_mean(p, q, s)));
    }
    std::vector<PropertyResult> out;
    out.push_back(make_result("dice parity", w_dice, 0.0, instances, w_dice == 0.0));
    out.push_back(make_result("contour parity", w_contour, 0.0, instances, w_contour == 0.0));
    out.push_back(make_result("hausdorff parity", w_hd, 1e-9, pairs_measured, w_hd <= 1e-9));
    out.push_back(make_result("assd parity", w_assd, 1e-9, pairs_measured, w_assd <= 1e-9));
    out.push_back(make_result("epe parity", w_epe, 1e-9, instances, w_epe <= 1e-9));
    out.push_back(make_result("decomposition parity", w_dec, 1e-9, instances, w_dec <= 1e-9));
    out.push_back(make_result("decomposition orthogonality", w_orth, 1e-9, instances * 64, w_orth <= 1e-9));
    out.push_back(make_result("decomposition pythagoras", w_pyth, 1e-9, instances * 64, w_pyth <= 1e-9));
    out.push_back(make_result("kpte parity", w_kpte, 1e-9, instances, w_kpte <= 1e-9));
    return out;
}

}  // namespace mpn::testing
