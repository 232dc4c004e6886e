#include "mpn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mpn {

void LossWeights::validate() const {
    for (double v : {lambda_smooth, mu_mse, gamma_smooth}) {
        if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("loss weights must be finite and non-negative");
    }
}

void accumulate_report(LossReport& sum, const LossReport& r) {
    sum.total += r.total;
    sum.refined_mse += r.refined_mse;
    sum.refined_smooth += r.refined_smooth;
    sum.flow_loss += r.flow_loss;
    sum.per_level_mse.resize(std::max(sum.per_level_mse.size(), r.per_level_mse.size()), 0.0);
    sum.per_level_smooth.resize(std::max(sum.per_level_smooth.size(), r.per_level_smooth.size()), 0.0);
    for (std::size_t i = 0; i < r.per_level_mse.size(); ++i) sum.per_level_mse[i] += r.per_level_mse[i];
    for (std::size_t i = 0; i < r.per_level_smooth.size(); ++i) sum.per_level_smooth[i] += r.per_level_smooth[i];
}

void scale_report(LossReport& r, double s) {
    r.total *= s;
    r.refined_mse *= s;
    r.refined_smooth *= s;
    r.flow_loss *= s;
    for (double& v : r.per_level_mse) v *= s;
    for (double& v : r.per_level_smooth) v *= s;
}

void to_json(nlohmann::json& j, const LossReport& r) {
    j = nlohmann::json{{"total", r.total},
                       {"per_level_mse", r.per_level_mse},
                       {"per_level_smooth", r.per_level_smooth},
                       {"refined_mse", r.refined_mse},
                       {"refined_smooth", r.refined_smooth},
                       {"flow_loss", r.flow_loss}};
}

void from_json(const nlohmann::json& j, LossReport& r) {
    j.at("total").get_to(r.total);
    j.at("per_level_mse").get_to(r.per_level_mse);
    j.at("per_level_smooth").get_to(r.per_level_smooth);
    j.at("refined_mse").get_to(r.refined_mse);
    j.at("refined_smooth").get_to(r.refined_smooth);
    j.at("flow_loss").get_to(r.flow_loss);
}

void to_json(nlohmann::json& j, const LossWeights& w) {
    j = nlohmann::json{{"lambda_smooth", w.lambda_smooth}, {"mu_mse", w.mu_mse}, {"gamma_smooth", w.gamma_smooth}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
    for (const auto& [key, value] : j.items()) {
        if (key == "lambda_smooth") value.get_to(w.lambda_smooth);
        else if (key == "mu_mse") value.get_to(w.mu_mse);
        else if (key == "gamma_smooth") value.get_to(w.gamma_smooth);
        else throw std::invalid_argument("unknown loss weight key: " + key);
    }
    w.validate();
}

ImageLoss photometric_mse(const Image& warped, const Image& reference) {
    if (!warped.same_shape(reference)) throw std::invalid_argument("photometric_mse: dimension mismatch");
    const auto a = warped.pixels();
    const auto b = reference.pixels();
    const double n = static_cast<double>(a.size());
    ImageLoss out{0.0, Image(warped.height(), warped.width(), warped.spacing())};
    auto g = out.grad.pixels();
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        out.value += d * d;
        g[i] = 2.0 * d / n;
    }
    out.value /= n;
    return out;
}

FlowLoss smoothness_2nd(const FlowField& flow) {
    const int h = flow.height(), w = flow.width();
    if (h < 3 || w < 3) throw std::invalid_argument("smoothness_2nd: field must be at least 3x3");
    const auto f = flow.data();
    FlowLoss out{0.0, FlowField(h, w)};
    auto g = out.grad.data();
    const double n = 2.0 * (h - 2) * (w - 2);
    auto at = [w](int y, int x, int c) { return 2 * (static_cast<std::size_t>(y) * w + x) + c; };
    for (int y = 1; y < h - 1; ++y) {
        for (int x = 1; x < w - 1; ++x) {
            for (int c = 0; c < 2; ++c) {
                const double dyy = f[at(y + 1, x, c)] - 2.0 * f[at(y, x, c)] + f[at(y - 1, x, c)];
                const double dxx = f[at(y, x + 1, c)] - 2.0 * f[at(y, x, c)] + f[at(y, x - 1, c)];
                out.value += dyy * dyy + dxx * dxx;
                const double gy = 2.0 * dyy / n, gx = 2.0 * dxx / n;
                g[at(y + 1, x, c)] += gy;
                g[at(y - 1, x, c)] += gy;
                g[at(y, x + 1, c)] += gx;
                g[at(y, x - 1, c)] += gx;
                g[at(y, x, c)] -= 2.0 * (gy + gx);
            }
        }
    }
    out.value /= n;
    return out;
}

FlowLoss flow_distance(const FlowField& student, const FlowField& teacher) {
    if (!student.same_shape(teacher)) throw std::invalid_argument("flow_distance: dimension mismatch");
    const auto s = student.data();
    const auto t = teacher.data();
    const double n = static_cast<double>(student.num_pixels());
    FlowLoss out{0.0, FlowField(student.height(), student.width())};
    auto g = out.grad.data();
    for (std::size_t i = 0; i < student.num_pixels(); ++i) {
        const double ey = t[2 * i] - s[2 * i];
        const double ex = t[2 * i + 1] - s[2 * i + 1];
        const double norm = std::hypot(ey, ex);
        out.value += norm;
        // Subgradient 0 where student and teacher agree exactly.
        if (norm > 0.0) {
            g[2 * i] = -ey / (norm * n);
            g[2 * i + 1] = -ex / (norm * n);
        }
    }
    out.value /= n;
    return out;
}

namespace {

void check_pyramids(const Pyramid<Image>& warped, const Pyramid<Image>& reference, const Pyramid<FlowField>& flows) {
    if (warped.num_levels() != reference.num_levels() || warped.num_levels() != flows.num_levels()) {
        throw std::invalid_argument("multiscale_total: pyramid level counts differ");
    }
    for (std::size_t l = 0; l < warped.num_levels(); ++l) {
        if (!warped[l].same_shape(reference[l]) || !flows[l].same_shape_as(warped[l])) {
            throw std::invalid_argument("multiscale_total: level " + std::to_string(l) + " dimensions differ");
        }
    }
}

}  // namespace

MultiscaleGrad multiscale_total_grad(const Pyramid<Image>& warped, const Pyramid<Image>& reference,
                                     const Pyramid<FlowField>& flows, const LossWeights& w) {
    check_pyramids(warped, reference, flows);
    MultiscaleGrad out;
    for (std::size_t l = 0; l < warped.num_levels(); ++l) {
        ImageLoss mse = photometric_mse(warped[l], reference[l]);
        FlowLoss smooth = smoothness_2nd(flows[l]);
        out.report.per_level_mse.push_back(mse.value);
        out.report.per_level_smooth.push_back(smooth.value);
        for (double& g : smooth.grad.data()) g *= w.lambda_smooth;
        out.d_warped.push_back(std::move(mse.grad));
        out.d_flow.push_back(std::move(smooth.grad));
    }
    double total = 0.0;
    for (double v : out.report.per_level_mse) total += v;
    for (double v : out.report.per_level_smooth) total += w.lambda_smooth * v;
    out.report.total = total;
    return out;
}

LossReport multiscale_total(const Pyramid<Image>& warped, const Pyramid<Image>& reference,
                            const Pyramid<FlowField>& flows, const LossWeights& w) {
    return multiscale_total_grad(warped, reference, flows, w).report;
}

DistillGrad distill_total_grad(const FlowField& student_flow, const FlowField& teacher_flow, const Image& warped,
                               const Image& reference, const LossWeights& w) {
    if (!student_flow.same_shape_as(warped)) throw std::invalid_argument("distill_total: dimension mismatch");
    FlowLoss fl = flow_distance(student_flow, teacher_flow);
    ImageLoss mse = photometric_mse(warped, reference);
    FlowLoss smooth = smoothness_2nd(student_flow);

    DistillGrad out;
    out.report.flow_loss = fl.value;
    out.report.refined_mse = mse.value;
    out.report.refined_smooth = smooth.value;
    out.report.total = fl.value + w.mu_mse * mse.value + w.gamma_smooth * smooth.value;

    out.d_student = std::move(fl.grad);
    auto ds = out.d_student.data();
    const auto gs = smooth.grad.data();
    for (std::size_t i = 0; i < ds.size(); ++i) ds[i] += w.gamma_smooth * gs[i];
    out.d_warped = std::move(mse.grad);
    for (double& g : out.d_warped.pixels()) g *= w.mu_mse;
    return out;
}

LossReport distill_total(const FlowField& student_flow, const FlowField& teacher_flow, const Image& warped,
                         const Image& reference, const LossWeights& w) {
    return distill_total_grad(student_flow, teacher_flow, warped, reference, w).report;
}

}  // namespace mpn
