#pragma once

// Training objectives and their analytic gradients.
//
//   unsupervised:  sum_l mse_l + lambda * sum_l smooth_l   (+ the refined-flow term)
//   distillation:  flow_loss + mu * mse + gamma * smooth
//
// Every function that returns a gradient returns it w.r.t. the quantity the
// caller controls (the warped image or the flow).

#include <vector>

#include "json.hpp"

#include "mpn/grid.hpp"

namespace mpn {

struct LossWeights {
    double lambda_smooth = 0.05;  // smoothness weight of the multi-scale objective
    double mu_mse = 1.0;          // photometric weight of the distillation objective
    double gamma_smooth = 0.05;   // smoothness weight of the distillation objective

    void validate() const;
};

/// Breakdown of one objective evaluation. `per_level_*` hold the motion
/// pyramid terms; `refined_*` hold the full-resolution refined-flow term;
/// `flow_loss` is the teacher-student term (0 when unused).
struct LossReport {
    double total = 0.0;
    std::vector<double> per_level_mse;
    std::vector<double> per_level_smooth;
    double refined_mse = 0.0;
    double refined_smooth = 0.0;
    double flow_loss = 0.0;
};

/// Component-wise running sums, used for epoch means.
void accumulate_report(LossReport& sum, const LossReport& r);
void scale_report(LossReport& r, double s);

void to_json(nlohmann::json& j, const LossReport& r);
void from_json(const nlohmann::json& j, LossReport& r);
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

struct ImageLoss {
    double value;
    Image grad;  // d value / d warped
};

struct FlowLoss {
    double value;
    FlowField grad;  // d value / d flow
};

/// mean((warped - reference)^2)
ImageLoss photometric_mse(const Image& warped, const Image& reference);

/// Squared axis-aligned second differences averaged over interior pixels and
/// both components: each (pixel, component) contributes
/// [c(y+1,x) - 2c(y,x) + c(y-1,x)]^2 + [c(y,x+1) - 2c(y,x) + c(y,x-1)]^2
/// and the sum is divided by 2 (H-2)(W-2). The mixed derivative is omitted.
FlowLoss smoothness_2nd(const FlowField& flow);

/// mean over pixels of |teacher(x) - student(x)|_2; gradient w.r.t. student.
FlowLoss flow_distance(const FlowField& student, const FlowField& teacher);

/// Deep-supervised objective over matching pyramids:
/// total = sum_l mse(warped_l, ref_l) + lambda * sum_l smooth(flow_l).
LossReport multiscale_total(const Pyramid<Image>& warped, const Pyramid<Image>& reference,
                            const Pyramid<FlowField>& flows, const LossWeights& w);

/// Same as multiscale_total, plus per-level gradients w.r.t. the warped
/// images and the flows.
struct MultiscaleGrad {
    LossReport report;
    std::vector<Image> d_warped;
    std::vector<FlowField> d_flow;
};
MultiscaleGrad multiscale_total_grad(const Pyramid<Image>& warped, const Pyramid<Image>& reference,
                                     const Pyramid<FlowField>& flows, const LossWeights& w);

/// total = flow_distance(student, teacher) + mu * mse(warped, reference)
///         + gamma * smooth(student).
LossReport distill_total(const FlowField& student_flow, const FlowField& teacher_flow, const Image& warped,
                         const Image& reference, const LossWeights& w);

struct DistillGrad {
    LossReport report;
    FlowField d_student;  // direct terms only (flow distance and smoothness)
    Image d_warped;       // photometric term, scaled by mu
};
DistillGrad distill_total_grad(const FlowField& student_flow, const FlowField& teacher_flow, const Image& warped,
                               const Image& reference, const LossWeights& w);

}  // namespace mpn
