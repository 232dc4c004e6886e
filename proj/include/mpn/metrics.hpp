#pragma once

// Evaluation metrics. Distances are reported in mm using the grid spacing;
// displacement components are scaled by spacing before taking norms.
//
// Contours are the label pixels having at least one 4-neighbour of another
// label, or lying on the image border. HD and ASSD are measured between pixel
// centres.

#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "json.hpp"

#include "mpn/grid.hpp"

namespace mpn {

double dice(const LabelMask& a, const LabelMask& b, Label label);

struct Contour {
    int height = 0;
    int width = 0;
    Spacing spacing;
    std::vector<std::pair<int, int>> points;  // (y, x)

    bool empty() const { return points.empty(); }
};

Contour extract_contour(const LabelMask& mask, Label label);

/// Squared Euclidean distance transform (mm^2) to the nearest `true` cell.
/// Cells are infinite when no cell is set.
std::vector<double> squared_edt(const std::vector<bool>& set, int height, int width, Spacing spacing);

double hausdorff(const Contour& a, const Contour& b);
double assd(const Contour& a, const Contour& b);

struct Stats {
    double mean = 0.0;
    double std = 0.0;  // population
    std::size_t n = 0;
};
Stats summarize(std::span<const double> values);

/// Endpoint error over the pixels of `region` carrying `label`, in mm
/// (spacing taken from the region mask).
Stats epe(const FlowField& est, const FlowField& gt, const LabelMask& region, Label label = Label::MYO);

struct ErrorParts {
    Vec2 radial;
    Vec2 circumferential;
};
/// Splits e into its component along the unit direction d and the remainder.
ErrorParts decompose_error(Vec2 e, Vec2 d);

struct EpeDecomposition {
    Stats radial;           // |eps_rr|, mm
    Stats circumferential;  // |eps_cc|, mm
};
/// Radial/circumferential split of gt - est about the centroid of the region,
/// all in mm. Pixels at the centroid are skipped.
EpeDecomposition epe_decompose(const FlowField& est, const FlowField& gt, const LabelMask& region,
                               Label label = Label::MYO);

Stats kpte(std::span<const Vec2> predicted, std::span<const Vec2> truth, Spacing spacing);

/// Target-grid points to their source positions: p + flow(p).
std::vector<Vec2> map_to_source(const FlowField& flow, std::span<const Vec2> target_points);

struct InversionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Source-grid points to the target grid by inverting the target-anchored
/// flow: solves q + flow(q) = p by fixed-point iteration. Throws
/// InversionError when a point does not converge.
std::vector<Vec2> track_keypoints(const FlowField& flow, std::span<const Vec2> source_points, int max_iter = 20,
                                  double tol = 1e-3);

struct LabelScores {
    double dice = 0.0;
    double hd_mm = 0.0;
    double assd_mm = 0.0;
};

struct MetricsReport {
    LabelScores lv;
    LabelScores myo;
    LabelScores rv;
    Stats epe_mm;
    Stats eps_rr_mm;
    Stats eps_cc_mm;
    Stats kpte_mm;
    std::size_t n_samples = 0;
    std::size_t kpte_failures = 0;  // samples whose keypoints could not be tracked

    const LabelScores& scores(Label l) const;
    LabelScores& scores(Label l);
};

void to_json(nlohmann::json& j, const MetricsReport& r);

struct EvalInput {
    const FlowField* est = nullptr;
    const FlowField* gt = nullptr;
    const LabelMask* source_mask = nullptr;
    const LabelMask* target_mask = nullptr;
    std::span<const Vec2> source_keypoints;
    std::span<const Vec2> target_keypoints;
};

/// Per-pair report: masks compare warp_mask(source_mask, est) with the target
/// mask; EPE and its decomposition use the source myocardium.
MetricsReport evaluate_pair(const EvalInput& in);

/// Mean over pairs of each per-pair value; the stds are taken across pairs.
MetricsReport aggregate(std::span<const MetricsReport> reports);

}  // namespace mpn
