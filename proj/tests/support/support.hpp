#pragma once

// Shared test machinery: random instance generators, independent brute-force
// oracles, and the property suites run both by the unit tests and by the
// acceptance binary.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mpn/grid.hpp"
#include "mpn/metrics.hpp"
#include "mpn/net.hpp"
#include "mpn/rng.hpp"

namespace mpn::testing {

// ---- generators -------------------------------------------------------------------

/// Smooth image in [0, 1]: a few Gaussian blobs over a random offset.
Image random_smooth_image(int h, int w, Rng& rng);
/// Independent uniform pixels in [0, 1].
Image random_noise_image(int h, int w, Rng& rng);
/// Smooth flow built from a few low-frequency cosines, |components| <= amplitude.
FlowField random_smooth_flow(int h, int w, double amplitude, Rng& rng);
/// Independent uniform components in [-amplitude, amplitude].
FlowField random_noise_flow(int h, int w, double amplitude, Rng& rng);
/// Random disks and rectangles of labels 1..3 on background.
LabelMask random_mask(int h, int w, Rng& rng, Spacing spacing = {});

// ---- oracles ----------------------------------------------------------------------

/// Bilinear interpolation written from the textbook four-neighbour weights.
double oracle_bilinear(const Image& img, double y, double x);

double oracle_dice(const LabelMask& a, const LabelMask& b, Label label);
/// Boundary pixels by explicit neighbour enumeration.
std::vector<std::pair<int, int>> oracle_contour(const LabelMask& m, Label label);
/// O(n^2) double loops.
double oracle_hausdorff(const std::vector<std::pair<int, int>>& a, const std::vector<std::pair<int, int>>& b,
                        Spacing s);
double oracle_assd(const std::vector<std::pair<int, int>>& a, const std::vector<std::pair<int, int>>& b, Spacing s);
double oracle_epe_mean(const FlowField& est, const FlowField& gt, const LabelMask& region, Label label);
struct OracleDecomposition {
    double rr_mean = 0.0;
    double cc_mean = 0.0;
    double worst_orthogonality = 0.0;  // max |eps_rr . eps_cc|
    double worst_pythagoras = 0.0;     // max ||e|^2 - |rr|^2 - |cc|^2|
};
/// Projection via an explicit angle (rotate e into the radial frame) rather
/// than a dot product.
OracleDecomposition oracle_decompose(const FlowField& est, const FlowField& gt, const LabelMask& region, Label label);
double oracle_kpte_mean(const std::vector<Vec2>& a, const std::vector<Vec2>& b, Spacing s);

// ---- finite differences -------------------------------------------------------------

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-8);

/// Central difference of f at x[i] with step h, restoring x[i].
double central_difference(const std::function<double()>& f, double& xi, double h = 1e-5);

/// Difference quotient of a piecewise-smooth function. `eval` returns the value
/// and a signature of the active smooth piece; steps that leave the piece are
/// shrunk, then replaced by a second-order one-sided quotient on the side that
/// stays inside it.
struct KinkAwareDifference {
    double value = 0.0;
    bool smooth = false;    // false when no step stayed inside the piece
    bool one_sided = false;
};
KinkAwareDifference kink_aware_difference(const std::function<std::pair<double, std::vector<std::int64_t>>()>& eval,
                                          double& xi, double h0 = 1e-5);

// ---- property suites ----------------------------------------------------------------

struct PropertyResult {
    std::string name;
    bool pass = false;
    double worst = 0.0;  // worst observed deviation (meaning depends on the property)
    double limit = 0.0;  // threshold it was compared against
    int cases = 0;
};

bool all_pass(const std::vector<PropertyResult>& rs);
std::string describe(const PropertyResult& r);

/// Geometric kernel properties: warp identity, clamp rule, compose identity and
/// constant exactness, double-warp equivalence bound.
std::vector<PropertyResult> geometric_properties(int instances, std::uint64_t seed);

/// Loss gradients (photometric, smoothness, flow distance, multiscale, distill, warp).
std::vector<PropertyResult> loss_gradient_checks(int trials, std::uint64_t seed);

/// Every parameter of a 16x16 network of the given variant against central
/// differences of the full unsupervised objective.
PropertyResult network_gradient_check(Variant variant, std::uint64_t seed);

/// Metric implementations against the brute-force oracles on random 32x32 cases.
std::vector<PropertyResult> metric_parity(int instances, std::uint64_t seed);

/// Architecture used for gradient checks at 16x16 (three levels keep the
/// coarsest level at 4x4).
ArchConfig gradcheck_config(Variant variant);

/// Parameters with every tensor (including the zero-initialised heads) filled
/// with small random values, so flows are non-zero and away from lattice kinks.
ModelParams randomized_params(const ArchConfig& cfg, std::uint64_t seed, double scale = 0.3);

}  // namespace mpn::testing
