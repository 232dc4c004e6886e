#pragma once

// Progressive motion compensation: estimate, warp the source with the
// estimate, estimate the residual motion from the warped image to the target,
// and compose. Two steps is the default.

#include <vector>

#include "mpn/grid.hpp"
#include "mpn/model.hpp"
#include "mpn/net.hpp"

namespace mpn {

struct ProgressiveResult {
    FlowField flow;                    // composed source->target flow (target-anchored)
    std::vector<FlowField> step_flows; // per-step estimates, step_flows[0] is the plain single-step flow
    std::vector<Image> intermediates;  // warp(source, composed flow after step i), one per step
};

ProgressiveResult progressive_flow(const MotionModel& model, const Image& source, const Image& target,
                                   int steps = 2);
ProgressiveResult progressive_flow(const ModelParams& params, const Image& source, const Image& target,
                                   int steps = 2);

}  // namespace mpn
