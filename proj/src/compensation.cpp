#include "mpn/compensation.hpp"

#include <stdexcept>

namespace mpn {

namespace {

template <class Estimate>
ProgressiveResult run(Estimate&& estimate, const Image& source, const Image& target, int steps) {
    if (steps < 1) throw std::invalid_argument("progressive_flow: steps must be >= 1");
    if (!source.same_shape(target)) throw std::invalid_argument("progressive_flow: image size mismatch");

    ProgressiveResult r;
    r.flow = estimate(source, target);
    r.step_flows.push_back(r.flow);
    r.intermediates.push_back(warp(source, r.flow));
    for (int k = 1; k < steps; ++k) {
        FlowField residual = estimate(r.intermediates.back(), target);
        // warped(x) = source(x + flow(x)); the residual is anchored on the
        // target grid, so it is the outer map.
        r.flow = compose_flows(r.flow, residual);
        r.step_flows.push_back(std::move(residual));
        r.intermediates.push_back(warp(source, r.flow));
    }
    return r;
}

}  // namespace

ProgressiveResult progressive_flow(const MotionModel& model, const Image& source, const Image& target, int steps) {
    return run([&](const Image& s, const Image& t) { return model.estimate(s, t); }, source, target, steps);
}

ProgressiveResult progressive_flow(const ModelParams& params, const Image& source, const Image& target, int steps) {
    return run([&](const Image& s, const Image& t) { return forward(params, s, t).refined_flow; }, source, target,
               steps);
}

}  // namespace mpn
