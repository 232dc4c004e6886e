#include "mpn/model.hpp"

namespace mpn {

NetworkModel::NetworkModel(ModelParams params) : params_(std::move(params)), adam_(make_adam_state(params_)) {}

FlowField NetworkModel::estimate(const Image& source, const Image& target) const {
    return forward(params_, source, target).refined_flow;
}

std::unique_ptr<MotionModel> NetworkModel::clone() const {
    // The copy starts with a fresh optimizer.
    return std::make_unique<NetworkModel>(params_);
}

std::uint64_t NetworkModel::fingerprint() const { return mpn::fingerprint(params_); }

LossReport NetworkModel::train_step(const Image& source, const Image& target, const FlowObjectiveFn& objective,
                                    double lr) {
    const ForwardTrace trace = forward(params_, source, target);
    FlowObjective obj = objective(trace.refined_flow);
    FlowGrads grads;
    grads.refined = std::move(obj.grad);
    adam_step(params_, backward(trace, params_, grads), adam_, lr);
    return obj.report;
}

void NetworkModel::reset_optimizer() { adam_ = make_adam_state(params_); }

}  // namespace mpn
