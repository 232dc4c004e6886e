#pragma once

// Abstract motion-estimator contract used by compensation and distillation.
// Anything that maps an image pair to a target-anchored flow and can take an
// optimizer step on a loss of that flow fits here.

#include <cstdint>
#include <functional>
#include <memory>

#include "mpn/grid.hpp"
#include "mpn/losses.hpp"
#include "mpn/net.hpp"

namespace mpn {

/// Scalar loss of a predicted flow and its gradient w.r.t. that flow.
struct FlowObjective {
    LossReport report;
    FlowField grad;
};
using FlowObjectiveFn = std::function<FlowObjective(const FlowField& flow)>;

class MotionModel {
public:
    virtual ~MotionModel() = default;

    /// Single-step flow estimate; must be pure.
    virtual FlowField estimate(const Image& source, const Image& target) const = 0;
    virtual std::unique_ptr<MotionModel> clone() const = 0;
    /// Hash of the trainable state; equal hashes mean identical predictions.
    virtual std::uint64_t fingerprint() const = 0;

    /// One optimizer step on objective(estimate(source, target)).
    virtual LossReport train_step(const Image& source, const Image& target, const FlowObjectiveFn& objective,
                                  double lr) = 0;
    virtual void reset_optimizer() = 0;
};

/// MotionModel backed by the network in net.hpp, trained with Adam.
class NetworkModel final : public MotionModel {
public:
    explicit NetworkModel(ModelParams params);

    FlowField estimate(const Image& source, const Image& target) const override;
    std::unique_ptr<MotionModel> clone() const override;
    std::uint64_t fingerprint() const override;
    LossReport train_step(const Image& source, const Image& target, const FlowObjectiveFn& objective,
                          double lr) override;
    void reset_optimizer() override;

    const ModelParams& params() const { return params_; }
    ModelParams& mutable_params() { return params_; }

private:
    ModelParams params_;
    AdamState adam_;
};

}  // namespace mpn
