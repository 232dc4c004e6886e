#pragma once

// Teacher-student distillation and its cyclic form.
//
// The student starts as a copy of the frozen teacher and is trained to match
// the teacher's two-step (progressively compensated) flow with a single
// forward pass, under flow_loss + mu * MSE + gamma * smoothness. In the cyclic
// form the trained student becomes the next teacher.
//
// Only the MotionModel contract is used, so any estimator can be distilled.

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "mpn/losses.hpp"
#include "mpn/model.hpp"
#include "mpn/net.hpp"

namespace mpn {

struct CycleConfig {
    int num_cycles = 2;
    int epochs_per_cycle = 10;  // cap; a cycle may stop earlier on convergence
    /// A cycle stops once the validation flow loss improved by less than
    /// this fraction over the last `convergence_window` epochs.
    double convergence_rel = 0.01;
    int convergence_window = 3;
    double lr = 5e-4;
    int teacher_steps = 2;
    std::uint64_t seed = 0;
    LossWeights weights;

    void validate() const;
};

void to_json(nlohmann::json& j, const CycleConfig& c);
void from_json(const nlohmann::json& j, CycleConfig& c);

struct DistillEpoch {
    int epoch = 0;
    LossReport train_mean;
    double val_flow_loss = 0.0;
};

struct CycleLog {
    int cycle = 0;
    std::uint64_t teacher_hash_before = 0;
    std::uint64_t teacher_hash_after = 0;
    std::uint64_t student_init_hash = 0;
    /// Validation flow loss of the copy-initialised student, before any step.
    double initial_val_flow_loss = 0.0;
    std::vector<DistillEpoch> epochs;
    bool converged = false;

    double final_val_flow_loss() const { return epochs.empty() ? initial_val_flow_loss : epochs.back().val_flow_loss; }
    bool teacher_frozen() const { return teacher_hash_before == teacher_hash_after; }
};

void to_json(nlohmann::json& j, const CycleLog& c);

struct DistillResult {
    std::unique_ptr<MotionModel> student;
    CycleLog log;
};

/// `validation` may be empty, in which case the training pairs are used to
/// measure convergence.
DistillResult distill_student(const MotionModel& teacher, std::span<const ImagePair> train,
                              std::span<const ImagePair> validation, const CycleConfig& cfg, int cycle = 0);

struct CyclicResult {
    std::unique_ptr<MotionModel> model;
    std::vector<CycleLog> cycles;
};

CyclicResult cyclic_distill(const MotionModel& initial, std::span<const ImagePair> train,
                            std::span<const ImagePair> validation, const CycleConfig& cfg);

/// Convenience wrappers over NetworkModel.
struct NetworkDistillResult {
    ModelParams params;
    std::vector<CycleLog> cycles;
};
NetworkDistillResult cyclic_distill(const ModelParams& initial, std::span<const ImagePair> train,
                                    std::span<const ImagePair> validation, const CycleConfig& cfg);

/// Distillation objective for one pair, as a function of the student flow.
FlowObjective distill_objective(const FlowField& student_flow, const FlowField& teacher_flow, const Image& source,
                                const Image& target, const LossWeights& w);

}  // namespace mpn
