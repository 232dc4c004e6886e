#include "mpn/distill.hpp"

#include <cmath>
#include <stdexcept>

#include "mpn/compensation.hpp"
#include "mpn/rng.hpp"

namespace mpn {

void CycleConfig::validate() const {
    if (num_cycles < 1) throw std::invalid_argument("num_cycles must be >= 1");
    if (epochs_per_cycle < 0) throw std::invalid_argument("epochs_per_cycle must be >= 0");
    if (!(convergence_rel > 0.0)) throw std::invalid_argument("convergence_rel must be positive");
    if (convergence_window < 1) throw std::invalid_argument("convergence_window must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
    if (teacher_steps < 1) throw std::invalid_argument("teacher_steps must be >= 1");
    weights.validate();
}

void to_json(nlohmann::json& j, const CycleConfig& c) {
    j = nlohmann::json{{"num_cycles", c.num_cycles},
                       {"epochs_per_cycle", c.epochs_per_cycle},
                       {"convergence_rel", c.convergence_rel},
                       {"convergence_window", c.convergence_window},
                       {"lr", c.lr},
                       {"teacher_steps", c.teacher_steps},
                       {"seed", c.seed},
                       {"weights", c.weights}};
}

void from_json(const nlohmann::json& j, CycleConfig& c) {
    for (const auto& [key, value] : j.items()) {
        if (key == "num_cycles") value.get_to(c.num_cycles);
        else if (key == "epochs_per_cycle") value.get_to(c.epochs_per_cycle);
        else if (key == "convergence_rel") value.get_to(c.convergence_rel);
        else if (key == "convergence_window") value.get_to(c.convergence_window);
        else if (key == "lr") value.get_to(c.lr);
        else if (key == "teacher_steps") value.get_to(c.teacher_steps);
        else if (key == "seed") value.get_to(c.seed);
        else if (key == "weights") value.get_to(c.weights);
        else throw std::invalid_argument("unknown distill config key: " + key);
    }
    c.validate();
}

void to_json(nlohmann::json& j, const CycleLog& c) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : c.epochs) {
        epochs.push_back({{"epoch", e.epoch}, {"train", e.train_mean}, {"val_flow_loss", e.val_flow_loss}});
    }
    j = nlohmann::json{{"cycle", c.cycle},
                       {"teacher_hash_before", c.teacher_hash_before},
                       {"teacher_hash_after", c.teacher_hash_after},
                       {"teacher_frozen", c.teacher_frozen()},
                       {"student_init_hash", c.student_init_hash},
                       {"initial_val_flow_loss", c.initial_val_flow_loss},
                       {"final_val_flow_loss", c.final_val_flow_loss()},
                       {"converged", c.converged},
                       {"epochs", std::move(epochs)}};
}

FlowObjective distill_objective(const FlowField& student_flow, const FlowField& teacher_flow, const Image& source,
                                const Image& target, const LossWeights& w) {
    const Image warped = warp(source, student_flow);
    DistillGrad dg = distill_total_grad(student_flow, teacher_flow, warped, target, w);
    FlowField through_warp;
    warp_backward(source, student_flow, dg.d_warped, &through_warp, nullptr);
    auto g = dg.d_student.data();
    const auto t = through_warp.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += t[i];
    return {dg.report, std::move(dg.d_student)};
}

namespace {

double mean_flow_loss(const MotionModel& student, std::span<const ImagePair> pairs,
                      const std::vector<FlowField>& teacher_flows) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        sum += flow_distance(student.estimate(pairs[i].source, pairs[i].target), teacher_flows[i]).value;
    }
    return sum / static_cast<double>(pairs.size());
}

}  // namespace

DistillResult distill_student(const MotionModel& teacher, std::span<const ImagePair> train,
                              std::span<const ImagePair> validation, const CycleConfig& cfg, int cycle) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("distill_student: empty dataset");
    const std::span<const ImagePair> val = validation.empty() ? train : validation;

    DistillResult out;
    out.log.cycle = cycle;
    out.log.teacher_hash_before = teacher.fingerprint();
    out.student = teacher.clone();
    out.student->reset_optimizer();
    out.log.student_init_hash = out.student->fingerprint();

    // Teacher is frozen for the whole cycle, so its validation flows are fixed.
    std::vector<FlowField> val_teacher;
    val_teacher.reserve(val.size());
    for (const auto& p : val) val_teacher.push_back(progressive_flow(teacher, p.source, p.target, cfg.teacher_steps).flow);
    out.log.initial_val_flow_loss = mean_flow_loss(*out.student, val, val_teacher);

    std::vector<double> history{out.log.initial_val_flow_loss};
    std::vector<std::size_t> order(train.size());
    for (int e = 0; e < cfg.epochs_per_cycle; ++e) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng(cfg.seed, Stream::Distill, (static_cast<std::uint64_t>(cycle) << 32) | static_cast<std::uint64_t>(e))
            .shuffle(order);

        DistillEpoch ep;
        ep.epoch = e;
        for (std::size_t idx : order) {
            const ImagePair& p = train[idx];
            const FlowField teacher_flow = progressive_flow(teacher, p.source, p.target, cfg.teacher_steps).flow;
            const LossReport r = out.student->train_step(
                p.source, p.target,
                [&](const FlowField& f) { return distill_objective(f, teacher_flow, p.source, p.target, cfg.weights); },
                cfg.lr);
            accumulate_report(ep.train_mean, r);
        }
        scale_report(ep.train_mean, 1.0 / static_cast<double>(train.size()));
        ep.val_flow_loss = mean_flow_loss(*out.student, val, val_teacher);
        history.push_back(ep.val_flow_loss);
        out.log.epochs.push_back(std::move(ep));

        const std::size_t n = history.size();
        const auto window = static_cast<std::size_t>(cfg.convergence_window);
        if (n > window) {
            const double before = history[n - 1 - window];
            if (before <= 0.0 || (before - history.back()) / before < cfg.convergence_rel) {
                out.log.converged = true;
                break;
            }
        }
    }

    out.log.teacher_hash_after = teacher.fingerprint();
    if (!out.log.teacher_frozen()) throw std::logic_error("distill_student: teacher changed during training");
    return out;
}

CyclicResult cyclic_distill(const MotionModel& initial, std::span<const ImagePair> train,
                            std::span<const ImagePair> validation, const CycleConfig& cfg) {
    cfg.validate();
    CyclicResult out;
    out.model = initial.clone();
    for (int c = 0; c < cfg.num_cycles; ++c) {
        DistillResult r = distill_student(*out.model, train, validation, cfg, c);
        out.cycles.push_back(std::move(r.log));
        out.model = std::move(r.student);
    }
    return out;
}

NetworkDistillResult cyclic_distill(const ModelParams& initial, std::span<const ImagePair> train,
                                    std::span<const ImagePair> validation, const CycleConfig& cfg) {
    CyclicResult r = cyclic_distill(NetworkModel(initial), train, validation, cfg);
    return {static_cast<const NetworkModel&>(*r.model).params(), std::move(r.cycles)};
}

}  // namespace mpn
