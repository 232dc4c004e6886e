#pragma once

// Desk-scale motion networks.
//
// pyramid variant (MPN):
//   shared encoder, one conv per level (stride 1 at level 0, stride 2 after)
//   per-level pair features p_l = [enc_l(source) | enc_l(target)]
//   per-level motion heads p_l -> flow_l at native scale (motion pyramid)
//   decoder on the bilinearly upsampled, concatenated p_l -> initial flow
//   fusion on [initial | 2^l * upsample(flow_l)] -> residual, refined = initial + residual
//
// single_scale variant (baseline): same encoder, decoder fed with the
// coarsest pair features only, no heads and no fusion; refined = initial.
//
// The last convolution of every flow-producing branch is zero-initialised, so
// a fresh model predicts exactly zero flow everywhere.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mpn/grid.hpp"
#include "mpn/layers.hpp"
#include "mpn/losses.hpp"

namespace mpn {

enum class Variant { Pyramid, SingleScale };

const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);

struct ArchConfig {
    int num_levels = 4;
    std::vector<int> encoder_channels{8, 16, 32, 32};
    int kernel_size = 3;
    double negative_slope = 0.1;
    int fusion_channels = 16;
    int decoder_channels = 16;
    int head_channels = 8;
    Variant variant = Variant::Pyramid;

    void validate() const;
    bool operator==(const ArchConfig&) const = default;
};

void to_json(nlohmann::json& j, const ArchConfig& c);
void from_json(const nlohmann::json& j, ArchConfig& c);

struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
};

struct ModelParams {
    ArchConfig config;
    std::uint64_t seed = 0;
    int epochs_trained = 0;
    std::vector<ParamTensor> tensors;

    const ParamTensor& find(const std::string& name) const;
    std::size_t num_values() const;
    bool operator==(const ModelParams& o) const;
};

/// 64-bit FNV-1a over config, names, shapes and value bits.
std::uint64_t fingerprint(const ModelParams& p);

/// Gradient buffers aligned with ModelParams::tensors.
using ParamGrads = std::vector<std::vector<double>>;
ParamGrads zero_grads(const ModelParams& p);

ModelParams init_model(const ArchConfig& cfg, std::uint64_t seed);

struct ConvTrace {
    Tensor input;
};

struct EncoderTrace {
    std::vector<ConvTrace> convs;  // one per level
    std::vector<Tensor> features;  // activated outputs, one per level
};

struct HeadTrace {
    ConvTrace conv1;
    ConvTrace conv2;  // conv2.input is the activated hidden layer
};

struct ForwardTrace {
    ArchConfig config;
    std::uint64_t params_fingerprint = 0;
    int height = 0;
    int width = 0;

    EncoderTrace source_enc;
    EncoderTrace target_enc;
    std::vector<Tensor> pair_features;  // per level
    std::vector<HeadTrace> heads;       // pyramid variant only
    std::vector<int> decoder_levels;    // levels feeding the decoder
    ConvTrace decoder_conv2;            // input is the activated first decoder layer
    ConvTrace decoder_conv3;
    ConvTrace fusion_conv1;
    ConvTrace fusion_conv2;

    FlowField initial_flow;
    std::vector<FlowField> pyramid_flows;  // native scale, pixel units of that level
    FlowField refined_flow;
};

ForwardTrace forward(const ModelParams& params, const Image& source, const Image& target);

/// Upstream gradients of the scalar loss w.r.t. the network outputs. Empty
/// fields are treated as zero.
struct FlowGrads {
    FlowField refined;
    FlowField initial;
    std::vector<FlowField> pyramid;
};

ParamGrads backward(const ForwardTrace& trace, const ModelParams& params, const FlowGrads& grads);

struct AdamState {
    ParamGrads m;
    ParamGrads v;
    long step = 0;
};

AdamState make_adam_state(const ModelParams& p);
void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state, double lr);

struct ImagePair {
    Image source;
    Image target;
};

/// Full unsupervised objective for one pair: the motion pyramid warps the
/// downsampled source pyramid and is compared against the downsampled target
/// pyramid (per-level terms), and the refined flow warps the full-resolution
/// source (refined terms). The single-scale variant only has the refined term.
struct ObjectiveResult {
    LossReport report;
    FlowGrads grads;
};
ObjectiveResult unsupervised_objective(const ForwardTrace& trace, const ImagePair& pair, const LossWeights& w);

struct EpochLog {
    int epoch = 0;
    LossReport mean;  // component-wise mean over the epoch's pairs
    int pairs = 0;
};
void to_json(nlohmann::json& j, const EpochLog& e);

struct TrainOptions {
    int epochs = 30;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    LossWeights weights;
    /// Called after every epoch; may be empty.
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
};

/// One Adam step per pair, pairs visited in a seed-determined order that is
/// reshuffled every epoch. The epoch counter continues from
/// params.epochs_trained.
TrainResult train_unsupervised(ModelParams params, std::span<const ImagePair> dataset, const TrainOptions& opt);

}  // namespace mpn
