#include "mpn/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "mpn/rng.hpp"

namespace mpn {

// ---- configuration ----------------------------------------------------------

const char* variant_name(Variant v) { return v == Variant::Pyramid ? "pyramid" : "single_scale"; }

Variant parse_variant(const std::string& s) {
    if (s == "pyramid") return Variant::Pyramid;
    if (s == "single_scale") return Variant::SingleScale;
    throw std::invalid_argument("unknown variant '" + s + "' (expected pyramid or single_scale)");
}

void ArchConfig::validate() const {
    if (num_levels < 2) throw std::invalid_argument("ArchConfig: num_levels must be >= 2");
    if (static_cast<int>(encoder_channels.size()) != num_levels) {
        throw std::invalid_argument("ArchConfig: encoder_channels must have num_levels entries");
    }
    for (int c : encoder_channels) {
        if (c <= 0) throw std::invalid_argument("ArchConfig: encoder channels must be positive");
    }
    if (kernel_size < 1 || kernel_size % 2 == 0) throw std::invalid_argument("ArchConfig: kernel_size must be odd");
    if (!(negative_slope >= 0.0 && negative_slope < 1.0)) {
        throw std::invalid_argument("ArchConfig: negative_slope must be in [0, 1)");
    }
    if (fusion_channels <= 0 || decoder_channels <= 0 || head_channels <= 0) {
        throw std::invalid_argument("ArchConfig: hidden channel counts must be positive");
    }
}

void to_json(nlohmann::json& j, const ArchConfig& c) {
    j = nlohmann::json{{"num_levels", c.num_levels},
                       {"encoder_channels", c.encoder_channels},
                       {"kernel_size", c.kernel_size},
                       {"negative_slope", c.negative_slope},
                       {"fusion_channels", c.fusion_channels},
                       {"decoder_channels", c.decoder_channels},
                       {"head_channels", c.head_channels},
                       {"variant", variant_name(c.variant)}};
}

void from_json(const nlohmann::json& j, ArchConfig& c) {
    bool channels_given = false;
    for (const auto& [key, value] : j.items()) {
        if (key == "num_levels") value.get_to(c.num_levels);
        else if (key == "encoder_channels") { value.get_to(c.encoder_channels); channels_given = true; }
        else if (key == "kernel_size") value.get_to(c.kernel_size);
        else if (key == "negative_slope") value.get_to(c.negative_slope);
        else if (key == "fusion_channels") value.get_to(c.fusion_channels);
        else if (key == "decoder_channels") value.get_to(c.decoder_channels);
        else if (key == "head_channels") value.get_to(c.head_channels);
        else if (key == "variant") c.variant = parse_variant(value.get<std::string>());
        else throw std::invalid_argument("unknown architecture key: " + key);
    }
    if (!channels_given && static_cast<int>(c.encoder_channels.size()) != c.num_levels) {
        c.encoder_channels.resize(std::max(c.num_levels, 0), c.encoder_channels.empty() ? 8 : c.encoder_channels.back());
    }
    c.validate();
}

// ---- parameter layout -------------------------------------------------------

namespace {

struct ConvSlot {
    int weight = -1;
    int bias = -1;
    int out = 0;
    int in = 0;
    int k = 0;
    bool zero_init = false;
};

struct Layout {
    std::vector<ConvSlot> enc;
    std::vector<ConvSlot> head1;
    std::vector<ConvSlot> head2;
    ConvSlot dec1, dec2, dec3;
    ConvSlot fuse1, fuse2;
    std::vector<int> dec_levels;
    std::vector<int> dec_offsets;  // input-channel offset of each decoder level block
};

Layout build_layout(const ArchConfig& cfg, std::vector<ParamTensor>* create) {
    Layout lay;
    int next = 0;
    auto conv = [&](const std::string& name, int out, int in, int k, bool zero) {
        ConvSlot s{next, next + 1, out, in, k, zero};
        next += 2;
        if (create) {
            create->push_back({name + ".weight", {out, in, k, k}, std::vector<double>(static_cast<std::size_t>(out) * in * k * k)});
            create->push_back({name + ".bias", {out}, std::vector<double>(out)});
        }
        return s;
    };
    const int L = cfg.num_levels, k = cfg.kernel_size;
    for (int l = 0; l < L; ++l) {
        const int in = l == 0 ? 1 : cfg.encoder_channels[l - 1];
        lay.enc.push_back(conv("enc" + std::to_string(l), cfg.encoder_channels[l], in, k, false));
    }
    const bool pyramid = cfg.variant == Variant::Pyramid;
    if (pyramid) {
        for (int l = 0; l < L; ++l) {
            const std::string n = "head" + std::to_string(l);
            lay.head1.push_back(conv(n + ".conv1", cfg.head_channels, 2 * cfg.encoder_channels[l], k, false));
            lay.head2.push_back(conv(n + ".conv2", 2, cfg.head_channels, k, true));
        }
        for (int l = 0; l < L; ++l) lay.dec_levels.push_back(l);
    } else {
        lay.dec_levels.push_back(L - 1);
    }
    int dec_in = 0;
    for (int l : lay.dec_levels) {
        lay.dec_offsets.push_back(dec_in);
        dec_in += 2 * cfg.encoder_channels[l];
    }
    const int D = cfg.decoder_channels;
    lay.dec1 = conv("dec.conv1", D, dec_in, 1, false);
    lay.dec2 = conv("dec.conv2", D, D, k, false);
    lay.dec3 = conv("dec.conv3", 2, D, k, true);
    if (pyramid) {
        lay.fuse1 = conv("fuse.conv1", cfg.fusion_channels, 2 + 2 * L, k, false);
        lay.fuse2 = conv("fuse.conv2", 2, cfg.fusion_channels, k, true);
    }
    return lay;
}

Layout checked_layout(const ModelParams& p) {
    std::vector<ParamTensor> expected;
    Layout lay = build_layout(p.config, &expected);
    if (expected.size() != p.tensors.size()) throw std::invalid_argument("model parameters do not match architecture");
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (expected[i].name != p.tensors[i].name || expected[i].shape != p.tensors[i].shape ||
            expected[i].values.size() != p.tensors[i].values.size()) {
            throw std::invalid_argument("model parameter '" + p.tensors[i].name + "' does not match architecture");
        }
    }
    return lay;
}

ConvWeights weights(const ModelParams& p, const ConvSlot& s) {
    return {p.tensors[s.weight].values, p.tensors[s.bias].values, s.out, s.in, s.k};
}

ConvGrads grads_of(ParamGrads& g, const ConvSlot& s) { return {g[s.weight], g[s.bias]}; }

int stride_of_level(int l) { return l == 0 ? 1 : 2; }

/// Columns [offset, offset + count) of the pointwise decoder weight.
std::vector<double> weight_block(const ParamTensor& w, int out, int in_total, int offset, int count) {
    std::vector<double> b(static_cast<std::size_t>(out) * count);
    for (int o = 0; o < out; ++o) {
        std::copy_n(w.values.begin() + static_cast<std::ptrdiff_t>(o) * in_total + offset, count,
                    b.begin() + static_cast<std::ptrdiff_t>(o) * count);
    }
    return b;
}

Tensor apply_conv(const Tensor& in, const ModelParams& p, const ConvSlot& s, int stride, ConvTrace& trace) {
    trace.input = in;
    return conv2d(in, weights(p, s), stride);
}

Tensor apply_conv_act(const Tensor& in, const ModelParams& p, const ConvSlot& s, int stride, ConvTrace& trace,
                      double slope) {
    Tensor out = apply_conv(in, p, s, stride, trace);
    leaky_relu_inplace(out, slope);
    return out;
}

Tensor back_conv(const ConvTrace& t, const ModelParams& p, const ConvSlot& s, int stride, const Tensor& g,
                 ParamGrads& grads, bool need_input = true) {
    return conv2d_backward(t.input, weights(p, s), stride, g, grads_of(grads, s), need_input);
}

EncoderTrace encode(const ModelParams& p, const Layout& lay, const Image& img) {
    EncoderTrace e;
    const int L = p.config.num_levels;
    e.convs.resize(L);
    Tensor x = image_to_tensor(img);
    for (int l = 0; l < L; ++l) {
        x = apply_conv_act(x, p, lay.enc[l], stride_of_level(l), e.convs[l], p.config.negative_slope);
        e.features.push_back(x);
    }
    return e;
}

Tensor zeros_like_flow(int h, int w) { return Tensor(2, h, w); }

Tensor grad_tensor(const FlowField& f, int h, int w) {
    if (f.num_pixels() == 0) return zeros_like_flow(h, w);
    if (f.height() != h || f.width() != w) throw std::invalid_argument("backward: upstream flow gradient has wrong shape");
    return flow_to_tensor(f);
}

}  // namespace

// ---- parameters ---------------------------------------------------------------

const ParamTensor& ModelParams::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw std::out_of_range("no parameter tensor named " + name);
}

std::size_t ModelParams::num_values() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.values.size();
    return n;
}

bool ModelParams::operator==(const ModelParams& o) const {
    if (!(config == o.config) || tensors.size() != o.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        const auto& a = tensors[i];
        const auto& b = o.tensors[i];
        if (a.name != b.name || a.shape != b.shape || a.values.size() != b.values.size()) return false;
        if (std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

std::uint64_t fingerprint(const ModelParams& p) {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const void* data, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    const std::string cfg = nlohmann::json(p.config).dump();
    feed(cfg.data(), cfg.size());
    for (const auto& t : p.tensors) {
        feed(t.name.data(), t.name.size());
        feed(t.shape.data(), t.shape.size() * sizeof(int));
        feed(t.values.data(), t.values.size() * sizeof(double));
    }
    return h;
}

ParamGrads zero_grads(const ModelParams& p) {
    ParamGrads g;
    g.reserve(p.tensors.size());
    for (const auto& t : p.tensors) g.emplace_back(t.values.size(), 0.0);
    return g;
}

ModelParams init_model(const ArchConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    p.seed = seed;
    const Layout lay = build_layout(cfg, &p.tensors);

    Rng rng(seed, Stream::Init);
    auto fill = [&](const ConvSlot& s) {
        if (s.weight < 0 || s.zero_init) return;
        const double fan_in = static_cast<double>(s.in) * s.k * s.k;
        const double a = cfg.negative_slope;
        const double bound = std::sqrt(6.0 / ((1.0 + a * a) * fan_in));
        for (double& v : p.tensors[s.weight].values) v = rng.uniform(-bound, bound);
    };
    for (const auto& s : lay.enc) fill(s);
    for (std::size_t l = 0; l < lay.head1.size(); ++l) {
        fill(lay.head1[l]);
        fill(lay.head2[l]);
    }
    for (const auto* s : {&lay.dec1, &lay.dec2, &lay.dec3, &lay.fuse1, &lay.fuse2}) fill(*s);
    return p;
}

// ---- forward ------------------------------------------------------------------

ForwardTrace forward(const ModelParams& params, const Image& source, const Image& target) {
    if (!source.same_shape(target)) throw std::invalid_argument("forward: source and target sizes differ");
    const ArchConfig& cfg = params.config;
    const int L = cfg.num_levels;
    const int H = source.height(), W = source.width();
    if (std::min(H, W) < 4 * (1 << (L - 1))) {
        throw std::invalid_argument("forward: images too small for " + std::to_string(L) + " levels");
    }
    const Layout lay = checked_layout(params);
    const double slope = cfg.negative_slope;

    ForwardTrace t;
    t.config = cfg;
    t.params_fingerprint = fingerprint(params);
    t.height = H;
    t.width = W;
    t.source_enc = encode(params, lay, source);
    t.target_enc = encode(params, lay, target);
    for (int l = 0; l < L; ++l) {
        const Tensor* parts[] = {&t.source_enc.features[l], &t.target_enc.features[l]};
        t.pair_features.push_back(concat_channels(parts));
    }

    const bool pyramid = cfg.variant == Variant::Pyramid;
    std::vector<Tensor> level_flows;
    if (pyramid) {
        t.heads.resize(L);
        for (int l = 0; l < L; ++l) {
            Tensor hid = apply_conv_act(t.pair_features[l], params, lay.head1[l], 1, t.heads[l].conv1, slope);
            level_flows.push_back(apply_conv(hid, params, lay.head2[l], 1, t.heads[l].conv2));
            t.pyramid_flows.push_back(tensor_to_flow(level_flows.back()));
        }
    }

    // Pointwise projection of each level at native resolution, then resized and
    // summed: equal to projecting the resized concatenation, since both
    // operations are linear and the resize weights sum to one.
    t.decoder_levels = lay.dec_levels;
    const ParamTensor& dec_w = params.tensors[lay.dec1.weight];
    const auto& dec_b = params.tensors[lay.dec1.bias].values;
    Tensor pre(cfg.decoder_channels, H, W);
    for (std::size_t i = 0; i < lay.dec_levels.size(); ++i) {
        const int l = lay.dec_levels[i];
        const Tensor& pf = t.pair_features[l];
        const auto block = weight_block(dec_w, lay.dec1.out, lay.dec1.in, lay.dec_offsets[i], pf.c);
        const std::vector<double> no_bias(lay.dec1.out, 0.0);
        Tensor proj = conv2d(pf, {block, no_bias, lay.dec1.out, pf.c, 1}, 1);
        if (proj.h != H || proj.w != W) proj = resize_bilinear(proj, H, W);
        add_inplace(pre, proj);
    }
    for (int c = 0; c < pre.c; ++c) {
        double* ch = pre.channel(c);
        for (std::size_t i = 0; i < pre.plane(); ++i) ch[i] += dec_b[c];
    }
    leaky_relu_inplace(pre, slope);
    Tensor d2 = apply_conv_act(pre, params, lay.dec2, 1, t.decoder_conv2, slope);
    Tensor initial = apply_conv(d2, params, lay.dec3, 1, t.decoder_conv3);
    t.initial_flow = tensor_to_flow(initial);

    if (pyramid) {
        std::vector<Tensor> scaled;
        scaled.reserve(L);
        for (int l = 0; l < L; ++l) scaled.push_back(resize_bilinear(level_flows[l], H, W, static_cast<double>(1 << l)));
        std::vector<const Tensor*> parts{&initial};
        for (const auto& s : scaled) parts.push_back(&s);
        Tensor fin = concat_channels(parts);
        Tensor f1 = apply_conv_act(fin, params, lay.fuse1, 1, t.fusion_conv1, slope);
        Tensor refined = apply_conv(f1, params, lay.fuse2, 1, t.fusion_conv2);
        add_inplace(refined, initial);
        t.refined_flow = tensor_to_flow(refined);
    } else {
        t.refined_flow = t.initial_flow;
    }
    return t;
}

// ---- backward -----------------------------------------------------------------

ParamGrads backward(const ForwardTrace& t, const ModelParams& params, const FlowGrads& up) {
    if (t.params_fingerprint != fingerprint(params) || !(t.config == params.config)) {
        throw std::invalid_argument("backward: trace was produced with different parameters");
    }
    const Layout lay = checked_layout(params);
    const ArchConfig& cfg = params.config;
    const int L = cfg.num_levels, H = t.height, W = t.width;
    const double slope = cfg.negative_slope;
    const bool pyramid = cfg.variant == Variant::Pyramid;
    ParamGrads g = zero_grads(params);

    Tensor g_refined = grad_tensor(up.refined, H, W);
    Tensor g_initial = grad_tensor(up.initial, H, W);
    add_inplace(g_initial, g_refined);

    std::vector<Tensor> g_pair(L);
    for (int l = 0; l < L; ++l) g_pair[l] = Tensor(t.pair_features[l].c, t.pair_features[l].h, t.pair_features[l].w);

    if (pyramid) {
        if (!up.pyramid.empty() && static_cast<int>(up.pyramid.size()) != L) {
            throw std::invalid_argument("backward: pyramid gradient level count mismatch");
        }
        std::vector<Tensor> g_flow;
        for (int l = 0; l < L; ++l) {
            const auto& pf = t.pyramid_flows[l];
            g_flow.push_back(up.pyramid.empty() ? zeros_like_flow(pf.height(), pf.width())
                                                : grad_tensor(up.pyramid[l], pf.height(), pf.width()));
        }

        Tensor g_f1 = back_conv(t.fusion_conv2, params, lay.fuse2, 1, g_refined, g);
        leaky_relu_backward_inplace(t.fusion_conv2.input, g_f1, slope);
        Tensor g_fin = back_conv(t.fusion_conv1, params, lay.fuse1, 1, g_f1, g);
        add_inplace(g_initial, slice_channels(g_fin, 0, 2));
        for (int l = 0; l < L; ++l) {
            const Tensor part = slice_channels(g_fin, 2 + 2 * l, 2);
            add_inplace(g_flow[l], resize_bilinear_backward(part, g_flow[l].h, g_flow[l].w, static_cast<double>(1 << l)));
        }
        for (int l = 0; l < L; ++l) {
            Tensor g_hid = back_conv(t.heads[l].conv2, params, lay.head2[l], 1, g_flow[l], g);
            leaky_relu_backward_inplace(t.heads[l].conv2.input, g_hid, slope);
            add_inplace(g_pair[l], back_conv(t.heads[l].conv1, params, lay.head1[l], 1, g_hid, g));
        }
    }

    Tensor g_d2 = back_conv(t.decoder_conv3, params, lay.dec3, 1, g_initial, g);
    leaky_relu_backward_inplace(t.decoder_conv3.input, g_d2, slope);
    Tensor g_d1 = back_conv(t.decoder_conv2, params, lay.dec2, 1, g_d2, g);
    leaky_relu_backward_inplace(t.decoder_conv2.input, g_d1, slope);
    {
        auto& gb = g[lay.dec1.bias];
        for (int c = 0; c < g_d1.c; ++c) {
            const double* ch = g_d1.channel(c);
            for (std::size_t i = 0; i < g_d1.plane(); ++i) gb[c] += ch[i];
        }
        const ParamTensor& dec_w = params.tensors[lay.dec1.weight];
        auto& gw = g[lay.dec1.weight];
        for (std::size_t i = 0; i < lay.dec_levels.size(); ++i) {
            const int l = lay.dec_levels[i];
            const Tensor& pf = t.pair_features[l];
            const int off = lay.dec_offsets[i];
            const auto block = weight_block(dec_w, lay.dec1.out, lay.dec1.in, off, pf.c);
            const std::vector<double> no_bias(lay.dec1.out, 0.0);
            std::vector<double> gblock(block.size(), 0.0), gbias(lay.dec1.out, 0.0);
            const Tensor g_proj = (pf.h != H || pf.w != W) ? resize_bilinear_backward(g_d1, pf.h, pf.w) : g_d1;
            add_inplace(g_pair[l], conv2d_backward(pf, {block, no_bias, lay.dec1.out, pf.c, 1}, 1, g_proj,
                                                   {gblock, gbias}));
            for (int o = 0; o < lay.dec1.out; ++o) {
                for (int c = 0; c < pf.c; ++c) {
                    gw[static_cast<std::size_t>(o) * lay.dec1.in + off + c] += gblock[static_cast<std::size_t>(o) * pf.c + c];
                }
            }
        }
    }

    // Shared encoder: gradients from both images accumulate into one set of weights.
    for (int side = 0; side < 2; ++side) {
        const EncoderTrace& enc = side == 0 ? t.source_enc : t.target_enc;
        Tensor gl;
        for (int l = L - 1; l >= 0; --l) {
            const int c = cfg.encoder_channels[l];
            Tensor from_pair = slice_channels(g_pair[l], side * c, c);
            if (l == L - 1) gl = std::move(from_pair);
            else add_inplace(gl, from_pair);
            leaky_relu_backward_inplace(enc.features[l], gl, slope);
            gl = back_conv(enc.convs[l], params, lay.enc[l], stride_of_level(l), gl, g, l > 0);
        }
    }
    return g;
}

// ---- optimiser ------------------------------------------------------------------

AdamState make_adam_state(const ModelParams& p) { return {zero_grads(p), zero_grads(p), 0}; }

void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (grads.size() != params.tensors.size() || state.m.size() != params.tensors.size()) {
        throw std::invalid_argument("adam_step: gradient/state shape mismatch");
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].size() != params.tensors[i].values.size() || state.m[i].size() != grads[i].size()) {
            throw std::invalid_argument("adam_step: tensor '" + params.tensors[i].name + "' shape mismatch");
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        auto& p = params.tensors[i].values;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = grads[i][j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
        }
    }
}

// ---- training ---------------------------------------------------------------------

ObjectiveResult unsupervised_objective(const ForwardTrace& trace, const ImagePair& pair, const LossWeights& w) {
    ObjectiveResult out;
    const int L = trace.config.num_levels;
    if (trace.config.variant == Variant::Pyramid) {
        const Pyramid<Image> src = downsample_image(pair.source, L);
        const Pyramid<Image> tgt = downsample_image(pair.target, L);
        Pyramid<Image> warped;
        Pyramid<FlowField> flows{trace.pyramid_flows};
        for (int l = 0; l < L; ++l) warped.levels.push_back(warp(src[l], flows[l]));
        MultiscaleGrad mg = multiscale_total_grad(warped, tgt, flows, w);
        out.report = mg.report;
        for (int l = 0; l < L; ++l) {
            FlowField gflow;
            warp_backward(src[l], flows[l], mg.d_warped[l], &gflow, nullptr);
            auto gd = gflow.data();
            const auto sd = mg.d_flow[l].data();
            for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += sd[i];
            out.grads.pyramid.push_back(std::move(gflow));
        }
    }

    const Image warped = warp(pair.source, trace.refined_flow);
    ImageLoss mse = photometric_mse(warped, pair.target);
    FlowLoss smooth = smoothness_2nd(trace.refined_flow);
    out.report.refined_mse = mse.value;
    out.report.refined_smooth = smooth.value;
    out.report.total += mse.value + w.lambda_smooth * smooth.value;
    warp_backward(pair.source, trace.refined_flow, mse.grad, &out.grads.refined, nullptr);
    auto gd = out.grads.refined.data();
    const auto sd = smooth.grad.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += w.lambda_smooth * sd[i];
    return out;
}

void to_json(nlohmann::json& j, const EpochLog& e) {
    j = nlohmann::json{{"epoch", e.epoch}, {"pairs", e.pairs}};
    j["loss"] = e.mean;
}


TrainResult train_unsupervised(ModelParams params, std::span<const ImagePair> dataset, const TrainOptions& opt) {
    if (dataset.empty()) throw std::invalid_argument("train_unsupervised: empty dataset");
    for (const auto& p : dataset) {
        if (!p.source.same_shape(dataset[0].source) || !p.target.same_shape(dataset[0].source)) {
            throw std::invalid_argument("train_unsupervised: all pairs must share one size");
        }
    }
    opt.weights.validate();

    TrainResult result;
    AdamState state = make_adam_state(params);
    std::vector<std::size_t> order(dataset.size());
    for (int e = 0; e < opt.epochs; ++e) {
        const int epoch = params.epochs_trained;
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng(opt.seed, Stream::Shuffle, static_cast<std::uint64_t>(epoch)).shuffle(order);

        EpochLog log;
        log.epoch = epoch;
        for (std::size_t idx : order) {
            const ImagePair& pair = dataset[idx];
            const ForwardTrace trace = forward(params, pair.source, pair.target);
            const ObjectiveResult obj = unsupervised_objective(trace, pair, opt.weights);
            adam_step(params, backward(trace, params, obj.grads), state, opt.lr);
            accumulate_report(log.mean, obj.report);
            ++log.pairs;
        }
        scale_report(log.mean, 1.0 / log.pairs);
        ++params.epochs_trained;
        if (opt.on_epoch) opt.on_epoch(log);
        result.log.push_back(std::move(log));
    }
    result.params = std::move(params);
    return result;
}

}  // namespace mpn
