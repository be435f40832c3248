#include "mapl/network.hpp"

#include "mapl/error.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace mapl::net {
namespace {

// He gain for LeakyReLU with the network's slope.
const double kReluGain = std::sqrt(2.0 / (1.0 + nn::kLeakySlope * nn::kLeakySlope));

nn::ConvAct conv_act(const std::string& name, int in, int out, int stride, bool with_norm = true) {
    return nn::ConvAct(nn::Conv2d(name, in, out, 3, stride, true), /*act=*/true, with_norm);
}

void push(std::vector<nn::Parameter*>& out, nn::Conv2d& c) {
    out.push_back(&c.weight);
    if (c.has_bias()) out.push_back(&c.bias);
}

void push(std::vector<nn::Parameter*>& out, nn::ConvAct& b) {
    push(out, b.conv);
    if (b.normalize) {
        out.push_back(&b.norm.gamma);
        out.push_back(&b.norm.beta);
    }
}

void push(std::vector<nn::Parameter*>& out, nn::Linear& l) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
}

void add_into(Tensor& acc, const Tensor& g) {
    if (g.empty()) return;
    if (acc.empty())
        acc = g;
    else
        acc += g;
}

Tensor sigmoid_tensor(const Tensor& z) {
    Tensor y = z;
    for (double& v : y.data) v = nn::sigmoid(v);
    return y;
}

}  // namespace

void NetworkConfig::validate() const {
    if (image_size < 16 || image_size % 16 != 0)
        throw ConfigError("dataset.image_size must be a positive multiple of 16, got " + std::to_string(image_size));
    if (base_width < 1) throw ConfigError("train.base_width must be >= 1");
    if (predictor_hidden < 1) throw ConfigError("train.predictor_hidden must be >= 1");
}

Tensor to_input(const Image& img) {
    Tensor t(3, img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) t.at(c, y, x) = 2.0 * static_cast<double>(img.at(y, x, c)) - 1.0;
    return t;
}

// ---------------------------------------------------------------- encoder

Encoder::Encoder(const NetworkConfig& cfg) {
    const int c0 = cfg.width(0), c1 = cfg.width(1), c2 = cfg.width(2), c3 = cfg.width(3);
    layers_ = {conv_act("encoder.stem.0", 3, c0, 2, false),     conv_act("encoder.stem.1", c0, c0, 1, false),
               conv_act("encoder.block1.0", c0, c1, 2, false),  conv_act("encoder.block1.1", c1, c1, 1, false),
               conv_act("encoder.block2.0", c1, c2, 2, false),  conv_act("encoder.block2.1", c2, c2, 1, false),
               conv_act("encoder.block3.0", c2, c3, 2, false),  conv_act("encoder.block3.1", c3, c3, 1, false)};
    set_frozen(cfg.freeze_memory_layers);
}

void Encoder::init(Rng& rng) {
    for (auto& l : layers_) l.conv.init(rng, kReluGain);
}

void Encoder::set_frozen(bool frozen) {
    for (int i = 0; i < kLayers; ++i) {
        const bool trainable = !(frozen && i < kFrozenLayers);
        std::vector<nn::Parameter*> ps;
        push(ps, layers_[i]);
        for (auto* p : ps) p->trainable = trainable;
    }
}

std::vector<nn::Parameter*> Encoder::parameters() {
    std::vector<nn::Parameter*> out;
    for (auto& l : layers_) push(out, l);
    return out;
}

EncodeResult Encoder::forward(const Tensor& input, Trace* trace) const {
    std::array<Tensor, kLayers + 1> local;
    auto& act = trace ? trace->act : local;
    act[0] = input;
    for (int i = 0; i < kLayers; ++i) act[i + 1] = layers_[i].forward(act[i], trace ? &trace->cache[i] : nullptr);

    EncodeResult r;
    r.stem = act[2];
    r.features[0] = act[4];
    r.features[1] = act[6];
    r.features[2] = act[8];
    const Tensor& f3 = act[8];
    r.latent.assign(f3.channels, 0.0);
    for (int c = 0; c < f3.channels; ++c) {
        const double* p = f3.plane(c);
        double s = 0.0;
        for (std::size_t i = 0; i < f3.plane_size(); ++i) s += p[i];
        r.latent[c] = s / static_cast<double>(f3.plane_size());
    }
    return r;
}

void Encoder::backward(const Trace& t, const Tensor& d_stem, const FeaturePyramid& d_features,
                       std::span<const double> d_latent, bool all_grads) {
    const Tensor& f3 = t.act[8];
    Tensor g = d_features[2].empty() ? Tensor(f3.channels, f3.height, f3.width) : d_features[2];
    if (!d_latent.empty()) {
        const double inv = 1.0 / static_cast<double>(f3.plane_size());
        for (int c = 0; c < f3.channels; ++c) {
            double* p = g.plane(c);
            for (std::size_t i = 0; i < f3.plane_size(); ++i) p[i] += d_latent[c] * inv;
        }
    }
    for (int l = kLayers - 1; l >= 0; --l) {
        const bool param_grads = all_grads || layers_[l].conv.weight.trainable;
        const bool need_dx = l > 0 && (all_grads || layers_[l - 1].conv.weight.trainable);
        if (!param_grads && !need_dx) break;
        Tensor dx = layers_[l].backward(t.act[l], t.act[l + 1], g, need_dx, param_grads, &t.cache[l]);
        if (!need_dx) break;
        g = std::move(dx);
        if (l == 6) add_into(g, d_features[1]);
        if (l == 4) add_into(g, d_features[0]);
        if (l == 2) add_into(g, d_stem);
    }
}

// ------------------------------------------------------ coordinate attention

CoordAttention::CoordAttention(const std::string& name, int channels) {
    const int mid = std::max(4, channels / 8);
    squeeze_ = nn::Conv2d(name + ".squeeze", channels, mid, 1, 1, true);
    expand_h_ = nn::Conv2d(name + ".expand_h", mid, channels, 1, 1, true);
    expand_w_ = nn::Conv2d(name + ".expand_w", mid, channels, 1, 1, true);
}

void CoordAttention::init(Rng& rng) {
    squeeze_.init(rng, kReluGain);
    expand_h_.init(rng, 1.0);
    expand_w_.init(rng, 1.0);
}

std::vector<nn::Parameter*> CoordAttention::parameters() {
    std::vector<nn::Parameter*> out;
    push(out, squeeze_);
    push(out, expand_h_);
    push(out, expand_w_);
    return out;
}

Tensor CoordAttention::forward(const Tensor& x, Trace* trace) const {
    Trace local;
    Trace& t = trace ? *trace : local;
    const int C = x.channels, H = x.height, W = x.width;
    t.x = x;
    // Row means in [0, H), column means in [H, H + W).
    t.pooled = Tensor(C, 1, H + W);
    for (int c = 0; c < C; ++c) {
        double* p = t.pooled.plane(c);
        for (int y = 0; y < H; ++y)
            for (int xx = 0; xx < W; ++xx) {
                const double v = x.at(c, y, xx);
                p[y] += v / W;
                p[H + xx] += v / H;
            }
    }
    t.hidden = squeeze_.forward(t.pooled);
    nn::leaky_relu_inplace(t.hidden);
    const int M = t.hidden.channels;
    Tensor hh(M, 1, H), hw(M, 1, W);
    for (int m = 0; m < M; ++m) {
        std::copy_n(t.hidden.plane(m), H, hh.plane(m));
        std::copy_n(t.hidden.plane(m) + H, W, hw.plane(m));
    }
    t.gate_h = sigmoid_tensor(expand_h_.forward(hh));
    t.gate_w = sigmoid_tensor(expand_w_.forward(hw));
    Tensor y(C, H, W);
    for (int c = 0; c < C; ++c)
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx)
                y.at(c, yy, xx) = x.at(c, yy, xx) * t.gate_h.at(c, 0, yy) * t.gate_w.at(c, 0, xx);
    return y;
}

Tensor CoordAttention::backward(const Trace& t, const Tensor& dy) {
    const Tensor& x = t.x;
    const int C = x.channels, H = x.height, W = x.width;
    Tensor dx(C, H, W), dgh(C, 1, H), dgw(C, 1, W);
    for (int c = 0; c < C; ++c)
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) {
                const double g = dy.at(c, yy, xx), gh = t.gate_h.at(c, 0, yy), gw = t.gate_w.at(c, 0, xx);
                dx.at(c, yy, xx) = g * gh * gw;
                dgh.at(c, 0, yy) += g * x.at(c, yy, xx) * gw;
                dgw.at(c, 0, xx) += g * x.at(c, yy, xx) * gh;
            }
    for (std::size_t i = 0; i < dgh.size(); ++i) dgh.data[i] *= t.gate_h.data[i] * (1.0 - t.gate_h.data[i]);
    for (std::size_t i = 0; i < dgw.size(); ++i) dgw.data[i] *= t.gate_w.data[i] * (1.0 - t.gate_w.data[i]);

    const int M = t.hidden.channels;
    Tensor hh(M, 1, H), hw(M, 1, W);
    for (int m = 0; m < M; ++m) {
        std::copy_n(t.hidden.plane(m), H, hh.plane(m));
        std::copy_n(t.hidden.plane(m) + H, W, hw.plane(m));
    }
    const Tensor dhh = expand_h_.backward(hh, dgh, true, true);
    const Tensor dhw = expand_w_.backward(hw, dgw, true, true);
    Tensor dhidden(M, 1, H + W);
    for (int m = 0; m < M; ++m) {
        std::copy_n(dhh.plane(m), H, dhidden.plane(m));
        std::copy_n(dhw.plane(m), W, dhidden.plane(m) + H);
    }
    const Tensor dpre = nn::leaky_relu_backward(t.hidden, dhidden);
    const Tensor dp = squeeze_.backward(t.pooled, dpre, true, true);
    for (int c = 0; c < C; ++c) {
        const double* p = dp.plane(c);
        for (int yy = 0; yy < H; ++yy)
            for (int xx = 0; xx < W; ++xx) dx.at(c, yy, xx) += p[yy] / W + p[H + xx] / H;
    }
    return dx;
}

// ------------------------------------------------------------------- msff

Msff::Msff(const NetworkConfig& cfg) : use_msff_(cfg.use_msff), use_ca_(cfg.use_ca) {
    for (int s = 0; s < 3; ++s) {
        const int c = cfg.width(s + 1);
        const std::string tag = std::to_string(s + 1);
        reduce_[s] = conv_act("msff.reduce" + tag, 2 * c, c, 1);
        if (use_ca_) ca_[s] = CoordAttention("msff.ca" + tag, c);
    }
    if (use_msff_)
        for (int s = 0; s < 2; ++s)
            align_[s] = nn::Conv2d("msff.align" + std::to_string(s + 1), cfg.width(s + 2), cfg.width(s + 1), 1, 1,
                                   false);
}

void Msff::init(Rng& rng) {
    for (int s = 0; s < 3; ++s) {
        reduce_[s].conv.init(rng, kReluGain);
        if (use_ca_) ca_[s].init(rng);
    }
    if (use_msff_)
        for (auto& a : align_) a.init(rng, 1.0);
}

std::vector<nn::Parameter*> Msff::parameters() {
    std::vector<nn::Parameter*> out;
    for (int s = 0; s < 3; ++s) {
        push(out, reduce_[s]);
        if (use_ca_)
            for (auto* p : ca_[s].parameters()) out.push_back(p);
    }
    if (use_msff_)
        for (auto& a : align_) push(out, a);
    return out;
}

FusedPyramid Msff::fuse(const std::array<Tensor, 3>& reduced, std::array<Tensor, 2>* upsampled) const {
    FusedPyramid f;
    if (!use_msff_) {
        for (int s = 0; s < 3; ++s) f[s] = reduced[s];
        return f;
    }
    f[2] = reduced[2];
    for (int s = 1; s >= 0; --s) {
        Tensor up = upsample2x(f[s + 1]);
        f[s] = reduced[s];
        f[s] += align_[s].forward(up);
        if (upsampled) (*upsampled)[s] = std::move(up);
    }
    return f;
}

FusedPyramid Msff::forward(const ConcatPyramid& ci, Trace* trace) const {
    Trace local;
    Trace& t = trace ? *trace : local;
    t.ci = ci;
    for (int s = 0; s < 3; ++s) {
        t.reduced[s] = reduce_[s].forward(ci[s], &t.reduce_cache[s]);
        t.attended[s] = use_ca_ ? ca_[s].forward(t.reduced[s], &t.ca[s]) : t.reduced[s];
    }
    return fuse(t.attended, &t.upsampled);
}

ConcatPyramid Msff::backward(const Trace& t, const FusedPyramid& d_fused) {
    std::array<Tensor, 3> d_att;
    if (use_msff_) {
        d_att[0] = d_fused[0];
        Tensor g = d_fused[1];
        g += upsample2x_adjoint(align_[0].backward(t.upsampled[0], d_att[0], true, true));
        d_att[1] = g;
        Tensor g3 = d_fused[2];
        g3 += upsample2x_adjoint(align_[1].backward(t.upsampled[1], d_att[1], true, true));
        d_att[2] = std::move(g3);
    } else {
        for (int s = 0; s < 3; ++s) d_att[s] = d_fused[s];
    }
    ConcatPyramid d_ci;
    for (int s = 0; s < 3; ++s) {
        const Tensor d_red = use_ca_ ? ca_[s].backward(t.ca[s], d_att[s]) : d_att[s];
        d_ci[s] = reduce_[s].backward(t.ci[s], t.reduced[s], d_red, true, true, &t.reduce_cache[s]);
    }
    return d_ci;
}

// ---------------------------------------------------------------- decoder

Decoder::Decoder(const NetworkConfig& cfg) : use_attention_(cfg.use_attention) {
    const int c0 = cfg.width(0), c1 = cfg.width(1), c2 = cfg.width(2), c3 = cfg.width(3);
    up3_ = conv_act("decoder.up3", c3, c2, 1);
    dec2_ = conv_act("decoder.dec2", 2 * c2, c2, 1);
    up2_ = conv_act("decoder.up2", c2, c1, 1);
    dec1_ = conv_act("decoder.dec1", 2 * c1, c1, 1);
    up1_ = conv_act("decoder.up1", c1, c0, 1);
    dec0_ = conv_act("decoder.dec0", 2 * c0, c0, 1);
    up0_ = conv_act("decoder.up0", c0, c0, 1);
    head_ = nn::Conv2d("decoder.head", c0, 1, 3, 1, true);
}

void Decoder::init(Rng& rng) {
    for (auto* c : {&up3_, &dec2_, &up2_, &dec1_, &up1_, &dec0_, &up0_}) c->conv.init(rng, kReluGain);
    head_.init(rng, 1.0);
}

std::vector<nn::Parameter*> Decoder::parameters() {
    std::vector<nn::Parameter*> out;
    for (auto* c : {&up3_, &dec2_, &up2_, &dec1_, &up1_, &dec0_, &up0_}) push(out, *c);
    push(out, head_);
    return out;
}

Tensor Decoder::forward(const FusedPyramid& fused, const AttentionMaps& maps, const Tensor& stem, Trace* trace) const {
    Trace local;
    Trace& t = trace ? *trace : local;
    t.fused = fused;
    t.stem = stem;
    if (use_attention_) {
        t.maps = maps;
        t.stem_map = upsample2x(maps[0]);
    }
    auto gate = [&](const Tensor& x, const Tensor& m) { return use_attention_ ? multiply_broadcast(x, m) : x; };

    t.w3 = gate(fused[2], maps[2]);
    t.up3_in = upsample2x(t.w3);
    t.u3 = up3_.forward(t.up3_in, &t.cache[0]);
    t.cat2 = concat_channels(t.u3, gate(fused[1], maps[1]));
    t.d2 = dec2_.forward(t.cat2, &t.cache[1]);
    t.up2_in = upsample2x(t.d2);
    t.u2 = up2_.forward(t.up2_in, &t.cache[2]);
    t.cat1 = concat_channels(t.u2, gate(fused[0], maps[0]));
    t.d1 = dec1_.forward(t.cat1, &t.cache[3]);
    t.up1_in = upsample2x(t.d1);
    t.u1 = up1_.forward(t.up1_in, &t.cache[4]);
    t.cat0 = concat_channels(t.u1, gate(stem, t.stem_map));
    t.d0 = dec0_.forward(t.cat0, &t.cache[5]);
    t.up0_in = upsample2x(t.d0);
    t.u0 = up0_.forward(t.up0_in, &t.cache[6]);
    t.prob = sigmoid_tensor(head_.forward(t.u0));
    return t.prob;
}

Decoder::Grads Decoder::backward(const Trace& t, const Tensor& d_prob) {
    Grads g;
    Tensor dlogit = d_prob;
    for (std::size_t i = 0; i < dlogit.size(); ++i) dlogit.data[i] *= t.prob.data[i] * (1.0 - t.prob.data[i]);

    // Gated skip input x (.) m: gradient to x and, with attention, to m.
    auto ungate = [&](const Tensor& dw, const Tensor& x, const Tensor& m, Tensor& dx, Tensor* dm) {
        if (!use_attention_) {
            dx = dw;
            return;
        }
        dx = multiply_broadcast(dw, m);
        if (dm) add_into(*dm, channel_dot(dw, x));
    };

    const Tensor du0 = head_.backward(t.u0, dlogit, true, true);
    const Tensor dd0 = upsample2x_adjoint(up0_.backward(t.up0_in, t.u0, du0, true, true, &t.cache[6]));
    const Tensor dcat0 = dec0_.backward(t.cat0, t.d0, dd0, true, true, &t.cache[5]);
    Tensor du1, dw0;
    split_channels(dcat0, t.u1.channels, du1, dw0);
    Tensor d_stem_map;
    ungate(dw0, t.stem, t.stem_map, g.stem, &d_stem_map);

    const Tensor dd1 = upsample2x_adjoint(up1_.backward(t.up1_in, t.u1, du1, true, true, &t.cache[4]));
    const Tensor dcat1 = dec1_.backward(t.cat1, t.d1, dd1, true, true, &t.cache[3]);
    Tensor du2, dw1;
    split_channels(dcat1, t.u2.channels, du2, dw1);
    ungate(dw1, t.fused[0], t.maps[0], g.fused[0], &g.maps[0]);

    const Tensor dd2 = upsample2x_adjoint(up2_.backward(t.up2_in, t.u2, du2, true, true, &t.cache[2]));
    const Tensor dcat2 = dec2_.backward(t.cat2, t.d2, dd2, true, true, &t.cache[1]);
    Tensor du3, dw2;
    split_channels(dcat2, t.u3.channels, du3, dw2);
    ungate(dw2, t.fused[1], t.maps[1], g.fused[1], &g.maps[1]);

    const Tensor dw3 = upsample2x_adjoint(up3_.backward(t.up3_in, t.u3, du3, true, true, &t.cache[0]));
    ungate(dw3, t.fused[2], t.maps[2], g.fused[2], &g.maps[2]);

    if (use_attention_) add_into(g.maps[0], upsample2x_adjoint(d_stem_map));
    return g;
}

// -------------------------------------------------------------- predictor

Predictor::Predictor(const NetworkConfig& cfg)
    : fc1_("predictor.fc1", cfg.width(3), cfg.predictor_hidden), fc2_("predictor.fc2", cfg.predictor_hidden, 1) {}

void Predictor::init(Rng& rng) {
    fc1_.init(rng, kReluGain);
    fc2_.init(rng, 1.0);
}

std::vector<nn::Parameter*> Predictor::parameters() {
    std::vector<nn::Parameter*> out;
    push(out, fc1_);
    push(out, fc2_);
    return out;
}

double Predictor::forward(const LatentRep& latent, Trace* trace) const {
    std::vector<double> h = fc1_.forward(latent);
    for (double& v : h) v = v >= 0.0 ? v : nn::kLeakySlope * v;
    const double q = nn::sigmoid(fc2_.forward(h)[0]);
    if (trace) {
        trace->latent = latent;
        trace->hidden = h;
        trace->q = q;
    }
    return q;
}

LatentRep Predictor::backward(const Trace& t, double d_q) {
    const double dz = d_q * t.q * (1.0 - t.q);
    std::vector<double> dh = fc2_.backward(t.hidden, std::span<const double>(&dz, 1), true, true);
    for (std::size_t i = 0; i < dh.size(); ++i)
        if (t.hidden[i] < 0.0) dh[i] *= nn::kLeakySlope;
    return fc1_.backward(t.latent, dh, true, true);
}

// ------------------------------------------------------------------ model

Model::Model(const NetworkConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), encoder_(cfg), msff_(cfg), decoder_(cfg), predictor_(cfg) {
    cfg_.validate();
    Rng rng(derive_seed(seed, fnv1a("network.init")));
    encoder_.init(rng);
    msff_.init(rng);
    decoder_.init(rng);
    predictor_.init(rng);
}

std::vector<nn::Parameter*> Model::parameters() {
    std::vector<nn::Parameter*> out;
    for (auto* p : encoder_.parameters()) out.push_back(p);
    for (auto* p : msff_.parameters()) out.push_back(p);
    for (auto* p : decoder_.parameters()) out.push_back(p);
    for (auto* p : predictor_.parameters()) out.push_back(p);
    return out;
}

std::vector<const nn::Parameter*> Model::parameters() const {
    auto ps = const_cast<Model*>(this)->parameters();
    return {ps.begin(), ps.end()};
}

void Model::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

void Model::check_input(const Image& img) const {
    if (img.height != cfg_.image_size || img.width != cfg_.image_size)
        throw ParameterError("model expects " + std::to_string(cfg_.image_size) + "x" +
                             std::to_string(cfg_.image_size) + " images, got " + std::to_string(img.height) + "x" +
                             std::to_string(img.width));
}

EncodeResult Model::encode(const Image& img) const {
    check_input(img);
    return encoder_.forward(to_input(img));
}

double Model::image_score(const Tensor& prob) const {
    if (cfg_.score_rule == ImageScoreRule::max) return *std::max_element(prob.data.begin(), prob.data.end());
    std::vector<double> v = prob.data;
    const std::size_t k = std::max<std::size_t>(1, (v.size() + 99) / 100);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k - 1), v.end(), std::greater<>());
    std::sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), std::greater<>());
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += v[i];
    return s / static_cast<double>(k);
}

Model::Trace Model::forward_train(const Image& img, const memory::MemoryBank& bank) const {
    if (bank.empty()) throw StateError("memory bank is empty; build it before running the model");
    check_input(img);
    Trace t;
    t.encoded = encoder_.forward(to_input(img), &t.encoder);
    t.match = memory::match_memory(t.encoded.features, bank, cfg_.per_scale_argmin);
    const ConcatPyramid ci = memory::concat_info(t.encoded.features, t.match.best);
    const FusedPyramid fused = msff_.forward(ci, &t.msff);
    const AttentionMaps maps = cfg_.use_attention ? memory::attention_maps(t.match.best) : AttentionMaps{};
    const Tensor prob = decoder_.forward(fused, maps, t.encoded.stem, &t.decoder);
    t.out.seg = ScoreMap(prob.height, prob.width);
    t.out.seg.values = prob.data;
    t.out.image_score = image_score(prob);
    t.out.q = predictor_.forward(t.encoded.latent, &t.predictor);
    return t;
}

Prediction Model::forward(const Image& img, const memory::MemoryBank& bank) const {
    return forward_train(img, bank).out;
}

void Model::backward(const Trace& t, const memory::MemoryBank& bank, const std::vector<double>& d_seg, double d_q,
                     bool all_grads) {
    Tensor d_prob(1, cfg_.image_size, cfg_.image_size);
    if (d_seg.size() != d_prob.size()) throw ParameterError("backward: seg gradient has the wrong size");
    d_prob.data = d_seg;

    Decoder::Grads dg = decoder_.backward(t.decoder, d_prob);
    const ConcatPyramid d_ci = msff_.backward(t.msff, dg.fused);
    FeaturePyramid dx;
    DiffPyramid d_best;
    for (int s = 0; s < 3; ++s) split_channels(d_ci[s], t.encoded.features[s].channels, dx[s], d_best[s]);
    if (cfg_.use_attention) {
        const DiffPyramid d_att = memory::attention_maps_backward(t.match.best, dg.maps);
        for (int s = 0; s < 3; ++s) d_best[s] += d_att[s];
    }
    memory::match_backward(t.encoded.features, bank, t.match, d_best, dx);
    const LatentRep d_latent = predictor_.backward(t.predictor, d_q);
    encoder_.backward(t.encoder, dg.stem, dx, d_latent, all_grads);
}

}  // namespace mapl::net
