#pragma once

#include "mapl/features.hpp"
#include "mapl/image.hpp"
#include "mapl/layers.hpp"
#include "mapl/memory.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mapl::net {

enum class ImageScoreRule { max, top1pct_mean };

struct NetworkConfig {
    int image_size = 256;
    int base_width = 32;
    int predictor_hidden = 64;
    bool use_msff = true;
    bool use_attention = true;
    bool use_ca = false;
    bool freeze_memory_layers = true;
    bool per_scale_argmin = false;
    ImageScoreRule score_rule = ImageScoreRule::max;

    int width(int level) const { return base_width << level; }
    void validate() const;
};

/// Converts an RGB image in [0,1] to the network input tensor (3 x H x W,
/// values mapped to [-1,1]).
Tensor to_input(const Image& img);

struct EncodeResult {
    Tensor stem;  // f0, at half resolution
    FeaturePyramid features;
    LatentRep latent;
};

/// Stem, then three stride-2 blocks. The stem and first block are the
/// memory layers and can be frozen.
class Encoder {
public:
    static constexpr int kLayers = 8;
    static constexpr int kFrozenLayers = 4;

    Encoder() = default;
    explicit Encoder(const NetworkConfig& cfg);

    struct Trace {
        std::array<Tensor, kLayers + 1> act;  // act[0] is the input
        std::array<nn::ConvAct::Cache, kLayers> cache;
    };
    EncodeResult forward(const Tensor& input, Trace* trace = nullptr) const;
    /// Backpropagates gradients landing on f0, f1, f2, f3 and the latent.
    void backward(const Trace& trace, const Tensor& d_stem, const FeaturePyramid& d_features,
                  std::span<const double> d_latent, bool all_grads);

    std::vector<nn::Parameter*> parameters();
    void init(Rng& rng);
    void set_frozen(bool frozen);

private:
    std::array<nn::ConvAct, kLayers> layers_;
};

/// Coordinate attention: pooled along each axis, squeezed, and re-expanded
/// into per-row and per-column sigmoid gates.
class CoordAttention {
public:
    CoordAttention() = default;
    CoordAttention(const std::string& name, int channels);

    struct Trace {
        Tensor x, pooled, hidden, gate_h, gate_w;
    };
    Tensor forward(const Tensor& x, Trace* trace = nullptr) const;
    Tensor backward(const Trace& t, const Tensor& dy);
    std::vector<nn::Parameter*> parameters();
    void init(Rng& rng);

private:
    nn::Conv2d squeeze_, expand_h_, expand_w_;
};

/// Multi-scale feature fusion: per-scale channel reduction of CI, optional
/// coordinate attention, and top-down addition of upsampled coarser scales.
class Msff {
public:
    Msff() = default;
    explicit Msff(const NetworkConfig& cfg);

    struct Trace {
        ConcatPyramid ci;
        std::array<Tensor, 3> reduced;   // after reduce conv + activation
        std::array<nn::ConvAct::Cache, 3> reduce_cache;
        std::array<Tensor, 3> attended;  // after coordinate attention (== reduced without CA)
        std::array<CoordAttention::Trace, 3> ca;
        std::array<Tensor, 2> upsampled;  // up(fused[s+1]) for s = 0, 1
    };
    FusedPyramid forward(const ConcatPyramid& ci, Trace* trace = nullptr) const;
    ConcatPyramid backward(const Trace& t, const FusedPyramid& d_fused);

    /// The top-down fusion stage alone, applied to already reduced maps.
    FusedPyramid fuse(const std::array<Tensor, 3>& reduced, std::array<Tensor, 2>* upsampled = nullptr) const;

    std::vector<nn::Parameter*> parameters();
    void init(Rng& rng);

private:
    bool use_msff_ = true, use_ca_ = false;
    std::array<nn::ConvAct, 3> reduce_;
    std::array<CoordAttention, 3> ca_;
    std::array<nn::Conv2d, 2> align_;  // 1x1, maps width(s+1) to width(s)
};

/// Decoder from fused features (and the stem features) to a one-channel
/// probability map at input resolution.
class Decoder {
public:
    Decoder() = default;
    explicit Decoder(const NetworkConfig& cfg);

    struct Trace {
        FusedPyramid fused;
        AttentionMaps maps;
        Tensor stem, stem_map;
        Tensor w3, up3_in, u3, cat2, d2, up2_in, u2, cat1, d1, up1_in, u1, cat0, d0, up0_in, u0, prob;
        std::array<nn::ConvAct::Cache, 7> cache;  // up3, dec2, up2, dec1, up1, dec0, up0
    };
    /// maps is ignored when attention is disabled.
    Tensor forward(const FusedPyramid& fused, const AttentionMaps& maps, const Tensor& stem,
                   Trace* trace = nullptr) const;

    struct Grads {
        FusedPyramid fused;
        AttentionMaps maps;
        Tensor stem;
    };
    Grads backward(const Trace& t, const Tensor& d_prob);

    std::vector<nn::Parameter*> parameters();
    void init(Rng& rng);

private:
    bool use_attention_ = true;
    nn::ConvAct up3_, dec2_, up2_, dec1_, up1_, dec0_, up0_;
    nn::Conv2d head_;
};

/// Image-level anomaly probability from the latent representation.
class Predictor {
public:
    Predictor() = default;
    explicit Predictor(const NetworkConfig& cfg);

    struct Trace {
        LatentRep latent;
        std::vector<double> hidden;
        double q = 0.0;
    };
    double forward(const LatentRep& latent, Trace* trace = nullptr) const;
    LatentRep backward(const Trace& t, double d_q);

    std::vector<nn::Parameter*> parameters();
    void init(Rng& rng);

private:
    nn::Linear fc1_, fc2_;
};

struct Prediction {
    ScoreMap seg;
    double image_score = 0.0;
    double q = 0.0;
};

class Model {
public:
    Model() = default;
    Model(const NetworkConfig& cfg, std::uint64_t seed);

    const NetworkConfig& config() const noexcept { return cfg_; }

    EncodeResult encode(const Image& img) const;
    FeaturePyramid encode_features(const Image& img) const { return encode(img).features; }

    /// Inference. Throws StateError on an empty memory bank and
    /// ParameterError on an image of the wrong size.
    Prediction forward(const Image& img, const memory::MemoryBank& bank) const;

    struct Trace {
        Encoder::Trace encoder;
        EncodeResult encoded;
        memory::Match match;
        Msff::Trace msff;
        Decoder::Trace decoder;
        Predictor::Trace predictor;
        Prediction out;
    };
    Trace forward_train(const Image& img, const memory::MemoryBank& bank) const;
    /// Accumulates parameter gradients; bank must be the one used in
    /// forward_train. d_seg is dL/dSegMap (H x W),
    /// d_q is dL/dq. With all_grads, frozen parameters also receive gradients.
    void backward(const Trace& t, const memory::MemoryBank& bank, const std::vector<double>& d_seg, double d_q,
                  bool all_grads = false);

    std::vector<nn::Parameter*> parameters();
    std::vector<const nn::Parameter*> parameters() const;
    void zero_grad();

    /// Decoder output for a given fused pyramid and attention maps; exposed
    /// for inspection and tests.
    Tensor decode(const FusedPyramid& fused, const AttentionMaps& maps, const Tensor& stem) const {
        return decoder_.forward(fused, maps, stem);
    }
    const Msff& msff() const noexcept { return msff_; }

private:
    NetworkConfig cfg_;
    Encoder encoder_;
    Msff msff_;
    Decoder decoder_;
    Predictor predictor_;

    void check_input(const Image& img) const;
    double image_score(const Tensor& prob) const;
};

}  // namespace mapl::net
