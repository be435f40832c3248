#pragma once

#include "mapl/image.hpp"
#include "mapl/rng.hpp"

#include <span>
#include <string_view>
#include <vector>

namespace mapl::sim {

/// Lattice cell counts along each axis; rows must divide the field height,
/// cols the field width.
struct PerlinFreq {
    int rows = 1;
    int cols = 1;
};

/// Gradient-noise field; zero at every lattice corner, bounded in [-1, 1].
struct PerlinField {
    int height = 0;
    int width = 0;
    PerlinFreq freq;
    std::vector<double> values;

    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Classic Perlin gradient noise. Unit gradients are drawn as angles
/// 2*pi*U[0,1) in row-major lattice order ((rows+1) x (cols+1) corners);
/// corner contributions are blended with the quintic fade
/// 6t^5 - 15t^4 + 10t^3 and the result scaled by sqrt(2) into [-1, 1].
PerlinField perlin2d(int height, int width, PerlinFreq freq, Rng& rng);

/// 1 where field > threshold.
GrayMask perlin_mask(const PerlinField& field, double threshold);

/// 1 where the channel-mean luminance exceeds bg_threshold, XOR invert.
GrayMask foreground_mask(const Image& img, double bg_threshold, bool invert);

/// Elementwise AND of two same-shaped masks.
GrayMask compose_mask(const GrayMask& fg, const GrayMask& mp);

enum class NoiseKind { texture, structure };
std::string_view to_string(NoiseKind k);

struct StructureOptions {
    int grid = 8;        // grid x grid patches, permuted
    bool jitter = true;  // per-patch quarter-turn rotation and a global brightness factor
};

/// Texture: a random crop of a random pool image resized to the source size.
/// Structure: the source cut into a grid of patches that are shuffled
/// (and optionally jittered). Throws ConfigError for texture with an empty pool.
Image make_noise_image(const Image& src, NoiseKind kind, std::span<const Image> texture_pool,
                       const StructureOptions& structure, Rng& rng);

struct BlendResult {
    Image noise_foreground;  // delta (M . I_n) + (1 - delta)(M . I)
    Image image;             // (1 - M) . I + noise_foreground
};

BlendResult blend(const Image& img, const Image& noise, const GrayMask& mask, double delta);

struct SimConfig {
    double delta_lo = 0.15;
    double delta_hi = 1.0;
    double perlin_threshold = 0.5;
    int perlin_max_exponent = 5;  // frequencies 2^k, k in [0, max], per axis
    double bg_threshold = 0.1;
    bool bg_invert = false;
    bool use_foreground_mask = false;
    double texture_prob = 0.5;
    StructureOptions structure;

    void validate() const;
};

struct SimulatedSample {
    Image image;  // I_A
    GrayMask mask;  // G
    double delta = 0.0;
    NoiseKind noise_kind = NoiseKind::structure;
    bool degenerate = false;  // mask stayed empty after every Perlin resample
};

/// Number of Perlin resamples tried when the composed mask is empty.
inline constexpr int kMaskResamples = 5;

SimulatedSample simulate(const Image& img, const SimConfig& cfg, std::span<const Image> texture_pool, Rng& rng);

/// Random per-axis frequency 2^k (k <= max_exponent) dividing the given size.
PerlinFreq random_frequency(int height, int width, int max_exponent, Rng& rng);

}  // namespace mapl::sim
