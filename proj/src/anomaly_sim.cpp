#include "mapl/anomaly_sim.hpp"

#include "mapl/dataio.hpp"
#include "mapl/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mapl::sim {
namespace {

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

int random_power_dividing(int size, int max_exponent, Rng& rng) {
    std::vector<int> options;
    for (int k = 0; k <= max_exponent; ++k) {
        const int f = 1 << k;
        if (f <= size && size % f == 0) options.push_back(f);
    }
    return options[rng.below(options.size())];
}

// Quarter-turn rotation of a square s x s patch, in place in a scratch copy.
void rotate_patch(const Image& src, int sy, int sx, int s, int quarter, Image& dst, int dy, int dx) {
    for (int y = 0; y < s; ++y) {
        for (int x = 0; x < s; ++x) {
            int ry = y, rx = x;
            switch (quarter) {
                case 1: ry = s - 1 - x; rx = y; break;
                case 2: ry = s - 1 - y; rx = s - 1 - x; break;
                case 3: ry = x; rx = s - 1 - y; break;
                default: break;
            }
            for (int c = 0; c < 3; ++c) dst.at(dy + y, dx + x, c) = src.at(sy + ry, sx + rx, c);
        }
    }
}

}  // namespace

std::string_view to_string(NoiseKind k) { return k == NoiseKind::texture ? "texture" : "structure"; }

PerlinField perlin2d(int height, int width, PerlinFreq freq, Rng& rng) {
    if (height < 1 || width < 1) throw ParameterError("perlin2d: size must be positive");
    if (freq.rows < 1 || freq.cols < 1) throw ParameterError("perlin2d: frequency must be >= 1");
    if (height % freq.rows != 0 || width % freq.cols != 0)
        throw ParameterError("perlin2d: frequency (" + std::to_string(freq.rows) + "," + std::to_string(freq.cols) +
                             ") does not divide " + std::to_string(height) + "x" + std::to_string(width));

    const int gr = freq.rows + 1, gc = freq.cols + 1;
    std::vector<double> gx(static_cast<std::size_t>(gr) * gc), gy(gx.size());
    for (std::size_t i = 0; i < gx.size(); ++i) {
        const double angle = 2.0 * std::numbers::pi * rng.uniform();
        gx[i] = std::cos(angle);
        gy[i] = std::sin(angle);
    }

    PerlinField field{height, width, freq, std::vector<double>(static_cast<std::size_t>(height) * width)};
    const int cell_h = height / freq.rows, cell_w = width / freq.cols;
    for (int y = 0; y < height; ++y) {
        const int i = y / cell_h;
        const double t = static_cast<double>(y - i * cell_h) / cell_h;
        const double ft = fade(t);
        for (int x = 0; x < width; ++x) {
            const int j = x / cell_w;
            const double s = static_cast<double>(x - j * cell_w) / cell_w;
            const auto corner = [&](int di, int dj) {
                const std::size_t g = static_cast<std::size_t>(i + di) * gc + (j + dj);
                return gx[g] * (s - dj) + gy[g] * (t - di);
            };
            const double fs = fade(s);
            const double top = corner(0, 0) + fs * (corner(0, 1) - corner(0, 0));
            const double bottom = corner(1, 0) + fs * (corner(1, 1) - corner(1, 0));
            const double v = std::numbers::sqrt2 * (top + ft * (bottom - top));
            field.values[static_cast<std::size_t>(y) * width + x] = std::clamp(v, -1.0, 1.0);
        }
    }
    return field;
}

GrayMask perlin_mask(const PerlinField& field, double threshold) {
    GrayMask m(field.height, field.width);
    for (std::size_t i = 0; i < field.values.size(); ++i) m.pixels[i] = field.values[i] > threshold ? 1 : 0;
    return m;
}

GrayMask foreground_mask(const Image& img, double bg_threshold, bool invert) {
    GrayMask m(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double lum = (static_cast<double>(img.at(y, x, 0)) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
            const bool fg = lum > bg_threshold;
            m.at(y, x) = (fg != invert) ? 1 : 0;
        }
    }
    return m;
}

GrayMask compose_mask(const GrayMask& fg, const GrayMask& mp) {
    if (!fg.same_shape(mp)) throw ParameterError("compose_mask: shape mismatch");
    GrayMask m(fg.height, fg.width);
    for (std::size_t i = 0; i < m.pixels.size(); ++i) m.pixels[i] = fg.pixels[i] & mp.pixels[i];
    return m;
}

Image make_noise_image(const Image& src, NoiseKind kind, std::span<const Image> texture_pool,
                       const StructureOptions& structure, Rng& rng) {
    if (kind == NoiseKind::texture) {
        if (texture_pool.empty()) throw ConfigError("texture noise requested but the texture pool is empty");
        const Image& tex = texture_pool[rng.below(texture_pool.size())];
        const int side_max = std::min(tex.height, tex.width);
        const int side = std::max(1, static_cast<int>(side_max * rng.uniform(0.5, 1.0)));
        const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(tex.height - side + 1)));
        const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(tex.width - side + 1)));
        Image crop(side, side);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                for (int c = 0; c < 3; ++c) crop.at(y, x, c) = tex.at(oy + y, ox + x, c);
        return dataio::resize_bilinear(crop, src.height, src.width);
    }

    const int g = structure.grid;
    if (g < 1 || src.height % g != 0 || src.width % g != 0)
        throw ParameterError("structure noise: grid " + std::to_string(g) + " does not divide the image size");
    const int ph = src.height / g, pw = src.width / g;
    std::vector<int> perm(static_cast<std::size_t>(g) * g);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    rng.shuffle(perm);

    Image out(src.height, src.width);
    for (int p = 0; p < g * g; ++p) {
        const int q = perm[p];
        const int dy = (p / g) * ph, dx = (p % g) * pw;
        const int sy = (q / g) * ph, sx = (q % g) * pw;
        int quarter = 0;
        if (structure.jitter) quarter = ph == pw ? static_cast<int>(rng.below(4)) : 2 * static_cast<int>(rng.below(2));
        if (ph == pw) {
            rotate_patch(src, sy, sx, ph, quarter, out, dy, dx);
        } else {
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x) {
                    const int ry = quarter == 2 ? ph - 1 - y : y;
                    const int rx = quarter == 2 ? pw - 1 - x : x;
                    for (int c = 0; c < 3; ++c) out.at(dy + y, dx + x, c) = src.at(sy + ry, sx + rx, c);
                }
        }
    }
    if (structure.jitter) {
        const float gain = static_cast<float>(rng.uniform(0.85, 1.15));
        for (float& v : out.pixels) v = std::clamp(v * gain, 0.0f, 1.0f);
    }
    return out;
}

BlendResult blend(const Image& img, const Image& noise, const GrayMask& mask, double delta) {
    if (!img.same_shape(noise) || img.height != mask.height || img.width != mask.width)
        throw ParameterError("blend: shape mismatch");
    BlendResult r{Image(img.height, img.width), Image(img.height, img.width)};
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double m = mask.at(y, x);
            for (int c = 0; c < 3; ++c) {
                const double i = img.at(y, x, c), n = noise.at(y, x, c);
                const double fgv = delta * (m * n) + (1.0 - delta) * (m * i);
                r.noise_foreground.at(y, x, c) = static_cast<float>(fgv);
                r.image.at(y, x, c) = static_cast<float>(std::clamp((1.0 - m) * i + fgv, 0.0, 1.0));
            }
        }
    }
    return r;
}

void SimConfig::validate() const {
    if (!(0.0 <= delta_lo && delta_lo <= delta_hi && delta_hi <= 1.0))
        throw ConfigError("simulate.delta_lo/delta_hi must satisfy 0 <= lo <= hi <= 1");
    if (!(0.0 <= texture_prob && texture_prob <= 1.0)) throw ConfigError("simulate.texture_prob must be in [0, 1]");
    if (!(0.0 <= bg_threshold && bg_threshold <= 1.0)) throw ConfigError("simulate.bg_threshold must be in [0, 1]");
    if (perlin_max_exponent < 0 || perlin_max_exponent > 12)
        throw ConfigError("simulate.perlin_max_exponent must be in [0, 12]");
    if (structure.grid < 1) throw ConfigError("simulate.structure_grid must be >= 1");
}

PerlinFreq random_frequency(int height, int width, int max_exponent, Rng& rng) {
    const int rows = random_power_dividing(height, max_exponent, rng);
    const int cols = random_power_dividing(width, max_exponent, rng);
    return {rows, cols};
}

SimulatedSample simulate(const Image& img, const SimConfig& cfg, std::span<const Image> texture_pool, Rng& rng) {
    const GrayMask fg = cfg.use_foreground_mask ? foreground_mask(img, cfg.bg_threshold, cfg.bg_invert)
                                                : GrayMask(img.height, img.width, 1);
    GrayMask mask;
    for (int attempt = 0; attempt <= kMaskResamples; ++attempt) {
        const PerlinFreq freq = random_frequency(img.height, img.width, cfg.perlin_max_exponent, rng);
        const PerlinField field = perlin2d(img.height, img.width, freq, rng);
        mask = compose_mask(fg, perlin_mask(field, cfg.perlin_threshold));
        if (mask.count() > 0) break;
    }
    SimulatedSample s;
    s.degenerate = mask.count() == 0;
    s.noise_kind = rng.bernoulli(cfg.texture_prob) ? NoiseKind::texture : NoiseKind::structure;
    const Image noise = make_noise_image(img, s.noise_kind, texture_pool, cfg.structure, rng);
    s.delta = rng.uniform(cfg.delta_lo, cfg.delta_hi);
    s.image = blend(img, noise, mask, s.delta).image;
    s.mask = std::move(mask);
    return s;
}

}  // namespace mapl::sim
