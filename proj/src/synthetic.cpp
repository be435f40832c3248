#include "mapl/synthetic.hpp"

#include "mapl/anomaly_sim.hpp"
#include "mapl/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace mapl::synth {
namespace {

constexpr int kStripePeriod = 8;

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

// Pool textures: blobs, diagonal waves, smooth noise and speckle. None of
// them is a checkerboard, so test anomalies stay out of distribution.
Image pool_texture(int size, int kind, Rng& rng) {
    Image img(size, size);
    const double base[3] = {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8)};
    switch (kind % 4) {
        case 0: {
            const double f = rng.uniform(0.1, 0.4), ph = rng.uniform(0.0, 6.3);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    for (int c = 0; c < 3; ++c)
                        img.at(y, x, c) = clamp01(base[c] + 0.35 * std::sin(f * (x + y) + ph + c));
            break;
        }
        case 1: {
            const sim::PerlinField field = sim::perlin2d(size, size, {8, 8}, rng);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    for (int c = 0; c < 3; ++c)
                        img.at(y, x, c) = clamp01(base[c] + 0.45 * field.values[static_cast<std::size_t>(y) * size + x]);
            break;
        }
        case 2: {
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x)
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp01(base[c] + rng.uniform(-0.4, 0.4));
            break;
        }
        default: {
            const int r = 2 + static_cast<int>(rng.below(3));
            const int cx = static_cast<int>(rng.below(size)), cy = static_cast<int>(rng.below(size));
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    const int dx = (x - cx + size) % 8 - 4, dy = (y - cy + size) % 8 - 4;
                    const bool dot = dx * dx + dy * dy <= r * r;
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp01(dot ? 1.0 - base[c] : base[c]);
                }
            break;
        }
    }
    return img;
}

}  // namespace

Image stripes(int size, Rng& rng) {
    Image img(size, size);
    const double phase = rng.uniform(0.0, kStripePeriod);
    for (int y = 0; y < size; ++y) {
        const double v = 0.5 + 0.3 * std::sin(2.0 * std::numbers::pi * (y + phase) / kStripePeriod);
        for (int x = 0; x < size; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = clamp01(v + 0.02 * rng.normal());
    }
    return img;
}

Image checker(int size, Rng& rng) {
    Image img(size, size);
    const int cell = 3 + static_cast<int>(rng.below(4));
    const int ox = static_cast<int>(rng.below(cell)), oy = static_cast<int>(rng.below(cell));
    double a[3], b[3];
    for (int c = 0; c < 3; ++c) {
        a[c] = rng.uniform(0.0, 0.3);
        b[c] = rng.uniform(0.7, 1.0);
    }
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const bool on = (((x + ox) / cell) + ((y + oy) / cell)) % 2 == 0;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(on ? a[c] : b[c]);
        }
    return img;
}

TestSample anomalous_sample(int size, Rng& rng) {
    const Image base = stripes(size, rng);
    const Image tex = checker(size, rng);
    GrayMask mask;
    for (int attempt = 0; attempt < 20; ++attempt) {
        const sim::PerlinField field = sim::perlin2d(size, size, {4, 4}, rng);
        mask = sim::perlin_mask(field, 0.3);
        const std::size_t area = mask.count();
        if (area >= static_cast<std::size_t>(size * size / 50) && area <= static_cast<std::size_t>(size * size / 3)) break;
    }
    TestSample s{base, mask, true};
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (mask.at(y, x))
                for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = tex.at(y, x, c);
    return s;
}

Corpus make_corpus(const CorpusSpec& spec) {
    Corpus out;
    Rng train_rng(derive_seed(spec.seed, fnv1a("synthetic.train")));
    for (int i = 0; i < spec.train_normals; ++i) out.train.push_back(stripes(spec.size, train_rng));
    Rng tex_rng(derive_seed(spec.seed, fnv1a("synthetic.textures")));
    for (int i = 0; i < spec.textures; ++i) out.textures.push_back(pool_texture(spec.size, i, tex_rng));
    Rng test_rng(derive_seed(spec.seed, fnv1a("synthetic.test")));
    for (int i = 0; i < spec.test_normals; ++i)
        out.test.push_back({stripes(spec.size, test_rng), GrayMask(spec.size, spec.size), false});
    for (int i = 0; i < spec.test_anomalous; ++i) out.test.push_back(anomalous_sample(spec.size, test_rng));
    return out;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& root, const std::string& category) {
    const auto cat = root / category;
    char name[32];
    for (std::size_t i = 0; i < corpus.train.size(); ++i) {
        std::snprintf(name, sizeof name, "%04zu.png", i);
        dataio::save_image(corpus.train[i], cat / "train" / "good" / name);
    }
    std::size_t n_good = 0, n_bad = 0;
    for (const auto& s : corpus.test) {
        if (s.anomalous) {
            std::snprintf(name, sizeof name, "%04zu", n_bad++);
            dataio::save_image(s.image, cat / "test" / "checker" / (std::string(name) + ".png"));
            dataio::save_mask(s.mask, cat / "ground_truth" / "checker" / (std::string(name) + "_mask.png"));
        } else {
            std::snprintf(name, sizeof name, "%04zu.png", n_good++);
            dataio::save_image(s.image, cat / "test" / "good" / name);
        }
    }
    for (std::size_t i = 0; i < corpus.textures.size(); ++i) {
        std::snprintf(name, sizeof name, "%04zu.png", i);
        dataio::save_image(corpus.textures[i], root / "textures" / name);
    }
}

}  // namespace mapl::synth
