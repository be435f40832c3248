#pragma once

#include "mapl/image.hpp"
#include "mapl/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

// Procedural striped/checker corpus for desk-scale end-to-end runs.
namespace mapl::synth {

struct CorpusSpec {
    int size = 64;
    int train_normals = 200;
    int test_normals = 50;
    int test_anomalous = 50;
    int textures = 24;
    std::uint64_t seed = 0;
};

struct TestSample {
    Image image;
    GrayMask mask;
    bool anomalous = false;
};

struct Corpus {
    std::vector<Image> train;
    std::vector<Image> textures;  // simulation pool; contains no checkers
    std::vector<TestSample> test;
};

/// Horizontal sinusoidal stripes with a random phase and mild pixel noise.
Image stripes(int size, Rng& rng);
/// Checkerboard of random cell size and colours.
Image checker(int size, Rng& rng);
/// Perlin-masked region of a striped image replaced by a checker texture.
TestSample anomalous_sample(int size, Rng& rng);

Corpus make_corpus(const CorpusSpec& spec);

/// Writes root/<category>/{train/good, test/good, test/checker,
/// ground_truth/checker} plus root/textures.
void write_corpus(const Corpus& corpus, const std::filesystem::path& root, const std::string& category);

}  // namespace mapl::synth
