#pragma once

#include "mapl/image.hpp"
#include "mapl/rng.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mapl::dataio {

namespace fs = std::filesystem;

enum class Label { normal = 0, anomalous = 1 };

struct TestItem {
    fs::path image;
    Label label = Label::normal;
    std::string defect_type;     // "good" for normals
    std::optional<fs::path> mask;  // absent for normals and unmasked anomalies
};

/// MVTec-style category: root/category/{train/good, test/<type>, ground_truth/<type>}.
struct DatasetIndex {
    std::string category;
    std::vector<fs::path> train_normals;
    std::vector<TestItem> test_items;

    std::size_t count(Label l) const;
};

/// Enumerates a category in lexicographic path order. Throws
/// DatasetLayoutError naming the missing path, FileError for files that do
/// not decode as images.
DatasetIndex load_dataset(const fs::path& root, const std::string& category);

/// Decodes and resizes (bilinear) to target_size x target_size, RGB in [0, 1].
/// Grayscale sources are replicated into three channels.
Image load_image(const fs::path& path, int target_size);

/// Decodes a mask (nonzero = anomalous) and resizes with nearest neighbour.
GrayMask load_mask(const fs::path& path, int target_size);

/// All images of a flat directory, sorted by path (texture pools).
std::vector<Image> load_image_dir(const fs::path& dir, int target_size);

/// clip(contrast * (img - 0.5) + 0.5 + N(0, sigma^2), 0, 1), per channel value.
Image perturb_bhad(const Image& img, double sigma, double contrast, Rng& rng);

struct PerturbRange {
    double sigma_max = 0.05;
    double contrast_lo = 0.8;
    double contrast_hi = 1.2;
};

/// Draws sigma ~ U[0, sigma_max] and contrast ~ U[lo, hi], then perturb_bhad.
Image perturb_random(const Image& img, const PerturbRange& range, Rng& rng);

/// 16-bit grayscale PNG; values clamped to [0, 1].
void export_heatmap(const ScoreMap& map, const fs::path& path);
/// Reads an 8- or 16-bit grayscale image back into [0, 1].
ScoreMap read_heatmap(const fs::path& path);

/// 8-bit RGB PNG.
void save_image(const Image& img, const fs::path& path);
/// 8-bit PNG, 0 or 255.
void save_mask(const GrayMask& mask, const fs::path& path);

/// Resizes with bilinear interpolation (used for texture crops).
Image resize_bilinear(const Image& img, int height, int width);

}  // namespace mapl::dataio
