#pragma once

#include "mapl/dataio.hpp"
#include "mapl/memory.hpp"
#include "mapl/network.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mapl::eval {

/// Probability that a random positive outscores a random negative, ties
/// counting one half, from mid-ranks. Throws UndefinedMetricError unless
/// both classes are present.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct ImageRecord {
    std::string path;
    int label = 0;
    double score = 0.0;  // image-level anomaly score
    double q = 0.0;      // predictor output
};

struct EvalResult {
    std::string category;
    double auroc = 0.0;
    int n_normal = 0;
    int n_anomalous = 0;
    std::vector<ImageRecord> records;
    std::optional<double> pixel_auroc;
};

struct EvalOptions {
    bool pixel_auroc = false;
    std::optional<std::filesystem::path> heatmap_dir;
};

/// In-memory test item; mask is used only for pixel AUROC.
struct LabeledImage {
    std::string name;
    Image image;
    int label = 0;
    std::optional<GrayMask> mask;
};

EvalResult evaluate(const net::Model& model, const memory::MemoryBank& bank, const std::string& category,
                    std::span<const LabeledImage> items, const EvalOptions& opts = {});

/// Loads the test split of a dataset index and evaluates it.
EvalResult evaluate(const net::Model& model, const memory::MemoryBank& bank, const dataio::DatasetIndex& index,
                    const EvalOptions& opts = {});

/// Unweighted mean of per-category AUROCs.
double mean_auroc(std::span<const EvalResult> results);

/// Categories as columns with an Average column last; AUROC in percent
/// with the given number of decimals.
std::string format_table(std::span<const EvalResult> results, int decimals = 4);
std::string results_csv(std::span<const EvalResult> results);
std::string per_image_csv(const EvalResult& result);

}  // namespace mapl::eval
