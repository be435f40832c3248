#pragma once

#include "mapl/anomaly_sim.hpp"
#include "mapl/dataio.hpp"
#include "mapl/losses.hpp"
#include "mapl/trainer.hpp"

#include <filesystem>
#include <string>

namespace mapl::config {

struct DatasetConfig {
    std::string root;
    std::string category;
    std::string texture_dir;          // flat directory of texture images
    std::string labeled_anomaly_dir;  // optional real anomalies for the positive set
    int image_size = 256;
    bool perturb_test = false;        // Gaussian noise + contrast on test images
    bool perturb_train = false;       // same on training normals, before simulation
    dataio::PerturbRange perturb;
};

struct EvalConfig {
    bool pixel_auroc = false;
    bool heatmaps = false;
};

struct RunConfig {
    DatasetConfig dataset;
    sim::SimConfig simulate;
    train::TrainConfig train;
    loss::LossWeights loss;
    EvalConfig eval;

    /// Range checks across all sections; messages name "section.key".
    void validate() const;
};

/// Parses the sectioned key = value format. Unknown sections or keys,
/// malformed values and out-of-range values raise ConfigError naming the
/// key and the line.
RunConfig parse(const std::string& text, const std::string& source = "<config>");
RunConfig load(const std::filesystem::path& path);

/// Canonical text: every key in a fixed order, doubles round-trippable.
/// parse(to_text(c)) reproduces c exactly.
std::string to_text(const RunConfig& c);
/// 16 hex digits of the FNV-1a hash of to_text(c).
std::string hash(const RunConfig& c);

/// Sets one "section.key" from its textual value (command-line overrides).
void set(RunConfig& c, const std::string& dotted_key, const std::string& value);

}  // namespace mapl::config
