#pragma once

#include "mapl/config.hpp"
#include "mapl/synthetic.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mapl::cli {

namespace fs = std::filesystem;

/// Flags shared by the subcommands that take a configuration.
struct ConfigOptions {
    std::string config_path;                 // --config; falls back to $MAPL_CONFIG
    std::optional<std::uint64_t> seed;       // --seed
    std::optional<int> refresh_every;        // --refresh-every (labeler cadence)
    std::vector<std::string> overrides;      // --set section.key=value
};

/// Defaults, then the config file, then --set overrides, then --seed and
/// --refresh-every. Validates the result.
config::RunConfig resolve_config(const ConfigOptions& opts);

enum class Ablation { baseline, no_msff, no_attention, with_ca };
Ablation parse_ablation(const std::string& name);
std::string to_string(Ablation a);
/// Applies the ablation's flag override to a copy of cfg.
config::RunConfig ablated(const config::RunConfig& cfg, Ablation a);

// Each command reports errors on err and returns the process exit code.

/// Writes count NNNN_img.png / NNNN_mask.png pairs and manifest.csv.
int cmd_simulate(const config::RunConfig& cfg, const fs::path& out_dir, int count, std::uint64_t seed,
                 std::ostream& out, std::ostream& err);
/// Writes out_dir/model.ckpt and out_dir/train_log.csv.
int cmd_train(const config::RunConfig& cfg, const fs::path& out_dir, std::ostream& out, std::ostream& err);
/// Evaluates a checkpoint on the test split named by its config, or by
/// dataset_override when given. Writes results.csv, per_image.csv,
/// table.txt and optionally heatmaps/.
int cmd_eval(const fs::path& checkpoint, const std::optional<config::DatasetConfig>& dataset_override,
             const fs::path& out_dir, bool heatmaps, std::ostream& out, std::ostream& err);
/// Trains and evaluates the baseline plus each requested ablation; writes
/// ablation.csv and ablation.txt.
int cmd_ablate(const config::RunConfig& cfg, const std::vector<Ablation>& which, const fs::path& out_dir,
               std::ostream& out, std::ostream& err);
/// Writes a procedurally generated MVTec-style dataset plus textures/.
int cmd_make_synthetic(const synth::CorpusSpec& spec, const fs::path& root, const std::string& category,
                       std::ostream& out, std::ostream& err);

/// Full command-line entry point.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace mapl::cli
