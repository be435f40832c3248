#pragma once

#include "mapl/anomaly_sim.hpp"
#include "mapl/image.hpp"
#include "mapl/losses.hpp"
#include "mapl/memory.hpp"
#include "mapl/network.hpp"
#include "mapl/pseudolabel.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mapl::train {

struct TrainConfig {
    int steps = 500;
    int batch_size = 8;  // half normal, half simulated
    double lr0 = 0.003;
    int warmup_steps = 50;
    int memory_n = 30;
    int labeler_refresh_every = 50;
    int refresh_memory_every = 0;  // 0: memory bank extracted once; > 0 also unfreezes the encoder
    int plateau_window = 25;
    int plateau_patience = 5;
    double plateau_min_delta = 1e-3;
    int labeler_pool = 64;   // simulated samples drawn per labeler refresh
    int normal_pool = 64;    // labeled normals used per labeler refresh
    double positive_fraction = 0.2;
    std::uint64_t seed = 0;
    pseudo::LabelerOptions labeler;
    net::NetworkConfig net;

    void validate() const;
};

/// Linear warmup from lr0 / w to lr0 over the first w steps, then cosine
/// decay reaching 0 at t = steps.
double lr_schedule(double t, const TrainConfig& cfg);

struct BatchItem {
    Image image;
    GrayMask mask;
    bool simulated = false;
    bool degenerate = false;
};

/// batch_size / 2 normals (all-zero masks) followed by batch_size / 2
/// simulated samples. Slot s draws from derive_seed(batch_seed, s).
std::vector<BatchItem> assemble_batch(std::span<const Image> normals, std::span<const Image> textures,
                                      const sim::SimConfig& sim_cfg, int batch_size, std::uint64_t batch_seed);

struct LabelerState {
    pseudo::PseudoLabeler labeler;
    /// Median mask area of the simulated pool; batch samples above it may
    /// be routed to the labeled anomalous set.
    double pool_median_area = 0.0;
    /// False when real labeled anomalies supplied the positive set.
    bool route_by_area = true;
    int refreshed_at = -1;
};

/// Data the trainer draws from. labeled_anomalies is optional; when empty,
/// high-area simulated samples stand in for labeled positives.
struct TrainData {
    std::vector<Image> normals;
    std::vector<Image> textures;
    std::vector<Image> labeled_anomalies;
};

class Adam {
public:
    explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : b1_(beta1), b2_(beta2), eps_(eps) {}
    /// Updates every trainable parameter from its accumulated gradient.
    void step(const std::vector<nn::Parameter*>& params, double lr);
    int steps_taken() const noexcept { return t_; }

private:
    double b1_, b2_, eps_;
    int t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct TrainState {
    net::Model model;
    memory::MemoryBank bank;
    std::optional<LabelerState> labeler;
    Adam optimizer;
    int step = 0;
};

LabelerState refresh_labeler(const TrainState& state, const TrainData& data, const TrainConfig& cfg,
                             const sim::SimConfig& sim_cfg);

/// Forward, loss, backward and one optimizer step. Throws NumericError
/// naming the first non-finite loss term.
loss::LossReport train_step(TrainState& state, const std::vector<BatchItem>& batch, const TrainConfig& cfg,
                            const loss::LossWeights& weights);

/// True once the best window mean has not improved by at least min_delta
/// for `patience` consecutive windows.
bool check_convergence(std::span<const double> window_means, const TrainConfig& cfg);

struct LogRow {
    int step = 0;
    double lr = 0.0;
    loss::LossReport report;
};

std::string log_header();
std::string format_log_row(const LogRow& row);
std::string format_log(const std::vector<LogRow>& rows);

struct TrainResult {
    TrainState state;
    std::vector<LogRow> log;
    std::vector<double> window_means;
    bool stopped_on_plateau = false;
};

using Progress = std::function<void(const LogRow&)>;

/// Algorithm driver: seeded init, memory bank, then assemble / refresh /
/// step until `steps` or a plateau.
TrainResult train(const TrainData& data, const TrainConfig& cfg, const sim::SimConfig& sim_cfg,
                  const loss::LossWeights& weights, const Progress& progress = {});

}  // namespace mapl::train
