#pragma once

#include "mapl/features.hpp"
#include "mapl/rng.hpp"

#include <span>
#include <vector>

namespace mapl::pseudo {

using Vec = std::vector<double>;

/// Diagonal-covariance Gaussian mixture used as a one-class classifier.
struct OccModel {
    std::vector<double> weights;  // J, positive, sum to 1
    std::vector<Vec> means;       // J x D
    std::vector<Vec> variances;   // J x D, each >= kVarianceFloor
    int iterations = 0;           // EM iterations actually run

    int components() const noexcept { return static_cast<int>(weights.size()); }
    int dims() const noexcept { return means.empty() ? 0 : static_cast<int>(means[0].size()); }
};

inline constexpr double kVarianceFloor = 1e-6;

struct EmOptions {
    int max_iterations = 100;
    double tolerance = 1e-4;  // on the mean per-sample log-likelihood
    int kmeans_iterations = 10;
};

/// EM fit with k-means++ seeded Lloyd initialisation. Throws ParameterError
/// when fewer than J vectors are given or dimensions disagree.
OccModel fit_occ(const std::vector<Vec>& data, int components, Rng& rng, const EmOptions& opts = {});

/// -log p(x) under the mixture (higher means more anomalous).
double occ_score(const OccModel& m, std::span<const double> x);

/// Uniform random partition into K subsets whose sizes differ by at most one.
std::vector<std::vector<Vec>> split_subsets(const std::vector<Vec>& items, int k, Rng& rng);

/// Exact W1 distance between two empirical distributions on the line.
double wasserstein1d(std::span<const double> a, std::span<const double> b);

enum class Side { positive, negative };

/// Partial matching: the cut eta over sim_scores whose conditioned subset
/// ({s > eta} on the positive side, {s < eta} on the negative side) is W1
/// closest to labeled_scores. Candidates are midpoints of consecutive
/// distinct sim scores plus one guard beyond each end. Throws ConfigError
/// when the sim scores have fewer than two distinct values.
double select_threshold(Side side, std::span<const double> labeled_scores, std::span<const double> sim_scores);

enum class PseudoLabel : int { unknown = -1, normal = 0, anomalous = 1 };

/// 1 when every score exceeds its eta_p, 0 when every score is below its
/// eta_n, -1 otherwise (including when both hold). With eta_p_both_sides, eta_p
/// is used on both sides.
PseudoLabel assign_label(std::span<const double> scores, std::span<const double> eta_p,
                         std::span<const double> eta_n, bool eta_p_both_sides = false);

/// Seeded linear map with orthonormal rows, from D to D' dimensions.
struct Projector {
    int in_dims = 0;
    int out_dims = 0;
    std::vector<double> matrix;  // out_dims x in_dims, row-major

    static Projector orthogonal(int in_dims, int out_dims, Rng& rng);
    Vec apply(std::span<const double> x) const;
};

struct LabelerOptions {
    int k = 2;
    int components = 3;
    int projection_dims = 16;
    bool fit_on_normals_only = false;
    bool eta_p_both_sides = false;
    /// 0 selects min(100, 10 + pool / 10) from the size of each fit pool.
    int em_max_iterations = 0;
};

struct PseudoLabeler {
    Projector projector;
    std::vector<OccModel> occs;
    std::vector<double> eta_p;
    std::vector<double> eta_n;
    bool eta_p_both_sides = false;

    int k() const noexcept { return static_cast<int>(occs.size()); }
    std::vector<double> scores(std::span<const double> latent) const;
    PseudoLabel label(std::span<const double> latent) const;
};

/// Fits K classifiers on sim subsets (plus the labeled normals) and picks
/// their thresholds by partial matching against the labeled sets.
PseudoLabeler build(const std::vector<Vec>& labeled_pos, const std::vector<Vec>& labeled_neg,
                    const std::vector<Vec>& sim, const LabelerOptions& opts, Rng& rng);

}  // namespace mapl::pseudo
