#pragma once

#include "mapl/image.hpp"
#include "mapl/pseudolabel.hpp"

#include <span>
#include <vector>

namespace mapl::loss {

/// Probabilities are clamped to [kEps, 1 - kEps] before any logarithm.
inline constexpr double kEps = 1e-7;

struct LossWeights {
    double omega_l1 = 0.6;
    double omega_f = 0.4;
    double gamma = 4.0;
    double alpha = 0.25;

    void validate() const;
};

// Pixel losses take the target G (0/1 per pixel) and the prediction Ghat as
// flat arrays of equal length and use mean reduction. The *_grad variants
// return dL/dGhat per pixel.
double l1_loss(std::span<const double> target, std::span<const double> pred);
std::vector<double> l1_loss_grad(std::span<const double> target, std::span<const double> pred);

double focal_loss(std::span<const double> target, std::span<const double> pred, double gamma, double alpha);
std::vector<double> focal_loss_grad(std::span<const double> target, std::span<const double> pred, double gamma,
                                    double alpha);

double seg_loss(std::span<const double> target, std::span<const double> pred, const LossWeights& w);
std::vector<double> seg_loss_grad(std::span<const double> target, std::span<const double> pred, const LossWeights& w);

double l1_loss(const GrayMask& g, const ScoreMap& ghat);
double focal_loss(const GrayMask& g, const ScoreMap& ghat, double gamma, double alpha);
double seg_loss(const GrayMask& g, const ScoreMap& ghat, const LossWeights& w);

/// Mask as 0/1 doubles.
std::vector<double> to_target(const GrayMask& g);

/// Mean binary cross-entropy; 0 for empty input.
double bce_labeled(std::span<const double> q, std::span<const int> labels);
std::vector<double> bce_labeled_grad(std::span<const double> q, std::span<const int> labels);

/// BCE over entries whose pseudo-label is 0 or 1, averaged over those
/// entries; 0 when none is included.
double bce_pseudo(std::span<const double> q, std::span<const pseudo::PseudoLabel> labels);
std::vector<double> bce_pseudo_grad(std::span<const double> q, std::span<const pseudo::PseudoLabel> labels);

inline double total_loss(double seg, double bce_l, double bce_u) { return seg + bce_l + bce_u; }

struct LossReport {
    double l1 = 0.0;
    double focal = 0.0;
    double seg = 0.0;
    double bce_labeled = 0.0;
    double bce_pseudo = 0.0;
    double total = 0.0;
    int n_pseudo_used = 0;
    int n_pseudo_unknown = 0;
};

}  // namespace mapl::loss
