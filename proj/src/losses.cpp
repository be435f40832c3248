#include "mapl/losses.hpp"

#include "mapl/error.hpp"

#include <algorithm>
#include <cmath>

namespace mapl::loss {
namespace {

double clamp_p(double p) { return std::clamp(p, kEps, 1.0 - kEps); }
bool inside(double p) { return p > kEps && p < 1.0 - kEps; }

void check_sizes(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ParameterError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                                     std::to_string(b) + ")");
}

double bce_term(double q, int y) {
    const double s = clamp_p(q);
    return -(y * std::log(s) + (1 - y) * std::log(1.0 - s));
}

double bce_term_grad(double q, int y) {
    if (!inside(q)) return 0.0;
    return -static_cast<double>(y) / q + static_cast<double>(1 - y) / (1.0 - q);
}

}  // namespace

void LossWeights::validate() const {
    if (omega_l1 < 0) throw ConfigError("loss.omega_l1 must be >= 0");
    if (omega_f < 0) throw ConfigError("loss.omega_f must be >= 0");
    if (gamma < 0) throw ConfigError("loss.gamma must be >= 0");
    if (alpha < 0) throw ConfigError("loss.alpha must be >= 0");
}

double l1_loss(std::span<const double> target, std::span<const double> pred) {
    check_sizes(target.size(), pred.size(), "l1_loss");
    if (pred.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(target[i] - pred[i]);
    return s / static_cast<double>(pred.size());
}

std::vector<double> l1_loss_grad(std::span<const double> target, std::span<const double> pred) {
    check_sizes(target.size(), pred.size(), "l1_loss");
    std::vector<double> g(pred.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(pred.size(), 1));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        g[i] = d > 0 ? inv : (d < 0 ? -inv : 0.0);
    }
    return g;
}

double focal_loss(std::span<const double> target, std::span<const double> pred, double gamma, double alpha) {
    check_sizes(target.size(), pred.size(), "focal_loss");
    if (pred.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = clamp_p(pred[i]);
        const double pt = target[i] > 0.5 ? p : 1.0 - p;
        s += -alpha * std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    return s / static_cast<double>(pred.size());
}

std::vector<double> focal_loss_grad(std::span<const double> target, std::span<const double> pred, double gamma,
                                    double alpha) {
    check_sizes(target.size(), pred.size(), "focal_loss");
    std::vector<double> g(pred.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(pred.size(), 1));
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!inside(pred[i])) continue;
        const bool pos = target[i] > 0.5;
        const double pt = pos ? pred[i] : 1.0 - pred[i];
        const double one_minus = 1.0 - pt;
        // d/dpt of -alpha (1-pt)^gamma log pt
        double d = -alpha * std::pow(one_minus, gamma) / pt;
        if (gamma != 0.0) d += alpha * gamma * std::pow(one_minus, gamma - 1.0) * std::log(pt);
        g[i] = (pos ? d : -d) * inv;
    }
    return g;
}

double seg_loss(std::span<const double> target, std::span<const double> pred, const LossWeights& w) {
    return w.omega_l1 * l1_loss(target, pred) + w.omega_f * focal_loss(target, pred, w.gamma, w.alpha);
}

std::vector<double> seg_loss_grad(std::span<const double> target, std::span<const double> pred, const LossWeights& w) {
    std::vector<double> g = l1_loss_grad(target, pred);
    const std::vector<double> f = focal_loss_grad(target, pred, w.gamma, w.alpha);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = w.omega_l1 * g[i] + w.omega_f * f[i];
    return g;
}

std::vector<double> to_target(const GrayMask& g) { return {g.pixels.begin(), g.pixels.end()}; }

namespace {
void check_map(const GrayMask& g, const ScoreMap& ghat) {
    if (g.height != ghat.height || g.width != ghat.width)
        throw ParameterError("loss: mask is " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                             ", prediction is " + std::to_string(ghat.height) + "x" + std::to_string(ghat.width));
}
}  // namespace

double l1_loss(const GrayMask& g, const ScoreMap& ghat) {
    check_map(g, ghat);
    return l1_loss(to_target(g), ghat.values);
}

double focal_loss(const GrayMask& g, const ScoreMap& ghat, double gamma, double alpha) {
    check_map(g, ghat);
    return focal_loss(to_target(g), ghat.values, gamma, alpha);
}

double seg_loss(const GrayMask& g, const ScoreMap& ghat, const LossWeights& w) {
    check_map(g, ghat);
    return seg_loss(to_target(g), ghat.values, w);
}

double bce_labeled(std::span<const double> q, std::span<const int> labels) {
    check_sizes(q.size(), labels.size(), "bce_labeled");
    if (q.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += bce_term(q[i], labels[i]);
    return s / static_cast<double>(q.size());
}

std::vector<double> bce_labeled_grad(std::span<const double> q, std::span<const int> labels) {
    check_sizes(q.size(), labels.size(), "bce_labeled");
    std::vector<double> g(q.size(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i) g[i] = bce_term_grad(q[i], labels[i]) / static_cast<double>(q.size());
    return g;
}

double bce_pseudo(std::span<const double> q, std::span<const pseudo::PseudoLabel> labels) {
    check_sizes(q.size(), labels.size(), "bce_pseudo");
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (labels[i] == pseudo::PseudoLabel::unknown) continue;
        s += bce_term(q[i], static_cast<int>(labels[i]));
        ++n;
    }
    return n == 0 ? 0.0 : s / n;
}

std::vector<double> bce_pseudo_grad(std::span<const double> q, std::span<const pseudo::PseudoLabel> labels) {
    check_sizes(q.size(), labels.size(), "bce_pseudo");
    const auto n = std::count_if(labels.begin(), labels.end(),
                                 [](pseudo::PseudoLabel l) { return l != pseudo::PseudoLabel::unknown; });
    std::vector<double> g(q.size(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i)
        if (labels[i] != pseudo::PseudoLabel::unknown)
            g[i] = bce_term_grad(q[i], static_cast<int>(labels[i])) / static_cast<double>(n);
    return g;
}

}  // namespace mapl::loss
