#include "mapl/pseudolabel.hpp"

#include "mapl/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mapl::pseudo {
namespace {

double log_gaussian(std::span<const double> x, const Vec& mean, const Vec& var) {
    double s = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) {
        const double diff = x[d] - mean[d];
        s += std::log(2.0 * std::numbers::pi * var[d]) + diff * diff / var[d];
    }
    return -0.5 * s;
}

double log_sum_exp(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

double sq_dist(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

std::vector<Vec> kmeans_init(const std::vector<Vec>& data, int j, Rng& rng, int iterations) {
    const std::size_t n = data.size();
    std::vector<Vec> centers;
    centers.push_back(data[rng.below(n)]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < j) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& c : centers) best = std::min(best, sq_dist(data[i], c));
            d2[i] = best;
            total += best;
        }
        std::size_t pick = 0;
        if (total <= 0.0) {
            pick = rng.below(n);
        } else {
            double u = rng.uniform() * total;
            for (pick = 0; pick + 1 < n; ++pick) {
                u -= d2[pick];
                if (u < 0.0) break;
            }
        }
        centers.push_back(data[pick]);
    }
    const std::size_t dims = data[0].size();
    std::vector<int> assign(n, 0);
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            int best = 0;
            double bd = sq_dist(data[i], centers[0]);
            for (int c = 1; c < j; ++c) {
                const double d = sq_dist(data[i], centers[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            assign[i] = best;
        }
        std::vector<Vec> sums(j, Vec(dims, 0.0));
        std::vector<int> counts(j, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            for (std::size_t d = 0; d < dims; ++d) sums[assign[i]][d] += data[i][d];
        }
        for (int c = 0; c < j; ++c)
            if (counts[c] > 0)
                for (std::size_t d = 0; d < dims; ++d) centers[c][d] = sums[c][d] / counts[c];
    }
    return centers;
}

// Exact integral of |F_a - F_b| for sorted inputs.
double w1_sorted(std::span<const double> a, std::span<const double> b) {
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double prev = std::min(a[0], b[0]);
    double total = 0.0;
    while (i < a.size() || j < b.size()) {
        const double x = (j >= b.size() || (i < a.size() && a[i] <= b[j])) ? a[i] : b[j];
        total += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (x - prev);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        prev = x;
    }
    return total;
}

}  // namespace

OccModel fit_occ(const std::vector<Vec>& data, int components, Rng& rng, const EmOptions& opts) {
    if (components < 1) throw ParameterError("fit_occ: component count must be >= 1");
    if (data.size() < static_cast<std::size_t>(components))
        throw ParameterError("fit_occ: need at least " + std::to_string(components) + " vectors, got " +
                             std::to_string(data.size()));
    const std::size_t n = data.size(), dims = data[0].size();
    for (const auto& x : data)
        if (x.size() != dims) throw ParameterError("fit_occ: inconsistent feature dimensions");

    Vec mean(dims, 0.0), var(dims, 0.0);
    for (const auto& x : data)
        for (std::size_t d = 0; d < dims; ++d) mean[d] += x[d] / static_cast<double>(n);
    for (const auto& x : data)
        for (std::size_t d = 0; d < dims; ++d) var[d] += (x[d] - mean[d]) * (x[d] - mean[d]) / static_cast<double>(n);
    for (double& v : var) v = std::max(v, kVarianceFloor);

    OccModel m;
    m.means = kmeans_init(data, components, rng, opts.kmeans_iterations);
    m.variances.assign(components, var);
    m.weights.assign(components, 1.0 / components);

    std::vector<double> resp(n * components);
    std::vector<double> logp(components);
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < opts.max_iterations; ++it) {
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (int c = 0; c < components; ++c)
                logp[c] = std::log(m.weights[c]) + log_gaussian(data[i], m.means[c], m.variances[c]);
            const double lse = log_sum_exp(logp);
            ll += lse;
            for (int c = 0; c < components; ++c) resp[i * components + c] = std::exp(logp[c] - lse);
        }
        ll /= static_cast<double>(n);

        for (int c = 0; c < components; ++c) {
            double nk = 0.0;
            for (std::size_t i = 0; i < n; ++i) nk += resp[i * components + c];
            // A collapsed component keeps its previous mean and variance.
            if (nk > 1e-10) {
                Vec mu(dims, 0.0), v(dims, 0.0);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t d = 0; d < dims; ++d) mu[d] += resp[i * components + c] * data[i][d];
                for (double& x : mu) x /= nk;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t d = 0; d < dims; ++d) {
                        const double diff = data[i][d] - mu[d];
                        v[d] += resp[i * components + c] * diff * diff;
                    }
                for (double& x : v) x = std::max(x / nk, kVarianceFloor);
                m.means[c] = std::move(mu);
                m.variances[c] = std::move(v);
            }
            m.weights[c] = std::max(nk, 1e-10) / static_cast<double>(n);
        }
        double wsum = 0.0;
        for (double w : m.weights) wsum += w;
        for (double& w : m.weights) w /= wsum;

        m.iterations = it + 1;
        if (std::abs(ll - prev_ll) < opts.tolerance) break;
        prev_ll = ll;
    }
    return m;
}

double occ_score(const OccModel& m, std::span<const double> x) {
    if (static_cast<int>(x.size()) != m.dims()) throw ParameterError("occ_score: dimension mismatch");
    std::vector<double> logp(m.components());
    for (int c = 0; c < m.components(); ++c)
        logp[c] = std::log(m.weights[c]) + log_gaussian(x, m.means[c], m.variances[c]);
    return -log_sum_exp(logp);
}

std::vector<std::vector<Vec>> split_subsets(const std::vector<Vec>& items, int k, Rng& rng) {
    if (k < 1) throw ParameterError("split_subsets: K must be >= 1");
    if (items.size() < static_cast<std::size_t>(k))
        throw ParameterError("split_subsets: " + std::to_string(items.size()) + " items cannot fill " +
                             std::to_string(k) + " subsets");
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::vector<Vec>> out(k);
    for (std::size_t i = 0; i < order.size(); ++i) out[i % k].push_back(items[order[i]]);
    return out;
}

double wasserstein1d(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw ParameterError("wasserstein1d: empty sample");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    return w1_sorted(sa, sb);
}

double select_threshold(Side side, std::span<const double> labeled_scores, std::span<const double> sim_scores) {
    if (labeled_scores.empty() || sim_scores.empty()) throw ParameterError("select_threshold: empty score list");
    std::vector<double> labeled(labeled_scores.begin(), labeled_scores.end());
    std::sort(labeled.begin(), labeled.end());
    std::vector<double> sims(sim_scores.begin(), sim_scores.end());
    std::sort(sims.begin(), sims.end());
    std::vector<double> distinct = sims;
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 2)
        throw ConfigError("select_threshold: simulated scores are constant, no threshold separates them");

    // Cut c (0..U) separates distinct[0..c) from distinct[c..U). Cut 0 and
    // cut U are the guards; cuts 1..U-1 sit at midpoints.
    const std::size_t u = distinct.size();
    auto eta_of = [&](std::size_t c) {
        if (c == 0) return distinct.front() - 1.0;
        if (c == u) return distinct.back() + 1.0;
        return 0.5 * (distinct[c - 1] + distinct[c]);
    };
    double best_w = std::numeric_limits<double>::infinity();
    double best_eta = 0.0;
    auto consider = [&](std::size_t c) {
        const double eta = eta_of(c);
        const auto split = std::lower_bound(sims.begin(), sims.end(), distinct[std::min(c, u - 1)]);
        std::span<const double> kept;
        if (side == Side::positive) {
            if (c == u) return;
            kept = std::span<const double>(&*split, static_cast<std::size_t>(sims.end() - split));
        } else {
            if (c == 0) return;
            const auto end = c == u ? sims.end() : split;
            kept = std::span<const double>(sims.data(), static_cast<std::size_t>(end - sims.begin()));
        }
        if (kept.empty()) return;
        const double w = w1_sorted(labeled, kept);
        if (w < best_w) {
            best_w = w;
            best_eta = eta;
        }
    };
    // Strict improvement while scanning from the preferred end implements
    // the tie rule: smallest eta on the positive side, largest on the negative.
    if (side == Side::positive)
        for (std::size_t c = 0; c <= u; ++c) consider(c);
    else
        for (std::size_t c = u + 1; c-- > 0;) consider(c);
    return best_eta;
}

PseudoLabel assign_label(std::span<const double> scores, std::span<const double> eta_p,
                         std::span<const double> eta_n, bool eta_p_both_sides) {
    if (scores.size() != eta_p.size() || scores.size() != eta_n.size())
        throw ParameterError("assign_label: scores and thresholds differ in length");
    bool all_pos = true, all_neg = true;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        all_pos = all_pos && scores[k] > eta_p[k];
        all_neg = all_neg && scores[k] < (eta_p_both_sides ? eta_p[k] : eta_n[k]);
    }
    if (all_pos && !all_neg) return PseudoLabel::anomalous;
    if (all_neg && !all_pos) return PseudoLabel::normal;
    return PseudoLabel::unknown;
}

Projector Projector::orthogonal(int in_dims, int out_dims, Rng& rng) {
    if (out_dims < 1 || out_dims > in_dims) throw ParameterError("projector: need 1 <= D' <= D");
    Projector p{in_dims, out_dims, std::vector<double>(static_cast<std::size_t>(in_dims) * out_dims)};
    // Gram-Schmidt on Gaussian rows; a (vanishingly unlikely) degenerate row is redrawn.
    for (int r = 0; r < out_dims; ++r) {
        double* row = p.matrix.data() + static_cast<std::size_t>(r) * in_dims;
        double norm = 0.0;
        do {
            for (int i = 0; i < in_dims; ++i) row[i] = rng.normal();
            for (int q = 0; q < r; ++q) {
                const double* prev = p.matrix.data() + static_cast<std::size_t>(q) * in_dims;
                double dot = 0.0;
                for (int i = 0; i < in_dims; ++i) dot += row[i] * prev[i];
                for (int i = 0; i < in_dims; ++i) row[i] -= dot * prev[i];
            }
            norm = 0.0;
            for (int i = 0; i < in_dims; ++i) norm += row[i] * row[i];
            norm = std::sqrt(norm);
        } while (norm < 1e-8);
        for (int i = 0; i < in_dims; ++i) row[i] /= norm;
    }
    return p;
}

Vec Projector::apply(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != in_dims) throw ParameterError("projector: input dimension mismatch");
    Vec y(out_dims, 0.0);
    for (int r = 0; r < out_dims; ++r) {
        const double* row = matrix.data() + static_cast<std::size_t>(r) * in_dims;
        double s = 0.0;
        for (int i = 0; i < in_dims; ++i) s += row[i] * x[i];
        y[r] = s;
    }
    return y;
}

std::vector<double> PseudoLabeler::scores(std::span<const double> latent) const {
    const Vec z = projector.apply(latent);
    std::vector<double> s(occs.size());
    for (std::size_t k = 0; k < occs.size(); ++k) s[k] = occ_score(occs[k], z);
    return s;
}

PseudoLabel PseudoLabeler::label(std::span<const double> latent) const {
    return assign_label(scores(latent), eta_p, eta_n, eta_p_both_sides);
}

PseudoLabeler build(const std::vector<Vec>& labeled_pos, const std::vector<Vec>& labeled_neg,
                    const std::vector<Vec>& sim, const LabelerOptions& opts, Rng& rng) {
    if (labeled_pos.empty()) throw ParameterError("pseudo-labeler: no labeled anomalous features");
    if (labeled_neg.empty()) throw ParameterError("pseudo-labeler: no labeled normal features");
    if (sim.empty()) throw ParameterError("pseudo-labeler: no simulated features");
    const int dims = static_cast<int>(labeled_neg[0].size());

    PseudoLabeler lab;
    lab.eta_p_both_sides = opts.eta_p_both_sides;
    lab.projector = Projector::orthogonal(dims, std::min(opts.projection_dims, dims), rng);
    auto project_all = [&](const std::vector<Vec>& xs) {
        std::vector<Vec> out;
        out.reserve(xs.size());
        for (const auto& x : xs) out.push_back(lab.projector.apply(x));
        return out;
    };
    const std::vector<Vec> pos = project_all(labeled_pos);
    const std::vector<Vec> neg = project_all(labeled_neg);
    const std::vector<Vec> sims = project_all(sim);
    const auto subsets = split_subsets(sims, opts.k, rng);

    for (int k = 0; k < opts.k; ++k) {
        std::vector<Vec> fit = opts.fit_on_normals_only ? std::vector<Vec>{} : subsets[k];
        fit.insert(fit.end(), neg.begin(), neg.end());
        EmOptions em;
        em.max_iterations = opts.em_max_iterations > 0
                                ? opts.em_max_iterations
                                : std::min(100, 10 + static_cast<int>(fit.size()) / 10);
        lab.occs.push_back(fit_occ(fit, opts.components, rng, em));
        const OccModel& occ = lab.occs.back();

        auto score_all = [&](const std::vector<Vec>& xs) {
            std::vector<double> s;
            s.reserve(xs.size());
            for (const auto& x : xs) s.push_back(occ_score(occ, x));
            return s;
        };
        const auto s_sim = score_all(sims);
        lab.eta_p.push_back(select_threshold(Side::positive, score_all(pos), s_sim));
        lab.eta_n.push_back(select_threshold(Side::negative, score_all(neg), s_sim));
    }
    return lab;
}

}  // namespace mapl::pseudo
