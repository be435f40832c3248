#include "mapl/trainer.hpp"

#include "mapl/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

namespace mapl::train {
namespace {

std::vector<pseudo::Vec> latents_of(const net::Model& model, std::span<const Image> images) {
    std::vector<pseudo::Vec> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(model.encode(img).latent);
    return out;
}

void require_finite(double v, const char* term, int step) {
    if (!std::isfinite(v))
        throw NumericError("non-finite " + std::string(term) + " loss at step " + std::to_string(step));
}

}  // namespace

void TrainConfig::validate() const {
    if (steps < 1) throw ConfigError("train.steps must be >= 1");
    if (batch_size < 2 || batch_size % 2 != 0) throw ConfigError("train.batch_size must be even and >= 2");
    if (!(lr0 > 0.0)) throw ConfigError("train.lr0 must be > 0");
    if (warmup_steps < 0 || warmup_steps >= steps) throw ConfigError("train.warmup_steps must be in [0, steps)");
    if (memory_n < 1) throw ConfigError("train.memory_N must be >= 1");
    if (labeler.k < 1) throw ConfigError("train.K must be >= 1");
    if (labeler.components < 1) throw ConfigError("train.gmm_components must be >= 1");
    if (labeler.projection_dims < 1) throw ConfigError("train.projection_dims must be >= 1");
    if (labeler_refresh_every < 1) throw ConfigError("train.labeler_refresh_every must be >= 1");
    if (refresh_memory_every < 0) throw ConfigError("train.refresh_memory_every must be >= 0");
    if (plateau_window < 1) throw ConfigError("train.plateau_window must be >= 1");
    if (plateau_patience < 1) throw ConfigError("train.plateau_patience must be >= 1");
    if (plateau_min_delta < 0.0) throw ConfigError("train.plateau_min_delta must be >= 0");
    if (labeler_pool < 2 * labeler.k) throw ConfigError("train.labeler_pool must be >= 2 * K");
    if (normal_pool < 1) throw ConfigError("train.normal_pool must be >= 1");
    if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
        throw ConfigError("train.positive_fraction must be in (0, 1)");
    net.validate();
}

double lr_schedule(double t, const TrainConfig& cfg) {
    const double w = cfg.warmup_steps;
    if (t < w) return cfg.lr0 * std::max(t, 1.0) / w;
    const double span = cfg.steps - w;
    const double frac = std::clamp((t - w) / span, 0.0, 1.0);
    return cfg.lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

std::vector<BatchItem> assemble_batch(std::span<const Image> normals, std::span<const Image> textures,
                                      const sim::SimConfig& sim_cfg, int batch_size, std::uint64_t batch_seed) {
    if (normals.empty()) throw DatasetLayoutError("training set has no normal images");
    std::vector<BatchItem> batch;
    batch.reserve(batch_size);
    const int half = batch_size / 2;
    for (int slot = 0; slot < batch_size; ++slot) {
        Rng rng(derive_seed(batch_seed, slot));
        const Image& src = normals[rng.below(normals.size())];
        BatchItem item;
        if (slot < half) {
            item.image = src;
            item.mask = GrayMask(src.height, src.width);
        } else {
            sim::SimulatedSample s = sim::simulate(src, sim_cfg, textures, rng);
            item.image = std::move(s.image);
            item.mask = std::move(s.mask);
            item.simulated = true;
            item.degenerate = s.degenerate;
        }
        batch.push_back(std::move(item));
    }
    return batch;
}

void Adam::step(const std::vector<nn::Parameter*>& params, double lr) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i]->size(), 0.0);
            v_[i].assign(params[i]->size(), 0.0);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
        nn::Parameter& p = *params[i];
        if (!p.trainable) continue;
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double g = p.grad[j];
            m[j] = b1_ * m[j] + (1.0 - b1_) * g;
            v[j] = b2_ * v[j] + (1.0 - b2_) * g * g;
            p.value[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
        }
    }
}

LabelerState refresh_labeler(const TrainState& state, const TrainData& data, const TrainConfig& cfg,
                             const sim::SimConfig& sim_cfg) {
    const std::uint64_t base = derive_seed(cfg.seed, fnv1a("labeler"), static_cast<std::uint64_t>(state.step));
    Rng pick(derive_seed(base, fnv1a("normals")));
    const std::size_t n_norm = std::min<std::size_t>(data.normals.size(), static_cast<std::size_t>(cfg.normal_pool));
    std::vector<Image> normals;
    for (std::size_t idx : pick.sample_without_replacement(data.normals.size(), n_norm))
        normals.push_back(data.normals[idx]);

    struct PoolItem {
        pseudo::Vec latent;
        std::size_t area;
        bool degenerate;
    };
    std::vector<PoolItem> pool;
    for (int i = 0; i < cfg.labeler_pool; ++i) {
        Rng rng(derive_seed(base, fnv1a("pool"), static_cast<std::uint64_t>(i)));
        const Image& src = data.normals[rng.below(data.normals.size())];
        sim::SimulatedSample s = sim::simulate(src, sim_cfg, data.textures, rng);
        pool.push_back({state.model.encode(s.image).latent, s.mask.count(), s.degenerate});
    }
    std::vector<double> areas;
    for (const auto& p : pool) areas.push_back(static_cast<double>(p.area));
    std::sort(areas.begin(), areas.end());
    const std::size_t n = areas.size();
    LabelerState out;
    out.pool_median_area = n % 2 ? areas[n / 2] : 0.5 * (areas[n / 2 - 1] + areas[n / 2]);
    out.refreshed_at = state.step;

    std::vector<pseudo::Vec> positives, sims;
    if (!data.labeled_anomalies.empty()) {
        out.route_by_area = false;
        positives = latents_of(state.model, data.labeled_anomalies);
        for (auto& p : pool) sims.push_back(std::move(p.latent));
    } else {
        // Hold out the largest-area samples above the median as labeled positives.
        std::vector<std::size_t> order(pool.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pool[a].area > pool[b].area; });
        const std::size_t want =
            std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.positive_fraction * pool.size())));
        std::vector<bool> held(pool.size(), false);
        for (std::size_t idx : order) {
            if (positives.size() >= want) break;
            const bool eligible = !pool[idx].degenerate && static_cast<double>(pool[idx].area) > out.pool_median_area;
            if (eligible) {
                positives.push_back(pool[idx].latent);
                held[idx] = true;
            }
        }
        if (positives.empty()) {
            // Every sample at or below the median area: fall back to the largest one.
            positives.push_back(pool[order.front()].latent);
            held[order.front()] = true;
        }
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (!held[i]) sims.push_back(std::move(pool[i].latent));
    }
    Rng build_rng(derive_seed(base, fnv1a("build")));
    out.labeler = pseudo::build(positives, latents_of(state.model, normals), sims, cfg.labeler, build_rng);
    return out;
}

loss::LossReport train_step(TrainState& state, const std::vector<BatchItem>& batch, const TrainConfig& cfg,
                            const loss::LossWeights& weights) {
    if (!state.labeler) throw StateError("train_step: pseudo-labeler has not been built");
    if (state.bank.empty()) throw StateError("train_step: memory bank has not been built");
    const std::size_t b = batch.size();

    std::vector<net::Model::Trace> traces;
    traces.reserve(b);
    for (const auto& item : batch) traces.push_back(state.model.forward_train(item.image, state.bank));

    // Route samples: normals and degenerate simulations are labeled 0; the
    // largest simulated masks above the pool median stand in for labeled
    // anomalies; the rest receive pseudo-labels.
    enum class Route { labeled, pseudo };
    std::vector<Route> route(b, Route::labeled);
    std::vector<int> label(b, 0);
    std::vector<std::size_t> sims;
    for (std::size_t i = 0; i < b; ++i)
        if (batch[i].simulated && !batch[i].degenerate) sims.push_back(i);
    std::size_t n_pos = 0;
    if (state.labeler->route_by_area) {
        std::stable_sort(sims.begin(), sims.end(),
                         [&](std::size_t a, std::size_t c) { return batch[a].mask.count() > batch[c].mask.count(); });
        const std::size_t simulated =
            static_cast<std::size_t>(std::count_if(batch.begin(), batch.end(), [](const BatchItem& it) { return it.simulated; }));
        n_pos = static_cast<std::size_t>(std::lround(cfg.positive_fraction * static_cast<double>(simulated)));
    }
    std::size_t taken = 0;
    for (std::size_t i : sims) {
        if (taken < n_pos && static_cast<double>(batch[i].mask.count()) > state.labeler->pool_median_area) {
            label[i] = 1;
            ++taken;
        } else {
            route[i] = Route::pseudo;
        }
    }

    std::vector<double> q_l, q_u;
    std::vector<int> y_l;
    std::vector<pseudo::PseudoLabel> y_u;
    std::vector<std::size_t> idx_l, idx_u;
    loss::LossReport r;
    for (std::size_t i = 0; i < b; ++i) {
        const double q = traces[i].out.q;
        if (route[i] == Route::labeled) {
            q_l.push_back(q);
            y_l.push_back(label[i]);
            idx_l.push_back(i);
        } else {
            const pseudo::PseudoLabel pl = state.labeler->labeler.label(traces[i].encoded.latent);
            q_u.push_back(q);
            y_u.push_back(pl);
            idx_u.push_back(i);
            if (pl == pseudo::PseudoLabel::unknown)
                ++r.n_pseudo_unknown;
            else
                ++r.n_pseudo_used;
        }
    }

    std::vector<std::vector<double>> targets(b);
    for (std::size_t i = 0; i < b; ++i) {
        targets[i] = loss::to_target(batch[i].mask);
        const auto& pred = traces[i].out.seg.values;
        r.l1 += loss::l1_loss(targets[i], pred) / static_cast<double>(b);
        r.focal += loss::focal_loss(targets[i], pred, weights.gamma, weights.alpha) / static_cast<double>(b);
    }
    r.seg = weights.omega_l1 * r.l1 + weights.omega_f * r.focal;
    r.bce_labeled = loss::bce_labeled(q_l, y_l);
    r.bce_pseudo = loss::bce_pseudo(q_u, y_u);
    r.total = loss::total_loss(r.seg, r.bce_labeled, r.bce_pseudo);
    require_finite(r.l1, "l1", state.step);
    require_finite(r.focal, "focal", state.step);
    require_finite(r.bce_labeled, "bce_labeled", state.step);
    require_finite(r.bce_pseudo, "bce_pseudo", state.step);
    require_finite(r.total, "total", state.step);

    std::vector<double> dq(b, 0.0);
    const auto gl = loss::bce_labeled_grad(q_l, y_l);
    for (std::size_t j = 0; j < idx_l.size(); ++j) dq[idx_l[j]] = gl[j];
    const auto gu = loss::bce_pseudo_grad(q_u, y_u);
    for (std::size_t j = 0; j < idx_u.size(); ++j) dq[idx_u[j]] = gu[j];

    state.model.zero_grad();
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<double> dseg = loss::seg_loss_grad(targets[i], traces[i].out.seg.values, weights);
        for (double& g : dseg) g /= static_cast<double>(b);
        state.model.backward(traces[i], state.bank, dseg, dq[i]);
    }
    state.optimizer.step(state.model.parameters(), lr_schedule(state.step, cfg));
    ++state.step;
    return r;
}

bool check_convergence(std::span<const double> window_means, const TrainConfig& cfg) {
    double best = std::numeric_limits<double>::infinity();
    int stale = 0;
    for (double m : window_means) {
        // An improvement of exactly min_delta counts; the slack absorbs
        // rounding in the window means.
        if (best - m >= cfg.plateau_min_delta - 1e-12) {
            best = m;
            stale = 0;
        } else {
            ++stale;
        }
    }
    return stale >= cfg.plateau_patience;
}

std::string log_header() { return "step,lr,l1,focal,seg,bce_l,bce_u,total,n_pseudo_used,n_pseudo_unknown\n"; }

std::string format_log_row(const LogRow& row) {
    const auto& r = row.report;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d\n", row.step, row.lr, r.l1,
                  r.focal, r.seg, r.bce_labeled, r.bce_pseudo, r.total, r.n_pseudo_used, r.n_pseudo_unknown);
    return buf;
}

std::string format_log(const std::vector<LogRow>& rows) {
    std::string out = log_header();
    for (const auto& r : rows) out += format_log_row(r);
    return out;
}

TrainResult train(const TrainData& data, const TrainConfig& cfg, const sim::SimConfig& sim_cfg,
                  const loss::LossWeights& weights, const Progress& progress) {
    cfg.validate();
    sim_cfg.validate();
    weights.validate();
    if (data.normals.empty()) throw DatasetLayoutError("training set has no normal images");

    // Periodic re-extraction of the memory bank goes with a fully trainable encoder.
    net::NetworkConfig net_cfg = cfg.net;
    if (cfg.refresh_memory_every > 0) net_cfg.freeze_memory_layers = false;
    TrainResult res{TrainState{net::Model(net_cfg, cfg.seed), {}, std::nullopt, Adam{}, 0}, {}, {}, false};
    TrainState& st = res.state;
    auto encode = [&](const Image& img) { return st.model.encode_features(img); };
    Rng mem_rng(derive_seed(cfg.seed, fnv1a("memory")));
    st.bank = memory::build_memory(data.normals, encode, cfg.memory_n, mem_rng);

    double window_sum = 0.0;
    int window_count = 0;
    for (int t = 0; t < cfg.steps; ++t) {
        if (cfg.refresh_memory_every > 0 && t > 0 && t % cfg.refresh_memory_every == 0) {
            std::vector<FeaturePyramid> entries;
            for (std::size_t idx : st.bank.source_indices()) entries.push_back(encode(data.normals[idx]));
            st.bank = memory::MemoryBank(std::move(entries), st.bank.source_indices());
        }
        if (t % cfg.labeler_refresh_every == 0) st.labeler = refresh_labeler(st, data, cfg, sim_cfg);
        const auto batch = assemble_batch(data.normals, data.textures, sim_cfg, cfg.batch_size,
                                          derive_seed(cfg.seed, fnv1a("batch"), static_cast<std::uint64_t>(t)));
        LogRow row;
        row.step = t;
        row.lr = lr_schedule(t, cfg);
        row.report = train_step(st, batch, cfg, weights);
        res.log.push_back(row);
        if (progress) progress(row);

        window_sum += row.report.total;
        if (++window_count == cfg.plateau_window) {
            res.window_means.push_back(window_sum / window_count);
            window_sum = 0.0;
            window_count = 0;
            if (check_convergence(res.window_means, cfg)) {
                res.stopped_on_plateau = true;
                break;
            }
        }
    }
    return res;
}

}  // namespace mapl::train
