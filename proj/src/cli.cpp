#include "mapl/cli.hpp"

#include "mapl/checkpoint.hpp"
#include "mapl/dataio.hpp"
#include "mapl/error.hpp"
#include "mapl/evaluation.hpp"
#include "mapl/rng.hpp"
#include "mapl/trainer.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

namespace mapl::cli {
namespace {

template <typename F>
int guarded(std::ostream& err, F&& fn) {
    try {
        fn();
        return static_cast<int>(ExitCode::ok);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::data);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FileError("cannot write " + path.string());
    f << text;
}

void require_dataset(const config::DatasetConfig& d) {
    if (d.root.empty()) throw ConfigError("dataset.root is not set");
    if (d.category.empty()) throw ConfigError("dataset.category is not set");
}

train::TrainData load_train_data(const config::RunConfig& cfg) {
    require_dataset(cfg.dataset);
    const int size = cfg.dataset.image_size;
    const auto index = dataio::load_dataset(cfg.dataset.root, cfg.dataset.category);
    train::TrainData data;
    for (std::size_t i = 0; i < index.train_normals.size(); ++i) {
        Image img = dataio::load_image(index.train_normals[i], size);
        // Perturbed once at load, so simulation starts from the perturbed source.
        if (cfg.dataset.perturb_train) {
            Rng rng(derive_seed(cfg.train.seed, fnv1a("perturb-train"), i));
            img = dataio::perturb_random(img, cfg.dataset.perturb, rng);
        }
        data.normals.push_back(std::move(img));
    }
    if (!cfg.dataset.texture_dir.empty())
        data.textures = dataio::load_image_dir(cfg.dataset.texture_dir, size);
    else if (cfg.simulate.texture_prob > 0.0)
        throw ConfigError("dataset.texture_dir is not set but simulate.texture_prob > 0");
    if (!cfg.dataset.labeled_anomaly_dir.empty())
        data.labeled_anomalies = dataio::load_image_dir(cfg.dataset.labeled_anomaly_dir, size);
    return data;
}

std::vector<eval::LabeledImage> load_test_items(const config::DatasetConfig& d, std::uint64_t seed) {
    require_dataset(d);
    const auto index = dataio::load_dataset(d.root, d.category);
    std::vector<eval::LabeledImage> items;
    const fs::path base = fs::path(d.root) / d.category;
    for (std::size_t i = 0; i < index.test_items.size(); ++i) {
        const auto& t = index.test_items[i];
        eval::LabeledImage li;
        li.name = fs::relative(t.image, base).generic_string();
        li.image = dataio::load_image(t.image, d.image_size);
        if (d.perturb_test) {
            Rng rng(derive_seed(seed, fnv1a("perturb"), i));
            li.image = dataio::perturb_random(li.image, d.perturb, rng);
        }
        li.label = t.label == dataio::Label::anomalous ? 1 : 0;
        if (t.mask)
            li.mask = dataio::load_mask(*t.mask, d.image_size);
        else if (li.label == 0)
            li.mask = GrayMask(d.image_size, d.image_size);
        items.push_back(std::move(li));
    }
    return items;
}

struct TrainOutcome {
    train::TrainResult result;
    ckpt::Archive archive;
};

TrainOutcome train_and_pack(const config::RunConfig& cfg, std::ostream& out) {
    const train::TrainData data = load_train_data(cfg);
    train::TrainConfig tc = cfg.train;
    tc.net.image_size = cfg.dataset.image_size;
    const int every = std::max(1, tc.steps / 10);
    auto progress = [&](const train::LogRow& r) {
        if (r.step % every == 0 || r.step + 1 == tc.steps) {
            char line[160];
            std::snprintf(line, sizeof line, "step %5d  lr %.5f  total %.5f  seg %.5f  bce_l %.5f  bce_u %.5f\n", r.step,
                          r.lr, r.report.total, r.report.seg, r.report.bce_labeled, r.report.bce_pseudo);
            out << line << std::flush;
        }
    };
    TrainOutcome o{train::train(data, tc, cfg.simulate, cfg.loss, progress), {}};
    const auto& st = o.result.state;
    o.archive = ckpt::pack(cfg, st.model, st.bank, st.labeler ? &*st.labeler : nullptr, st.step,
                           ckpt::log_digest(o.result.log));
    return o;
}

void print_report(std::ostream& out, const train::TrainResult& r) {
    if (r.log.empty()) return;
    const auto& rep = r.log.back().report;
    char line[256];
    std::snprintf(line, sizeof line,
                  "final: steps %zu  l1 %.6f  focal %.6f  seg %.6f  bce_l %.6f  bce_u %.6f  total %.6f%s\n",
                  r.log.size(), rep.l1, rep.focal, rep.seg, rep.bce_labeled, rep.bce_pseudo, rep.total,
                  r.stopped_on_plateau ? "  (stopped on plateau)" : "");
    out << line;
}

}  // namespace

config::RunConfig resolve_config(const ConfigOptions& opts) {
    std::string path = opts.config_path;
    if (path.empty())
        if (const char* env = std::getenv("MAPL_CONFIG"); env != nullptr) path = env;
    config::RunConfig cfg = path.empty() ? config::RunConfig{} : config::load(path);
    for (const auto& kv : opts.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
        config::set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (opts.seed) cfg.train.seed = *opts.seed;
    if (opts.refresh_every) cfg.train.labeler_refresh_every = *opts.refresh_every;
    cfg.train.net.image_size = cfg.dataset.image_size;
    cfg.validate();
    return cfg;
}

Ablation parse_ablation(const std::string& name) {
    if (name == "baseline") return Ablation::baseline;
    if (name == "no_msff") return Ablation::no_msff;
    if (name == "no_attention") return Ablation::no_attention;
    if (name == "with_ca") return Ablation::with_ca;
    throw ConfigError("unknown ablation '" + name + "' (expected no_msff, no_attention or with_ca)");
}

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::baseline: return "baseline";
        case Ablation::no_msff: return "no_msff";
        case Ablation::no_attention: return "no_attention";
        case Ablation::with_ca: return "with_ca";
    }
    return "?";
}

config::RunConfig ablated(const config::RunConfig& cfg, Ablation a) {
    config::RunConfig c = cfg;
    switch (a) {
        case Ablation::baseline: break;
        case Ablation::no_msff: c.train.net.use_msff = false; break;
        case Ablation::no_attention: c.train.net.use_attention = false; break;
        case Ablation::with_ca: c.train.net.use_ca = true; break;
    }
    return c;
}

int cmd_simulate(const config::RunConfig& cfg, const fs::path& out_dir, int count, std::uint64_t seed,
                 std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        if (count < 0) throw ConfigError("--count must be >= 0");
        const train::TrainData data = load_train_data(cfg);
        if (data.normals.empty()) throw DatasetLayoutError("training set has no normal images");
        fs::create_directories(out_dir);
        std::string manifest = "index,source,delta,noise_kind,degenerate\n";
        for (int i = 0; i < count; ++i) {
            Rng rng(derive_seed(seed, fnv1a("simulate"), static_cast<std::uint64_t>(i)));
            const std::size_t src = rng.below(data.normals.size());
            const auto s = sim::simulate(data.normals[src], cfg.simulate, data.textures, rng);
            char name[32];
            std::snprintf(name, sizeof name, "%04d_img.png", i);
            dataio::save_image(s.image, out_dir / name);
            std::snprintf(name, sizeof name, "%04d_mask.png", i);
            dataio::save_mask(s.mask, out_dir / name);
            char row[128];
            std::snprintf(row, sizeof row, "%d,%zu,%.17g,%s,%d\n", i, src, s.delta,
                          std::string(sim::to_string(s.noise_kind)).c_str(), s.degenerate ? 1 : 0);
            manifest += row;
        }
        write_text(out_dir / "manifest.csv", manifest);
        out << "wrote " << count << " simulated samples to " << out_dir.string() << "\n";
    });
}

int cmd_train(const config::RunConfig& cfg, const fs::path& out_dir, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        out << "config hash " << config::hash(cfg) << "\n";
        const TrainOutcome o = train_and_pack(cfg, out);
        fs::create_directories(out_dir);
        ckpt::write_file(o.archive, out_dir / "model.ckpt");
        write_text(out_dir / "train_log.csv", train::format_log(o.result.log));
        print_report(out, o.result);
        out << "checkpoint " << (out_dir / "model.ckpt").string() << "\n";
    });
}

int cmd_eval(const fs::path& checkpoint, const std::optional<config::DatasetConfig>& dataset_override,
             const fs::path& out_dir, bool heatmaps, std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        const ckpt::Restored r = ckpt::unpack(ckpt::read_file(checkpoint));
        config::DatasetConfig d = dataset_override.value_or(r.config.dataset);
        if (d.image_size != r.config.dataset.image_size)
            throw ConfigError("dataset.image_size differs from the checkpoint's (" +
                              std::to_string(r.config.dataset.image_size) + ")");
        const auto items = load_test_items(d, r.config.train.seed);
        eval::EvalOptions opts;
        opts.pixel_auroc = r.config.eval.pixel_auroc;
        if (heatmaps || r.config.eval.heatmaps) opts.heatmap_dir = out_dir / "heatmaps";
        const eval::EvalResult res = eval::evaluate(r.model, r.bank, d.category, items, opts);
        fs::create_directories(out_dir);
        const std::vector<eval::EvalResult> all{res};
        const std::string table = eval::format_table(all, 4);
        write_text(out_dir / "results.csv", eval::results_csv(all));
        write_text(out_dir / "per_image.csv", eval::per_image_csv(res));
        write_text(out_dir / "table.txt", table);
        char line[128];
        std::snprintf(line, sizeof line, "%s image AUROC %.4f (%d normal, %d anomalous)\n", d.category.c_str(),
                      res.auroc, res.n_normal, res.n_anomalous);
        out << line;
        if (res.pixel_auroc) {
            std::snprintf(line, sizeof line, "%s pixel AUROC %.4f\n", d.category.c_str(), *res.pixel_auroc);
            out << line;
        }
        out << table;
    });
}

int cmd_ablate(const config::RunConfig& cfg, const std::vector<Ablation>& which, const fs::path& out_dir,
               std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        std::vector<Ablation> runs{Ablation::baseline};
        for (Ablation a : which)
            if (std::find(runs.begin(), runs.end(), a) == runs.end()) runs.push_back(a);
        const auto items = load_test_items(cfg.dataset, cfg.train.seed);

        std::string csv = "configuration,use_msff,use_attention,use_ca," + cfg.dataset.category + ",average\n";
        std::ostringstream txt;
        char line[256];
        std::snprintf(line, sizeof line, "%-14s %5s %5s %5s %12s %10s\n", "configuration", "MSFF", "SA", "CA",
                      cfg.dataset.category.c_str(), "Average");
        txt << line;
        for (Ablation a : runs) {
            const config::RunConfig c = ablated(cfg, a);
            out << "== " << to_string(a) << "\n";
            const TrainOutcome o = train_and_pack(c, out);
            const auto& st = o.result.state;
            const eval::EvalResult res = eval::evaluate(st.model, st.bank, c.dataset.category, items);
            const std::vector<eval::EvalResult> one{res};
            const double avg = eval::mean_auroc(one);
            const auto& n = c.train.net;
            std::snprintf(line, sizeof line, "%s,%d,%d,%d,%.4f,%.4f\n", to_string(a).c_str(), n.use_msff,
                          n.use_attention, n.use_ca, 100.0 * res.auroc, 100.0 * avg);
            csv += line;
            std::snprintf(line, sizeof line, "%-14s %5s %5s %5s %12.4f %10.4f\n", to_string(a).c_str(),
                          n.use_msff ? "yes" : "no", n.use_attention ? "yes" : "no", n.use_ca ? "yes" : "no",
                          100.0 * res.auroc, 100.0 * avg);
            txt << line;
        }
        write_text(out_dir / "ablation.csv", csv);
        write_text(out_dir / "ablation.txt", txt.str());
        out << txt.str();
    });
}

int cmd_make_synthetic(const synth::CorpusSpec& spec, const fs::path& root, const std::string& category,
                       std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        synth::write_corpus(synth::make_corpus(spec), root, category);
        out << "wrote synthetic category '" << category << "' and textures/ under " << root.string() << "\n";
    });
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Semi-supervised surface-defect detection"};
    app.require_subcommand(1);

    ConfigOptions copts;
    std::uint64_t seed_value = 0;
    int refresh_value = 0;
    auto add_config_flags = [&](CLI::App* sub) {
        sub->add_option("--config", copts.config_path, "configuration file (default: $MAPL_CONFIG)");
        sub->add_option("--seed", seed_value, "override train.seed");
        sub->add_option("--refresh-every", refresh_value, "override train.labeler_refresh_every");
        sub->add_option("--set", copts.overrides, "override a key: section.key=value")->take_all();
    };

    std::string out_dir = "out";
    int count = 0;
    auto* simulate = app.add_subcommand("simulate", "write simulated anomaly samples");
    add_config_flags(simulate);
    simulate->add_option("--out", out_dir, "output directory");
    simulate->add_option("--count", count, "number of samples")->required();

    auto* trn = app.add_subcommand("train", "train and write a checkpoint");
    add_config_flags(trn);
    trn->add_option("--out", out_dir, "output directory");

    std::string checkpoint;
    bool heatmaps = false;
    std::string eval_root, eval_category;
    auto* evl = app.add_subcommand("eval", "evaluate a checkpoint");
    evl->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    evl->add_option("--out", out_dir, "output directory");
    evl->add_flag("--heatmaps", heatmaps, "write per-image heatmap PNGs");
    evl->add_option("--dataset-root", eval_root, "evaluate another dataset root");
    evl->add_option("--category", eval_category, "evaluate another category");

    std::vector<std::string> ablate_names;
    auto* abl = app.add_subcommand("ablate", "train and evaluate ablated variants");
    add_config_flags(abl);
    abl->add_option("--out", out_dir, "output directory");
    abl->add_option("--ablate", ablate_names, "no_msff, no_attention, with_ca (default: all)")->delimiter(',');

    synth::CorpusSpec spec;
    std::string category = "synthetic";
    auto* mk = app.add_subcommand("make-synthetic", "write the synthetic striped/checker corpus");
    mk->add_option("--out", out_dir, "dataset root");
    mk->add_option("--category", category, "category name");
    mk->add_option("--seed", spec.seed, "corpus seed");
    mk->add_option("--size", spec.size, "image side");
    mk->add_option("--train", spec.train_normals, "training normals");
    mk->add_option("--test-normal", spec.test_normals, "test normals");
    mk->add_option("--test-anomalous", spec.test_anomalous, "test anomalies");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::config);
    }

    auto with_config = [&](CLI::App* sub, auto&& body) {
        if (sub->count("--seed") > 0) copts.seed = seed_value;
        if (sub->count("--refresh-every") > 0) copts.refresh_every = refresh_value;
        config::RunConfig cfg;
        const int rc = guarded(err, [&] { cfg = resolve_config(copts); });
        if (rc != 0) return rc;
        return body(cfg);
    };

    if (*simulate)
        return with_config(simulate, [&](const config::RunConfig& cfg) {
            return cmd_simulate(cfg, out_dir, count, cfg.train.seed, out, err);
        });
    if (*trn)
        return with_config(trn, [&](const config::RunConfig& cfg) { return cmd_train(cfg, out_dir, out, err); });
    if (*evl) {
        std::optional<config::DatasetConfig> override_ds;
        if (!eval_root.empty() || !eval_category.empty()) {
            const int rc = guarded(err, [&] {
                config::DatasetConfig d = ckpt::unpack(ckpt::read_file(checkpoint)).config.dataset;
                if (!eval_root.empty()) d.root = eval_root;
                if (!eval_category.empty()) d.category = eval_category;
                override_ds = d;
            });
            if (rc != 0) return rc;
        }
        return cmd_eval(checkpoint, override_ds, out_dir, heatmaps, out, err);
    }
    if (*abl)
        return with_config(abl, [&](const config::RunConfig& cfg) {
            std::vector<Ablation> which;
            const int rc = guarded(err, [&] {
                for (const auto& n : ablate_names) which.push_back(parse_ablation(n));
                if (which.empty()) which = {Ablation::no_msff, Ablation::no_attention, Ablation::with_ca};
            });
            if (rc != 0) return rc;
            return cmd_ablate(cfg, which, out_dir, out, err);
        });
    if (*mk) return cmd_make_synthetic(spec, out_dir, category, out, err);
    return static_cast<int>(ExitCode::config);
}

}  // namespace mapl::cli
