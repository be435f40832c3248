#include "mapl/config.hpp"

#include "mapl/error.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <vector>

namespace mapl::config {
namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Field {
    const char* section;
    const char* key;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

// Message body of a ConfigError without its "config error: " prefix, so
// rethrowing with a location does not repeat it.
std::string body(const ConfigError& e) {
    const std::string w = e.what();
    const std::string prefix = "config error: ";
    return w.rfind(prefix, 0) == 0 ? w.substr(prefix.size()) : w;
}

std::string path_of(const Field& f) { return std::string(f.section) + "." + f.key; }

[[noreturn]] void bad_value(const std::string& key, const char* expected, const std::string& v) {
    throw ConfigError(key + ": expected " + expected + ", got '" + v + "'");
}

template <typename T>
Field int_field(const char* sec, const char* key, T& ref) {
    const std::string name = std::string(sec) + "." + key;
    return {sec, key,
            [&ref, name](const std::string& v) {
                std::conditional_t<std::is_unsigned_v<T>, unsigned long long, long long> x = 0;
                const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
                if (ec != std::errc() || p != v.data() + v.size())
                    bad_value(name, std::is_unsigned_v<T> ? "a non-negative integer" : "an integer", v);
                if (x < std::numeric_limits<T>::min() || x > std::numeric_limits<T>::max())
                    bad_value(name, "an integer in range", v);
                ref = static_cast<T>(x);
            },
            [&ref] { return std::to_string(ref); }};
}

Field double_field(const char* sec, const char* key, double& ref) {
    const std::string name = std::string(sec) + "." + key;
    return {sec, key,
            [&ref, name](const std::string& v) {
                double x = 0;
                const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
                if (ec != std::errc() || p != v.data() + v.size()) bad_value(name, "a number", v);
                ref = x;
            },
            [&ref] {
                // Shortest text that parses back to the same double.
                char buf[64];
                const auto res = std::to_chars(buf, buf + sizeof buf, ref);
                return std::string(buf, res.ptr);
            }};
}

Field bool_field(const char* sec, const char* key, bool& ref) {
    const std::string name = std::string(sec) + "." + key;
    return {sec, key,
            [&ref, name](const std::string& v) {
                if (v == "true" || v == "1") ref = true;
                else if (v == "false" || v == "0") ref = false;
                else bad_value(name, "true or false", v);
            },
            [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field string_field(const char* sec, const char* key, std::string& ref) {
    return {sec, key, [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

Field score_rule_field(net::ImageScoreRule& ref) {
    return {"eval", "score_rule",
            [&ref](const std::string& v) {
                if (v == "max") ref = net::ImageScoreRule::max;
                else if (v == "top1pct_mean") ref = net::ImageScoreRule::top1pct_mean;
                else bad_value("eval.score_rule", "max or top1pct_mean", v);
            },
            [&ref] { return std::string(ref == net::ImageScoreRule::max ? "max" : "top1pct_mean"); }};
}

std::vector<Field> fields(RunConfig& c) {
    auto& d = c.dataset;
    auto& s = c.simulate;
    auto& t = c.train;
    auto& l = c.loss;
    return {
        string_field("dataset", "root", d.root),
        string_field("dataset", "category", d.category),
        string_field("dataset", "texture_dir", d.texture_dir),
        string_field("dataset", "labeled_anomaly_dir", d.labeled_anomaly_dir),
        int_field("dataset", "image_size", d.image_size),
        bool_field("dataset", "perturb_test", d.perturb_test),
        bool_field("dataset", "perturb_train", d.perturb_train),
        double_field("dataset", "perturb_sigma_max", d.perturb.sigma_max),
        double_field("dataset", "perturb_contrast_lo", d.perturb.contrast_lo),
        double_field("dataset", "perturb_contrast_hi", d.perturb.contrast_hi),

        double_field("simulate", "delta_lo", s.delta_lo),
        double_field("simulate", "delta_hi", s.delta_hi),
        double_field("simulate", "perlin_threshold", s.perlin_threshold),
        int_field("simulate", "perlin_max_exponent", s.perlin_max_exponent),
        double_field("simulate", "bg_threshold", s.bg_threshold),
        bool_field("simulate", "bg_invert", s.bg_invert),
        bool_field("simulate", "use_foreground_mask", s.use_foreground_mask),
        double_field("simulate", "texture_prob", s.texture_prob),
        int_field("simulate", "structure_grid", s.structure.grid),
        bool_field("simulate", "structure_jitter", s.structure.jitter),

        int_field("train", "steps", t.steps),
        int_field("train", "batch_size", t.batch_size),
        double_field("train", "lr0", t.lr0),
        int_field("train", "warmup_steps", t.warmup_steps),
        int_field("train", "memory_N", t.memory_n),
        int_field("train", "K", t.labeler.k),
        int_field("train", "labeler_refresh_every", t.labeler_refresh_every),
        int_field("train", "refresh_memory_every", t.refresh_memory_every),
        int_field("train", "plateau_window", t.plateau_window),
        int_field("train", "plateau_patience", t.plateau_patience),
        double_field("train", "plateau_min_delta", t.plateau_min_delta),
        int_field("train", "labeler_pool", t.labeler_pool),
        int_field("train", "normal_pool", t.normal_pool),
        double_field("train", "positive_fraction", t.positive_fraction),
        int_field("train", "seed", t.seed),
        int_field("train", "base_width", t.net.base_width),
        int_field("train", "predictor_hidden", t.net.predictor_hidden),
        bool_field("train", "use_msff", t.net.use_msff),
        bool_field("train", "use_attention", t.net.use_attention),
        bool_field("train", "use_ca", t.net.use_ca),
        bool_field("train", "freeze_memory_layers", t.net.freeze_memory_layers),
        bool_field("train", "per_scale_argmin", t.net.per_scale_argmin),
        int_field("train", "gmm_components", t.labeler.components),
        int_field("train", "projection_dims", t.labeler.projection_dims),
        int_field("train", "em_max_iterations", t.labeler.em_max_iterations),
        bool_field("train", "fit_on_normals_only", t.labeler.fit_on_normals_only),
        bool_field("train", "eta_p_both_sides", t.labeler.eta_p_both_sides),

        double_field("loss", "omega_l1", l.omega_l1),
        double_field("loss", "omega_f", l.omega_f),
        double_field("loss", "gamma", l.gamma),
        double_field("loss", "alpha", l.alpha),

        score_rule_field(t.net.score_rule),
        bool_field("eval", "pixel_auroc", c.eval.pixel_auroc),
        bool_field("eval", "heatmaps", c.eval.heatmaps),
    };
}

}  // namespace

void RunConfig::validate() const {
    if (dataset.image_size < 16 || dataset.image_size % 16 != 0)
        throw ConfigError("dataset.image_size must be a positive multiple of 16");
    if (dataset.perturb.sigma_max < 0) throw ConfigError("dataset.perturb_sigma_max must be >= 0");
    if (!(dataset.perturb.contrast_lo > 0 && dataset.perturb.contrast_lo <= dataset.perturb.contrast_hi))
        throw ConfigError("dataset.perturb_contrast_lo must be in (0, perturb_contrast_hi]");
    simulate.validate();
    train::TrainConfig t = train;
    t.net.image_size = dataset.image_size;
    t.validate();
    loss.validate();
}

RunConfig parse(const std::string& text, const std::string& source) {
    RunConfig c;
    auto fs = fields(c);
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find_first_of("#;");
        std::string s = trim(hash_pos == std::string::npos ? line : line.substr(0, hash_pos));
        if (s.empty()) continue;
        const std::string where = source + ":" + std::to_string(lineno);
        if (s.front() == '[') {
            if (s.back() != ']') throw ConfigError(where + ": malformed section header '" + s + "'");
            section = trim(s.substr(1, s.size() - 2));
            const bool known = std::any_of(fs.begin(), fs.end(), [&](const Field& f) { return section == f.section; });
            if (!known) throw ConfigError(where + ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + s + "'");
        if (section.empty()) throw ConfigError(where + ": key outside of any section");
        const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
        auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return section == f.section && key == f.key; });
        if (it == fs.end()) throw ConfigError(where + ": unknown key '" + section + "." + key + "'");
        try {
            it->set(value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + body(e));
        }
    }
    c.train.net.image_size = c.dataset.image_size;
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + body(e));
    }
    return c;
}

RunConfig load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path.string());
}

std::string to_text(const RunConfig& c) {
    auto fs = fields(const_cast<RunConfig&>(c));
    std::string out, section;
    for (const auto& f : fs) {
        if (section != f.section) {
            if (!section.empty()) out += "\n";
            section = f.section;
            out += "[" + section + "]\n";
        }
        out += std::string(f.key) + " = " + f.get() + "\n";
    }
    return out;
}

std::string hash(const RunConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_text(c))));
    return buf;
}

void set(RunConfig& c, const std::string& dotted_key, const std::string& value) {
    auto fs = fields(c);
    auto it = std::find_if(fs.begin(), fs.end(), [&](const Field& f) { return path_of(f) == dotted_key; });
    if (it == fs.end()) throw ConfigError("unknown key '" + dotted_key + "'");
    it->set(value);
    c.train.net.image_size = c.dataset.image_size;
}

}  // namespace mapl::config
