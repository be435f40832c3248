#include "mapl/evaluation.hpp"

#include "mapl/error.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace mapl::eval {

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ParameterError("auroc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ParameterError("auroc: labels must be 0 or 1");
        n_pos += static_cast<std::size_t>(l);
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedMetricError("AUROC is undefined: test set has " + std::to_string(n_pos) + " anomalous and " +
                                   std::to_string(n_neg) + " normal items");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Sum of mid-ranks of the positives, kept doubled so it stays integral.
    std::size_t doubled_rank_sum = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const std::size_t doubled_mid = i + 1 + j;  // 2 * (i + 1 + j) / 2
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) doubled_rank_sum += doubled_mid;
        i = j;
    }
    const double u = (static_cast<double>(doubled_rank_sum) - static_cast<double>(n_pos * (n_pos + 1))) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

EvalResult evaluate(const net::Model& model, const memory::MemoryBank& bank, const std::string& category,
                    std::span<const LabeledImage> items, const EvalOptions& opts) {
    EvalResult res;
    res.category = category;
    std::vector<double> scores, pix_scores;
    std::vector<int> labels, pix_labels;
    for (const auto& item : items) {
        const net::Prediction p = model.forward(item.image, bank);
        res.records.push_back({item.name, item.label, p.image_score, p.q});
        scores.push_back(p.image_score);
        labels.push_back(item.label);
        (item.label ? res.n_anomalous : res.n_normal)++;
        if (opts.pixel_auroc) {
            const GrayMask mask = item.mask ? *item.mask : GrayMask(p.seg.height, p.seg.width);
            for (std::size_t i = 0; i < p.seg.values.size(); ++i) {
                pix_scores.push_back(p.seg.values[i]);
                pix_labels.push_back(mask.pixels[i]);
            }
        }
        if (opts.heatmap_dir) {
            std::filesystem::path stem = std::filesystem::path(item.name).stem();
            const std::string parent = std::filesystem::path(item.name).parent_path().filename().string();
            const std::string file = (parent.empty() ? "" : parent + "_") + stem.string() + "_heatmap.png";
            dataio::export_heatmap(p.seg, *opts.heatmap_dir / file);
        }
    }
    res.auroc = auroc(scores, labels);
    if (opts.pixel_auroc) {
        const bool both = std::find(pix_labels.begin(), pix_labels.end(), 1) != pix_labels.end() &&
                          std::find(pix_labels.begin(), pix_labels.end(), 0) != pix_labels.end();
        if (both) res.pixel_auroc = auroc(pix_scores, pix_labels);
    }
    return res;
}

EvalResult evaluate(const net::Model& model, const memory::MemoryBank& bank, const dataio::DatasetIndex& index,
                    const EvalOptions& opts) {
    const int size = model.config().image_size;
    std::vector<LabeledImage> items;
    for (const auto& t : index.test_items) {
        LabeledImage li{t.image.string(), dataio::load_image(t.image, size),
                        t.label == dataio::Label::anomalous ? 1 : 0, std::nullopt};
        if (opts.pixel_auroc && t.mask) li.mask = dataio::load_mask(*t.mask, size);
        items.push_back(std::move(li));
    }
    return evaluate(model, bank, index.category, items, opts);
}

double mean_auroc(std::span<const EvalResult> results) {
    if (results.empty()) throw UndefinedMetricError("no evaluation results to average");
    double s = 0.0;
    for (const auto& r : results) s += r.auroc;
    return s / static_cast<double>(results.size());
}

std::string format_table(std::span<const EvalResult> results, int decimals) {
    std::vector<std::string> head, vals;
    char buf[64];
    for (const auto& r : results) {
        head.push_back(r.category);
        std::snprintf(buf, sizeof buf, "%.*f", decimals, 100.0 * r.auroc);
        vals.push_back(buf);
    }
    head.push_back("Average");
    std::snprintf(buf, sizeof buf, "%.*f", decimals, 100.0 * mean_auroc(results));
    vals.push_back(buf);

    std::string out = "Image-level AUROC (%)\n";
    std::string line1 = "|", line2 = "|", line3 = "|";
    for (std::size_t i = 0; i < head.size(); ++i) {
        const std::size_t w = std::max(head[i].size(), vals[i].size());
        auto pad = [&](const std::string& s) { return " " + s + std::string(w - s.size(), ' ') + " |"; };
        line1 += pad(head[i]);
        line2 += " " + std::string(w, '-') + " |";
        line3 += pad(vals[i]);
    }
    return out + line1 + "\n" + line2 + "\n" + line3 + "\n";
}

std::string results_csv(std::span<const EvalResult> results) {
    std::string out = "category,auroc,n_normal,n_anomalous,pixel_auroc\n";
    char buf[256];
    for (const auto& r : results) {
        std::snprintf(buf, sizeof buf, "%s,%.6f,%d,%d,", r.category.c_str(), r.auroc, r.n_normal, r.n_anomalous);
        out += buf;
        if (r.pixel_auroc) {
            std::snprintf(buf, sizeof buf, "%.6f", *r.pixel_auroc);
            out += buf;
        }
        out += "\n";
    }
    std::snprintf(buf, sizeof buf, "Average,%.6f,,,\n", mean_auroc(results));
    return out + buf;
}

std::string per_image_csv(const EvalResult& result) {
    std::string out = "path,label,score,q\n";
    char buf[128];
    for (const auto& r : result.records) {
        std::snprintf(buf, sizeof buf, ",%d,%.9g,%.9g\n", r.label, r.score, r.q);
        out += r.path + buf;
    }
    return out;
}

}  // namespace mapl::eval
