#include "mapl/memory.hpp"

#include "mapl/error.hpp"
#include "mapl/simd/kernels.hpp"

#include <limits>

namespace mapl::memory {
namespace {

void check_same_shapes(const FeaturePyramid& a, const FeaturePyramid& b, const char* what) {
    for (int s = 0; s < 3; ++s)
        if (!a[s].same_shape(b[s])) throw ParameterError(std::string(what) + ": pyramid shape mismatch at scale " +
                                                         std::to_string(s + 1));
}

}  // namespace

MemoryBank::MemoryBank(std::vector<FeaturePyramid> entries, std::vector<std::size_t> source_indices)
    : entries_(std::move(entries)), sources_(std::move(source_indices)) {
    for (std::size_t i = 1; i < entries_.size(); ++i) check_same_shapes(entries_[0], entries_[i], "memory bank");
}

MemoryBank build_memory(std::span<const Image> normals, const Encoder& encode, int n, Rng& rng) {
    if (n < 1) throw ConfigError("train.memory_N must be >= 1");
    if (normals.size() < static_cast<std::size_t>(n))
        throw ConfigError("memory bank needs " + std::to_string(n) + " normal images, only " +
                          std::to_string(normals.size()) + " available");
    std::vector<std::size_t> chosen = rng.sample_without_replacement(normals.size(), static_cast<std::size_t>(n));
    std::vector<FeaturePyramid> entries;
    entries.reserve(chosen.size());
    for (std::size_t idx : chosen) entries.push_back(encode(normals[idx]));
    return MemoryBank(std::move(entries), std::move(chosen));
}

std::vector<DiffPyramid> diff_all(const FeaturePyramid& x, const MemoryBank& bank) {
    const auto& kt = simd::kernels();
    std::vector<DiffPyramid> out;
    out.reserve(bank.size());
    for (const auto& entry : bank.entries()) {
        check_same_shapes(entry, x, "diff_all");
        DiffPyramid d;
        for (int s = 0; s < 3; ++s) {
            d[s] = Tensor(x[s].channels, x[s].height, x[s].width);
            kt.abs_diff(x[s].size(), entry[s].data.data(), x[s].data.data(), d[s].data.data());
        }
        out.push_back(std::move(d));
    }
    return out;
}

std::size_t select_best_index(std::span<const DiffPyramid> diffs) {
    if (diffs.empty()) throw StateError("select_best: no difference pyramids");
    std::size_t best = 0;
    double best_sum = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < diffs.size(); ++i) {
        const double s = diffs[i].sum();
        if (s < best_sum) {
            best_sum = s;
            best = i;
        }
    }
    return best;
}

DiffPyramid select_best(std::span<const DiffPyramid> diffs) { return diffs[select_best_index(diffs)]; }

Match match_memory(const FeaturePyramid& x, const MemoryBank& bank, bool per_scale) {
    if (bank.empty()) throw StateError("memory bank is empty");
    check_same_shapes(bank[0], x, "match_memory");
    const auto& kt = simd::kernels();
    const std::size_t n = bank.size();
    std::vector<std::array<double, 3>> sums(n);
    for (std::size_t i = 0; i < n; ++i)
        for (int s = 0; s < 3; ++s) sums[i][s] = kt.abs_diff(x[s].size(), bank[i][s].data.data(), x[s].data.data(), nullptr);

    Match m;
    if (per_scale) {
        for (int s = 0; s < 3; ++s) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < n; ++i)
                if (sums[i][s] < sums[best][s]) best = i;
            m.index[s] = best;
        }
    } else {
        std::size_t best = 0;
        double best_sum = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            const double t = sums[i][0] + sums[i][1] + sums[i][2];
            if (t < best_sum) {
                best_sum = t;
                best = i;
            }
        }
        m.index = {best, best, best};
    }
    for (int s = 0; s < 3; ++s) {
        m.best[s] = Tensor(x[s].channels, x[s].height, x[s].width);
        m.total += kt.abs_diff(x[s].size(), bank[m.index[s]][s].data.data(), x[s].data.data(), m.best[s].data.data());
    }
    return m;
}

ConcatPyramid concat_info(const FeaturePyramid& x, const DiffPyramid& best) {
    ConcatPyramid ci;
    for (int s = 0; s < 3; ++s) {
        if (!x[s].same_shape(best[s])) throw ParameterError("concat_info: shape mismatch at scale " + std::to_string(s + 1));
        ci[s] = concat_channels(x[s], best[s]);
    }
    return ci;
}

AttentionMaps attention_maps(const DiffPyramid& best) {
    AttentionMaps m;
    m[2] = channel_mean(best[2]);
    m[1] = channel_mean(best[1]);
    const Tensor up3 = upsample2x(m[2]);
    if (!up3.same_shape(m[1])) throw ParameterError("attention maps: scale 2 must be twice scale 3");
    for (std::size_t i = 0; i < m[1].size(); ++i) m[1].data[i] *= up3.data[i];
    m[0] = channel_mean(best[0]);
    const Tensor up2 = upsample2x(m[1]);
    if (!up2.same_shape(m[0])) throw ParameterError("attention maps: scale 1 must be twice scale 2");
    for (std::size_t i = 0; i < m[0].size(); ++i) m[0].data[i] *= up2.data[i];
    return m;
}

DiffPyramid attention_maps_backward(const DiffPyramid& best, const AttentionMaps& grad_maps) {
    const Tensor a1 = channel_mean(best[0]);
    const Tensor a2 = channel_mean(best[1]);
    const Tensor a3 = channel_mean(best[2]);
    Tensor m2 = a2;
    const Tensor up3 = upsample2x(a3);
    for (std::size_t i = 0; i < m2.size(); ++i) m2.data[i] *= up3.data[i];
    const Tensor up2 = upsample2x(m2);

    const Tensor& g1 = grad_maps[0];
    Tensor da1(1, a1.height, a1.width), t1(1, a1.height, a1.width);
    for (std::size_t i = 0; i < da1.size(); ++i) {
        da1.data[i] = g1.data[i] * up2.data[i];
        t1.data[i] = g1.data[i] * a1.data[i];
    }
    Tensor g2 = grad_maps[1];
    g2 += upsample2x_adjoint(t1);

    Tensor da2(1, a2.height, a2.width), t2(1, a2.height, a2.width);
    for (std::size_t i = 0; i < da2.size(); ++i) {
        da2.data[i] = g2.data[i] * up3.data[i];
        t2.data[i] = g2.data[i] * a2.data[i];
    }
    Tensor da3 = grad_maps[2];
    da3 += upsample2x_adjoint(t2);

    const std::array<const Tensor*, 3> da{&da1, &da2, &da3};
    DiffPyramid out;
    for (int s = 0; s < 3; ++s) {
        const Tensor& b = best[s];
        out[s] = Tensor(b.channels, b.height, b.width);
        const double inv = 1.0 / b.channels;
        for (int c = 0; c < b.channels; ++c) {
            double* p = out[s].plane(c);
            for (std::size_t i = 0; i < b.plane_size(); ++i) p[i] = da[s]->data[i] * inv;
        }
    }
    return out;
}

void match_backward(const FeaturePyramid& x, const MemoryBank& bank, const Match& match, const DiffPyramid& grad_best,
                    FeaturePyramid& dx) {
    const auto& kt = simd::kernels();
    for (int s = 0; s < 3; ++s) {
        if (dx[s].empty()) dx[s] = Tensor(x[s].channels, x[s].height, x[s].width);
        kt.abs_diff_backward(x[s].size(), x[s].data.data(), bank[match.index[s]][s].data.data(),
                             grad_best[s].data.data(), dx[s].data.data());
    }
}

}  // namespace mapl::memory
