#pragma once

#include "mapl/features.hpp"
#include "mapl/image.hpp"
#include "mapl/rng.hpp"

#include <array>
#include <functional>
#include <span>
#include <vector>

namespace mapl::memory {

/// Frozen feature pyramids of N normal images. Entries cannot be modified
/// once the bank is built.
class MemoryBank {
public:
    MemoryBank() = default;
    /// Validates that all entries share shapes; throws ParameterError otherwise.
    explicit MemoryBank(std::vector<FeaturePyramid> entries, std::vector<std::size_t> source_indices = {});

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    const FeaturePyramid& operator[](std::size_t i) const { return entries_[i]; }
    const std::vector<FeaturePyramid>& entries() const noexcept { return entries_; }
    /// Index of each entry in the image list it was built from (empty if unknown).
    const std::vector<std::size_t>& source_indices() const noexcept { return sources_; }

private:
    std::vector<FeaturePyramid> entries_;
    std::vector<std::size_t> sources_;
};

using Encoder = std::function<FeaturePyramid(const Image&)>;

/// Chooses N of the normals uniformly without replacement and encodes them.
/// Throws ConfigError when fewer than N normals are available.
MemoryBank build_memory(std::span<const Image> normals, const Encoder& encode, int n, Rng& rng);

/// One DiffPyramid per memory entry: |MI_i - x| elementwise at each scale.
std::vector<DiffPyramid> diff_all(const FeaturePyramid& x, const MemoryBank& bank);

/// Index of the pyramid with the smallest total element sum; ties go to the
/// lowest index. Throws StateError on an empty list.
std::size_t select_best_index(std::span<const DiffPyramid> diffs);
DiffPyramid select_best(std::span<const DiffPyramid> diffs);

/// DI* computed directly against the bank without materialising all N
/// difference pyramids. With per_scale, each scale picks its own entry.
struct Match {
    DiffPyramid best;
    std::array<std::size_t, 3> index{};
    double total = 0.0;
};
Match match_memory(const FeaturePyramid& x, const MemoryBank& bank, bool per_scale = false);

ConcatPyramid concat_info(const FeaturePyramid& x, const DiffPyramid& best);

/// M3 = mean_c DI*3; M2 = mean_c DI*2 . up(M3); M1 = mean_c DI*1 . up(M2),
/// with nearest-neighbour upsampling.
AttentionMaps attention_maps(const DiffPyramid& best);

/// Adjoint of attention_maps: gradient w.r.t. DI* given gradients w.r.t.
/// each map (each map's own consumers only).
DiffPyramid attention_maps_backward(const DiffPyramid& best, const AttentionMaps& grad_maps);

/// Adds d|MI_match - x|/dx . grad to dx, per scale.
void match_backward(const FeaturePyramid& x, const MemoryBank& bank, const Match& match, const DiffPyramid& grad_best,
                    FeaturePyramid& dx);

}  // namespace mapl::memory
