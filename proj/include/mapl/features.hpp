#pragma once

#include "mapl/tensor.hpp"

#include <vector>

namespace mapl {

struct FeatureTag {};
struct DiffTag {};
struct ConcatTag {};
struct FusedTag {};

/// Encoder features x at three scales (f1, f2, f3).
using FeaturePyramid = Pyramid<FeatureTag>;
/// Elementwise |MI - x| per scale; non-negative.
using DiffPyramid = Pyramid<DiffTag>;
/// Per scale [x ; DI*] along channels.
using ConcatPyramid = Pyramid<ConcatTag>;
/// MSFF output per scale.
using FusedPyramid = Pyramid<FusedTag>;

/// Spatial attention maps M1 (finest) .. M3 (coarsest), each 1 x H x W.
struct AttentionMaps {
    std::array<Tensor, 3> level;

    Tensor& operator[](std::size_t i) { return level[i]; }
    const Tensor& operator[](std::size_t i) const { return level[i]; }
};

/// Pooled f3, the input of the predictor and of the pseudo-labeler.
using LatentRep = std::vector<double>;

}  // namespace mapl
