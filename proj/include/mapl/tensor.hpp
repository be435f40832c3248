#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace mapl {

/// Dense channels x height x width tensor of doubles (one image, CHW order).
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t size() const noexcept { return data.size(); }
    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height) * width; }
    bool empty() const noexcept { return data.empty(); }

    double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
    double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }

    double* plane(int c) { return data.data() + static_cast<std::size_t>(c) * plane_size(); }
    const double* plane(int c) const { return data.data() + static_cast<std::size_t>(c) * plane_size(); }

    bool same_shape(const Tensor& o) const noexcept {
        return channels == o.channels && height == o.height && width == o.width;
    }

    double sum() const;
    bool all_finite() const;

    Tensor& operator+=(const Tensor& o);
};

/// Three-level pyramid, strongly tagged by role so feature, difference,
/// concatenated and fused pyramids cannot be mixed up.
template <typename Tag>
struct Pyramid {
    std::array<Tensor, 3> level;

    Tensor& operator[](std::size_t i) { return level[i]; }
    const Tensor& operator[](std::size_t i) const { return level[i]; }

    double sum() const { return level[0].sum() + level[1].sum() + level[2].sum(); }
};

// Nearest-neighbour upsampling by 2 and its adjoint (2x2 block sums).
Tensor upsample2x(const Tensor& x);
Tensor upsample2x_adjoint(const Tensor& dy);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels on gradients: first `channels_a` channels to a, rest to b.
void split_channels(const Tensor& g, int channels_a, Tensor& ga, Tensor& gb);

/// 1 x H x W mean over channels.
Tensor channel_mean(const Tensor& x);

/// y[c] = x[c] * map (map is 1 x H x W, broadcast over channels)
Tensor multiply_broadcast(const Tensor& x, const Tensor& map);
/// Sum over channels of a * b, giving 1 x H x W.
Tensor channel_dot(const Tensor& a, const Tensor& b);

}  // namespace mapl
