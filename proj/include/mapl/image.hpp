#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace mapl {

/// H x W x 3 RGB image, interleaved, channel values in [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

    bool same_shape(const Image& o) const noexcept { return height == o.height && width == o.width; }
    bool operator==(const Image&) const = default;
};

/// Binary H x W mask; every value is 0 or 1.
struct GrayMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    GrayMask() = default;
    GrayMask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    std::size_t count() const noexcept {
        std::size_t n = 0;
        for (auto v : pixels) n += v;
        return n;
    }
    bool same_shape(const GrayMask& o) const noexcept { return height == o.height && width == o.width; }
    bool operator==(const GrayMask&) const = default;
};

/// H x W map of real values (segmentation output, heatmaps).
struct ScoreMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    ScoreMap() = default;
    ScoreMap(int h, int w, double fill = 0.0) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

    double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

}  // namespace mapl
