#pragma once

#include <cassert>
#include <filesystem>
#include <vector>

namespace fekt {

/// Dense row-major grid of doubles. Frame content lives in [0, 1]; the same
/// container is reused for response maps, masks and gradients, which are not
/// range limited.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<double> v;

    GrayImage() = default;
    GrayImage(int w, int h, double fill = 0.0)
        : width(w), height(h), v(std::size_t(w) * std::size_t(h), fill) {}

    double& at(int x, int y) {
        assert(x >= 0 && x < width && y >= 0 && y < height);
        return v[std::size_t(y) * width + x];
    }
    double at(int x, int y) const {
        assert(x >= 0 && x < width && y >= 0 && y < height);
        return v[std::size_t(y) * width + x];
    }

    bool same_shape(const GrayImage& o) const {
        return width == o.width && height == o.height;
    }
    std::size_t size() const { return v.size(); }
};

/// Reads a binary (P5) PGM with maxval <= 255 and scales samples to [0, 1].
GrayImage load_pgm(const std::filesystem::path& path);

/// Writes a binary (P5) PGM. Values are clamped to [0, 1] and quantized to
/// 8 bits with round-to-nearest.
void save_pgm(const GrayImage& img, const std::filesystem::path& path);

} // namespace fekt
