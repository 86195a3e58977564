#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fekt/event.hpp"

namespace fekt {

/// Temporal voxel grid: bins x height x width, bin-major storage.
struct VoxelGrid {
    int bins = 0;
    int width = 0;
    int height = 0;
    std::vector<double> v;

    VoxelGrid() = default;
    VoxelGrid(int bins_, int width_, int height_)
        : bins(bins_), width(width_), height(height_),
          v(std::size_t(bins_) * width_ * height_, 0.0) {}

    double& at(int b, int y, int x) {
        assert(b >= 0 && b < bins && x >= 0 && x < width && y >= 0 && y < height);
        return v[(std::size_t(b) * height + y) * width + x];
    }
    double at(int b, int y, int x) const {
        assert(b >= 0 && b < bins && x >= 0 && x < width && y >= 0 && y < height);
        return v[(std::size_t(b) * height + y) * width + x];
    }
};

/// Maps t in [t_min, t_max] onto the continuous bin axis [0, bins-1].
double normalize_time(std::uint64_t t, std::uint64_t t_min, std::uint64_t t_max,
                      int bins);

/// Triangular weight an event at normalized time tstar contributes to bin b.
/// Shared by the parallel builder and the serial reference so both spread
/// polarity mass identically.
inline double bin_weight(double tstar, int b) {
    return std::max(0.0, 1.0 - std::abs(tstar - double(b)));
}

/// Accumulates polarity into the two bins adjacent to each event's
/// normalized time. Parallel over bins: each bin scans only the events whose
/// support touches it (a binary-searched range of the time-sorted slice), so
/// per-cell accumulation order equals event order regardless of thread count
/// and the result is bitwise identical to the serial reference.
VoxelGrid build_voxel_grid(const EventSlice& s, int bins);

} // namespace fekt
