#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fekt/image.hpp"

namespace fekt {

/// A stack of per-step heatmaps covering the interval [t0, t1]. Values are
/// in [0, 1]. Step n corresponds to heatmap_timestamps(t0, t1, N)[n].
struct HeatmapSeq {
    std::vector<GrayImage> maps;
    std::uint64_t t0 = 0;
    std::uint64_t t1 = 0;
};

/// Timestamp of each of n heatmaps over [t0, t1]: the last map sits at t1 and
/// the rest step back by (t1 - t0) / n, rounded to whole microseconds.
std::vector<std::uint64_t> heatmap_timestamps(std::uint64_t t0, std::uint64_t t1,
                                              int n);

/// Binary form: magic "FEHM", u32 width, u32 height, u32 count, u64 base
/// timestamp (t0), u64 interval length in microseconds, then
/// count * height * width float32 little-endian values in step-major
/// row-major order. Written so externally produced heatmaps can drop into
/// the tracking and evaluation stages unchanged.
void save_heatmaps(const HeatmapSeq& seq, const std::filesystem::path& path);
HeatmapSeq load_heatmaps(const std::filesystem::path& path);

} // namespace fekt
