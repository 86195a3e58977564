#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fekt/event.hpp"
#include "fekt/geometry.hpp"
#include "fekt/image.hpp"
#include "fekt/losses.hpp"
#include "fekt/net_ops.hpp"
#include "fekt/tracker.hpp"
#include "fekt/voxel.hpp"

/// Plain single-threaded counterparts of the optimized kernels, written in
/// the most direct formulation available rather than the fastest one. Tests
/// cross-check the optimized paths against these and the benchmark measures
/// the gap. The scatter-style kernels are arranged so their per-cell
/// accumulation order matches the optimized versions, which makes the
/// comparisons exact rather than approximate.
namespace fekt::ref {

/// Per-event scatter over all bins (the optimized builder goes per bin).
VoxelGrid build_voxel_grid(const EventSlice& s, int bins);

/// Row-by-row inverse warp.
WarpResult warp_bilinear(const GrayImage& img, const Homography& t);

FeatureTensor conv2d(const FeatureTensor& x, const ConvWeights& w);
FeatureTensor depthwise_conv(const FeatureTensor& x, const FeatureTensor& kernels);
FeatureTensor deform_conv(const FeatureTensor& x, const ConvWeights& w,
                          const OffsetField& off);

EventSlice simulate_events(std::span<const GrayImage> frames,
                           std::span<const std::uint64_t> timestamps,
                           double contrast_threshold);

GrayImage harris_response(const GrayImage& frame);

/// Loss values recomputed with plain left-to-right accumulation. These match
/// the production values to roundoff, not bitwise.
double consistency_loss(const GrayImage& h_n, const GrayImage& h_prev,
                        const Homography& t, const PatchGrid& grid, Metric metric);
double peaky_loss(const GrayImage& h, const PatchGrid& grid);
double cp_loss(const GrayImage& h, const ConsistencyMask& mask, const PatchGrid& grid);
double total_loss(const GrayImage& h_n, const GrayImage& h_prev, const Homography& t,
                  const PatchGrid& grid, Metric metric, double alpha);

/// Same greedy association rules as TrackerState but every candidate lookup
/// scans all active tracks instead of going through the spatial hash. The
/// winner of each claim is the unique (distance, id) minimum, so the two
/// implementations must produce identical tracks.
class BruteTracker {
public:
    explicit BruteTracker(const TrackerParams& params);

    void associate(std::span<const Keypoint> kps);
    std::vector<Track> finish();

private:
    struct Active {
        Track track;
        bool claimed = false;
    };

    TrackerParams params_;
    std::uint64_t window_us_ = 0;
    std::uint64_t now_ = 0;
    bool started_ = false;
    int next_id_ = 0;
    std::vector<Active> active_;
    std::vector<Track> closed_;
};

std::vector<Track> run_tracker_brute(std::span<const HeatmapSeq> sequences,
                                     const TrackerParams& params);

} // namespace fekt::ref
