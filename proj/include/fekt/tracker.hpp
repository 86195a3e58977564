#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <vector>

#include "fekt/heatmap.hpp"
#include "fekt/image.hpp"
#include "fekt/voxel.hpp"

namespace fekt {

struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    std::uint64_t t = 0;
    double score = 0.0;
};

struct Track {
    int id = 0;
    std::vector<Keypoint> obs;
    std::uint64_t birth = 0;
    std::uint64_t death = 0;
};

struct TrackerParams {
    double threshold = 0.95;
    double radius = 4.0;
    double window_ms = 12.0;
    bool nms = false;
    bool subpixel = false;
};

/// All pixels strictly above threshold, at integer pixel centers. With nms
/// only pixels that no 3x3 neighbour beats are kept, equal-valued plateaus
/// resolved in favour of the row-major-first pixel. With subpixel enabled
/// coordinates are refined to the 3x3 intensity centroid.
std::vector<Keypoint> extract_keypoints(const GrayImage& h, std::uint64_t t,
                                        double threshold = 0.95, bool nms = false,
                                        bool subpixel = false);

/// Greedy spatio-temporal nearest-neighbour association. Keypoints of one
/// timestamp are processed in descending score order (ties by row then
/// column); each claims the nearest still-unclaimed active track within the
/// spatial radius, equal distances resolved to the lower track id; the rest
/// give birth to new tracks. Tracks idle longer than the window are closed
/// before association. Lookup of candidate tracks goes through a spatial
/// hash over last observations (cell size = max(radius, 1)).
class TrackerState {
public:
    explicit TrackerState(const TrackerParams& params);

    /// Consumes the keypoints of a single timestamp; timestamps across calls
    /// must not regress.
    void associate(std::span<const Keypoint> kps);

    /// Closes every remaining track and returns all tracks sorted by birth
    /// time (ids break ties).
    std::vector<Track> finish();

    std::size_t active_count() const { return active_.size(); }

private:
    struct Active {
        Track track;
        bool claimed = false;
    };

    void close_stale(std::uint64_t now);
    void rebuild_hash();

    TrackerParams params_;
    std::uint64_t window_us_ = 0;
    std::uint64_t now_ = 0;
    bool started_ = false;
    int next_id_ = 0;
    std::vector<Active> active_;
    std::vector<Track> closed_;
    double cell_ = 4.0;
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> hash_;
};

/// Extracts and associates per heatmap timestamp across all intervals.
/// Intervals must be in time order and non-overlapping.
std::vector<Track> run_tracker(std::span<const HeatmapSeq> sequences,
                               const TrackerParams& params);

/// Raw Harris corner response: 3x3 Sobel gradients, Gaussian window
/// (sigma 1, 5x5), k = 0.04, replicate borders.
GrayImage harris_response(const GrayImage& frame);

/// Classical stand-in for a learned detector so the full pipeline runs
/// without trained weights: min-max normalized Harris response of the frame,
/// modulated by the normalized per-pixel event mass (sum of |voxel| over
/// bins, floored at 0.2 so frame corners survive event-free regions), then
/// rescaled to span [0, 1] and replicated n times over [t0, t1]. Flat
/// inputs yield all-zero maps.
HeatmapSeq baseline_heatmaps(const GrayImage& frame, const VoxelGrid& grid, int n,
                             std::uint64_t t0, std::uint64_t t1);

/// Text form, one "track_id,t_us,x,y,score" line per observation, grouped by
/// track, tracks ordered by birth time.
void save_tracks(std::span<const Track> tracks, const std::filesystem::path& path);
std::vector<Track> load_tracks(const std::filesystem::path& path);

} // namespace fekt
