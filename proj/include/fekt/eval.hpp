#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fekt/geometry.hpp"
#include "fekt/tracker.hpp"

namespace fekt {

/// Origin-relative transforms at known timestamps plus the tolerance used
/// when looking an arbitrary timestamp up against the stored grid.
struct GroundTruth {
    std::vector<TimedHomography> entries;
    std::uint64_t lookup_tolerance_us = 1000;

    /// Validates strictly increasing timestamps.
    static GroundTruth make(std::vector<TimedHomography> entries,
                            std::uint64_t lookup_tolerance_us = 1000);
};

/// Relative transform between two observation times: the origin-relative
/// entries nearest to t_a and t_b (within tolerance, ties to the earlier
/// entry) composed as T_b after inverse(T_a).
Homography gt_between(const GroundTruth& gt, std::uint64_t t_a, std::uint64_t t_b);

/// Reprojection statistics at one time offset. rpe is NaN when no match
/// succeeded; has_data is false when no observation pair was delta_t apart
/// at all, which reports render as "-" rather than a failure ratio.
struct DeltaStats {
    int delta_ms = 0;
    double rpe = 0.0;
    double rfm = 0.0;
    std::size_t matches = 0;
    std::size_t failed = 0;
    bool has_data = false;
};

/// For every observation with a same-track partner delta_t later (within the
/// gt lookup tolerance): propagate the point with gt_between over the two
/// observation timestamps and measure the Euclidean gap to the partner.
/// Gaps above fail_threshold_px count as failures; rpe averages the rest.
/// The error list is sorted before averaging so the result is independent of
/// track order and ids.
DeltaStats compute_rpe(std::span<const Track> tracks, const GroundTruth& gt,
                       int delta_ms, double fail_threshold_px = 10.0);

/// Mean track lifetime (death - birth) in seconds.
double track_time(std::span<const Track> tracks);

/// The time offsets reports are evaluated at, in milliseconds.
std::span<const int> default_deltas();

struct SequenceMetrics {
    std::string sequence;
    std::vector<DeltaStats> per_delta;
    double mean_track_time_s = 0.0;
    std::size_t track_count = 0;
    double fail_threshold_px = 10.0;
};

struct MetricsReport {
    std::vector<SequenceMetrics> sequences;
};

enum class ReportFormat { text_table, json_lines };

/// text_table: one row per sequence with "RPE (RFM)" cells per time offset
/// ("-" where there is no data) plus the mean track time. json_lines: one
/// object per sequence and offset with keys sequence, delta_t_ms, rpe_px,
/// rfm, matches, failed, fail_threshold_px (rpe_px and rfm are null without
/// data).
std::string emit_report(const MetricsReport& report, ReportFormat format);

/// Rebuilds the per-offset rows from emit_report's json_lines output. Track
/// times live only in the text table and come back as zero.
MetricsReport parse_report_jsonl(const std::string& text);

/// Standalone SVG with one polyline per track, stroke color cycled by id.
std::string plot_trajectories(std::span<const Track> tracks, int width, int height);

} // namespace fekt
