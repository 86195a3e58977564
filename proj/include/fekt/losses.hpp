#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fekt/geometry.hpp"
#include "fekt/heatmap.hpp"
#include "fekt/image.hpp"

namespace fekt {

enum class Metric { cosine, l1 };

/// Per-patch agreement between a heatmap and its warped predecessor.
/// Patches dropped by the validity rule keep included = 0 and value 0.
struct ConsistencyMap {
    std::vector<double> value;
    std::vector<std::uint8_t> included;
    std::size_t included_count = 0;
};

/// Min-max normalized consistency map; included mirrors the source map.
struct ConsistencyMask {
    std::vector<double> value;
    std::vector<std::uint8_t> included;
};

struct LossReport {
    double l_consist = 0.0;
    double l_peaky = 0.0;
    double l_cp = 0.0;
    double l_total = 0.0;
    double alpha = 0.0;
    ConsistencyMap map;
    ConsistencyMask mask;
};

/// cosine: dot/(|a||b|), scoring two near-zero patches 1 and exactly one
/// near-zero patch 0 (norm guard 1e-12). l1: 1 - mean |a - b|.
double similarity(std::span<const double> a, std::span<const double> b, Metric metric);

struct ConsistencyResult {
    double loss = 0.0;
    ConsistencyMap map;
};

/// 1 - mean over included patches of similarity(current patch, patch of
/// h_prev warped by t). A patch is included when its grid validity times the
/// in-bounds fraction of the warp mask is at least 0.5.
ConsistencyResult consistency_loss(const GrayImage& h_n, const GrayImage& h_prev,
                                   const Homography& t, const PatchGrid& grid,
                                   Metric metric);

/// 1 - mean over included patches of (patch max - patch mean).
double peaky_loss(const GrayImage& h, const PatchGrid& grid);

/// (C - min) / (max - min) over included patches; a constant map yields an
/// all-ones mask so downstream weighting degrades to the unmasked form.
ConsistencyMask normalize_mask(const ConsistencyMap& map);

/// 1 - mean (max - mean) * M + mean (mean) * (1 - M), means over the patches
/// that are both mask-included and grid-valid.
double cp_loss(const GrayImage& h, const ConsistencyMask& mask, const PatchGrid& grid);

ConsistencyMask ones_mask(std::size_t patches);

/// Consistency plus alpha-weighted masked peakiness; the mask is the
/// normalized consistency map of the same heatmap pair.
LossReport total_loss(const GrayImage& h_n, const GrayImage& h_prev,
                      const Homography& t, const PatchGrid& grid, Metric metric,
                      double alpha);

/// total_loss with the mask pinned to `frozen` instead of recomputed. This
/// is the scalar function grad_total differentiates (the mask is treated as
/// a constant), so finite differences of it validate the analytic gradient.
double masked_total_loss(const GrayImage& h_n, const GrayImage& h_prev,
                         const Homography& t, const PatchGrid& grid, Metric metric,
                         double alpha, const ConsistencyMask& frozen);

struct LossGrad {
    GrayImage wrt_current;
    GrayImage wrt_previous;
};

/// Analytic gradient of masked_total_loss at the unperturbed mask, with the
/// max term differentiated at its argmax (row-major first index on ties) and
/// the warp handled by its exact linear adjoint.
LossGrad grad_total(const GrayImage& h_n, const GrayImage& h_prev, const Homography& t,
                    const PatchGrid& grid, Metric metric, double alpha);

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t excluded = 0;
};

/// Central finite differences of masked_total_loss against grad_total.
/// Pixels whose value is within tie_margin of their patch max are excluded
/// (the max term is not differentiable across an argmax change), as are, for
/// the l1 metric, pixels within tie_margin of a sign change. Relative error
/// uses denominator max(|analytic|, |numeric|, 1e-6). fault, when nonzero,
/// is added to one analytic gradient entry as a harness negative control.
GradCheckResult gradient_check(const GrayImage& h_n, const GrayImage& h_prev,
                               const Homography& t, const PatchGrid& grid,
                               Metric metric, double alpha, double step = 1e-5,
                               double tie_margin = 2e-5, double fault = 0.0);

/// Per-pair losses over a heatmap sequence. steps[i] maps instant i onto
/// instant i+1; pair i scores maps[i+1] against warped maps[i]. The
/// aggregate is the mean over pairs.
struct SequenceLoss {
    std::vector<LossReport> pairs;
    double mean_total = 0.0;
};

SequenceLoss sequence_loss(const HeatmapSeq& seq, std::span<const Homography> steps,
                           const PatchGrid& grid, Metric metric, double alpha);

struct SchedulePoint {
    double lr = 0.0;
    double alpha = 0.0;
};

/// First training stage: lr starts at 3e-4 and is multiplied by 0.75 at
/// epochs 6, 12 and 18 while alpha starts at 0.25 and doubles at the same
/// epochs.
SchedulePoint schedule(int epoch);

/// Second training stage: fixed lr 3e-4 with alpha 2.
SchedulePoint schedule_stage_b();

/// One row of the self-check report. value is a deviation measure and the
/// row passes when value <= tolerance.
struct CheckResult {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

/// Runs the loss invariant suite on deterministic random data. When
/// inject_gradient_fault is set, one gradient entry is corrupted so the
/// gradient check must fail; this proves the harness can detect a bad
/// gradient.
std::vector<CheckResult> run_loss_self_checks(std::uint64_t seed, int size, int patch,
                                              bool inject_gradient_fault = false);

} // namespace fekt
