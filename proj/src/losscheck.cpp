#include <algorithm>
#include <cmath>

#include "fekt/errors.hpp"
#include "fekt/losses.hpp"
#include "fekt/rng.hpp"

namespace fekt {

namespace {

GrayImage random_heatmap(int w, int h, Rng& rng) {
    GrayImage img(w, h);
    for (double& d : img.v) d = 0.05 + 0.9 * rng.uniform();
    return img;
}

double outside(double v, double lo, double hi) {
    return std::max(0.0, lo - v) + std::max(0.0, v - hi);
}

PatchGrid shuffled_grid(const PatchGrid& grid, Rng& rng) {
    PatchGrid g = grid;
    for (std::size_t i = g.count(); i > 1; --i) {
        const std::size_t j = std::size_t(rng.below(i));
        std::swap(g.origin_x[i - 1], g.origin_x[j]);
        std::swap(g.origin_y[i - 1], g.origin_y[j]);
        std::swap(g.validity[i - 1], g.validity[j]);
    }
    return g;
}

} // namespace

std::vector<CheckResult> run_loss_self_checks(std::uint64_t seed, int size, int patch,
                                              bool inject_gradient_fault) {
    if (size < patch || patch < 2) {
        throw ConfigError("self checks need size >= patch >= 2");
    }
    Rng rng(seed);
    const GrayImage h1 = random_heatmap(size, size, rng);
    const GrayImage h2 = random_heatmap(size, size, rng);
    const Homography t =
        Homography::translation(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
    const PatchGrid grid = partition_patches(size, size, patch);
    const double fault = inject_gradient_fault ? 1e-2 : 0.0;

    std::vector<CheckResult> rows;
    auto add = [&rows](const std::string& name, double value, double tolerance) {
        rows.push_back(CheckResult{name, value, tolerance, value <= tolerance});
    };

    {
        const double l = consistency_loss(h1, h2, t, grid, Metric::cosine).loss;
        add("consistency_in_unit_interval", outside(l, 0.0, 1.0), 0.0);
    }
    add("peaky_in_unit_interval", outside(peaky_loss(h1, grid), 0.0, 1.0), 0.0);
    {
        ConsistencyMask mask = ones_mask(grid.count());
        Rng mrng(mix_seed(seed, 1));
        for (double& v : mask.value) v = mrng.uniform();
        add("cp_in_zero_two_interval", outside(cp_loss(h1, mask, grid), 0.0, 2.0), 0.0);
    }
    add("cp_ones_mask_equals_peaky",
        std::abs(cp_loss(h1, ones_mask(grid.count()), grid) - peaky_loss(h1, grid)),
        0.0);
    add("self_pair_identity_consistency",
        std::abs(consistency_loss(h1, h1, Homography::identity(), grid, Metric::cosine)
                     .loss),
        1e-12);
    {
        const LossReport r0 = total_loss(h1, h2, t, grid, Metric::cosine, 0.0);
        add("alpha_zero_reduces_to_consistency", std::abs(r0.l_total - r0.l_consist),
            0.0);
        const LossReport r = total_loss(h1, h2, t, grid, Metric::cosine, 0.25);
        add("total_is_weighted_sum",
            std::abs(r.l_total - (r.l_consist + 0.25 * r.l_cp)), 1e-12);
    }
    add("constant_heatmap_peaky_is_one",
        std::abs(peaky_loss(GrayImage(size, size, 0.37), grid) - 1.0), 1e-12);
    {
        GrayImage onehot(size, size, 0.0);
        for (std::size_t p = 0; p < grid.count(); ++p) {
            onehot.at(grid.origin_x[p] + patch / 2, grid.origin_y[p] + patch / 2) = 1.0;
        }
        const double expected = 1.0 / (double(patch) * patch);
        add("onehot_peaky_is_inverse_area",
            std::abs(peaky_loss(onehot, grid) - expected), 1e-12);
    }
    {
        const ConsistencyResult c = consistency_loss(h1, h2, t, grid, Metric::cosine);
        const ConsistencyMask mask = normalize_mask(c.map);
        double lo = 2.0, hi = -1.0;
        for (std::size_t p = 0; p < mask.value.size(); ++p) {
            if (!mask.included[p]) continue;
            lo = std::min(lo, mask.value[p]);
            hi = std::max(hi, mask.value[p]);
        }
        add("mask_spans_unit_interval", std::abs(lo) + std::abs(hi - 1.0), 0.0);
    }
    {
        Rng srng(mix_seed(seed, 2));
        const PatchGrid shuffled = shuffled_grid(grid, srng);
        const double c1 = consistency_loss(h1, h2, t, grid, Metric::cosine).loss;
        const double c2 = consistency_loss(h1, h2, t, shuffled, Metric::cosine).loss;
        const double p1 = peaky_loss(h1, grid);
        const double p2 = peaky_loss(h1, shuffled);
        add("patch_order_invariance", std::abs(c1 - c2) + std::abs(p1 - p2), 1e-12);
    }
    {
        double dev = 0.0;
        const double expected_lr[4] = {3e-4, 2.25e-4, 1.6875e-4, 1.265625e-4};
        const double expected_alpha[4] = {0.25, 0.5, 1.0, 2.0};
        const int epochs[4] = {0, 6, 12, 18};
        for (int i = 0; i < 4; ++i) {
            const SchedulePoint sp = schedule(epochs[i]);
            dev += std::abs(sp.lr - expected_lr[i]) + std::abs(sp.alpha - expected_alpha[i]);
        }
        const SchedulePoint sb = schedule_stage_b();
        dev += std::abs(sb.lr - 3e-4) + std::abs(sb.alpha - 2.0);
        add("schedule_anchor_values", dev, 0.0);
    }
    {
        const GradCheckResult gc =
            gradient_check(h1, h2, t, grid, Metric::cosine, 0.25, 1e-5, 2e-5, fault);
        add("gradcheck_cosine", gc.max_rel_err, 1e-4);
        const GradCheckResult gl =
            gradient_check(h1, h2, t, grid, Metric::l1, 0.25, 1e-5, 2e-5, fault);
        add("gradcheck_l1", gl.max_rel_err, 1e-4);
    }
    return rows;
}

} // namespace fekt
