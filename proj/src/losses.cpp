#include "fekt/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fekt/errors.hpp"
#include "fekt/numeric.hpp"

namespace fekt {

namespace {

constexpr double kNormEps = 1e-12;

void check_pair_shapes(const GrayImage& h_n, const GrayImage& h_prev,
                       const PatchGrid& grid) {
    if (!h_n.same_shape(h_prev)) throw ConfigError("heatmap shapes differ");
    if (grid.image_width != h_n.width || grid.image_height != h_n.height) {
        throw ConfigError("patch grid does not fit the heatmaps");
    }
}

void gather_patch(const GrayImage& h, const PatchGrid& grid, std::size_t p,
                  std::vector<double>& buf) {
    buf.clear();
    const int ox = grid.origin_x[p];
    const int oy = grid.origin_y[p];
    for (int dy = 0; dy < grid.patch; ++dy) {
        const double* row = h.v.data() + std::size_t(oy + dy) * h.width + ox;
        buf.insert(buf.end(), row, row + grid.patch);
    }
}

struct PatchStats {
    double max = 0.0;
    double mean = 0.0;
    std::size_t argmax = 0; // flat image index of the first row-major maximum
};

PatchStats patch_stats(const GrayImage& h, const PatchGrid& grid, std::size_t p,
                       std::vector<double>& buf) {
    gather_patch(h, grid, p, buf);
    PatchStats st;
    st.max = buf[0];
    std::size_t arg_local = 0;
    for (std::size_t i = 1; i < buf.size(); ++i) {
        if (buf[i] > st.max) {
            st.max = buf[i];
            arg_local = i;
        }
    }
    st.mean = pairwise_sum(buf) / double(buf.size());
    const int dy = int(arg_local) / grid.patch;
    const int dx = int(arg_local) % grid.patch;
    st.argmax = std::size_t(grid.origin_y[p] + dy) * h.width +
                std::size_t(grid.origin_x[p] + dx);
    return st;
}

struct PairContext {
    WarpResult warped;
    ConsistencyMap map;
};

PairContext make_pair_context(const GrayImage& h_n, const GrayImage& h_prev,
                              const Homography& t, const PatchGrid& grid,
                              Metric metric) {
    check_pair_shapes(h_n, h_prev, grid);
    PairContext ctx;
    ctx.warped = warp_bilinear(h_prev, t);
    const PatchGrid vgrid = apply_mask_validity(grid, ctx.warped.mask);

    ctx.map.value.assign(grid.count(), 0.0);
    ctx.map.included.assign(grid.count(), 0);
    std::vector<double> a, b;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (vgrid.validity[p] < 0.5) continue;
        gather_patch(h_n, grid, p, a);
        gather_patch(ctx.warped.image, grid, p, b);
        ctx.map.value[p] = similarity(a, b, metric);
        ctx.map.included[p] = 1;
        ++ctx.map.included_count;
    }
    return ctx;
}

double mean_over_included(const std::vector<double>& per_patch,
                          const std::vector<std::uint8_t>& included) {
    std::vector<double> vals;
    vals.reserve(per_patch.size());
    for (std::size_t p = 0; p < per_patch.size(); ++p) {
        if (included[p]) vals.push_back(per_patch[p]);
    }
    if (vals.empty()) throw ConfigError("no patches included in loss mean");
    return pairwise_sum(vals) / double(vals.size());
}

} // namespace

double similarity(std::span<const double> a, std::span<const double> b, Metric metric) {
    if (a.size() != b.size() || a.empty()) {
        throw ConfigError("similarity needs equal non-empty patches");
    }
    if (metric == Metric::l1) {
        std::vector<double> diff(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) diff[i] = std::abs(a[i] - b[i]);
        return 1.0 - pairwise_sum(diff) / double(a.size());
    }
    std::vector<double> tmp(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) tmp[i] = a[i] * a[i];
    const double na = std::sqrt(pairwise_sum(tmp));
    for (std::size_t i = 0; i < a.size(); ++i) tmp[i] = b[i] * b[i];
    const double nb = std::sqrt(pairwise_sum(tmp));
    const bool za = na <= kNormEps;
    const bool zb = nb <= kNormEps;
    if (za && zb) return 1.0;
    if (za || zb) return 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) tmp[i] = a[i] * b[i];
    return pairwise_sum(tmp) / (na * nb);
}

ConsistencyResult consistency_loss(const GrayImage& h_n, const GrayImage& h_prev,
                                   const Homography& t, const PatchGrid& grid,
                                   Metric metric) {
    PairContext ctx = make_pair_context(h_n, h_prev, t, grid, metric);
    if (ctx.map.included_count == 0) {
        throw ConfigError("no valid patches under the warp mask");
    }
    ConsistencyResult r;
    r.loss = 1.0 - mean_over_included(ctx.map.value, ctx.map.included);
    r.map = std::move(ctx.map);
    return r;
}

double peaky_loss(const GrayImage& h, const PatchGrid& grid) {
    if (grid.image_width != h.width || grid.image_height != h.height) {
        throw ConfigError("patch grid does not fit the heatmap");
    }
    std::vector<double> terms;
    std::vector<double> buf;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (grid.validity[p] < 0.5) continue;
        const PatchStats st = patch_stats(h, grid, p, buf);
        terms.push_back(st.max - st.mean);
    }
    if (terms.empty()) throw ConfigError("no patches included in loss mean");
    return 1.0 - pairwise_sum(terms) / double(terms.size());
}

ConsistencyMask normalize_mask(const ConsistencyMap& map) {
    if (map.included_count == 0) throw ConfigError("empty consistency map");
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (std::size_t p = 0; p < map.value.size(); ++p) {
        if (!map.included[p]) continue;
        if (first) {
            lo = hi = map.value[p];
            first = false;
        } else {
            lo = std::min(lo, map.value[p]);
            hi = std::max(hi, map.value[p]);
        }
    }
    ConsistencyMask mask;
    mask.included = map.included;
    mask.value.assign(map.value.size(), 0.0);
    for (std::size_t p = 0; p < map.value.size(); ++p) {
        if (!map.included[p]) continue;
        mask.value[p] = (hi == lo) ? 1.0 : (map.value[p] - lo) / (hi - lo);
    }
    return mask;
}

double cp_loss(const GrayImage& h, const ConsistencyMask& mask, const PatchGrid& grid) {
    if (grid.image_width != h.width || grid.image_height != h.height) {
        throw ConfigError("patch grid does not fit the heatmap");
    }
    if (mask.value.size() != grid.count() || mask.included.size() != grid.count()) {
        throw ConfigError("mask length does not match patch count");
    }
    std::vector<double> peak_terms, floor_terms;
    std::vector<double> buf;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (!mask.included[p] || grid.validity[p] < 0.5) continue;
        const PatchStats st = patch_stats(h, grid, p, buf);
        const double m = mask.value[p];
        peak_terms.push_back((st.max - st.mean) * m);
        floor_terms.push_back(st.mean * (1.0 - m));
    }
    if (peak_terms.empty()) throw ConfigError("no patches included in loss mean");
    const double n = double(peak_terms.size());
    return (1.0 - pairwise_sum(peak_terms) / n) + pairwise_sum(floor_terms) / n;
}

ConsistencyMask ones_mask(std::size_t patches) {
    ConsistencyMask mask;
    mask.value.assign(patches, 1.0);
    mask.included.assign(patches, 1);
    return mask;
}

LossReport total_loss(const GrayImage& h_n, const GrayImage& h_prev,
                      const Homography& t, const PatchGrid& grid, Metric metric,
                      double alpha) {
    PairContext ctx = make_pair_context(h_n, h_prev, t, grid, metric);
    if (ctx.map.included_count == 0) {
        throw ConfigError("no valid patches under the warp mask");
    }
    LossReport r;
    r.alpha = alpha;
    r.l_consist = 1.0 - mean_over_included(ctx.map.value, ctx.map.included);
    r.mask = normalize_mask(ctx.map);
    r.l_cp = cp_loss(h_n, r.mask, grid);
    r.l_peaky = peaky_loss(h_n, grid);
    r.l_total = r.l_consist + alpha * r.l_cp;
    r.map = std::move(ctx.map);
    return r;
}

double masked_total_loss(const GrayImage& h_n, const GrayImage& h_prev,
                         const Homography& t, const PatchGrid& grid, Metric metric,
                         double alpha, const ConsistencyMask& frozen) {
    check_pair_shapes(h_n, h_prev, grid);
    const WarpResult warped = warp_bilinear(h_prev, t);

    std::vector<double> sims;
    std::vector<double> a, b;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (!frozen.included[p]) continue;
        gather_patch(h_n, grid, p, a);
        gather_patch(warped.image, grid, p, b);
        sims.push_back(similarity(a, b, metric));
    }
    if (sims.empty()) throw ConfigError("no patches included in loss mean");
    const double l_consist = 1.0 - pairwise_sum(sims) / double(sims.size());
    return l_consist + alpha * cp_loss(h_n, frozen, grid);
}

LossGrad grad_total(const GrayImage& h_n, const GrayImage& h_prev, const Homography& t,
                    const PatchGrid& grid, Metric metric, double alpha) {
    PairContext ctx = make_pair_context(h_n, h_prev, t, grid, metric);
    if (ctx.map.included_count == 0) {
        throw ConfigError("no valid patches under the warp mask");
    }
    const ConsistencyMask mask = normalize_mask(ctx.map);
    const double n = double(ctx.map.included_count);
    const std::size_t m = std::size_t(grid.patch) * grid.patch;

    GrayImage g_n(h_n.width, h_n.height, 0.0);
    GrayImage g_warp(h_n.width, h_n.height, 0.0);
    std::vector<double> a, b, tmp;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (!ctx.map.included[p]) continue;
        gather_patch(h_n, grid, p, a);
        gather_patch(ctx.warped.image, grid, p, b);

        const int ox = grid.origin_x[p];
        const int oy = grid.origin_y[p];
        auto flat = [&](std::size_t i) {
            const int dy = int(i) / grid.patch;
            const int dx = int(i) % grid.patch;
            return std::size_t(oy + dy) * h_n.width + std::size_t(ox + dx);
        };

        if (metric == Metric::cosine) {
            tmp.resize(a.size());
            for (std::size_t i = 0; i < a.size(); ++i) tmp[i] = a[i] * a[i];
            const double na = std::sqrt(pairwise_sum(tmp));
            for (std::size_t i = 0; i < a.size(); ++i) tmp[i] = b[i] * b[i];
            const double nb = std::sqrt(pairwise_sum(tmp));
            if (na > kNormEps && nb > kNormEps) {
                for (std::size_t i = 0; i < a.size(); ++i) tmp[i] = a[i] * b[i];
                const double c = pairwise_sum(tmp) / (na * nb);
                for (std::size_t i = 0; i < a.size(); ++i) {
                    const double dca = b[i] / (na * nb) - c * a[i] / (na * na);
                    const double dcb = a[i] / (na * nb) - c * b[i] / (nb * nb);
                    g_n.v[flat(i)] += -dca / n;
                    g_warp.v[flat(i)] += -dcb / n;
                }
            }
        } else {
            const double inv_m = 1.0 / double(m);
            for (std::size_t i = 0; i < a.size(); ++i) {
                const double d = a[i] - b[i];
                const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                g_n.v[flat(i)] += sign * inv_m / n;
                g_warp.v[flat(i)] += -sign * inv_m / n;
            }
        }

        std::size_t arg = 0;
        for (std::size_t i = 1; i < a.size(); ++i) {
            if (a[i] > a[arg]) arg = i;
        }
        const double mp = mask.value[p];
        g_n.v[flat(arg)] += -alpha * mp / n;
        const double mean_term = alpha * (mp / double(m) + (1.0 - mp) / double(m)) / n;
        for (std::size_t i = 0; i < a.size(); ++i) g_n.v[flat(i)] += mean_term;
    }

    LossGrad g;
    g.wrt_current = std::move(g_n);
    g.wrt_previous = warp_adjoint(g_warp, t, h_prev.width, h_prev.height);
    return g;
}

GradCheckResult gradient_check(const GrayImage& h_n, const GrayImage& h_prev,
                               const Homography& t, const PatchGrid& grid,
                               Metric metric, double alpha, double step,
                               double tie_margin, double fault) {
    PairContext ctx = make_pair_context(h_n, h_prev, t, grid, metric);
    if (ctx.map.included_count == 0) {
        throw ConfigError("no valid patches under the warp mask");
    }
    const ConsistencyMask frozen = normalize_mask(ctx.map);
    LossGrad analytic = grad_total(h_n, h_prev, t, grid, metric, alpha);
    if (fault != 0.0) {
        analytic.wrt_current.v[analytic.wrt_current.v.size() / 2] += fault;
    }

    const std::size_t pixels = h_n.v.size();
    // Pixels that can change a patch argmax within one finite-difference
    // step sit on the non-smooth ridge of the max term; the l1 metric adds
    // a ridge wherever the absolute difference can change sign.
    std::vector<std::uint8_t> excl_n(pixels, 0), excl_p(pixels, 0);
    GrayImage l1_bad(h_n.width, h_n.height, 0.0);
    std::vector<double> a, b;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (!ctx.map.included[p]) continue;
        gather_patch(h_n, grid, p, a);
        gather_patch(ctx.warped.image, grid, p, b);
        const double mx = *std::max_element(a.begin(), a.end());
        const int ox = grid.origin_x[p];
        const int oy = grid.origin_y[p];
        for (std::size_t i = 0; i < a.size(); ++i) {
            const std::size_t fl = std::size_t(oy + int(i) / grid.patch) * h_n.width +
                                   std::size_t(ox + int(i) % grid.patch);
            if (mx - a[i] < tie_margin) excl_n[fl] = 1;
            if (metric == Metric::l1 && std::abs(a[i] - b[i]) < tie_margin) {
                excl_n[fl] = 1;
                l1_bad.v[fl] = 1.0;
            }
        }
    }
    if (metric == Metric::l1) {
        const GrayImage touched = warp_adjoint(l1_bad, t, h_prev.width, h_prev.height);
        for (std::size_t i = 0; i < pixels; ++i) {
            if (touched.v[i] > 0.0) excl_p[i] = 1;
        }
    }

    GradCheckResult res;
    const double denom_floor = 1e-6;

#pragma omp parallel
    {
        GrayImage hx = h_n;
        GradCheckResult local;
#pragma omp for schedule(static) nowait
        for (long li = 0; li < long(pixels); ++li) {
            const std::size_t i = std::size_t(li);
            if (excl_n[i]) {
                ++local.excluded;
                continue;
            }
            const double orig = hx.v[i];
            hx.v[i] = orig + step;
            const double lp = masked_total_loss(hx, h_prev, t, grid, metric, alpha, frozen);
            hx.v[i] = orig - step;
            const double lm = masked_total_loss(hx, h_prev, t, grid, metric, alpha, frozen);
            hx.v[i] = orig;
            const double fd = (lp - lm) / (2.0 * step);
            const double an = analytic.wrt_current.v[i];
            const double rel = std::abs(an - fd) /
                               std::max({std::abs(an), std::abs(fd), denom_floor});
            local.max_rel_err = std::max(local.max_rel_err, rel);
            ++local.checked;
        }
#pragma omp critical
        {
            res.max_rel_err = std::max(res.max_rel_err, local.max_rel_err);
            res.checked += local.checked;
            res.excluded += local.excluded;
        }
    }

#pragma omp parallel
    {
        GrayImage hx = h_prev;
        GradCheckResult local;
#pragma omp for schedule(static) nowait
        for (long li = 0; li < long(pixels); ++li) {
            const std::size_t i = std::size_t(li);
            if (excl_p[i]) {
                ++local.excluded;
                continue;
            }
            const double orig = hx.v[i];
            hx.v[i] = orig + step;
            const double lp = masked_total_loss(h_n, hx, t, grid, metric, alpha, frozen);
            hx.v[i] = orig - step;
            const double lm = masked_total_loss(h_n, hx, t, grid, metric, alpha, frozen);
            hx.v[i] = orig;
            const double fd = (lp - lm) / (2.0 * step);
            const double an = analytic.wrt_previous.v[i];
            const double rel = std::abs(an - fd) /
                               std::max({std::abs(an), std::abs(fd), denom_floor});
            local.max_rel_err = std::max(local.max_rel_err, rel);
            ++local.checked;
        }
#pragma omp critical
        {
            res.max_rel_err = std::max(res.max_rel_err, local.max_rel_err);
            res.checked += local.checked;
            res.excluded += local.excluded;
        }
    }
    return res;
}

SequenceLoss sequence_loss(const HeatmapSeq& seq, std::span<const Homography> steps,
                           const PatchGrid& grid, Metric metric, double alpha) {
    if (seq.maps.size() < 2) throw ConfigError("sequence loss needs at least two maps");
    if (steps.size() + 1 != seq.maps.size()) {
        throw ConfigError("one step transform per consecutive pair is required");
    }
    SequenceLoss out;
    std::vector<double> totals;
    for (std::size_t i = 0; i + 1 < seq.maps.size(); ++i) {
        out.pairs.push_back(
            total_loss(seq.maps[i + 1], seq.maps[i], steps[i], grid, metric, alpha));
        totals.push_back(out.pairs.back().l_total);
    }
    out.mean_total = pairwise_sum(totals) / double(totals.size());
    return out;
}

SchedulePoint schedule(int epoch) {
    if (epoch < 0) throw ConfigError("epoch must be non-negative");
    SchedulePoint p{3e-4, 0.25};
    for (int milestone : {6, 12, 18}) {
        if (epoch >= milestone) {
            p.lr *= 0.75;
            p.alpha *= 2.0;
        }
    }
    return p;
}

SchedulePoint schedule_stage_b() { return SchedulePoint{3e-4, 2.0}; }

} // namespace fekt
