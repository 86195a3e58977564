#include "fekt/reference.hpp"

#include <algorithm>
#include <cmath>

#include "fekt/errors.hpp"
#include "fekt/heatmap.hpp"

namespace fekt::ref {

VoxelGrid build_voxel_grid(const EventSlice& s, int bins) {
    if (bins < 1) throw ConfigError("bin count must be at least 1");
    VoxelGrid g(bins, s.width, s.height);
    if (s.events.empty()) return g;
    if (s.t_max <= s.t_min) {
        throw ConfigError("voxel grid needs a non-degenerate interval");
    }
    for (const Event& e : s.events) {
        const double tstar = normalize_time(e.t, s.t_min, s.t_max, bins);
        for (int b = 0; b < bins; ++b) {
            if (std::abs(tstar - double(b)) > 1.0) continue;
            g.at(b, e.y, e.x) += double(e.p) * bin_weight(tstar, b);
        }
    }
    return g;
}

namespace {

constexpr double kDegenerateEps = 1e-12;

struct SourcePos {
    double sx = 0.0;
    double sy = 0.0;
    bool inside = false;
};

SourcePos warp_source(const std::array<double, 9>& m, int x, int y, int w, int h) {
    const double div = m[6] * x + m[7] * y + m[8];
    if (std::abs(div) <= kDegenerateEps) return {};
    SourcePos p;
    p.sx = (m[0] * x + m[1] * y + m[2]) / div;
    p.sy = (m[3] * x + m[4] * y + m[5]) / div;
    p.inside = p.sx >= 0.0 && p.sx <= w - 1 && p.sy >= 0.0 && p.sy <= h - 1;
    return p;
}

} // namespace

WarpResult warp_bilinear(const GrayImage& img, const Homography& t) {
    if (img.width <= 0 || img.height <= 0) throw ConfigError("warp of empty image");
    const Homography inv = invert(t);
    const auto& m = inv.h;

    WarpResult r{GrayImage(img.width, img.height, 0.0),
                 GrayImage(img.width, img.height, 0.0)};
    const int w = img.width, h = img.height;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const SourcePos p = warp_source(m, x, y, w, h);
            if (!p.inside) continue;
            const int x0 = int(std::floor(p.sx));
            const int y0 = int(std::floor(p.sy));
            const int x1 = std::min(x0 + 1, w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double fx = p.sx - x0;
            const double fy = p.sy - y0;
            r.image.at(x, y) = img.at(x0, y0) * (1.0 - fx) * (1.0 - fy) +
                               img.at(x1, y0) * fx * (1.0 - fy) +
                               img.at(x0, y1) * (1.0 - fx) * fy +
                               img.at(x1, y1) * fx * fy;
            r.mask.at(x, y) = 1.0;
        }
    }
    return r;
}

FeatureTensor conv2d(const FeatureTensor& x, const ConvWeights& w) {
    if (w.in_channels != x.channels) throw ConfigError("conv channel mismatch");
    FeatureTensor out(w.out_channels, x.height, x.width);
    const int r = w.ksize / 2;
    for (int o = 0; o < w.out_channels; ++o) {
        for (int y = 0; y < x.height; ++y) {
            for (int xx = 0; xx < x.width; ++xx) {
                double s = 0.0;
                for (int i = 0; i < x.channels; ++i) {
                    for (int ky = 0; ky < w.ksize; ++ky) {
                        const int sy = y + ky - r;
                        if (sy < 0 || sy >= x.height) continue;
                        for (int kx = 0; kx < w.ksize; ++kx) {
                            const int sx = xx + kx - r;
                            if (sx < 0 || sx >= x.width) continue;
                            s += w.kval(o, i, ky, kx) * x.at(i, sy, sx);
                        }
                    }
                }
                out.at(o, y, xx) = s + w.bias[std::size_t(o)];
            }
        }
    }
    return out;
}

FeatureTensor depthwise_conv(const FeatureTensor& x, const FeatureTensor& kernels) {
    if (kernels.channels != x.channels) {
        throw ConfigError("depthwise kernel channel mismatch");
    }
    if (kernels.height != kernels.width || kernels.height % 2 == 0) {
        throw ConfigError("depthwise kernel must be square and odd");
    }
    const int k = kernels.height;
    const int r = k / 2;
    FeatureTensor out(x.channels, x.height, x.width);
    for (int c = 0; c < x.channels; ++c) {
        for (int y = 0; y < x.height; ++y) {
            for (int xx = 0; xx < x.width; ++xx) {
                double s = 0.0;
                for (int ky = 0; ky < k; ++ky) {
                    const int sy = y + ky - r;
                    if (sy < 0 || sy >= x.height) continue;
                    for (int kx = 0; kx < k; ++kx) {
                        const int sx = xx + kx - r;
                        if (sx < 0 || sx >= x.width) continue;
                        s += kernels.at(c, ky, kx) * x.at(c, sy, sx);
                    }
                }
                out.at(c, y, xx) = s;
            }
        }
    }
    return out;
}

FeatureTensor deform_conv(const FeatureTensor& x, const ConvWeights& w,
                          const OffsetField& off) {
    if (w.in_channels != x.channels) throw ConfigError("conv channel mismatch");
    if (off.taps != w.ksize * w.ksize) {
        throw ConfigError("offset tap count does not match kernel size");
    }
    if (off.height != x.height || off.width != x.width) {
        throw ConfigError("offset field spatial dimensions do not match input");
    }
    FeatureTensor out(w.out_channels, x.height, x.width);
    const int r = w.ksize / 2;
    for (int o = 0; o < w.out_channels; ++o) {
        for (int y = 0; y < x.height; ++y) {
            for (int xx = 0; xx < x.width; ++xx) {
                double s = 0.0;
                for (int i = 0; i < x.channels; ++i) {
                    for (int ky = 0; ky < w.ksize; ++ky) {
                        for (int kx = 0; kx < w.ksize; ++kx) {
                            const int tap = ky * w.ksize + kx;
                            const double px = xx + kx - r + off.dx(tap, y, xx);
                            const double py = y + ky - r + off.dy(tap, y, xx);
                            s += w.kval(o, i, ky, kx) * bilinear_sample(x, i, px, py);
                        }
                    }
                }
                out.at(o, y, xx) = s + w.bias[std::size_t(o)];
            }
        }
    }
    return out;
}

EventSlice simulate_events(std::span<const GrayImage> frames,
                           std::span<const std::uint64_t> timestamps,
                           double contrast_threshold) {
    if (frames.size() < 2) throw ConfigError("simulator needs at least two frames");
    if (frames.size() != timestamps.size()) {
        throw ConfigError("frame and timestamp counts differ");
    }
    if (!(contrast_threshold > 0.0)) {
        throw ConfigError("contrast threshold must be positive");
    }
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
        if (timestamps[i] <= timestamps[i - 1]) {
            throw ConfigError("timestamps must be strictly increasing");
        }
    }
    const int w = frames.front().width;
    const int h = frames.front().height;
    for (const GrayImage& f : frames) {
        if (f.width != w || f.height != h) {
            throw ConfigError("simulator frames have mixed shapes");
        }
    }

    constexpr double kLogEps = 1e-3;
    const double c = contrast_threshold;
    std::vector<Event> all;
    for (std::size_t p = 0; p < std::size_t(w) * h; ++p) {
        const int x = int(p % std::size_t(w));
        const int y = int(p / std::size_t(w));
        double l_ref = std::log(frames[0].v[p] + kLogEps);
        double prev_l = l_ref;
        for (std::size_t k = 1; k < frames.size(); ++k) {
            const double cur_l = std::log(frames[k].v[p] + kLogEps);
            const double t_a = double(timestamps[k - 1]);
            const double t_b = double(timestamps[k]);
            while (std::abs(cur_l - l_ref) >= c) {
                const int sign = cur_l > l_ref ? 1 : -1;
                const double threshold = l_ref + sign * c;
                const double f = (threshold - prev_l) / (cur_l - prev_l);
                const double t_cross = t_a + f * (t_b - t_a);
                auto t_us = std::uint64_t(std::llround(t_cross));
                t_us = std::clamp(t_us, timestamps[k - 1], timestamps[k]);
                all.push_back(Event{t_us, x, y, sign});
                l_ref = threshold;
            }
            prev_l = cur_l;
        }
    }
    return EventSlice::make(std::move(all), timestamps.front(), timestamps.back(), w, h);
}

namespace {

GrayImage conv3_replicate_serial(const GrayImage& img, const double k[9]) {
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int dy = -1; dy <= 1; ++dy) {
                const int sy = std::clamp(y + dy, 0, img.height - 1);
                for (int dx = -1; dx <= 1; ++dx) {
                    const int sx = std::clamp(x + dx, 0, img.width - 1);
                    s += k[(dy + 1) * 3 + (dx + 1)] * img.at(sx, sy);
                }
            }
            out.at(x, y) = s;
        }
    }
    return out;
}

GrayImage gauss5_replicate_serial(const GrayImage& img) {
    double w[5];
    double sum = 0.0;
    for (int i = -2; i <= 2; ++i) {
        w[i + 2] = std::exp(-0.5 * i * i);
        sum += w[i + 2];
    }
    for (double& v : w) v /= sum;

    GrayImage tmp(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int d = -2; d <= 2; ++d) {
                s += w[d + 2] * img.at(std::clamp(x + d, 0, img.width - 1), y);
            }
            tmp.at(x, y) = s;
        }
    }
    GrayImage out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int d = -2; d <= 2; ++d) {
                s += w[d + 2] * tmp.at(x, std::clamp(y + d, 0, img.height - 1));
            }
            out.at(x, y) = s;
        }
    }
    return out;
}

} // namespace

GrayImage harris_response(const GrayImage& frame) {
    static const double sobel_x[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    static const double sobel_y[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
    const GrayImage gx = conv3_replicate_serial(frame, sobel_x);
    const GrayImage gy = conv3_replicate_serial(frame, sobel_y);

    GrayImage xx(frame.width, frame.height);
    GrayImage yy(frame.width, frame.height);
    GrayImage xy(frame.width, frame.height);
    for (std::size_t i = 0; i < xx.v.size(); ++i) {
        xx.v[i] = gx.v[i] * gx.v[i];
        yy.v[i] = gy.v[i] * gy.v[i];
        xy.v[i] = gx.v[i] * gy.v[i];
    }
    const GrayImage sxx = gauss5_replicate_serial(xx);
    const GrayImage syy = gauss5_replicate_serial(yy);
    const GrayImage sxy = gauss5_replicate_serial(xy);

    GrayImage out(frame.width, frame.height);
    for (std::size_t i = 0; i < out.v.size(); ++i) {
        const double det = sxx.v[i] * syy.v[i] - sxy.v[i] * sxy.v[i];
        const double tr = sxx.v[i] + syy.v[i];
        out.v[i] = det - 0.04 * tr * tr;
    }
    return out;
}

namespace {

void gather(const GrayImage& h, const PatchGrid& grid, std::size_t p,
            std::vector<double>& buf) {
    buf.clear();
    for (int dy = 0; dy < grid.patch; ++dy) {
        for (int dx = 0; dx < grid.patch; ++dx) {
            buf.push_back(h.at(grid.origin_x[p] + dx, grid.origin_y[p] + dy));
        }
    }
}

double naive_similarity(const std::vector<double>& a, const std::vector<double>& b,
                        Metric metric) {
    if (metric == Metric::l1) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
        return 1.0 - s / double(a.size());
    }
    double sa = 0.0, sb = 0.0, dot = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sa += a[i] * a[i];
        sb += b[i] * b[i];
        dot += a[i] * b[i];
    }
    const double na = std::sqrt(sa);
    const double nb = std::sqrt(sb);
    const bool za = na <= 1e-12;
    const bool zb = nb <= 1e-12;
    if (za && zb) return 1.0;
    if (za || zb) return 0.0;
    return dot / (na * nb);
}

double patch_validity(const PatchGrid& grid, const GrayImage& mask, std::size_t p) {
    int valid = 0;
    for (int dy = 0; dy < grid.patch; ++dy) {
        for (int dx = 0; dx < grid.patch; ++dx) {
            if (mask.at(grid.origin_x[p] + dx, grid.origin_y[p] + dy) == 1.0) ++valid;
        }
    }
    return grid.validity[p] * double(valid) / (double(grid.patch) * grid.patch);
}

} // namespace

double consistency_loss(const GrayImage& h_n, const GrayImage& h_prev,
                        const Homography& t, const PatchGrid& grid, Metric metric) {
    const WarpResult warped = ref::warp_bilinear(h_prev, t);
    double s = 0.0;
    std::size_t n = 0;
    std::vector<double> a, b;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (patch_validity(grid, warped.mask, p) < 0.5) continue;
        gather(h_n, grid, p, a);
        gather(warped.image, grid, p, b);
        s += naive_similarity(a, b, metric);
        ++n;
    }
    if (n == 0) throw ConfigError("no valid patches under the warp mask");
    return 1.0 - s / double(n);
}

double peaky_loss(const GrayImage& h, const PatchGrid& grid) {
    double s = 0.0;
    std::size_t n = 0;
    std::vector<double> buf;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (grid.validity[p] < 0.5) continue;
        gather(h, grid, p, buf);
        double mx = buf[0], mean = 0.0;
        for (const double v : buf) {
            mx = std::max(mx, v);
            mean += v;
        }
        mean /= double(buf.size());
        s += mx - mean;
        ++n;
    }
    if (n == 0) throw ConfigError("no patches included in loss mean");
    return 1.0 - s / double(n);
}

double cp_loss(const GrayImage& h, const ConsistencyMask& mask, const PatchGrid& grid) {
    double peak = 0.0, floor_sum = 0.0;
    std::size_t n = 0;
    std::vector<double> buf;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (!mask.included[p] || grid.validity[p] < 0.5) continue;
        gather(h, grid, p, buf);
        double mx = buf[0], mean = 0.0;
        for (const double v : buf) {
            mx = std::max(mx, v);
            mean += v;
        }
        mean /= double(buf.size());
        peak += (mx - mean) * mask.value[p];
        floor_sum += mean * (1.0 - mask.value[p]);
        ++n;
    }
    if (n == 0) throw ConfigError("no patches included in loss mean");
    return (1.0 - peak / double(n)) + floor_sum / double(n);
}

double total_loss(const GrayImage& h_n, const GrayImage& h_prev, const Homography& t,
                  const PatchGrid& grid, Metric metric, double alpha) {
    const WarpResult warped = ref::warp_bilinear(h_prev, t);

    std::vector<double> sim(grid.count(), 0.0);
    std::vector<std::uint8_t> included(grid.count(), 0);
    double s = 0.0;
    std::size_t n = 0;
    std::vector<double> a, b;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (patch_validity(grid, warped.mask, p) < 0.5) continue;
        gather(h_n, grid, p, a);
        gather(warped.image, grid, p, b);
        sim[p] = naive_similarity(a, b, metric);
        included[p] = 1;
        s += sim[p];
        ++n;
    }
    if (n == 0) throw ConfigError("no valid patches under the warp mask");

    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (!included[p]) continue;
        if (first) {
            lo = hi = sim[p];
            first = false;
        } else {
            lo = std::min(lo, sim[p]);
            hi = std::max(hi, sim[p]);
        }
    }
    ConsistencyMask mask;
    mask.included = included;
    mask.value.assign(grid.count(), 0.0);
    for (std::size_t p = 0; p < grid.count(); ++p) {
        if (included[p]) mask.value[p] = (hi == lo) ? 1.0 : (sim[p] - lo) / (hi - lo);
    }
    return (1.0 - s / double(n)) + alpha * ref::cp_loss(h_n, mask, grid);
}

BruteTracker::BruteTracker(const TrackerParams& params) : params_(params) {
    if (params.radius < 0.0) throw ConfigError("association radius must be non-negative");
    if (params.window_ms < 0.0) throw ConfigError("temporal window must be non-negative");
    window_us_ = std::uint64_t(std::llround(params.window_ms * 1000.0));
}

void BruteTracker::associate(std::span<const Keypoint> kps) {
    if (kps.empty()) return;
    const std::uint64_t now = kps.front().t;
    for (const Keypoint& kp : kps) {
        if (kp.t != now) throw ConfigError("associate expects one shared timestamp");
    }
    if (started_ && now < now_) throw ConfigError("tracker timestamps regressed");
    started_ = true;
    now_ = now;

    std::vector<Active> kept;
    kept.reserve(active_.size());
    for (Active& a : active_) {
        if (now - a.track.obs.back().t > window_us_) {
            closed_.push_back(std::move(a.track));
        } else {
            a.claimed = false;
            kept.push_back(std::move(a));
        }
    }
    active_ = std::move(kept);

    std::vector<Keypoint> ordered(kps.begin(), kps.end());
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const Keypoint& a, const Keypoint& b) {
                         if (a.score != b.score) return a.score > b.score;
                         if (a.y != b.y) return a.y < b.y;
                         return a.x < b.x;
                     });

    const double r2 = params_.radius * params_.radius;
    for (const Keypoint& kp : ordered) {
        std::size_t best = active_.size();
        double best_d2 = 0.0;
        for (std::size_t idx = 0; idx < active_.size(); ++idx) {
            Active& a = active_[idx];
            if (a.claimed) continue;
            const Keypoint& last = a.track.obs.back();
            if (last.t >= now) continue;
            if (now - last.t > window_us_) continue;
            const double dx = kp.x - last.x;
            const double dy = kp.y - last.y;
            const double d2 = dx * dx + dy * dy;
            if (d2 > r2) continue;
            if (best == active_.size() || d2 < best_d2 ||
                (d2 == best_d2 && a.track.id < active_[best].track.id)) {
                best = idx;
                best_d2 = d2;
            }
        }
        if (best < active_.size()) {
            active_[best].track.obs.push_back(kp);
            active_[best].track.death = kp.t;
            active_[best].claimed = true;
        } else {
            Active born;
            born.track.id = next_id_++;
            born.track.obs.push_back(kp);
            born.track.birth = kp.t;
            born.track.death = kp.t;
            born.claimed = true;
            active_.push_back(std::move(born));
        }
    }
}

std::vector<Track> BruteTracker::finish() {
    for (Active& a : active_) closed_.push_back(std::move(a.track));
    active_.clear();
    std::stable_sort(closed_.begin(), closed_.end(), [](const Track& a, const Track& b) {
        if (a.birth != b.birth) return a.birth < b.birth;
        return a.id < b.id;
    });
    return std::move(closed_);
}

std::vector<Track> run_tracker_brute(std::span<const HeatmapSeq> sequences,
                                     const TrackerParams& params) {
    BruteTracker state(params);
    std::uint64_t prev_end = 0;
    bool have_prev = false;
    for (const HeatmapSeq& seq : sequences) {
        if (seq.t1 <= seq.t0) throw ConfigError("heatmap interval is degenerate");
        if (have_prev && seq.t0 < prev_end) {
            throw ConfigError("heatmap intervals overlap");
        }
        prev_end = seq.t1;
        have_prev = true;

        const std::vector<std::uint64_t> ts =
            heatmap_timestamps(seq.t0, seq.t1, int(seq.maps.size()));
        for (std::size_t i = 0; i < seq.maps.size(); ++i) {
            state.associate(extract_keypoints(seq.maps[i], ts[i], params.threshold,
                                              params.nms, params.subpixel));
        }
    }
    return state.finish();
}

} // namespace fekt::ref
