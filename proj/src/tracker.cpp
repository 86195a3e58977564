#include "fekt/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "fekt/errors.hpp"

namespace fekt {

namespace {

std::uint64_t cell_key(std::int64_t cx, std::int64_t cy) {
    return (std::uint64_t(std::uint32_t(cx)) << 32) | std::uint64_t(std::uint32_t(cy));
}

std::uint64_t window_to_us(double window_ms) {
    if (window_ms < 0.0) throw ConfigError("temporal window must be non-negative");
    return std::uint64_t(std::llround(window_ms * 1000.0));
}

void sort_for_association(std::vector<Keypoint>& kps) {
    std::stable_sort(kps.begin(), kps.end(), [](const Keypoint& a, const Keypoint& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });
}

} // namespace

std::vector<Keypoint> extract_keypoints(const GrayImage& h, std::uint64_t t,
                                        double threshold, bool nms, bool subpixel) {
    std::vector<Keypoint> kps;
    for (int y = 0; y < h.height; ++y) {
        for (int x = 0; x < h.width; ++x) {
            const double v = h.at(x, y);
            if (!(v > threshold)) continue;
            if (nms) {
                bool keep = true;
                for (int dy = -1; dy <= 1 && keep; ++dy) {
                    for (int dx = -1; dx <= 1 && keep; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || nx >= h.width || ny < 0 || ny >= h.height) continue;
                        const double nv = h.at(nx, ny);
                        if (nv > v) keep = false;
                        // Equal-valued plateau: only the row-major-first
                        // pixel survives.
                        if (nv == v && (ny < y || (ny == y && nx < x))) keep = false;
                    }
                }
                if (!keep) continue;
            }
            Keypoint kp{double(x), double(y), t, v};
            if (subpixel) {
                double sw = 0.0, sx = 0.0, sy = 0.0;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || nx >= h.width || ny < 0 || ny >= h.height) continue;
                        const double wv = h.at(nx, ny);
                        sw += wv;
                        sx += wv * nx;
                        sy += wv * ny;
                    }
                }
                if (sw > 0.0) {
                    kp.x = sx / sw;
                    kp.y = sy / sw;
                }
            }
            kps.push_back(kp);
        }
    }
    return kps;
}

TrackerState::TrackerState(const TrackerParams& params)
    : params_(params), window_us_(window_to_us(params.window_ms)),
      cell_(std::max(params.radius, 1.0)) {
    if (params.radius < 0.0) throw ConfigError("association radius must be non-negative");
}

void TrackerState::close_stale(std::uint64_t now) {
    std::vector<Active> kept;
    kept.reserve(active_.size());
    for (Active& a : active_) {
        if (now - a.track.obs.back().t > window_us_) {
            closed_.push_back(std::move(a.track));
        } else {
            kept.push_back(std::move(a));
        }
    }
    active_ = std::move(kept);
}

void TrackerState::rebuild_hash() {
    hash_.clear();
    for (std::size_t i = 0; i < active_.size(); ++i) {
        const Keypoint& last = active_[i].track.obs.back();
        const auto cx = std::int64_t(std::floor(last.x / cell_));
        const auto cy = std::int64_t(std::floor(last.y / cell_));
        hash_[cell_key(cx, cy)].push_back(i);
    }
}

void TrackerState::associate(std::span<const Keypoint> kps) {
    if (kps.empty()) return;
    const std::uint64_t now = kps.front().t;
    for (const Keypoint& kp : kps) {
        if (kp.t != now) throw ConfigError("associate expects one shared timestamp");
    }
    if (started_ && now < now_) throw ConfigError("tracker timestamps regressed");
    started_ = true;
    now_ = now;

    close_stale(now);
    rebuild_hash();
    for (Active& a : active_) a.claimed = false;

    std::vector<Keypoint> ordered(kps.begin(), kps.end());
    sort_for_association(ordered);

    const double r2 = params_.radius * params_.radius;
    for (const Keypoint& kp : ordered) {
        const auto ccx = std::int64_t(std::floor(kp.x / cell_));
        const auto ccy = std::int64_t(std::floor(kp.y / cell_));
        std::size_t best = active_.size();
        double best_d2 = 0.0;
        for (std::int64_t cy = ccy - 1; cy <= ccy + 1; ++cy) {
            for (std::int64_t cx = ccx - 1; cx <= ccx + 1; ++cx) {
                const auto it = hash_.find(cell_key(cx, cy));
                if (it == hash_.end()) continue;
                for (const std::size_t idx : it->second) {
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

std::vector<Track> TrackerState::finish() {
    for (Active& a : active_) closed_.push_back(std::move(a.track));
    active_.clear();
    hash_.clear();
    std::stable_sort(closed_.begin(), closed_.end(), [](const Track& a, const Track& b) {
        if (a.birth != b.birth) return a.birth < b.birth;
        return a.id < b.id;
    });
    return std::move(closed_);
}

std::vector<Track> run_tracker(std::span<const HeatmapSeq> sequences,
                               const TrackerParams& params) {
    TrackerState state(params);
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
            const std::vector<Keypoint> kps = extract_keypoints(
                seq.maps[i], ts[i], params.threshold, params.nms, params.subpixel);
            state.associate(kps);
        }
    }
    return state.finish();
}

namespace {

// 3x3 convolution with replicate borders, used for the Sobel gradients.
GrayImage conv3_replicate(const GrayImage& img, const double k[9]) {
    GrayImage out(img.width, img.height);
#pragma omp parallel for schedule(static)
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

GrayImage gauss5_replicate(const GrayImage& img) {
    // sigma = 1, 5x5, normalized.
    double w[5];
    double sum = 0.0;
    for (int i = -2; i <= 2; ++i) {
        w[i + 2] = std::exp(-0.5 * i * i);
        sum += w[i + 2];
    }
    for (double& v : w) v /= sum;

    GrayImage tmp(img.width, img.height);
#pragma omp parallel for schedule(static)
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
#pragma omp parallel for schedule(static)
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

// Min-max to [0, 1]; a constant image collapses to all zeros.
GrayImage minmax_normalize(const GrayImage& img) {
    const auto [lo_it, hi_it] = std::minmax_element(img.v.begin(), img.v.end());
    const double lo = *lo_it, hi = *hi_it;
    GrayImage out(img.width, img.height, 0.0);
    if (hi > lo) {
        const double inv = 1.0 / (hi - lo);
        for (std::size_t i = 0; i < img.v.size(); ++i) out.v[i] = (img.v[i] - lo) * inv;
    }
    return out;
}

} // namespace

GrayImage harris_response(const GrayImage& frame) {
    if (frame.width < 1 || frame.height < 1) throw ConfigError("empty frame");
    static const double sobel_x[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
    static const double sobel_y[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
    const GrayImage ix = conv3_replicate(frame, sobel_x);
    const GrayImage iy = conv3_replicate(frame, sobel_y);

    GrayImage ixx(frame.width, frame.height), iyy(frame.width, frame.height),
        ixy(frame.width, frame.height);
    for (std::size_t i = 0; i < ix.v.size(); ++i) {
        ixx.v[i] = ix.v[i] * ix.v[i];
        iyy.v[i] = iy.v[i] * iy.v[i];
        ixy.v[i] = ix.v[i] * iy.v[i];
    }
    const GrayImage sxx = gauss5_replicate(ixx);
    const GrayImage syy = gauss5_replicate(iyy);
    const GrayImage sxy = gauss5_replicate(ixy);

    const double k = 0.04;
    GrayImage r(frame.width, frame.height);
    for (std::size_t i = 0; i < r.v.size(); ++i) {
        const double det = sxx.v[i] * syy.v[i] - sxy.v[i] * sxy.v[i];
        const double tr = sxx.v[i] + syy.v[i];
        r.v[i] = det - k * tr * tr;
    }
    return r;
}

HeatmapSeq baseline_heatmaps(const GrayImage& frame, const VoxelGrid& grid, int n,
                             std::uint64_t t0, std::uint64_t t1) {
    if (n < 1) throw ConfigError("heatmap count must be at least 1");
    if (grid.width != frame.width || grid.height != frame.height) {
        throw ConfigError("voxel grid does not match the frame size");
    }
    if (t1 <= t0) throw ConfigError("heatmap interval is degenerate");

    const GrayImage corners = minmax_normalize(harris_response(frame));

    GrayImage mass(frame.width, frame.height, 0.0);
    for (int b = 0; b < grid.bins; ++b) {
        for (int y = 0; y < grid.height; ++y) {
            for (int x = 0; x < grid.width; ++x) {
                mass.at(x, y) += std::abs(grid.at(b, y, x));
            }
        }
    }
    GrayImage gate = minmax_normalize(mass);
    for (double& v : gate.v) v = std::max(v, 0.2);

    GrayImage h(frame.width, frame.height);
    for (std::size_t i = 0; i < h.v.size(); ++i) h.v[i] = corners.v[i] * gate.v[i];
    // Rescale the gated response so the strongest corner scores exactly 1
    // and a fixed keypoint threshold stays meaningful across samples.
    h = minmax_normalize(h);

    HeatmapSeq seq;
    seq.t0 = t0;
    seq.t1 = t1;
    seq.maps.assign(std::size_t(n), h);
    return seq;
}

void save_tracks(std::span<const Track> tracks, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    char line[256];
    for (const Track& tr : tracks) {
        for (const Keypoint& kp : tr.obs) {
            std::snprintf(line, sizeof(line), "%d,%llu,%.17g,%.17g,%.17g\n", tr.id,
                          static_cast<unsigned long long>(kp.t), kp.x, kp.y, kp.score);
            out << line;
        }
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Track> load_tracks(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<Track> tracks;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        int id = 0;
        unsigned long long t = 0;
        double x = 0.0, y = 0.0, score = 0.0;
        if (std::sscanf(line.c_str(), "%d,%llu,%lf,%lf,%lf", &id, &t, &x, &y, &score) !=
            5) {
            throw IoError("malformed track line " + std::to_string(line_no) + " in " +
                          path.string());
        }
        if (tracks.empty() || tracks.back().id != id) {
            Track tr;
            tr.id = id;
            tracks.push_back(tr);
        }
        Track& tr = tracks.back();
        tr.obs.push_back(Keypoint{x, y, t, score});
        if (tr.obs.size() == 1) tr.birth = t;
        tr.death = t;
    }
    return tracks;
}

} // namespace fekt
