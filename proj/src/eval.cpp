#include "fekt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "fekt/errors.hpp"
#include "fekt/numeric.hpp"

namespace fekt {

GroundTruth GroundTruth::make(std::vector<TimedHomography> entries,
                              std::uint64_t lookup_tolerance_us) {
    for (std::size_t i = 1; i < entries.size(); ++i) {
        if (entries[i].t <= entries[i - 1].t) {
            throw ConfigError("ground-truth timestamps must strictly increase");
        }
    }
    GroundTruth gt;
    gt.entries = std::move(entries);
    gt.lookup_tolerance_us = lookup_tolerance_us;
    return gt;
}

namespace {

std::uint64_t abs_diff(std::uint64_t a, std::uint64_t b) { return a > b ? a - b : b - a; }

const TimedHomography& nearest_entry(const GroundTruth& gt, std::uint64_t t) {
    if (gt.entries.empty()) throw IoError("ground truth is empty");
    const auto it = std::lower_bound(
        gt.entries.begin(), gt.entries.end(), t,
        [](const TimedHomography& e, std::uint64_t v) { return e.t < v; });
    const TimedHomography* best = nullptr;
    if (it != gt.entries.begin()) best = &*(it - 1);
    if (it != gt.entries.end()) {
        if (!best || abs_diff(it->t, t) < abs_diff(best->t, t)) best = &*it;
    }
    if (abs_diff(best->t, t) > gt.lookup_tolerance_us) {
        throw IoError("no ground truth within tolerance of t=" + std::to_string(t));
    }
    return *best;
}

/// Same-track observation nearest to target, ties to the earlier one.
const Keypoint* nearest_obs(const Track& tr, std::uint64_t target,
                            std::uint64_t tolerance) {
    const auto it = std::lower_bound(
        tr.obs.begin(), tr.obs.end(), target,
        [](const Keypoint& k, std::uint64_t v) { return k.t < v; });
    const Keypoint* best = nullptr;
    if (it != tr.obs.begin()) best = &*(it - 1);
    if (it != tr.obs.end()) {
        if (!best || abs_diff(it->t, target) < abs_diff(best->t, target)) best = &*it;
    }
    if (!best || abs_diff(best->t, target) > tolerance) return nullptr;
    return best;
}

} // namespace

Homography gt_between(const GroundTruth& gt, std::uint64_t t_a, std::uint64_t t_b) {
    const TimedHomography& a = nearest_entry(gt, t_a);
    const TimedHomography& b = nearest_entry(gt, t_b);
    return compose(b.h, invert(a.h));
}

DeltaStats compute_rpe(std::span<const Track> tracks, const GroundTruth& gt,
                       int delta_ms, double fail_threshold_px) {
    if (delta_ms <= 0) throw ConfigError("delta_t must be positive");
    if (fail_threshold_px <= 0.0) throw ConfigError("fail threshold must be positive");
    const auto delta_us = std::uint64_t(delta_ms) * 1000;

    DeltaStats st;
    st.delta_ms = delta_ms;
    std::vector<double> successes;
    for (const Track& tr : tracks) {
        for (const Keypoint& kp : tr.obs) {
            const Keypoint* partner =
                nearest_obs(tr, kp.t + delta_us, gt.lookup_tolerance_us);
            if (!partner || partner->t <= kp.t) continue;
            const Homography rel = gt_between(gt, kp.t, partner->t);
            const Vec2 pred = apply_point(rel, Vec2{kp.x, kp.y});
            const double err = std::hypot(pred.x - partner->x, pred.y - partner->y);
            ++st.matches;
            if (err > fail_threshold_px) {
                ++st.failed;
            } else {
                successes.push_back(err);
            }
        }
    }
    st.has_data = st.matches > 0;
    if (!st.has_data) {
        st.rpe = std::numeric_limits<double>::quiet_NaN();
        st.rfm = std::numeric_limits<double>::quiet_NaN();
        return st;
    }
    st.rfm = double(st.failed) / double(st.matches);
    if (successes.empty()) {
        st.rpe = std::numeric_limits<double>::quiet_NaN();
    } else {
        std::sort(successes.begin(), successes.end());
        st.rpe = pairwise_sum(successes) / double(successes.size());
    }
    return st;
}

double track_time(std::span<const Track> tracks) {
    if (tracks.empty()) throw ConfigError("track time of an empty track set");
    std::vector<double> lifetimes;
    lifetimes.reserve(tracks.size());
    for (const Track& tr : tracks) {
        lifetimes.push_back(double(tr.death - tr.birth) * 1e-6);
    }
    return pairwise_sum(lifetimes) / double(lifetimes.size());
}

std::span<const int> default_deltas() {
    static const int deltas[] = {25, 50, 100, 150, 200};
    return deltas;
}

std::string emit_report(const MetricsReport& report, ReportFormat format) {
    if (format == ReportFormat::json_lines) {
        std::string out;
        for (const SequenceMetrics& seq : report.sequences) {
            for (const DeltaStats& st : seq.per_delta) {
                nlohmann::json row;
                row["sequence"] = seq.sequence;
                row["delta_t_ms"] = st.delta_ms;
                if (st.has_data && !std::isnan(st.rpe)) {
                    row["rpe_px"] = st.rpe;
                } else {
                    row["rpe_px"] = nullptr;
                }
                if (st.has_data) {
                    row["rfm"] = st.rfm;
                } else {
                    row["rfm"] = nullptr;
                }
                row["matches"] = st.matches;
                row["failed"] = st.failed;
                row["fail_threshold_px"] = seq.fail_threshold_px;
                out += row.dump();
                out += '\n';
            }
        }
        return out;
    }

    std::ostringstream out;
    char buf[128];
    out << "cells: RPE (RFM), RPE in px, fail threshold ";
    if (!report.sequences.empty()) {
        std::snprintf(buf, sizeof(buf), "%.1f", report.sequences.front().fail_threshold_px);
        out << buf << " px\n";
    } else {
        out << "n/a\n";
    }

    std::vector<std::string> header{"sequence"};
    if (!report.sequences.empty()) {
        for (const DeltaStats& st : report.sequences.front().per_delta) {
            std::snprintf(buf, sizeof(buf), "dt=%d ms", st.delta_ms);
            header.push_back(buf);
        }
    }
    header.push_back("track time");

    std::vector<std::vector<std::string>> rows;
    for (const SequenceMetrics& seq : report.sequences) {
        std::vector<std::string> row{seq.sequence};
        for (const DeltaStats& st : seq.per_delta) {
            if (!st.has_data) {
                row.push_back("-");
            } else if (std::isnan(st.rpe)) {
                std::snprintf(buf, sizeof(buf), "- (%.2f)", st.rfm);
                row.push_back(buf);
            } else {
                std::snprintf(buf, sizeof(buf), "%.2f (%.2f)", st.rpe, st.rfm);
                row.push_back(buf);
            }
        }
        std::snprintf(buf, sizeof(buf), "%.3f s", seq.mean_track_time_s);
        row.push_back(buf);
        rows.push_back(std::move(row));
    }

    std::vector<std::size_t> width(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) {
            width[c] = std::max(width[c], row[c].size());
        }
    }
    auto emit_row = [&](const std::vector<std::string>& row) {
        for (std::size_t c = 0; c < width.size(); ++c) {
            const std::string cell = c < row.size() ? row[c] : "";
            out << (c == 0 ? "" : "  ") << cell
                << std::string(width[c] - cell.size(), ' ');
        }
        out << '\n';
    };
    emit_row(header);
    for (const auto& row : rows) emit_row(row);
    return out.str();
}

MetricsReport parse_report_jsonl(const std::string& text) {
    MetricsReport report;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json row;
        try {
            row = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("malformed report line: ") + e.what());
        }
        const std::string seq_name = row.at("sequence").get<std::string>();
        if (report.sequences.empty() || report.sequences.back().sequence != seq_name) {
            SequenceMetrics seq;
            seq.sequence = seq_name;
            seq.fail_threshold_px = row.at("fail_threshold_px").get<double>();
            report.sequences.push_back(std::move(seq));
        }
        DeltaStats st;
        st.delta_ms = row.at("delta_t_ms").get<int>();
        st.matches = row.at("matches").get<std::size_t>();
        st.failed = row.at("failed").get<std::size_t>();
        st.has_data = st.matches > 0;
        if (row.at("rpe_px").is_null()) {
            st.rpe = std::numeric_limits<double>::quiet_NaN();
        } else {
            st.rpe = row.at("rpe_px").get<double>();
        }
        if (row.at("rfm").is_null()) {
            st.rfm = std::numeric_limits<double>::quiet_NaN();
        } else {
            st.rfm = row.at("rfm").get<double>();
        }
        report.sequences.back().per_delta.push_back(st);
        report.sequences.back().track_count = 0;
    }
    return report;
}

std::string plot_trajectories(std::span<const Track> tracks, int width, int height) {
    if (width < 1 || height < 1) throw ConfigError("plot canvas must be positive");
    static const char* palette[] = {"#e41a1c", "#377eb8", "#4daf4a", "#984ea3",
                                    "#ff7f00", "#a65628", "#f781bf", "#999999"};
    constexpr std::size_t palette_n = sizeof(palette) / sizeof(palette[0]);

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height
        << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    char buf[64];
    for (const Track& tr : tracks) {
        out << "<polyline fill=\"none\" stroke=\""
            << palette[std::size_t(tr.id) % palette_n]
            << "\" stroke-width=\"1\" points=\"";
        for (std::size_t i = 0; i < tr.obs.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s%.2f,%.2f", i ? " " : "", tr.obs[i].x,
                          tr.obs[i].y);
            out << buf;
        }
        out << "\"/>\n";
    }
    out << "</svg>\n";
    return out.str();
}

} // namespace fekt
