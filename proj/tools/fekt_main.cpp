#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fekt/errors.hpp"
#include "fekt/eval.hpp"
#include "fekt/event.hpp"
#include "fekt/geometry.hpp"
#include "fekt/heatmap.hpp"
#include "fekt/image.hpp"
#include "fekt/losses.hpp"
#include "fekt/synth.hpp"
#include "fekt/tracker.hpp"
#include "fekt/voxel.hpp"

namespace fs = std::filesystem;
using namespace fekt;

namespace {

constexpr int kVoxelBins = 10;

struct SynthArgs {
    std::string config;
    std::string base_dir;
    std::string out_dir;
    SynthConfig cfg;
};

struct DetectArgs {
    std::string config;
    std::string dataset;
    std::string out;
    std::string source = "baseline";
    std::string heatmap_dir;
    int n = 10;
    double threshold = 0.95;
};

struct TrackArgs {
    std::string config;
    std::string heatmaps;
    std::string out;
    TrackerParams params;
    bool threshold_from_cli = false;
};

struct EvalArgs {
    std::string config;
    std::string tracks;
    std::string gt;
    std::vector<int> deltas;
    double fail_threshold = 10.0;
    bool plot = false;
};

struct LosscheckArgs {
    std::string config;
    std::uint64_t seed = 1;
    int size = 64;
    int patch = 30;
    bool inject_fault = false;
};

void require_exists(const fs::path& p, const char* what) {
    if (!fs::exists(p)) {
        throw IoError(std::string(what) + " not found: " + p.string());
    }
}

void require_arg(const std::string& value, const char* flag) {
    if (value.empty()) {
        throw ConfigError(std::string(flag) + " is required");
    }
}

int cmd_synth(const SynthArgs& args) {
    require_arg(args.base_dir, "--base-dir");
    require_arg(args.out_dir, "--out-dir");
    require_exists(args.base_dir, "base directory");
    if (!fs::is_directory(args.base_dir)) {
        throw ConfigError("base directory is not a directory: " + args.base_dir);
    }

    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(args.base_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".pgm") {
            paths.push_back(entry.path());
        }
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) {
        throw ConfigError("no PGM images in " + args.base_dir);
    }

    std::vector<GrayImage> bases;
    bases.reserve(paths.size());
    for (const fs::path& p : paths) bases.push_back(load_pgm(p));

    SynthConfig cfg = args.cfg;
    if (cfg.jitter.center_x == 0.0 && cfg.jitter.center_y == 0.0) {
        cfg.jitter.center_x = (bases.front().width - 1) / 2.0;
        cfg.jitter.center_y = (bases.front().height - 1) / 2.0;
    }

    const DatasetBuild build = build_dataset(bases, cfg);
    write_dataset(build, args.out_dir);
    std::cout << "wrote " << build.samples.size() << " samples to " << args.out_dir
              << "\n";
    return 0;
}

struct ManifestRow {
    std::string id;
    fs::path frame;
    fs::path events;
    fs::path gt;
};

std::vector<ManifestRow> read_manifest(const fs::path& manifest) {
    require_exists(manifest, "dataset manifest");
    std::ifstream in(manifest);
    if (!in) throw IoError("cannot open " + manifest.string());
    const fs::path root = manifest.parent_path();

    std::vector<ManifestRow> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::array<std::string, 4> cells;
        std::size_t start = 0;
        for (int c = 0; c < 4; ++c) {
            const std::size_t comma = line.find(',', start);
            if (c < 3 && comma == std::string::npos) {
                throw IoError("malformed manifest line: " + line);
            }
            cells[c] = line.substr(start, comma == std::string::npos
                                              ? std::string::npos
                                              : comma - start);
            start = comma + 1;
        }
        rows.push_back(ManifestRow{cells[0], root / cells[1], root / cells[2],
                                   root / cells[3]});
    }
    if (rows.empty()) throw IoError("manifest has no samples: " + manifest.string());
    return rows;
}

void write_detect_sidecar(const fs::path& out_dir, const DetectArgs& args) {
    std::ofstream cfg(out_dir / "detect.cfg");
    if (!cfg) throw IoError("cannot write detect.cfg");
    cfg << "# detection settings, picked up by the track command as defaults\n";
    cfg << "threshold=" << args.threshold << "\n";
    cfg << "n=" << args.n << "\n";
    cfg << "source=" << args.source << "\n";
}

int cmd_detect(const DetectArgs& args) {
    require_arg(args.dataset, "--dataset");
    require_arg(args.out, "--out");
    const std::vector<ManifestRow> rows = read_manifest(args.dataset);
    if (args.n < 1) throw ConfigError("heatmap count must be at least 1");
    if (args.source != "baseline" && args.source != "heatmap-files") {
        throw ConfigError("unknown detection source: " + args.source);
    }
    if (args.source == "heatmap-files" && args.heatmap_dir.empty()) {
        throw ConfigError("heatmap-files source needs --heatmap-dir");
    }

    std::error_code ec;
    fs::create_directories(args.out, ec);
    if (ec) throw IoError("cannot create " + args.out);

    for (const ManifestRow& row : rows) {
        require_exists(row.frame, "frame");
        require_exists(row.events, "event file");
        require_exists(row.gt, "ground-truth file");

        const GrayImage frame = load_pgm(row.frame);
        const std::vector<TimedHomography> gt = load_homographies(row.gt);
        if (gt.size() < 2) throw IoError("degenerate ground truth in " + row.gt.string());
        const std::uint64_t t0 = gt.front().t;
        const std::uint64_t t1 = gt.back().t;

        HeatmapSeq seq;
        if (args.source == "baseline") {
            EventSlice events = load_events_binary(row.events);
            // The stored slice bounds come from the data; rebind them to the
            // sample interval so the temporal bins cover it exactly.
            events.t_min = t0;
            events.t_max = t1;
            const VoxelGrid grid = build_voxel_grid(events, kVoxelBins);
            seq = baseline_heatmaps(frame, grid, args.n, t0, t1);
        } else {
            const fs::path src = fs::path(args.heatmap_dir) / (row.id + ".fehm");
            require_exists(src, "heatmap file");
            seq = load_heatmaps(src);
            if (!seq.maps.front().same_shape(frame)) {
                throw IoError("heatmap shape does not match frame for " + row.id);
            }
        }
        save_heatmaps(seq, fs::path(args.out) / (row.id + ".fehm"));
    }
    write_detect_sidecar(args.out, args);
    std::cout << "wrote " << rows.size() << " heatmap sequences to " << args.out << "\n";
    return 0;
}

/// Flat key=value file, "#" comments.
std::map<std::string, std::string> read_kv(const fs::path& path) {
    std::map<std::string, std::string> kv;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

/// Applies a flat key=value file onto a subcommand. Keys name long options
/// without the leading dashes; keys already given on the command line keep
/// their command-line value.
void apply_config_file(CLI::App& cmd, const fs::path& path) {
    require_exists(path, "config file");
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: " + line);
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "config") throw ConfigError("config files cannot nest via the config key");
        CLI::Option* op = cmd.get_option_no_throw("--" + key);
        if (op == nullptr) throw ConfigError("unknown config key: " + key);
        if (!op->empty()) continue;
        try {
            if (op->get_expected_min() == 0) {
                if (value == "1" || value == "true" || value == "on" || value == "yes") {
                    op->add_result("true");
                } else if (value == "0" || value == "false" || value == "off" || value == "no") {
                    continue;
                } else {
                    throw ConfigError("config key " + key + " expects a boolean, got: " + value);
                }
            } else {
                op->add_result(value);
            }
            op->run_callback();
        } catch (const CLI::ParseError& e) {
            throw ConfigError("config key " + key + ": " + e.what());
        }
    }
}

std::string group_of(const std::string& stem) {
    const std::size_t pos = stem.rfind("_i");
    return pos == std::string::npos ? stem : stem.substr(0, pos);
}

int cmd_track(const TrackArgs& args) {
    require_arg(args.heatmaps, "--heatmaps");
    require_arg(args.out, "--out");
    require_exists(args.heatmaps, "heatmap input");

    std::vector<fs::path> files;
    if (fs::is_directory(args.heatmaps)) {
        for (const auto& entry : fs::directory_iterator(args.heatmaps)) {
            if (entry.is_regular_file() && entry.path().extension() == ".fehm") {
                files.push_back(entry.path());
            }
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            throw IoError("no heatmap files in " + args.heatmaps);
        }
    } else {
        files.push_back(args.heatmaps);
    }

    TrackerParams params = args.params;
    const fs::path sidecar = (fs::is_directory(args.heatmaps)
                                  ? fs::path(args.heatmaps)
                                  : fs::path(args.heatmaps).parent_path()) /
                             "detect.cfg";
    if (!args.threshold_from_cli && fs::exists(sidecar)) {
        const auto kv = read_kv(sidecar);
        const auto it = kv.find("threshold");
        if (it != kv.end()) params.threshold = std::stod(it->second);
    }

    std::map<std::string, std::vector<HeatmapSeq>> groups;
    for (const fs::path& f : files) {
        groups[group_of(f.stem().string())].push_back(load_heatmaps(f));
    }

    std::error_code ec;
    fs::create_directories(args.out, ec);
    if (ec) throw IoError("cannot create " + args.out);

    std::size_t total = 0;
    for (auto& [name, seqs] : groups) {
        std::stable_sort(seqs.begin(), seqs.end(),
                         [](const HeatmapSeq& a, const HeatmapSeq& b) {
                             return a.t0 < b.t0;
                         });
        const std::vector<Track> tracks = run_tracker(seqs, params);
        save_tracks(tracks, fs::path(args.out) / (name + ".tracks.txt"));
        total += tracks.size();
    }
    std::cout << "wrote " << total << " tracks across " << groups.size()
              << " sequences to " << args.out << "\n";
    return 0;
}

int cmd_eval(const EvalArgs& args) {
    require_arg(args.tracks, "--tracks");
    require_arg(args.gt, "--gt");
    require_exists(args.tracks, "track input");
    require_exists(args.gt, "ground-truth input");
    if (args.deltas.empty()) throw ConfigError("need at least one delta-t value");
    for (const int d : args.deltas) {
        if (d <= 0) throw ConfigError("delta-t values must be positive");
    }

    std::vector<fs::path> track_files;
    fs::path report_base;
    if (fs::is_directory(args.tracks)) {
        for (const auto& entry : fs::directory_iterator(args.tracks)) {
            const std::string name = entry.path().filename().string();
            if (entry.is_regular_file() && name.size() > 11 &&
                name.substr(name.size() - 11) == ".tracks.txt") {
                track_files.push_back(entry.path());
            }
        }
        std::sort(track_files.begin(), track_files.end());
        if (track_files.empty()) throw IoError("no track files in " + args.tracks);
        report_base = fs::path(args.tracks) / "report";
    } else {
        track_files.push_back(args.tracks);
        fs::path stem = fs::path(args.tracks).stem(); // drops .txt
        if (stem.extension() == ".tracks") stem = stem.stem();
        report_base = fs::path(args.tracks).parent_path() / (stem.string() + ".report");
    }

    MetricsReport report;
    for (const fs::path& tf : track_files) {
        fs::path stem = tf.stem();
        if (stem.extension() == ".tracks") stem = stem.stem();
        const std::string name = stem.string();

        fs::path gt_path = args.gt;
        if (fs::is_directory(args.gt)) {
            gt_path = fs::path(args.gt) / (name + "_gt.txt");
            require_exists(gt_path, "ground-truth file");
        }
        const GroundTruth gt = GroundTruth::make(load_homographies(gt_path));
        const std::vector<Track> tracks = load_tracks(tf);

        SequenceMetrics seq;
        seq.sequence = name;
        seq.fail_threshold_px = args.fail_threshold;
        seq.track_count = tracks.size();
        seq.mean_track_time_s = tracks.empty() ? 0.0 : track_time(tracks);
        for (const int d : args.deltas) {
            if (tracks.empty()) {
                DeltaStats st;
                st.delta_ms = d;
                seq.per_delta.push_back(st);
            } else {
                seq.per_delta.push_back(compute_rpe(tracks, gt, d, args.fail_threshold));
            }
        }
        report.sequences.push_back(std::move(seq));

        if (args.plot) {
            int w = 0, h = 0;
            for (const Track& t : tracks) {
                for (const Keypoint& kp : t.obs) {
                    w = std::max(w, int(std::lround(kp.x)) + 8);
                    h = std::max(h, int(std::lround(kp.y)) + 8);
                }
            }
            const std::string svg =
                plot_trajectories(tracks, std::max(w, 64), std::max(h, 64));
            const fs::path out = tf.parent_path() / (name + ".plot.svg");
            std::ofstream f(out);
            if (!f) throw IoError("cannot write " + out.string());
            f << svg;
        }
    }

    const std::string text = emit_report(report, ReportFormat::text_table);
    const std::string jsonl = emit_report(report, ReportFormat::json_lines);
    {
        std::ofstream f(report_base.string() + ".txt");
        if (!f) throw IoError("cannot write report next to " + args.tracks);
        f << text;
    }
    {
        std::ofstream f(report_base.string() + ".jsonl");
        if (!f) throw IoError("cannot write report next to " + args.tracks);
        f << jsonl;
    }
    std::cout << text;
    return 0;
}

int cmd_losscheck(const LosscheckArgs& args) {
    const std::vector<CheckResult> results =
        run_loss_self_checks(args.seed, args.size, args.patch, args.inject_fault);
    bool all_pass = true;
    for (const CheckResult& r : results) {
        std::printf("%s,%.9e,%.9e,%s\n", r.name.c_str(), r.value, r.tolerance,
                    r.pass ? "PASS" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"frame plus event keypoint pipeline"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    synth_args.cfg.seed = 1;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--config", synth_args.config,
                      "flat key=value defaults, flags override");
    synth->add_option("--base-dir", synth_args.base_dir, "directory of base PGM images");
    synth->add_option("--out-dir", synth_args.out_dir, "output dataset directory");
    synth->add_option("--m1", synth_args.cfg.m1, "frames per sequence");
    synth->add_option("--m2", synth_args.cfg.m2, "frames per sample interval");
    synth->add_option("--m3", synth_args.cfg.m3,
                      "exposure frames per sample, 0 draws per sample");
    synth->add_option("--contrast", synth_args.cfg.contrast_threshold,
                      "event contrast threshold");
    synth->add_option("--fps", synth_args.cfg.fps, "dense sequence frame rate");
    synth->add_option("--noise-rate", synth_args.cfg.noise_rate,
                      "noise events per pixel per second");
    synth->add_option("--gain-jitter", synth_args.cfg.gain_jitter,
                      "grayscale gain jitter bound");
    synth->add_option("--bias-jitter", synth_args.cfg.bias_jitter,
                      "grayscale bias jitter bound");
    synth->add_option("--seed", synth_args.cfg.seed, "dataset seed");
    synth->add_option("--jitter-translation", synth_args.cfg.jitter.max_translation,
                      "per-step translation bound, px");
    synth->add_option("--jitter-rotation", synth_args.cfg.jitter.max_rotation,
                      "per-step rotation bound, rad");
    synth->add_option("--jitter-scale", synth_args.cfg.jitter.max_scale,
                      "per-step scale bound");
    synth->add_option("--jitter-perspective", synth_args.cfg.jitter.max_perspective,
                      "per-step perspective bound");

    DetectArgs detect_args;
    CLI::App* detect = app.add_subcommand("detect", "produce heatmap sequences");
    detect->add_option("--config", detect_args.config,
                       "flat key=value defaults, flags override");
    detect->add_option("--dataset", detect_args.dataset, "dataset manifest path");
    detect->add_option("--out", detect_args.out, "output heatmap directory");
    detect->add_option("--source", detect_args.source,
                       "heatmap source: baseline or heatmap-files");
    detect->add_option("--heatmap-dir", detect_args.heatmap_dir,
                       "externally produced heatmaps, one <sample>.fehm each");
    detect->add_option("--n", detect_args.n, "heatmaps per frame interval");
    detect->add_option("--threshold", detect_args.threshold,
                       "keypoint threshold recorded for the track step");

    TrackArgs track_args;
    CLI::App* track = app.add_subcommand("track", "associate keypoints into tracks");
    track->add_option("--config", track_args.config,
                      "flat key=value defaults, flags override");
    track->add_option("--heatmaps", track_args.heatmaps,
                      "heatmap file or directory of .fehm files");
    track->add_option("--out", track_args.out, "output track directory");
    track->add_option("--radius", track_args.params.radius, "association radius, px");
    track->add_option("--window-ms", track_args.params.window_ms,
                      "temporal window, ms");
    CLI::Option* thr = track->add_option("--threshold", track_args.params.threshold,
                                         "keypoint threshold");
    track->add_flag("--nms", track_args.params.nms, "3x3 non-maximum suppression");
    track->add_flag("--subpixel", track_args.params.subpixel,
                    "centroid subpixel refinement");

    EvalArgs eval_args;
    eval_args.deltas.assign(default_deltas().begin(), default_deltas().end());
    CLI::App* eval = app.add_subcommand("eval", "score tracks against ground truth");
    eval->add_option("--config", eval_args.config,
                     "flat key=value defaults, flags override");
    eval->add_option("--tracks", eval_args.tracks, "track file or directory");
    eval->add_option("--gt", eval_args.gt,
                     "ground-truth homography file, or dataset directory holding "
                     "<sequence>_gt.txt");
    eval->add_option("--delta-t", eval_args.deltas, "time offsets to score, ms")
        ->delimiter(',');
    eval->add_option("--fail-threshold", eval_args.fail_threshold,
                     "failed-match distance, px");
    eval->add_flag("--plot", eval_args.plot, "write an SVG trajectory plot");

    LosscheckArgs loss_args;
    CLI::App* losscheck = app.add_subcommand("losscheck", "run the loss invariant suite");
    losscheck->add_option("--config", loss_args.config,
                          "flat key=value defaults, flags override");
    losscheck->add_option("--seed", loss_args.seed, "suite seed");
    losscheck->add_option("--size", loss_args.size, "heatmap side length");
    losscheck->add_option("--patches", loss_args.patch, "patch side length");
    losscheck->add_flag("--inject-fault", loss_args.inject_fault,
                        "corrupt one gradient entry; the suite must fail");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (app.got_subcommand(synth)) {
            if (!synth_args.config.empty()) apply_config_file(*synth, synth_args.config);
            return cmd_synth(synth_args);
        }
        if (app.got_subcommand(detect)) {
            if (!detect_args.config.empty()) apply_config_file(*detect, detect_args.config);
            return cmd_detect(detect_args);
        }
        if (app.got_subcommand(track)) {
            if (!track_args.config.empty()) apply_config_file(*track, track_args.config);
            track_args.threshold_from_cli = thr->count() > 0;
            return cmd_track(track_args);
        }
        if (app.got_subcommand(eval)) {
            if (!eval_args.config.empty()) apply_config_file(*eval, eval_args.config);
            return cmd_eval(eval_args);
        }
        if (app.got_subcommand(losscheck)) {
            if (!loss_args.config.empty()) apply_config_file(*losscheck, loss_args.config);
            return cmd_losscheck(loss_args);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
