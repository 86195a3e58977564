#include "fekt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fekt/errors.hpp"
#include "fekt/rng.hpp"

namespace fekt {

namespace {

constexpr double kLogEps = 1e-3;

void validate_config(const SynthConfig& cfg) {
    if (cfg.m1 < 1 || cfg.m2 < 1) throw ConfigError("m1 and m2 must be positive");
    if (cfg.m2 > cfg.m1) throw ConfigError("m2 must not exceed m1");
    if (cfg.m1 % cfg.m2 != 0) throw ConfigError("m1 must be divisible by m2");
    if (!(cfg.contrast_threshold > 0.0)) {
        throw ConfigError("contrast threshold must be positive");
    }
    if (!(cfg.fps > 0.0) || cfg.fps > 1e6) {
        throw ConfigError("fps must be in (0, 1e6] so frame timestamps are distinct");
    }
    if (cfg.noise_rate < 0.0) throw ConfigError("noise rate must be non-negative");
    if (cfg.gain_jitter < 0.0 || cfg.bias_jitter < 0.0) {
        throw ConfigError("augmentation jitter must be non-negative");
    }
    // Integer bounds of the exposure range, exact for every m2.
    const int lo = (cfg.m2 + 4) / 5;
    const int hi = (3 * cfg.m2) / 5;
    if (cfg.m3 != 0 && (cfg.m3 < lo || cfg.m3 > hi)) {
        throw ConfigError("m3 must be 0 (sampled) or within [m2/5, 3*m2/5]");
    }
}

int exposure_lower(int m2) { return std::max(1, (m2 + 4) / 5); }
int exposure_upper(int m2) { return std::max(1, (3 * m2) / 5); }

std::uint64_t frame_timestamp(int n, double fps) {
    return std::uint64_t(std::llround(double(n) * 1e6 / fps));
}

} // namespace

DenseSequence generate_sequence(const GrayImage& base, const SynthConfig& cfg,
                                std::uint64_t seed) {
    validate_config(cfg);
    if (base.width <= 0 || base.height <= 0) throw ConfigError("empty base image");

    HomographyJitter jitter = cfg.jitter;
    jitter.center_x = (base.width - 1) * 0.5;
    jitter.center_y = (base.height - 1) * 0.5;

    DenseSequence seq;
    seq.frames.reserve(std::size_t(cfg.m1) + 1);
    seq.timestamps.reserve(std::size_t(cfg.m1) + 1);
    seq.gt.reserve(std::size_t(cfg.m1) + 1);

    seq.frames.push_back(base);
    seq.timestamps.push_back(frame_timestamp(0, cfg.fps));
    seq.gt.push_back(TimedHomography{seq.timestamps[0], Homography::identity()});

    Rng rng(seed);
    Homography accum = Homography::identity();
    for (int n = 1; n <= cfg.m1; ++n) {
        const Homography step = sample_homography(jitter, rng);
        accum = compose(step, accum);
        seq.frames.push_back(warp_bilinear(base, accum).image);
        seq.timestamps.push_back(frame_timestamp(n, cfg.fps));
        seq.gt.push_back(TimedHomography{seq.timestamps.back(), accum});
    }
    return seq;
}

GrayImage synth_blur(std::span<const GrayImage> frames) {
    if (frames.empty()) throw ConfigError("blur over empty frame span");
    const GrayImage& first = frames.front();
    GrayImage out(first.width, first.height, 0.0);
    for (const GrayImage& f : frames) {
        if (!f.same_shape(first)) throw ConfigError("blur frames have mixed shapes");
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += f.v[i];
    }
    const double inv = 1.0 / double(frames.size());
    for (double& d : out.v) d *= inv;
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

    const double c = contrast_threshold;
    const std::size_t pixels = std::size_t(w) * h;
    std::vector<std::vector<Event>> per_pixel(pixels);

#pragma omp parallel for schedule(static)
    for (long pi = 0; pi < long(pixels); ++pi) {
        const std::size_t p = std::size_t(pi);
        const int x = int(p % std::size_t(w));
        const int y = int(p / std::size_t(w));
        std::vector<Event>& out = per_pixel[p];

        double l_ref = std::log(frames[0].v[p] + kLogEps);
        double prev_l = l_ref;
        for (std::size_t k = 1; k < frames.size(); ++k) {
            const double cur_l = std::log(frames[k].v[p] + kLogEps);
            const double t_a = double(timestamps[k - 1]);
            const double t_b = double(timestamps[k]);
            // Each pass moves l_ref one threshold toward cur_l; the loop
            // invariant |prev_l - l_ref| < c keeps the crossing inside the
            // segment, so the interpolation fraction stays in (0, 1].
            while (std::abs(cur_l - l_ref) >= c) {
                const int sign = cur_l > l_ref ? 1 : -1;
                const double threshold = l_ref + sign * c;
                const double f = (threshold - prev_l) / (cur_l - prev_l);
                const double t_cross = t_a + f * (t_b - t_a);
                auto t_us = std::uint64_t(std::llround(t_cross));
                t_us = std::clamp(t_us, timestamps[k - 1], timestamps[k]);
                out.push_back(Event{t_us, x, y, sign});
                l_ref = threshold;
            }
            prev_l = cur_l;
        }
    }

    std::vector<Event> all;
    std::size_t total = 0;
    for (const auto& v : per_pixel) total += v.size();
    all.reserve(total);
    for (const auto& v : per_pixel) all.insert(all.end(), v.begin(), v.end());
    return EventSlice::make(std::move(all), timestamps.front(), timestamps.back(), w, h);
}

GrayImage grayscale_augment(const GrayImage& img, double gain, double bias) {
    GrayImage out(img.width, img.height);
    for (std::size_t i = 0; i < img.v.size(); ++i) {
        out.v[i] = std::clamp(gain * img.v[i] + bias, 0.0, 1.0);
    }
    return out;
}

DatasetBuild build_dataset(std::span<const GrayImage> bases, const SynthConfig& cfg) {
    validate_config(cfg);
    if (bases.empty()) throw ConfigError("no base images");
    const int m3_max = cfg.m3 != 0 ? cfg.m3 : exposure_upper(cfg.m2);
    for (const GrayImage& b : bases) {
        if (b.width < 2 * m3_max || b.height < 2 * m3_max) {
            throw ConfigError("base image too small for the configured exposure");
        }
    }

    DatasetBuild build;
    const int intervals = cfg.m1 / cfg.m2;
    for (std::size_t bi = 0; bi < bases.size(); ++bi) {
        const std::uint64_t base_seed = mix_seed(cfg.seed, bi);
        const DenseSequence seq =
            generate_sequence(bases[bi], cfg, mix_seed(base_seed, 0xA11CEull));
        const EventSlice full =
            simulate_events(seq.frames, seq.timestamps, cfg.contrast_threshold);
        build.base_gt.push_back(seq.gt);

        for (int k = 0; k < intervals; ++k) {
            Rng rng(mix_seed(base_seed, std::uint64_t(k)));
            const int m3 = cfg.m3 != 0
                               ? cfg.m3
                               : int(rng.between(exposure_lower(cfg.m2),
                                                 exposure_upper(cfg.m2)));
            const double gain = rng.uniform(1.0 - cfg.gain_jitter, 1.0 + cfg.gain_jitter);
            const double bias = rng.uniform(-cfg.bias_jitter, cfg.bias_jitter);
            const std::uint64_t noise_seed = rng.bits();

            const int last = (k + 1) * cfg.m2;
            SynthSample sample;
            sample.base_index = int(bi);
            sample.interval_index = k;
            char id[64];
            std::snprintf(id, sizeof(id), "base%03zu_i%03d", bi, k);
            sample.id = id;

            const std::span<const GrayImage> exposure(seq.frames.data() + last - m3 + 1,
                                                      std::size_t(m3));
            sample.blurred = grayscale_augment(synth_blur(exposure), gain, bias);

            EventSlice slice = cut_slice(full, seq.timestamps[std::size_t(k) * cfg.m2],
                                         seq.timestamps[std::size_t(last)],
                                         k == intervals - 1);
            sample.events = inject_noise(slice, cfg.noise_rate, noise_seed);

            sample.gt.assign(seq.gt.begin() + std::ptrdiff_t(k) * cfg.m2,
                             seq.gt.begin() + last + 1);
            build.samples.push_back(std::move(sample));
        }
    }
    return build;
}

void write_dataset(const DatasetBuild& build, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string());

    for (std::size_t bi = 0; bi < build.base_gt.size(); ++bi) {
        char name[64];
        std::snprintf(name, sizeof(name), "base%03zu_gt.txt", bi);
        save_homographies(build.base_gt[bi], out_dir / name);
    }

    std::ofstream manifest(out_dir / "manifest.txt");
    if (!manifest) throw IoError("cannot open manifest for writing");
    for (const SynthSample& s : build.samples) {
        const std::filesystem::path dir = out_dir / s.id;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string());
        save_pgm(s.blurred, dir / "frame.pgm");
        save_events_binary(s.events, dir / "events.fevt");
        save_homographies(s.gt, dir / "gt.txt");
        manifest << s.id << ',' << s.id << "/frame.pgm," << s.id << "/events.fevt,"
                 << s.id << "/gt.txt\n";
    }
    if (!manifest) throw IoError("failed writing manifest");
}

} // namespace fekt
