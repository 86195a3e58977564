#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fekt/event.hpp"
#include "fekt/geometry.hpp"
#include "fekt/image.hpp"

namespace fekt {

/// Knobs for synthetic sequence and dataset generation.
///
/// m1 dense frames are generated after the base frame; every m2 of them form
/// one sample interval; the last m3 frames of an interval are averaged into
/// the blurred frame. m3 = 0 samples a value per interval, uniform over
/// [m2/5, 3*m2/5] (integer bounds). Motion is a random walk of per-step
/// homographies inside `jitter` (its center is filled with the image center).
struct SynthConfig {
    int m1 = 200;
    int m2 = 25;
    int m3 = 0;
    double contrast_threshold = 0.15;
    double fps = 1000.0;
    double noise_rate = 0.0;
    double gain_jitter = 0.0;
    double bias_jitter = 0.0;
    std::uint64_t seed = 0;
    HomographyJitter jitter;
};

/// Dense frame sequence. frames[0] is the base image with gt[0] = identity;
/// frames[n] is the base warped by gt[n].h, taken at timestamps[n]
/// microseconds (frame n at round(n * 1e6 / fps)).
struct DenseSequence {
    std::vector<GrayImage> frames;
    std::vector<std::uint64_t> timestamps;
    std::vector<TimedHomography> gt;
};

/// One training sample: the blurred frame of an interval, the interval's
/// events, and the interval's ground-truth transforms (from the sequence
/// origin, boundary frames included).
struct SynthSample {
    std::string id;
    int base_index = 0;
    int interval_index = 0;
    GrayImage blurred;
    EventSlice events;
    std::vector<TimedHomography> gt;
};

struct DatasetBuild {
    std::vector<SynthSample> samples;
    /// Dense ground truth per base image, covering the full sequence.
    std::vector<std::vector<TimedHomography>> base_gt;
};

/// Random-walk warp sequence: step transforms are drawn from cfg.jitter and
/// accumulated, so consecutive frames differ by one small step.
DenseSequence generate_sequence(const GrayImage& base, const SynthConfig& cfg,
                                std::uint64_t seed);

/// Per-pixel arithmetic mean over the exposure frames.
GrayImage synth_blur(std::span<const GrayImage> frames);

/// Per-pixel contrast-threshold event simulation over log intensity
/// log(I + 1e-3). Log intensity is interpolated linearly between consecutive
/// frames; every crossing of the running reference by `contrast_threshold`
/// emits one event at the interpolated crossing time and advances the
/// reference by one threshold step. After the last frame each pixel's
/// reference is within one threshold of its final log intensity.
EventSlice simulate_events(std::span<const GrayImage> frames,
                           std::span<const std::uint64_t> timestamps,
                           double contrast_threshold);

/// clamp(gain * img + bias, 0, 1) per pixel.
GrayImage grayscale_augment(const GrayImage& img, double gain, double bias);

/// Generates every sample of every base image. Deterministic per
/// (cfg.seed, base index, interval index).
DatasetBuild build_dataset(std::span<const GrayImage> bases, const SynthConfig& cfg);

/// Writes one directory per sample (frame.pgm, events.fevt, gt.txt), a dense
/// per-base ground-truth file, and manifest.txt with lines
/// "sample_id,frame_path,event_path,gt_path" (paths relative to out_dir).
void write_dataset(const DatasetBuild& build, const std::filesystem::path& out_dir);

} // namespace fekt
