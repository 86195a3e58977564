#pragma once

#include <cassert>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fekt/image.hpp"

namespace fekt {

/// Dense channel-major feature tensor, C x H x W.
struct FeatureTensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> v;

    FeatureTensor() = default;
    FeatureTensor(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w),
          v(std::size_t(c) * h * w, fill) {}

    double& at(int c, int y, int x) {
        assert(c >= 0 && c < channels && x >= 0 && x < width && y >= 0 && y < height);
        return v[(std::size_t(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        assert(c >= 0 && c < channels && x >= 0 && x < width && y >= 0 && y < height);
        return v[(std::size_t(c) * height + y) * width + x];
    }

    static FeatureTensor from_image(const GrayImage& img);
    GrayImage channel_image(int c) const;
};

/// Per-pixel sampling offsets for K kernel taps, stored as 2K x H x W with
/// channel layout [dx_tap0, dy_tap0, dx_tap1, dy_tap1, ...]. Taps are
/// row-major over the kernel window.
struct OffsetField {
    int taps = 0;
    int height = 0;
    int width = 0;
    std::vector<double> v;

    OffsetField() = default;
    OffsetField(int taps_, int h, int w, double fill = 0.0)
        : taps(taps_), height(h), width(w),
          v(std::size_t(2) * taps_ * h * w, fill) {}

    double& dx(int tap, int y, int x) {
        return v[(std::size_t(2 * tap) * height + y) * width + x];
    }
    double dx(int tap, int y, int x) const {
        return v[(std::size_t(2 * tap) * height + y) * width + x];
    }
    double& dy(int tap, int y, int x) {
        return v[(std::size_t(2 * tap + 1) * height + y) * width + x];
    }
    double dy(int tap, int y, int x) const {
        return v[(std::size_t(2 * tap + 1) * height + y) * width + x];
    }
};

/// Convolution layer parameters with inference-mode normalization folded to
/// a per-channel affine (scale, shift) applied by the caller after the conv.
struct ConvWeights {
    int out_channels = 0;
    int in_channels = 0;
    int ksize = 1;
    std::vector<double> kernel; // out x in x k x k, row-major
    std::vector<double> bias;   // out
    std::vector<double> bn_scale;
    std::vector<double> bn_shift;

    static ConvWeights zeros(int out, int in, int k);
    /// Center-tap pass-through for out == in, unit affine.
    static ConvWeights identity(int channels, int k);

    double& kval(int o, int i, int ky, int kx) {
        return kernel[((std::size_t(o) * in_channels + i) * ksize + ky) * ksize + kx];
    }
    double kval(int o, int i, int ky, int kx) const {
        return kernel[((std::size_t(o) * in_channels + i) * ksize + ky) * ksize + kx];
    }
};

/// Cross-correlation with zero padding, stride 1, spatial size preserved.
FeatureTensor conv2d(const FeatureTensor& x, const ConvWeights& w);

/// One k x k kernel per channel (kernels tensor is C x k x k), zero padding,
/// no bias.
FeatureTensor depthwise_conv(const FeatureTensor& x, const FeatureTensor& kernels);

/// Mean over near-equal input partitions with boundaries at floor(i*H/out_h).
FeatureTensor adaptive_avg_pool(const FeatureTensor& x, int out_h, int out_w);

FeatureTensor channel_affine(const FeatureTensor& x, std::span<const double> scale,
                             std::span<const double> shift);
FeatureTensor relu(FeatureTensor x);

/// Weights of the dynamic-filter enhancement block. `feature` lifts the
/// primary modality, `filter` turns the pooled other modality into one
/// depthwise kernel per channel, `mix` is the final 1x1 projection.
struct DynamicFilterWeights {
    ConvWeights feature;
    ConvWeights filter;
    ConvWeights mix;
    int filter_size = 3;
};

/// Enhances f_primary with a depthwise filter predicted from f_other:
/// mix(K (*) F + F) where F = relu(affine(conv(f_primary))) and
/// K = conv(pool(f_other)). Swapping the arguments enhances the other
/// modality with the same structure.
FeatureTensor dynamic_filter_enhance(const FeatureTensor& f_primary,
                                     const FeatureTensor& f_other,
                                     const DynamicFilterWeights& w);

/// Bilinear read at (px, py) in channel c with zero padding outside.
double bilinear_sample(const FeatureTensor& x, int c, double px, double py);

/// Deformable convolution: each tap samples at its padded base position
/// displaced by the per-pixel offset, via bilinear_sample. No normalization
/// or activation here.
FeatureTensor deform_conv(const FeatureTensor& x, const ConvWeights& w,
                          const OffsetField& off);

/// Weights of the history-propagation stack: `head` produces the final-step
/// feature, steps[i] is the deformable step that walks one instant back.
struct MahWeights {
    ConvWeights head;
    std::vector<ConvWeights> steps;
};

/// Builds the per-instant feature pyramid from the end-of-interval feature.
/// offsets[i] drives the step from instant N-1-i to N-2-i (first offset
/// belongs to the step landing on instant N-2). Returns N = offsets.size()+1
/// tensors ordered from instant 0 to instant N-1.
std::vector<FeatureTensor> mah_propagate(const FeatureTensor& f_end,
                                         const MahWeights& w,
                                         std::span<const OffsetField> offsets);

/// Conv stack with relu(affine(.)) between layers, then a logistic over the
/// single remaining channel.
GrayImage sigmoid_head(const FeatureTensor& f, std::span<const ConvWeights> stack);

/// One named tensor of a weight file.
struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
};

/// Binary weight bundle: magic "FEWTS", then per tensor u32 name length,
/// name bytes, u32 rank, rank u32 dims, then the float32 little-endian
/// payload in row-major order.
void save_weights(const std::vector<NamedTensor>& tensors,
                  const std::filesystem::path& path);
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

} // namespace fekt
