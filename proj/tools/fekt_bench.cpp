#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fekt/event.hpp"
#include "fekt/geometry.hpp"
#include "fekt/net_ops.hpp"
#include "fekt/reference.hpp"
#include "fekt/rng.hpp"
#include "fekt/synth.hpp"
#include "fekt/tracker.hpp"
#include "fekt/voxel.hpp"

using namespace fekt;

namespace {

double time_ms(const std::function<void()>& fn, int repeat) {
    double best = 0.0;
    for (int r = 0; r < repeat; ++r) {
        const auto start = std::chrono::steady_clock::now();
        fn();
        const auto stop = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(stop - start).count();
        if (r == 0 || ms < best) best = ms;
    }
    return best;
}

void report(const char* name, double serial_ms, double parallel_ms, double max_diff) {
    std::printf("%-18s serial %9.2f ms   parallel %9.2f ms   speedup %5.2fx   max|diff| %.3g\n",
                name, serial_ms, parallel_ms, serial_ms / parallel_ms, max_diff);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

GrayImage random_image(int w, int h, Rng& rng) {
    GrayImage img(w, h);
    for (double& v : img.v) v = rng.uniform();
    return img;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"serial reference vs parallel kernel timings"};
    int repeat = 3;
    std::uint64_t seed = 7;
    app.add_option("--repeat", repeat, "timing repetitions, best-of");
    app.add_option("--seed", seed, "input generation seed");
    CLI11_PARSE(app, argc, argv);

    Rng rng(seed);

    {
        const int w = 320, h = 240;
        std::vector<Event> events;
        events.reserve(1000000);
        for (int i = 0; i < 1000000; ++i) {
            events.push_back(Event{1000 + std::uint64_t(i), int(rng.below(w)),
                                   int(rng.below(h)), rng.coin_sign()});
        }
        const EventSlice slice =
            EventSlice::make(std::move(events), 1000, 1000 + 999999, w, h);
        VoxelGrid gs, gp;
        const double serial = time_ms([&] { gs = ref::build_voxel_grid(slice, 10); }, repeat);
        const double parallel = time_ms([&] { gp = build_voxel_grid(slice, 10); }, repeat);
        report("voxel_grid", serial, parallel, max_abs_diff(gs.v, gp.v));
    }

    {
        const GrayImage img = random_image(1024, 768, rng);
        const Homography t = compose(Homography::translation(3.25, -2.5),
                                     Homography::from_row_major({1.01, 0.02, 0.0, -0.02,
                                                                 0.99, 0.0, 1e-6, 0.0,
                                                                 1.0}));
        WarpResult rs, rp;
        const double serial = time_ms([&] { rs = ref::warp_bilinear(img, t); }, repeat);
        const double parallel = time_ms([&] { rp = warp_bilinear(img, t); }, repeat);
        report("warp_bilinear", serial, parallel,
               max_abs_diff(rs.image.v, rp.image.v));
    }

    {
        FeatureTensor x(16, 128, 128);
        for (double& v : x.v) v = rng.uniform(-1.0, 1.0);
        ConvWeights w = ConvWeights::zeros(16, 16, 3);
        for (double& v : w.kernel) v = rng.uniform(-0.5, 0.5);
        for (double& v : w.bias) v = rng.uniform(-0.1, 0.1);
        FeatureTensor ys, yp;
        const double serial = time_ms([&] { ys = ref::conv2d(x, w); }, repeat);
        const double parallel = time_ms([&] { yp = conv2d(x, w); }, repeat);
        report("conv2d", serial, parallel, max_abs_diff(ys.v, yp.v));
    }

    {
        FeatureTensor x(8, 96, 96);
        for (double& v : x.v) v = rng.uniform(-1.0, 1.0);
        ConvWeights w = ConvWeights::zeros(8, 8, 3);
        for (double& v : w.kernel) v = rng.uniform(-0.5, 0.5);
        OffsetField off(9, 96, 96);
        for (double& v : off.v) v = rng.uniform(-1.5, 1.5);
        FeatureTensor ys, yp;
        const double serial = time_ms([&] { ys = ref::deform_conv(x, w, off); }, repeat);
        const double parallel = time_ms([&] { yp = deform_conv(x, w, off); }, repeat);
        report("deform_conv", serial, parallel, max_abs_diff(ys.v, yp.v));
    }

    {
        std::vector<GrayImage> frames;
        std::vector<std::uint64_t> ts;
        GrayImage img = random_image(256, 192, rng);
        for (int k = 0; k < 60; ++k) {
            for (double& v : img.v) {
                v = std::clamp(v + rng.uniform(-0.05, 0.05), 0.0, 1.0);
            }
            frames.push_back(img);
            ts.push_back(1000 * std::uint64_t(k + 1));
        }
        EventSlice es, ep;
        const double serial =
            time_ms([&] { es = ref::simulate_events(frames, ts, 0.15); }, repeat);
        const double parallel =
            time_ms([&] { ep = simulate_events(frames, ts, 0.15); }, repeat);
        double diff = es.events.size() == ep.events.size() ? 0.0 : 1.0;
        report("simulate_events", serial, parallel, diff);
    }

    {
        std::vector<std::vector<Keypoint>> batches;
        for (int step = 0; step < 400; ++step) {
            std::vector<Keypoint> batch;
            for (int i = 0; i < 120; ++i) {
                batch.push_back(Keypoint{rng.uniform(0.0, 640.0), rng.uniform(0.0, 480.0),
                                         std::uint64_t(step) * 2000 + 10, rng.uniform()});
            }
            batches.push_back(std::move(batch));
        }
        const TrackerParams params;
        std::size_t ns = 0, np = 0;
        const double serial = time_ms(
            [&] {
                ref::BruteTracker t(params);
                for (const auto& b : batches) t.associate(b);
                ns = t.finish().size();
            },
            repeat);
        const double hashed = time_ms(
            [&] {
                TrackerState t(params);
                for (const auto& b : batches) t.associate(b);
                np = t.finish().size();
            },
            repeat);
        report("tracker_assoc", serial, hashed, ns == np ? 0.0 : 1.0);
    }

    return 0;
}
