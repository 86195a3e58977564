#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>

#include "fekt/eval.hpp"
#include "fekt/heatmap.hpp"
#include "fekt/image.hpp"
#include "fekt/tracker.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;

namespace {

std::string bin_path() {
    if (const char* env = std::getenv("FEKT_BIN")) return env;
    return FEKT_BIN_PATH;
}

struct RunResult {
    int code = -1;
    std::string out;
};

RunResult run_cli(const fs::path& scratch, const std::string& args) {
    const fs::path out_file = scratch / "cli_out.txt";
    const std::string cmd =
        "\"" + bin_path() + "\" " + args + " > \"" + out_file.string() + "\" 2>&1";
    const int st = std::system(cmd.c_str());
    RunResult r;
    if (st >= 0 && WIFEXITED(st)) r.code = WEXITSTATUS(st);
    r.out = testutil::slurp(out_file);
    return r;
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s) n += c == '\n';
    return n;
}

std::size_t count_hits(const std::string& s, const std::string& needle) {
    std::size_t n = 0, pos = 0;
    while ((pos = s.find(needle, pos)) != std::string::npos) {
        ++n;
        pos += needle.size();
    }
    return n;
}

fekt::GrayImage make_base(int phase) {
    fekt::GrayImage img(48, 36);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const bool tile = ((x + phase) / 8 + y / 8) % 2 == 0;
            img.at(x, y) = (tile ? 0.72 : 0.24) + 0.002 * x + 0.001 * y;
        }
    }
    return img;
}

} // namespace

TEST_CASE("argument errors exit with the configuration code") {
    testutil::TempDir td;
    CHECK(run_cli(td.path, "").code == 2);
    CHECK(run_cli(td.path, "losscheck --no-such-flag").code == 2);
    CHECK(run_cli(td.path, "frobnicate").code == 2);
    CHECK(run_cli(td.path, "--help").code == 0);
}

TEST_CASE("the loss self check suite prints one verdict per invariant") {
    testutil::TempDir td;
    const RunResult ok = run_cli(td.path, "losscheck --seed 1 --size 48 --patches 16");
    CHECK(ok.code == 0);
    CHECK(count_lines(ok.out) == 14);
    CHECK(count_hits(ok.out, ",PASS") == 14);
    CHECK(ok.out.find("gradcheck_cosine") != std::string::npos);
    CHECK(ok.out.find("schedule_anchor_values") != std::string::npos);

    const RunResult bad =
        run_cli(td.path, "losscheck --seed 1 --size 48 --patches 16 --inject-fault");
    CHECK(bad.code == 1);
    CHECK(bad.out.find(",FAIL") != std::string::npos);
}

TEST_CASE("losscheck reads flat config files") {
    testutil::TempDir td;
    const fs::path cfg = td.path / "check.cfg";
    testutil::spit(cfg, "seed=2\nsize=40\npatches=10\n");
    CHECK(run_cli(td.path, "losscheck --config \"" + cfg.string() + "\"").code == 0);

    const fs::path bad = td.path / "bad.cfg";
    testutil::spit(bad, "nonsense=1\n");
    CHECK(run_cli(td.path, "losscheck --config \"" + bad.string() + "\"").code == 2);

    // a patch larger than the heatmap is rejected, so these values must have
    // been read from the file
    const fs::path clash = td.path / "clash.cfg";
    testutil::spit(clash, "size=8\npatches=30\n");
    CHECK(run_cli(td.path, "losscheck --config \"" + clash.string() + "\"").code == 2);

    // and a flag given on the command line beats the file value
    const RunResult overridden = run_cli(
        td.path, "losscheck --config \"" + clash.string() + "\" --size 60");
    CHECK(overridden.code == 0);

    const fs::path faulty = td.path / "faulty.cfg";
    testutil::spit(faulty, "inject-fault=true\n");
    const RunResult fault = run_cli(td.path, "losscheck --config \"" + faulty.string() + "\"");
    CHECK(fault.code == 1);
    CHECK(fault.out.find(",FAIL") != std::string::npos);

    CHECK(run_cli(td.path, "losscheck --config \"" + (td.path / "absent.cfg").string() + "\"")
              .code == 3);
}

TEST_CASE("synth distinguishes missing inputs from empty ones") {
    testutil::TempDir td;
    const std::string out = (td.path / "data").string();
    const RunResult missing = run_cli(
        td.path, "synth --base-dir \"" + (td.path / "nowhere").string() +
                     "\" --out-dir \"" + out + "\"");
    CHECK(missing.code == 3);

    fs::create_directories(td.path / "hollow");
    const RunResult empty = run_cli(
        td.path, "synth --base-dir \"" + (td.path / "hollow").string() +
                     "\" --out-dir \"" + out + "\"");
    CHECK(empty.code == 2);
}

TEST_CASE("the four stage pipeline runs end to end") {
    testutil::TempDir td;
    const fs::path bases = td.path / "bases";
    fs::create_directories(bases);
    fekt::save_pgm(make_base(0), bases / "a.pgm");
    fekt::save_pgm(make_base(4), bases / "b.pgm");

    const std::string synth_flags =
        " --m1 20 --m2 10 --m3 3 --fps 1000 --contrast 0.12"
        " --jitter-translation 0.8 --seed 4";
    const fs::path data = td.path / "data";
    const RunResult synth = run_cli(
        td.path, "synth --base-dir \"" + bases.string() + "\" --out-dir \"" +
                     data.string() + "\"" + synth_flags);
    REQUIRE(synth.code == 0);
    CHECK(synth.out.find("wrote 4 samples") != std::string::npos);

    const std::string manifest = testutil::slurp(data / "manifest.txt");
    CHECK(count_lines(manifest) == 4);
    CHECK(manifest.rfind("base000_i000,base000_i000/frame.pgm", 0) == 0);
    CHECK(fs::exists(data / "base001_gt.txt"));

    SUBCASE("same seed, same dataset bytes") {
        const fs::path data_b = td.path / "data_b";
        const RunResult again = run_cli(
            td.path, "synth --base-dir \"" + bases.string() + "\" --out-dir \"" +
                         data_b.string() + "\"" + synth_flags);
        REQUIRE(again.code == 0);
        for (const char* rel :
             {"base000_i000/events.fevt", "base001_i001/events.fevt",
              "base000_i001/frame.pgm", "base000_gt.txt", "manifest.txt"}) {
            CHECK(testutil::slurp(data / rel) == testutil::slurp(data_b / rel));
        }
    }

    SUBCASE("detect, track and eval consume what synth wrote") {
        const fs::path heat = td.path / "heat";
        const RunResult detect = run_cli(
            td.path, "detect --dataset \"" + (data / "manifest.txt").string() +
                         "\" --out \"" + heat.string() + "\" --n 10");
        REQUIRE(detect.code == 0);
        CHECK(fs::exists(heat / "detect.cfg"));
        const fekt::HeatmapSeq seq = fekt::load_heatmaps(heat / "base000_i000.fehm");
        CHECK(seq.maps.size() == 10);
        CHECK(seq.t0 == 0);
        CHECK(seq.t1 == 10000);

        // re-emitting already computed heatmaps preserves them byte for byte
        const fs::path heat2 = td.path / "heat2";
        const RunResult reemit = run_cli(
            td.path, "detect --dataset \"" + (data / "manifest.txt").string() +
                         "\" --out \"" + heat2.string() +
                         "\" --source heatmap-files --heatmap-dir \"" +
                         heat.string() + "\"");
        REQUIRE(reemit.code == 0);
        for (const char* id : {"base000_i000", "base000_i001", "base001_i000",
                               "base001_i001"}) {
            const std::string rel = std::string(id) + ".fehm";
            CHECK(testutil::slurp(heat / rel) == testutil::slurp(heat2 / rel));
        }

        const fs::path trk = td.path / "trk";
        const RunResult track = run_cli(
            td.path, "track --heatmaps \"" + heat.string() + "\" --out \"" +
                         trk.string() + "\" --radius 4 --window-ms 30");
        REQUIRE(track.code == 0);
        CHECK(track.out.find("across 2 sequences") != std::string::npos);
        REQUIRE(fs::exists(trk / "base000.tracks.txt"));
        REQUIRE(fs::exists(trk / "base001.tracks.txt"));
        CHECK(fekt::load_tracks(trk / "base000.tracks.txt").size() >= 1);

        const RunResult eval = run_cli(
            td.path, "eval --tracks \"" + trk.string() + "\" --gt \"" +
                         data.string() + "\" --delta-t 5,10 --plot");
        REQUIRE(eval.code == 0);
        CHECK(eval.out.find("cells: RPE (RFM)") != std::string::npos);
        CHECK(eval.out.find("base000") != std::string::npos);
        CHECK(fs::exists(trk / "report.txt"));
        CHECK(fs::exists(trk / "base000.plot.svg"));
        const fekt::MetricsReport rep =
            fekt::parse_report_jsonl(testutil::slurp(trk / "report.jsonl"));
        REQUIRE(rep.sequences.size() == 2);
        CHECK(rep.sequences[0].sequence == "base000");
        CHECK(rep.sequences[0].per_delta.size() == 2);

        // the detect sidecar feeds the track threshold unless the flag is given
        testutil::spit(heat2 / "detect.cfg", "threshold=1.5\n");
        const RunResult strangled = run_cli(
            td.path, "track --heatmaps \"" + heat2.string() + "\" --out \"" +
                         (td.path / "trk_hi").string() + "\"");
        REQUIRE(strangled.code == 0);
        CHECK(strangled.out.find("wrote 0 tracks") != std::string::npos);

        const RunResult forced = run_cli(
            td.path, "track --heatmaps \"" + heat2.string() + "\" --out \"" +
                         (td.path / "trk_cli").string() + "\" --threshold 0.9");
        REQUIRE(forced.code == 0);
        CHECK(forced.out.find("wrote 0 tracks") == std::string::npos);
    }
}
