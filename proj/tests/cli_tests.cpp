// End-to-end checks of the dlmac binary: exit codes, file outputs, and
// byte-level determinism of repeated invocations. The binary path arrives in
// DLMAC_BIN (set by ctest).

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string binary() {
    const char* bin = std::getenv("DLMAC_BIN");
    REQUIRE(bin != nullptr);
    return bin;
}

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "dlmac_cli_tests";
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = binary() + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void write_raw_fixture(const fs::path& path, int rows) {
    std::ofstream out(path);
    out << "t_us";
    for (int c = 0; c < 83; ++c) out << ",f" << 2400 + c;
    out << "\n";
    for (int r = 0; r < rows; ++r) {
        out << r * 100.0;
        for (int c = 0; c < 83; ++c) out << "," << (-90.0 + (r + c) % 7);
        out << "\n";
    }
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    CHECK(run("") == 2);
    CHECK(run("preprocess") == 2);                    // missing required flags
    CHECK(run("bogus-subcommand") == 2);
}

TEST_CASE("preprocess: channel range, output, idempotence") {
    const fs::path dir = scratch_dir();
    const fs::path raw = dir / "raw.csv";
    write_raw_fixture(raw, 200);

    const fs::path out1 = dir / "ch6_a.trc";
    const fs::path out2 = dir / "ch6_b.trc";
    CHECK(run("preprocess --raw " + raw.string() + " --channel 6 --out " + out1.string()) == 0);
    CHECK(run("preprocess --raw " + raw.string() + " --channel 6 --out " + out2.string()) == 0);
    CHECK(fs::file_size(out1) > 0);
    CHECK(slurp(out1) == slurp(out2));

    CHECK(run("preprocess --raw " + raw.string() + " --channel 14 --out " + (dir / "x.trc").string()) == 2);
    CHECK(run("preprocess --raw " + (dir / "missing.csv").string() + " --channel 6 --out " +
              (dir / "x.trc").string()) == 2);
}

TEST_CASE("synth is deterministic per seed") {
    const fs::path dir = scratch_dir();
    const fs::path a = dir / "synth_a.trc";
    const fs::path b = dir / "synth_b.trc";
    const fs::path c = dir / "synth_c.trc";
    const std::string base =
        "synth --noise-floor -95 --interferer 400:0.5:-60 --slots 120000 ";
    CHECK(run(base + "--seed 9 --out " + a.string()) == 0);
    CHECK(run(base + "--seed 9 --out " + b.string()) == 0);
    CHECK(run(base + "--seed 10 --out " + c.string()) == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a) != slurp(c));
}

TEST_CASE("label writes a dataset and a csv dump") {
    const fs::path dir = scratch_dir();
    const fs::path tr = dir / "label_in.trc";
    CHECK(run("synth --noise-floor -95 --interferer 200:0.5:-60 --slots 30000 --seed 4 --out " +
              tr.string()) == 0);
    const fs::path ds = dir / "label_out.dsb";
    const fs::path csv = dir / "label_out.csv";
    CHECK(run("label --trace " + tr.string() + " --out " + ds.string() + " --csv " + csv.string() +
              " --mtxop 40 --stride 16") == 0);
    CHECK(fs::file_size(ds) > 0);
    const std::string dump = slurp(csv);
    CHECK(dump.rfind("t,label", 0) == 0);
}

TEST_CASE("train then compare: deterministic end to end") {
    const fs::path dir = scratch_dir();
    const fs::path tr = dir / "pipeline.trc";
    // 1.0 s trace, 9 us slots, strongly periodic interference.
    CHECK(run("synth --noise-floor -95 --interferer 400:0.5:-60 --slots 111111 --seed 5 --out " +
              tr.string()) == 0);

    const std::string train_args = "train --trace " + tr.string() +
                                   " --split 0.7,0.25 --mtxop 12 --stride 8 --epochs 2 --batch 64 "
                                   "--seed 3 ";
    const fs::path model_a = dir / "model_a.bin";
    const fs::path model_b = dir / "model_b.bin";
    CHECK(run(train_args + "--out " + model_a.string() + " --history " + (dir / "hist_a.csv").string()) == 0);
    CHECK(run(train_args + "--out " + model_b.string() + " --history " + (dir / "hist_b.csv").string()) == 0);
    CHECK(slurp(model_a) == slurp(model_b));
    CHECK(slurp(dir / "hist_a.csv") == slurp(dir / "hist_b.csv"));

    const fs::path cmp_a = dir / "cmp_a";
    const fs::path cmp_b = dir / "cmp_b";
    const std::string cmp_args = "compare --trace " + tr.string() +
                                 " --policy gopt --policy csma-arf --policy dlmac --model " +
                                 model_a.string() +
                                 " --split 0.7,0.25 --mtxop 12 --runs 2 --seed 7 --lambda 1.0 ";
    CHECK(run(cmp_args + "--out " + cmp_a.string()) == 0);
    CHECK(run(cmp_args + "--out " + cmp_b.string()) == 0);
    CHECK(slurp(cmp_a / "summary.csv") == slurp(cmp_b / "summary.csv"));

    const std::string summary = slurp(cmp_a / "summary.csv");
    CHECK(summary.find("gopt") != std::string::npos);
    CHECK(summary.find("csma-arf") != std::string::npos);
    CHECK(summary.find("dlmac") != std::string::npos);

    // simulate with an event log on the same artifacts
    const fs::path series = dir / "series.csv";
    const fs::path events = dir / "events.csv";
    CHECK(run("simulate --trace " + tr.string() + " --policy dlmac --model " + model_a.string() +
              " --split 0.7,0.25 --mtxop 12 --lambda 1.0 --seed 2 --out " + series.string() +
              " --event-log " + events.string()) == 0);
    CHECK(slurp(series).rfind("window,", 0) == 0);
    CHECK(slurp(events).rfind("decision_slot,", 0) == 0);
}

TEST_CASE("train fuses several traces by example concatenation") {
    const fs::path dir = scratch_dir();
    const fs::path t1 = dir / "fuse_1.trc";
    const fs::path t2 = dir / "fuse_2.trc";
    CHECK(run("synth --noise-floor -95 --interferer 300:0.4:-62 --slots 40000 --seed 6 --out " +
              t1.string()) == 0);
    CHECK(run("synth --noise-floor -96 --interferer 500:0.6:-58 --slots 40000 --seed 7 --out " +
              t2.string()) == 0);
    const fs::path model = dir / "fused.bin";
    CHECK(run("train --trace " + t1.string() + " --trace " + t2.string() +
              " --split 0.2,0.1 --mtxop 12 --stride 8 --epochs 1 --batch 32 --seed 1 --out " +
              model.string()) == 0);
    CHECK(fs::file_size(model) > 0);
}
