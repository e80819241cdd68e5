#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dlmac/trace.hpp"
#include "dlmac/util.hpp"

using namespace dlmac;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
    return (fs::temp_directory_path() / name).string();
}

std::string make_raw_csv(std::size_t rows, std::size_t cols, double value, double interval_us = 100.0) {
    std::ostringstream out;
    out << "t_us";
    for (std::size_t c = 0; c < cols; ++c) out << ",f" << 2400 + c;
    out << "\n";
    char buf[64];
    for (std::size_t r = 0; r < rows; ++r) {
        std::snprintf(buf, sizeof(buf), "%.1f", static_cast<double>(r) * interval_us);
        out << buf;
        for (std::size_t c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof(buf), ",%.2f", value);
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    f << content;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

}  // namespace

TEST_CASE("load_raw_csv: constant 2-row file") {
    const std::string path = tmp_path("raw_const.csv");
    write_file(path, make_raw_csv(2, 83, -90.0));
    const trace::RawTrace raw = trace::load_raw_csv(path);
    CHECK(raw.rows == 2);
    CHECK(raw.cols == 83);
    CHECK(raw.sample_interval_us == doctest::Approx(100.0));
    for (std::size_t r = 0; r < raw.rows; ++r)
        for (std::size_t c = 0; c < raw.cols; ++c) CHECK(raw.at(r, c) == doctest::Approx(-90.0));
}

TEST_CASE("load_raw_csv: header with 82 RSSI columns rejected against write layout") {
    const std::string path = tmp_path("raw_bad_cols.csv");
    // Header says 82 bands but a data row carries 83 values.
    std::string csv = make_raw_csv(1, 82, -90.0);
    const auto newline = csv.find('\n');
    std::string body = csv.substr(newline + 1);
    body.insert(body.size() - 1, ",-90.00");
    write_file(path, csv.substr(0, newline + 1) + body);
    CHECK_THROWS_WITH_AS(trace::load_raw_csv(path), doctest::Contains("has 84 cells"),
                         std::runtime_error);
}

TEST_CASE("load_raw_csv: error diagnostics") {
    SUBCASE("missing file") {
        CHECK_THROWS_AS(trace::load_raw_csv(tmp_path("nope_does_not_exist.csv")), std::runtime_error);
    }
    SUBCASE("header mismatch") {
        const std::string path = tmp_path("raw_bad_header.csv");
        write_file(path, "time,f2400\n0.0,-90.00\n");
        CHECK_THROWS_WITH_AS(trace::load_raw_csv(path), doctest::Contains("t_us"), std::runtime_error);
    }
    SUBCASE("non-numeric cell reports row and column") {
        const std::string path = tmp_path("raw_bad_cell.csv");
        write_file(path, "t_us,f2400,f2401\n0.0,-90.00,oops\n");
        CHECK_THROWS_WITH_AS(trace::load_raw_csv(path),
                             doctest::Contains("row 2, column 3"), std::runtime_error);
    }
    SUBCASE("out-of-range RSSI rejected") {
        const std::string path = tmp_path("raw_bad_range.csv");
        write_file(path, "t_us,f2400,f2401\n0.0,-90.00,12.00\n");
        CHECK_THROWS_WITH_AS(trace::load_raw_csv(path), doctest::Contains("out of [-120,0]"),
                             std::runtime_error);
    }
}

TEST_CASE("raw csv round-trip is byte identical for the golden fixture") {
    const std::string golden = std::string(DLMAC_TEST_DATA_DIR) + "/raw_fixture.csv";
    const trace::RawTrace raw = trace::load_raw_csv(golden);
    CHECK(raw.rows == 100);
    const std::string out = tmp_path("raw_roundtrip.csv");
    trace::write_raw_csv(raw, out);
    CHECK(read_file(out) == read_file(golden));
}

TEST_CASE("aggregate_channel: power sum over the 20 sub-bands") {
    trace::RawTrace raw;
    raw.rows = 1;
    raw.cols = 83;
    raw.samples.assign(83, -90.0f);

    SUBCASE("all sub-bands at -90 dBm") {
        const auto agg = trace::aggregate_channel(raw, 6);
        REQUIRE(agg.size() == 1);
        // -90 + 10*log10(20) = -76.9897...
        CHECK(agg[0] == doctest::Approx(-76.9897).epsilon(1e-4));
    }
    SUBCASE("one dominant sub-band") {
        raw.samples.assign(83, -120.0f);
        // Channel 6 centered at 2437 MHz spans 2427..2447; set 2430.
        raw.samples[2430 - 2400] = -60.0f;
        const auto agg = trace::aggregate_channel(raw, 6);
        CHECK(agg[0] == doctest::Approx(-60.0).epsilon(1e-4));
    }
    SUBCASE("homogeneity: constant x maps to x + 10*log10(20)") {
        Rng rng(7);
        for (int trial = 0; trial < 20; ++trial) {
            const double x = rng.uniform(-110.0, -20.0);
            raw.samples.assign(83, static_cast<float>(x));
            const auto agg = trace::aggregate_channel(raw, 1);
            CHECK(agg[0] == doctest::Approx(x + 10.0 * std::log10(20.0)).epsilon(1e-5));
        }
    }
    SUBCASE("monotone in every sub-band") {
        Rng rng(13);
        for (int trial = 0; trial < 50; ++trial) {
            for (auto& v : raw.samples) v = static_cast<float>(rng.uniform(-110.0, -40.0));
            const double before = trace::aggregate_channel(raw, 6)[0];
            const std::size_t touch = 2427 - 2400 + rng.uniform_int(std::uint64_t{20});
            raw.samples[touch] = static_cast<float>(
                std::min(0.0, static_cast<double>(raw.samples[touch]) + rng.uniform(0.0, 20.0)));
            const double after = trace::aggregate_channel(raw, 6)[0];
            CHECK(after >= before - 1e-9);
        }
    }
    SUBCASE("channel outside the captured band") {
        raw.cols = 30;  // band 2400..2429 only
        raw.samples.assign(30, -90.0f);
        CHECK_THROWS_AS(trace::aggregate_channel(raw, 13), std::runtime_error);
        CHECK_THROWS_AS(trace::aggregate_channel(raw, 0), std::invalid_argument);
        CHECK_THROWS_AS(trace::aggregate_channel(raw, 14), std::invalid_argument);
    }
}

TEST_CASE("interpolate_to_slots: zero-order hold") {
    SUBCASE("two samples, 9us slots") {
        const std::vector<float> seq{-70.0f, -60.0f};
        const trace::SlotTrace t = trace::interpolate_to_slots(seq, 100.0, 9.0);
        REQUIRE(t.size() == 22);  // floor(2*100/9)
        for (std::size_t l = 0; l <= 11; ++l) CHECK(t.rssi[l] == -70.0f);
        for (std::size_t l = 12; l < 22; ++l) CHECK(t.rssi[l] == -60.0f);
    }
    SUBCASE("constant input stays constant") {
        const std::vector<float> seq(17, -80.0f);
        const trace::SlotTrace t = trace::interpolate_to_slots(seq, 100.0, 9.0);
        CHECK(t.size() == static_cast<std::size_t>(std::floor(17 * 100.0 / 9.0)));
        for (float v : t.rssi) CHECK(v == -80.0f);
    }
    SUBCASE("1000 samples at 100us make 11111 slots") {
        const std::vector<float> seq(1000, -90.0f);
        CHECK(trace::interpolate_to_slots(seq, 100.0, 9.0).size() == 11111);
    }
    SUBCASE("every output value appears in the input") {
        Rng rng(5);
        std::vector<float> seq(37);
        for (auto& v : seq) v = static_cast<float>(rng.uniform(-100.0, -50.0));
        const trace::SlotTrace t = trace::interpolate_to_slots(seq, 25.0, 9.0);
        CHECK(t.size() == static_cast<std::size_t>(std::floor(37 * 25.0 / 9.0)));
        for (float v : t.rssi)
            CHECK(std::find(seq.begin(), seq.end(), v) != seq.end());
    }
    SUBCASE("empty input rejected") {
        CHECK_THROWS_AS(trace::interpolate_to_slots({}, 100.0, 9.0), std::invalid_argument);
    }
}

TEST_CASE("generate_synthetic") {
    trace::SyntheticScenario scenario;
    scenario.noise_floor_dbm = -95.0;
    scenario.duration_slots = 10000;
    scenario.seed = 42;

    SUBCASE("no interferers: constant noise floor") {
        const trace::SlotTrace t = trace::generate_synthetic(scenario);
        REQUIRE(t.size() == 10000);
        for (float v : t.rssi) CHECK(v == doctest::Approx(-95.0));
    }
    SUBCASE("same seed reproduces bit-identically") {
        scenario.interferers.push_back({200, 0.5, -60.0, 8});
        const trace::SlotTrace a = trace::generate_synthetic(scenario);
        const trace::SlotTrace b = trace::generate_synthetic(scenario);
        CHECK(a.rssi == b.rssi);
    }
    SUBCASE("one 50% duty interferer splits the trace") {
        scenario.interferers.push_back({200, 0.5, -60.0, 0});
        const trace::SlotTrace t = trace::generate_synthetic(scenario);
        std::size_t near_on = 0, at_floor = 0;
        for (float v : t.rssi) {
            if (std::abs(v - (-60.0f)) < 0.1f) ++near_on;
            if (v == doctest::Approx(-95.0)) ++at_floor;
        }
        // Without jitter the on-count is exact: 100 slots per 200-slot cycle.
        CHECK(near_on == 5000);
        CHECK(at_floor == 5000);
    }
    SUBCASE("invalid parameters rejected") {
        scenario.interferers.push_back({0, 0.5, -60.0, 0});
        CHECK_THROWS_AS(trace::generate_synthetic(scenario), std::invalid_argument);
        scenario.interferers.back() = {100, 1.5, -60.0, 0};
        CHECK_THROWS_AS(trace::generate_synthetic(scenario), std::invalid_argument);
    }
}

TEST_CASE("split_train_eval") {
    SUBCASE("120 s trace at 9us splits into the documented slot counts") {
        trace::SlotTrace t;
        t.slot_us = 9.0;
        t.rssi.assign(static_cast<std::size_t>(std::floor(120.0 * 1e6 / 9.0)), -90.0f);
        REQUIRE(t.size() == 13333333);
        const auto [train, eval] = trace::split_train_eval(t, 100.0, 20.0);
        CHECK(train.size() == 11111111);  // floor(100 / 0.000009)
        CHECK(eval.size() == 2222222);    // floor(20 / 0.000009)
    }
    SUBCASE("segments are disjoint and concatenate to a prefix") {
        trace::SlotTrace t;
        t.slot_us = 10.0;
        Rng rng(3);
        t.rssi.resize(1000);
        for (auto& v : t.rssi) v = static_cast<float>(rng.uniform(-100.0, -50.0));
        const auto [train, eval] = trace::split_train_eval(t, 0.004, 0.003);
        REQUIRE(train.size() == 400);
        REQUIRE(eval.size() == 300);
        for (std::size_t i = 0; i < train.size(); ++i) CHECK(train.rssi[i] == t.rssi[i]);
        for (std::size_t i = 0; i < eval.size(); ++i) CHECK(eval.rssi[i] == t.rssi[train.size() + i]);
    }
    SUBCASE("zero-length train rejected") {
        trace::SlotTrace t;
        t.rssi.assign(100, -90.0f);
        CHECK_THROWS_AS(trace::split_train_eval(t, 0.0, 0.0001), std::invalid_argument);
    }
    SUBCASE("insufficient trace rejected") {
        trace::SlotTrace t;
        t.slot_us = 9.0;
        t.rssi.assign(1000, -90.0f);  // 9 ms
        CHECK_THROWS_AS(trace::split_train_eval(t, 100.0, 20.0), std::runtime_error);
    }
}

TEST_CASE("slot trace persistence round-trips") {
    trace::SlotTrace t;
    t.slot_us = 9.0;
    t.channel_id = 6;
    t.origin = "synthetic:7";
    Rng rng(11);
    t.rssi.resize(777);
    for (auto& v : t.rssi) v = static_cast<float>(rng.uniform(-119.0, -1.0));

    SUBCASE("binary") {
        const std::string path = tmp_path("trace_bin.trc");
        trace::save_slot_trace(t, path);
        const trace::SlotTrace back = trace::load_slot_trace(path);
        CHECK(back.rssi == t.rssi);
        CHECK(back.slot_us == t.slot_us);
        CHECK(back.channel_id == t.channel_id);
        CHECK(back.origin == t.origin);
    }
    SUBCASE("csv") {
        const std::string path = tmp_path("trace_csv.csv");
        trace::save_slot_trace(t, path);
        const trace::SlotTrace back = trace::load_slot_trace(path);
        REQUIRE(back.size() == t.size());
        for (std::size_t i = 0; i < t.size(); ++i)
            CHECK(back.rssi[i] == doctest::Approx(t.rssi[i]).epsilon(1e-4));
    }
    SUBCASE("bad magic rejected") {
        const std::string path = tmp_path("trace_bad.trc");
        write_file(path, "NOTATRACEFILE");
        CHECK_THROWS_AS(trace::load_slot_trace(path), std::runtime_error);
    }
}
