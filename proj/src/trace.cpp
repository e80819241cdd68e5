#include "dlmac/trace.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dlmac/util.hpp"

namespace dlmac::trace {

namespace {

constexpr char kTraceMagic[8] = {'D', 'L', 'M', 'A', 'C', 'T', 'R', 'C'};
constexpr std::uint32_t kTraceVersion = 1;

bool in_rssi_range(double v) {
    return std::isfinite(v) && v >= kRssiMinDbm && v <= kRssiMaxDbm;
}

std::string expected_header(std::size_t cols, int band_start) {
    std::string h = "t_us";
    for (std::size_t n = 0; n < cols; ++n) h += ",f" + std::to_string(band_start + static_cast<int>(n));
    return h;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

RawTrace load_raw_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("raw trace: cannot open " + path);

    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("raw trace: " + path + " is empty");
    if (!header.empty() && header.back() == '\r') header.pop_back();

    // Header determines the band layout: t_us,f<start>,...,f<start+N-1>.
    std::vector<std::string> names;
    {
        std::istringstream hs(header);
        std::string tok;
        while (std::getline(hs, tok, ',')) names.push_back(tok);
    }
    if (names.size() < 2 || names[0] != "t_us")
        throw std::runtime_error("raw trace: " + path + ": header must start with t_us");
    RawTrace raw;
    raw.cols = names.size() - 1;
    try {
        if (names[1].size() < 2 || names[1][0] != 'f') throw std::invalid_argument(names[1]);
        raw.band_start_mhz = std::stoi(names[1].substr(1));
    } catch (const std::exception&) {
        throw std::runtime_error("raw trace: " + path + ": bad sub-band column '" + names[1] + "'");
    }
    if (header != expected_header(raw.cols, raw.band_start_mhz))
        throw std::runtime_error("raw trace: " + path + ": header mismatch, expected '" +
                                 expected_header(raw.cols, raw.band_start_mhz) + "'");

    std::string line;
    std::size_t lineno = 1;
    double prev_t = 0.0, dt = 0.0;
    bool have_dt = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::size_t col = 0;
        double t = 0.0;
        while (std::getline(ls, cell, ',')) {
            double v;
            try {
                std::size_t used = 0;
                v = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw std::runtime_error("raw trace: " + path + ": non-numeric cell at row " +
                                         std::to_string(lineno) + ", column " + std::to_string(col + 1));
            }
            if (col == 0) {
                t = v;
            } else {
                if (!in_rssi_range(v))
                    throw std::runtime_error("raw trace: " + path + ": RSSI out of [-120,0] at row " +
                                             std::to_string(lineno) + ", column " + std::to_string(col + 1));
                raw.samples.push_back(static_cast<float>(v));
            }
            ++col;
        }
        if (col != raw.cols + 1)
            throw std::runtime_error("raw trace: " + path + ": row " + std::to_string(lineno) + " has " +
                                     std::to_string(col) + " cells, expected " + std::to_string(raw.cols + 1));
        if (raw.rows == 1) {
            dt = t - prev_t;
            have_dt = true;
        }
        prev_t = t;
        ++raw.rows;
    }
    if (raw.rows == 0) throw std::runtime_error("raw trace: " + path + ": no data rows");
    if (have_dt && dt > 0.0) raw.sample_interval_us = dt;
    return raw;
}

void write_raw_csv(const RawTrace& raw, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("raw trace: cannot write " + path);
    std::fputs(expected_header(raw.cols, raw.band_start_mhz).c_str(), f);
    std::fputc('\n', f);
    for (std::size_t r = 0; r < raw.rows; ++r) {
        std::fprintf(f, "%.1f", static_cast<double>(r) * raw.sample_interval_us);
        for (std::size_t c = 0; c < raw.cols; ++c)
            std::fprintf(f, ",%.2f", static_cast<double>(raw.at(r, c)));
        std::fputc('\n', f);
    }
    std::fclose(f);
}

std::vector<float> aggregate_channel(const RawTrace& raw, int channel_id) {
    if (channel_id < 1 || channel_id > 13)
        throw std::invalid_argument("aggregate_channel: channel must be in 1..13, got " +
                                    std::to_string(channel_id));
    const int center_mhz = 2407 + 5 * channel_id;
    const int first_col = center_mhz - 10 - raw.band_start_mhz;
    const int last_col = first_col + 19;
    if (first_col < 0 || last_col >= static_cast<int>(raw.cols))
        throw std::runtime_error("aggregate_channel: channel " + std::to_string(channel_id) +
                                 " spans " + std::to_string(center_mhz - 10) + ".." +
                                 std::to_string(center_mhz + 10) + " MHz, outside the captured band");

    std::vector<float> out(raw.rows);
    for (std::size_t r = 0; r < raw.rows; ++r) {
        double mw = 0.0;
        for (int c = first_col; c <= last_col; ++c)
            mw += dbm_to_mw(raw.at(r, static_cast<std::size_t>(c)));
        out[r] = static_cast<float>(mw_to_dbm(mw));
    }
    return out;
}

SlotTrace interpolate_to_slots(std::span<const float> channel_seq, double sample_interval_us,
                               double slot_us) {
    if (channel_seq.empty()) throw std::invalid_argument("interpolate_to_slots: empty input");
    if (!(slot_us > 0.0) || sample_interval_us < slot_us)
        throw std::invalid_argument("interpolate_to_slots: need sample_interval_us >= slot_us > 0");

    const std::size_t n_slots = static_cast<std::size_t>(
        std::floor(static_cast<double>(channel_seq.size()) * sample_interval_us / slot_us));
    SlotTrace out;
    out.slot_us = slot_us;
    out.rssi.resize(n_slots);
    for (std::size_t l = 0; l < n_slots; ++l) {
        auto idx = static_cast<std::size_t>(std::floor(static_cast<double>(l) * slot_us / sample_interval_us));
        if (idx >= channel_seq.size()) idx = channel_seq.size() - 1;
        out.rssi[l] = channel_seq[idx];
    }
    return out;
}

SlotTrace generate_synthetic(const SyntheticScenario& scenario) {
    if (scenario.duration_slots < 1)
        throw std::invalid_argument("generate_synthetic: duration_slots must be >= 1");
    for (const Interferer& itf : scenario.interferers) {
        if (itf.period_slots < 1) throw std::invalid_argument("generate_synthetic: period_slots must be >= 1");
        if (itf.duty_cycle < 0.0 || itf.duty_cycle > 1.0)
            throw std::invalid_argument("generate_synthetic: duty_cycle must be in [0,1]");
        if (itf.jitter_slots < 0) throw std::invalid_argument("generate_synthetic: jitter_slots must be >= 0");
    }

    const std::size_t n = scenario.duration_slots;
    std::vector<double> mw(n, dbm_to_mw(scenario.noise_floor_dbm));
    std::vector<char> active;
    for (std::size_t k = 0; k < scenario.interferers.size(); ++k) {
        const Interferer& itf = scenario.interferers[k];
        const auto on_len = static_cast<long long>(std::llround(itf.duty_cycle * itf.period_slots));
        if (on_len <= 0) continue;
        // Each interferer gets its own stream so the set composes independently.
        Rng rng(mix_seed(scenario.seed, k + 1));
        active.assign(n, 0);
        for (long long c = 0;; ++c) {
            const long long base = c * static_cast<long long>(itf.period_slots);
            if (base - itf.jitter_slots >= static_cast<long long>(n)) break;
            const long long jitter =
                itf.jitter_slots > 0 ? rng.uniform_int(-itf.jitter_slots, itf.jitter_slots) : 0;
            const long long lo = std::max<long long>(0, base + jitter);
            const long long hi = std::min<long long>(static_cast<long long>(n), base + jitter + on_len);
            for (long long s = lo; s < hi; ++s) active[static_cast<std::size_t>(s)] = 1;
        }
        const double p = dbm_to_mw(itf.power_dbm);
        for (std::size_t s = 0; s < n; ++s)
            if (active[s]) mw[s] += p;
    }

    SlotTrace out;
    out.slot_us = scenario.slot_us;
    out.origin = "synthetic:" + std::to_string(scenario.seed);
    out.rssi.resize(n);
    for (std::size_t s = 0; s < n; ++s)
        out.rssi[s] = static_cast<float>(std::clamp(mw_to_dbm(mw[s]), kRssiMinDbm, kRssiMaxDbm));
    return out;
}

std::pair<SlotTrace, SlotTrace> split_train_eval(const SlotTrace& t, double train_seconds,
                                                 double eval_seconds) {
    if (!(train_seconds > 0.0))
        throw std::invalid_argument("split_train_eval: train segment must cover > 0 seconds");
    if (eval_seconds < 0.0) throw std::invalid_argument("split_train_eval: eval_seconds must be >= 0");
    const auto to_slots = [&](double seconds) {
        return static_cast<std::size_t>(std::floor(seconds * 1e6 / t.slot_us));
    };
    const std::size_t train_slots = to_slots(train_seconds);
    const std::size_t eval_slots = to_slots(eval_seconds);
    if (train_slots == 0) throw std::invalid_argument("split_train_eval: train segment shorter than one slot");
    if (train_slots + eval_slots > t.size())
        throw std::runtime_error("split_train_eval: trace has " + std::to_string(t.size()) +
                                 " slots, need " + std::to_string(train_slots + eval_slots));

    SlotTrace train{{t.rssi.begin(), t.rssi.begin() + static_cast<long>(train_slots)},
                    t.slot_us,
                    t.channel_id,
                    t.origin + "[train]"};
    SlotTrace eval{{t.rssi.begin() + static_cast<long>(train_slots),
                    t.rssi.begin() + static_cast<long>(train_slots + eval_slots)},
                   t.slot_us,
                   t.channel_id,
                   t.origin + "[eval]"};
    return {std::move(train), std::move(eval)};
}

void save_slot_trace(const SlotTrace& t, const std::string& path) {
    if (ends_with(path, ".csv")) {
        std::FILE* f = std::fopen(path.c_str(), "w");
        if (!f) throw std::runtime_error("slot trace: cannot write " + path);
        std::fputs("slot,rssi_dbm\n", f);
        for (std::size_t i = 0; i < t.size(); ++i)
            std::fprintf(f, "%zu,%.4f\n", i, static_cast<double>(t.rssi[i]));
        std::fclose(f);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("slot trace: cannot write " + path);
    out.write(kTraceMagic, sizeof(kTraceMagic));
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(kTraceVersion);
    put_u32(static_cast<std::uint32_t>(t.channel_id));
    double slot_us = t.slot_us;
    out.write(reinterpret_cast<const char*>(&slot_us), 8);
    put_u64(t.size());
    put_u32(static_cast<std::uint32_t>(t.origin.size()));
    out.write(t.origin.data(), static_cast<long>(t.origin.size()));
    out.write(reinterpret_cast<const char*>(t.rssi.data()), static_cast<long>(t.size() * sizeof(float)));
    if (!out) throw std::runtime_error("slot trace: write failed for " + path);
}

SlotTrace load_slot_trace(const std::string& path) {
    if (ends_with(path, ".csv")) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("slot trace: cannot open " + path);
        std::string line;
        if (!std::getline(in, line) || line.rfind("slot,rssi_dbm", 0) != 0)
            throw std::runtime_error("slot trace: " + path + ": bad header");
        SlotTrace t;
        t.origin = path;
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos)
                throw std::runtime_error("slot trace: " + path + ": malformed row " + std::to_string(lineno));
            const double v = std::stod(line.substr(comma + 1));
            if (!in_rssi_range(v))
                throw std::runtime_error("slot trace: " + path + ": RSSI out of range at row " +
                                         std::to_string(lineno));
            t.rssi.push_back(static_cast<float>(v));
        }
        return t;
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("slot trace: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kTraceMagic, 8) != 0)
        throw std::runtime_error("slot trace: " + path + ": bad magic");
    auto get_u32 = [&] {
        std::uint32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_u64 = [&] {
        std::uint64_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    const std::uint32_t version = get_u32();
    if (version != kTraceVersion)
        throw std::runtime_error("slot trace: " + path + ": unsupported version " + std::to_string(version));
    SlotTrace t;
    t.channel_id = static_cast<int>(get_u32());
    in.read(reinterpret_cast<char*>(&t.slot_us), 8);
    const std::uint64_t count = get_u64();
    const std::uint32_t origin_len = get_u32();
    t.origin.resize(origin_len);
    in.read(t.origin.data(), origin_len);
    t.rssi.resize(count);
    in.read(reinterpret_cast<char*>(t.rssi.data()), static_cast<long>(count * sizeof(float)));
    if (!in) throw std::runtime_error("slot trace: " + path + ": truncated file");
    return t;
}

}  // namespace dlmac::trace
