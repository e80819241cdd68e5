#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace dlmac::trace {

constexpr double kRssiMinDbm = -120.0;
constexpr double kRssiMaxDbm = 0.0;

// Raw spectrum capture: L samples (rows) of N one-MHz sub-band RSSIs,
// stored row-major. Sub-band column n covers [band_start_mhz + n,
// band_start_mhz + n + 1) MHz.
struct RawTrace {
    std::vector<float> samples;
    std::size_t rows = 0;
    std::size_t cols = 83;
    double sample_interval_us = 100.0;
    int band_start_mhz = 2400;

    float at(std::size_t r, std::size_t c) const { return samples[r * cols + c]; }
};

// Per-mini-slot RSSI on one 20 MHz channel.
struct SlotTrace {
    std::vector<float> rssi;
    double slot_us = 9.0;
    int channel_id = 0;       // 1..13, 0 when not channel-derived
    std::string origin;       // source file or "synthetic:<seed>"

    std::size_t size() const { return rssi.size(); }
    double duration_s() const { return static_cast<double>(rssi.size()) * slot_us * 1e-6; }
};

struct Interferer {
    int period_slots = 1;
    double duty_cycle = 0.0;   // fraction of the period spent on
    double power_dbm = -60.0;
    int jitter_slots = 0;      // per-cycle start offset, uniform in [-j, +j]
};

struct SyntheticScenario {
    double noise_floor_dbm = -95.0;
    std::vector<Interferer> interferers;
    std::size_t duration_slots = 0;
    std::uint64_t seed = 1;
    double slot_us = 9.0;
};

// CSV with header "t_us,f2400,...". Strict: any malformed or out-of-range
// cell aborts the load with its row/column position.
RawTrace load_raw_csv(const std::string& path);
void write_raw_csv(const RawTrace& raw, const std::string& path);

// Power-sum (dBm -> mW -> dBm) of the 20 one-MHz sub-bands under Wi-Fi
// channel `channel_id` (center 2407 + 5k MHz, span +/-10 MHz), one value
// per raw sample.
std::vector<float> aggregate_channel(const RawTrace& raw, int channel_id);

// Zero-order hold resampling onto the mini-slot grid. Slot l takes the most
// recent sample at or before l*slot_us; output length is
// floor(L * sample_interval_us / slot_us).
SlotTrace interpolate_to_slots(std::span<const float> channel_seq, double sample_interval_us,
                               double slot_us);

// Deterministic per seed. Each slot is the power sum of the noise floor and
// every interferer active at that slot; values clamped to [-120, 0] dBm.
SlotTrace generate_synthetic(const SyntheticScenario& scenario);

// Contiguous prefix/suffix split at slot boundaries (seconds rounded down
// to whole slots). train_seconds must be positive.
std::pair<SlotTrace, SlotTrace> split_train_eval(const SlotTrace& t, double train_seconds,
                                                 double eval_seconds);

// ".csv" writes "slot,rssi_dbm" rows; any other extension writes the flat
// float32 binary container (magic + header + payload).
void save_slot_trace(const SlotTrace& t, const std::string& path);
SlotTrace load_slot_trace(const std::string& path);

}  // namespace dlmac::trace
