#pragma once

#include <span>
#include <string>
#include <vector>

namespace dlmac::phy {

constexpr int kIdleMcs = -1;

// One row of the MCS table. SINR ranges are contiguous and left-inclusive:
// entry i covers [sinr_min_db, sinr_max_db). The idle row (index -1) runs
// from -inf up to the lowest usable threshold.
struct McsEntry {
    int index = kIdleMcs;
    std::string modulation;
    std::string coding_rate;  // "1/2", "3/4", ... ("-" for idle)
    double rate_mbps = 0.0;
    double sinr_min_db = 0.0;
    double sinr_max_db = 0.0;
};

class McsTable {
  public:
    // 802.11 20 MHz single-stream rates with the 10%-PER SINR thresholds.
    static McsTable defaults();

    // Key-value config: one "mcs <index> <modulation> <coding> <rate_mbps>
    // <sinr_min_db>" line per entry, '#' comments. Ranges are derived from
    // consecutive minima; the idle row's minimum is forced to -inf.
    static McsTable load(const std::string& path);
    static McsTable from_entries(std::vector<McsEntry> rows);

    const McsEntry& by_index(int index) const;
    const McsEntry& for_sinr(double sinr_db) const;

    int max_index() const { return static_cast<int>(entries_.size()) - 2; }
    const std::vector<McsEntry>& entries() const { return entries_; }

  private:
    std::vector<McsEntry> entries_;  // sorted by index, entries_[0] is idle
    void validate() const;
};

struct LinkBudget {
    double p_r_dbm = -60.0;   // receive power assumed at the transmitter
    double slot_us = 9.0;     // mini-slot length
    int payload_bytes = 1500;
};

// SINR at the receiver given the average sensed RSSI: P_r - avgRSSI.
double sinr_from_rssi(double avg_rssi_dbm, const LinkBudget& budget);
// Exact inverse of sinr_from_rssi.
double rssi_from_sinr(double sinr_db, const LinkBudget& budget);

const McsEntry& mcs_for_sinr(double sinr_db, const McsTable& table);

// Airtime of one payload in mini-slots: ceil(bits / (rate * slot)).
// Rejects the idle entry.
int packet_duration_slots(const McsEntry& mcs, const LinkBudget& budget);

struct TxOutcome {
    bool success = false;
    double avg_sinr_db = 0.0;
};

// Deterministic threshold success model: average the window's RSSI in dBm,
// convert to SINR, succeed iff it reaches the entry's minimum (inclusive).
// The window must span exactly packet_duration_slots(mcs) values.
TxOutcome transmission_outcome(std::span<const float> window, const McsEntry& mcs,
                               const LinkBudget& budget);

}  // namespace dlmac::phy
