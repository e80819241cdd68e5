#include "dlmac/phy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace dlmac::phy {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

McsTable McsTable::defaults() {
    std::vector<McsEntry> rows = {
        {-1, "IDLE", "-", 0.0, -kInf, 9.0},
        {0, "BPSK", "1/2", 6.5, 9.0, 10.0},
        {1, "QPSK", "1/2", 13.0, 10.0, 12.0},
        {2, "QPSK", "3/4", 19.5, 12.0, 15.0},
        {3, "16-QAM", "1/2", 26.0, 15.0, 18.0},
        {4, "16-QAM", "3/4", 39.0, 18.0, 21.0},
        {5, "64-QAM", "2/3", 52.0, 21.0, 23.0},
        {6, "64-QAM", "3/4", 58.5, 23.0, 24.0},
        {7, "64-QAM", "5/6", 65.0, 24.0, 28.0},
        {8, "256-QAM", "3/4", 78.0, 28.0, kInf},
    };
    return from_entries(std::move(rows));
}

McsTable McsTable::from_entries(std::vector<McsEntry> rows) {
    std::sort(rows.begin(), rows.end(),
              [](const McsEntry& a, const McsEntry& b) { return a.index < b.index; });
    // Derive contiguous ranges from the minima.
    for (std::size_t i = 0; i + 1 < rows.size(); ++i) rows[i].sinr_max_db = rows[i + 1].sinr_min_db;
    if (!rows.empty()) {
        rows.front().sinr_min_db = -kInf;
        rows.back().sinr_max_db = kInf;
    }
    McsTable t;
    t.entries_ = std::move(rows);
    t.validate();
    return t;
}

void McsTable::validate() const {
    if (entries_.size() < 2) throw std::runtime_error("mcs table: need idle row plus at least one rate");
    if (entries_.front().index != kIdleMcs) throw std::runtime_error("mcs table: first row must be index -1");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const McsEntry& e = entries_[i];
        if (e.index != static_cast<int>(i) - 1)
            throw std::runtime_error("mcs table: indices must be consecutive from -1");
        if (!(e.sinr_min_db < e.sinr_max_db))
            throw std::runtime_error("mcs table: empty SINR range at index " + std::to_string(e.index));
        if (i + 1 < entries_.size() && e.sinr_max_db != entries_[i + 1].sinr_min_db)
            throw std::runtime_error("mcs table: SINR ranges not contiguous at index " + std::to_string(e.index));
        if (i >= 2 && !(e.rate_mbps > entries_[i - 1].rate_mbps))
            throw std::runtime_error("mcs table: rates must strictly increase with index");
    }
    if (entries_[0].rate_mbps != 0.0) throw std::runtime_error("mcs table: idle row must have rate 0");
}

McsTable McsTable::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("mcs table: cannot open " + path);
    std::vector<McsEntry> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag)) continue;
        if (tag != "mcs")
            throw std::runtime_error("mcs table: " + path + ":" + std::to_string(lineno) +
                                     ": expected 'mcs', got '" + tag + "'");
        McsEntry e;
        std::string min_str;
        if (!(ss >> e.index >> e.modulation >> e.coding_rate >> e.rate_mbps >> min_str))
            throw std::runtime_error("mcs table: " + path + ":" + std::to_string(lineno) + ": malformed row");
        e.sinr_min_db = (min_str == "-inf") ? -kInf : std::stod(min_str);
        rows.push_back(std::move(e));
    }
    return from_entries(std::move(rows));
}

const McsEntry& McsTable::by_index(int index) const {
    if (index < kIdleMcs || index > max_index())
        throw std::out_of_range("mcs index " + std::to_string(index) + " out of range");
    return entries_[static_cast<std::size_t>(index + 1)];
}

const McsEntry& McsTable::for_sinr(double sinr_db) const {
    for (const McsEntry& e : entries_)
        if (sinr_db >= e.sinr_min_db && sinr_db < e.sinr_max_db) return e;
    return entries_.back();  // unreachable: ranges cover the line
}

double sinr_from_rssi(double avg_rssi_dbm, const LinkBudget& budget) {
    return budget.p_r_dbm - avg_rssi_dbm;
}

double rssi_from_sinr(double sinr_db, const LinkBudget& budget) {
    return budget.p_r_dbm - sinr_db;
}

const McsEntry& mcs_for_sinr(double sinr_db, const McsTable& table) {
    return table.for_sinr(sinr_db);
}

int packet_duration_slots(const McsEntry& mcs, const LinkBudget& budget) {
    if (mcs.index == kIdleMcs) throw std::invalid_argument("packet_duration_slots: idle entry has no airtime");
    const double bits = 8.0 * budget.payload_bytes;
    const double bits_per_slot = mcs.rate_mbps * budget.slot_us;  // Mbit/s * us = bits
    return static_cast<int>(std::ceil(bits / bits_per_slot));
}

TxOutcome transmission_outcome(std::span<const float> window, const McsEntry& mcs,
                               const LinkBudget& budget) {
    const int want = packet_duration_slots(mcs, budget);
    if (static_cast<int>(window.size()) != want)
        throw std::invalid_argument("transmission_outcome: window has " + std::to_string(window.size()) +
                                    " slots, MCS " + std::to_string(mcs.index) + " needs " +
                                    std::to_string(want));
    double sum = 0.0;
    for (float v : window) sum += v;
    const double avg_rssi = sum / static_cast<double>(window.size());
    TxOutcome out;
    out.avg_sinr_db = sinr_from_rssi(avg_rssi, budget);
    out.success = out.avg_sinr_db >= mcs.sinr_min_db;
    return out;
}

}  // namespace dlmac::phy
