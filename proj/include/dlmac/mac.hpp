#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dlmac/nn.hpp"
#include "dlmac/phy.hpp"
#include "dlmac/trace.hpp"
#include "dlmac/util.hpp"

namespace dlmac::mac {

struct PolicyDecision {
    bool transmit = false;
    int mcs_index = phy::kIdleMcs;  // valid only when transmit

    static PolicyDecision idle() { return {}; }
    static PolicyDecision tx(int mcs) { return {true, mcs}; }
};

// ---------------------------------------------------------------------------
// CSMA/CA: DIFS sensing then random backoff, counted in mini-slots. The
// backoff counter only moves on idle slots; any busy slot restarts the DIFS
// wait. Binary exponential backoff on failure.
// ---------------------------------------------------------------------------

struct CsmaParams {
    int cw_min = 16;
    int cw_max = 1024;
    int difs_slots = 4;
    double busy_threshold_dbm = -75.0;
};

struct CsmaState {
    CsmaParams params;
    int cw = 16;
    int backoff = 0;
    int difs_remaining = 4;
    enum class Phase { sensing, backoff } phase = Phase::sensing;
};

CsmaState make_csma(const CsmaParams& params, Rng& rng);

// Advance one mini-slot of carrier sensing. Returns true when the backoff
// has expired and access is granted; the grant repeats until acted on.
bool csma_step(CsmaState& state, double rssi_dbm);

// Post-transmission update: double cw on failure (capped), reset on success,
// redraw the backoff uniformly in [0, cw-1] and restart DIFS sensing.
void csma_on_result(CsmaState& state, bool success, Rng& rng);

// ---------------------------------------------------------------------------
// ARF rate control: step up after a run of successes, down after a run of
// failures.
// ---------------------------------------------------------------------------

struct ArfState {
    int current_mcs = 0;
    int consecutive_successes = 0;
    int consecutive_failures = 0;
    int up_threshold = 10;
    int down_threshold = 2;
};

void arf_update(ArfState& state, bool success, int max_mcs = 8);

// ---------------------------------------------------------------------------
// Sampling-based rate control (Minstrel-style stand-in for IWL): track a
// success-probability EWMA per MCS, transmit at the best expected-throughput
// rate and probe a random other rate every probe_interval-th packet.
// ---------------------------------------------------------------------------

struct IwlParams {
    double ewma_alpha = 0.25;
    int probe_interval = 10;
};

struct IwlState {
    IwlParams params;
    std::vector<double> ewma;           // per MCS, optimistic start at 1.0
    std::vector<std::uint64_t> attempts;
    int packets_since_probe = 0;
};

IwlState make_iwl(const IwlParams& params, const phy::McsTable& table);
int iwl_select(IwlState& state, const phy::McsTable& table, Rng& rng);
void iwl_update(IwlState& state, int mcs, bool success);

// ---------------------------------------------------------------------------
// DL-MAC: ring of the latest 3*MTXOP observed-or-handcrafted RSSI values fed
// to the trained network; argmax class 0 means stay idle.
// ---------------------------------------------------------------------------

class RssiQueue {
  public:
    explicit RssiQueue(std::size_t capacity) : buf_(capacity), capacity_(capacity) {}

    void push(float v) {
        buf_[head_] = v;
        head_ = (head_ + 1) % capacity_;
        if (filled_ < capacity_) ++filled_;
    }
    bool warm() const { return filled_ == capacity_; }
    std::size_t capacity() const { return capacity_; }

    // Oldest-first copy into dst (size capacity); only valid once warm.
    void snapshot(float* dst) const;

  private:
    std::vector<float> buf_;
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::size_t filled_ = 0;
};

struct DlMacState {
    nn::PolicyModel* model = nullptr;
    RssiQueue queue;

    DlMacState(nn::PolicyModel* m, std::size_t window)
        : model(m), queue(window) {}
};

inline void dlmac_observe(DlMacState& state, float rssi_dbm) { state.queue.push(rssi_dbm); }

// Runs the model on the current window. Requires a warm queue.
PolicyDecision dlmac_decide(DlMacState& state);

// Synthetic queue fill for the device's own transmission slots (half-duplex
// blind window). Success: uniform between the RSSI at the used MCS's
// threshold and the RSSI at the top MCS's threshold (low interference).
// Failure: uniform between the RSSI one MCS down and the RSSI at the
// configured SINR floor (high interference).
std::vector<float> handcraft_rssi(int mcs_used, bool success, const phy::LinkBudget& budget,
                                  const phy::McsTable& table, int n_slots, Rng& rng,
                                  double sinr_floor_db = 0.0);

// Closed-form bounds of the handcraft interval, exposed for verification.
std::pair<double, double> handcraft_bounds(int mcs_used, bool success, const phy::LinkBudget& budget,
                                           const phy::McsTable& table, double sinr_floor_db = 0.0);

// ---------------------------------------------------------------------------
// Global-optimal oracle: with full knowledge of the future trace, pick the
// (start slot, MCS) pair that finishes the pending packet earliest; prefer
// the higher rate, then the earlier start, on ties. The transmission then
// occupies [start+1, start+duration].
// ---------------------------------------------------------------------------

struct GoptDecision {
    bool transmit = false;
    std::int64_t start_slot = 0;
    int mcs_index = phy::kIdleMcs;
};

// Searches s in [t, t+horizon]. Throws if not even the shortest packet fits
// in the remaining trace; returns wait when no candidate succeeds.
GoptDecision gopt_decide(const trace::SlotTrace& tr, std::int64_t t, const phy::LinkBudget& budget,
                         const phy::McsTable& table, int horizon_slots);

}  // namespace dlmac::mac
