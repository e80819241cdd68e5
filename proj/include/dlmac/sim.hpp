#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dlmac/mac.hpp"
#include "dlmac/nn.hpp"
#include "dlmac/phy.hpp"
#include "dlmac/trace.hpp"

namespace dlmac::sim {

enum class PolicyKind { gopt, csma_arf, csma_iwl, csma_dlmcs, dlca_iwl, dlmac };

const char* policy_name(PolicyKind kind);
PolicyKind parse_policy(const std::string& name);

struct SimConfig {
    PolicyKind policy = PolicyKind::csma_arf;
    phy::LinkBudget budget;
    phy::McsTable table = phy::McsTable::defaults();
    int mtxop_slots = 0;            // 0 = airtime at the lowest MCS
    double lambda_per_mtxop = 0.18;  // expected packet arrivals per MTXOP
    std::uint64_t seed = 1;
    double measure_window_s = 2.0;

    mac::CsmaParams csma;
    mac::IwlParams iwl;
    int arf_up_threshold = 10;
    int arf_down_threshold = 2;
    int gopt_horizon_slots = 0;     // 0 = one MTXOP
    double sinr_floor_db = 0.0;

    nn::PolicyModel* model = nullptr;  // required by the DL policies
    bool instrument = false;           // record trace reads and queue fills
    bool keep_event_log = true;

    int resolved_mtxop() const;
    int resolved_horizon() const;
};

struct TxEvent {
    std::int64_t decision_slot = 0;
    std::int64_t start_slot = 0;  // first occupied slot
    std::int64_t end_slot = 0;    // last occupied slot
    int mcs_index = 0;
    bool success = false;
    double avg_sinr_db = 0.0;
    std::int64_t arrival_slot = 0;
};

// Captured only under SimConfig::instrument.
struct Instrumentation {
    std::vector<std::int64_t> observed_slots;  // real-trace reads fed to the policy
    struct Fill {
        std::int64_t first_slot = 0;
        std::int64_t last_slot = 0;
        int mcs_index = 0;
        bool success = false;
        double bound_lo_dbm = 0.0;
        double bound_hi_dbm = 0.0;
        float min_value = 0.0f;
        float max_value = 0.0f;
    };
    std::vector<Fill> fills;  // handcrafted queue refills, one per DL transmission
};

struct SimResult {
    std::vector<double> throughput_bps;  // per measurement window
    double mean_throughput_bps = 0.0;
    std::uint64_t offered = 0;
    std::uint64_t delivered = 0;
    std::uint64_t failed = 0;
    std::array<std::uint64_t, 9> mcs_usage{};  // transmissions attempted per MCS
    std::vector<TxEvent> events;
    bool partial = false;  // trace ended with traffic still pending
    std::uint64_t slots = 0;
    double duration_s = 0.0;
    Instrumentation instr;

    std::uint64_t delivered_bits(int payload_bytes) const {
        return delivered * static_cast<std::uint64_t>(payload_bytes) * 8u;
    }
};

// Drive one policy over the trace: Poisson arrivals into an unbounded FIFO,
// one policy consultation per idle slot with traffic pending, threshold
// scoring against the real trace, handcrafted queue backfill for the DL
// policies. Deterministic per seed.
SimResult run_simulation(const trace::SlotTrace& tr, const SimConfig& cfg);

// Successful payload bits bucketed by completion time (end of last occupied
// slot) into left-closed windows, divided by the window length.
std::vector<double> measure_throughput(std::span<const TxEvent> events, double window_s,
                                       double slot_us, std::uint64_t n_slots, int payload_bytes);

struct RunStats {
    double mean_bps = 0.0;
    double std_bps = 0.0;  // population std over run means
    std::vector<double> run_means;
    std::vector<double> mean_series;
};

// n_runs independent runs differing only in the derived per-run seed.
RunStats multi_run(const trace::SlotTrace& tr, const SimConfig& cfg, int n_runs);

struct ComparisonRow {
    PolicyKind policy;
    RunStats stats;
};

// Same arrival seeds across policies (run r of every policy sees identical
// arrivals); policy-internal randomness keyed by the policy's name so
// duplicate list entries produce identical rows.
std::vector<ComparisonRow> compare_policies(const trace::SlotTrace& tr,
                                            std::span<const PolicyKind> policies,
                                            const SimConfig& cfg, int n_runs);

// SimConfig overrides from a key-value config file (see README for keys).
void apply_config_file(SimConfig& cfg, const std::string& path);

}  // namespace dlmac::sim
