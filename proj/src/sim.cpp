#include "dlmac/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <memory>
#include <stdexcept>

#include "dlmac/kv.hpp"
#include "dlmac/util.hpp"

namespace dlmac::sim {

const char* policy_name(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::gopt: return "gopt";
        case PolicyKind::csma_arf: return "csma-arf";
        case PolicyKind::csma_iwl: return "csma-iwl";
        case PolicyKind::csma_dlmcs: return "csma-dlmcs";
        case PolicyKind::dlca_iwl: return "dlca-iwl";
        case PolicyKind::dlmac: return "dlmac";
    }
    return "?";
}

PolicyKind parse_policy(const std::string& name) {
    for (PolicyKind k : {PolicyKind::gopt, PolicyKind::csma_arf, PolicyKind::csma_iwl,
                         PolicyKind::csma_dlmcs, PolicyKind::dlca_iwl, PolicyKind::dlmac})
        if (name == policy_name(k)) return k;
    throw std::invalid_argument("unknown policy '" + name +
                                "' (expected gopt|csma-arf|csma-iwl|csma-dlmcs|dlca-iwl|dlmac)");
}

int SimConfig::resolved_mtxop() const {
    if (mtxop_slots > 0) return mtxop_slots;
    return phy::packet_duration_slots(table.by_index(0), budget);
}

int SimConfig::resolved_horizon() const {
    return gopt_horizon_slots > 0 ? gopt_horizon_slots : resolved_mtxop();
}

namespace {

struct Decision {
    bool transmit = false;
    int mcs = phy::kIdleMcs;
    std::int64_t start = -1;  // decision takes effect over [start+1, start+D]
};

class PolicyRuntime {
  public:
    virtual ~PolicyRuntime() = default;
    virtual void on_observe(std::int64_t, float) {}
    virtual Decision decide(std::int64_t t, std::optional<float> rssi) = 0;
    virtual void on_tx_complete(const TxEvent&) {}
};

// Shared machinery for every policy that feeds the DNN: the observation
// queue plus the handcrafted refill covering the half-duplex blind window.
//
// While the device sits idle its upcoming windows are fully determined by
// the real trace, so the per-slot decisions can be evaluated a few slots
// ahead in one batched forward and replayed until a transmission (whose
// refill changes the queue) invalidates them. The decisions are the same as
// the slot-by-slot path; only the arithmetic is batched. Instrumented runs
// disable the lookahead.
class DlQueue {
  public:
    DlQueue(nn::PolicyModel* model, int window, const phy::LinkBudget& budget,
            const phy::McsTable& table, double sinr_floor_db, Rng* rng, Instrumentation* instr,
            const trace::SlotTrace* lookahead_trace)
        : state_(model, static_cast<std::size_t>(window)),
          budget_(budget),
          table_(table),
          sinr_floor_db_(sinr_floor_db),
          rng_(rng),
          instr_(instr),
          tr_(instr ? nullptr : lookahead_trace),
          window_buf_(static_cast<std::size_t>(window)) {
        if (model) engine_.emplace(*model);
    }

    void observe(float rssi) {
        mac::dlmac_observe(state_, rssi);
        ++observed_;
    }
    bool warm() const { return state_.queue.warm(); }

    int predicted_class(std::int64_t slot) {
        ensure(slot);
        return classes_[static_cast<std::size_t>(slot - cache_slot0_)];
    }

    // Argmax restricted to the transmit classes (1..9).
    int predicted_mcs_class(std::int64_t slot) {
        ensure(slot);
        return mcs_classes_[static_cast<std::size_t>(slot - cache_slot0_)];
    }

    void fill_blind_window(const TxEvent& ev) {
        const int n = static_cast<int>(ev.end_slot - ev.start_slot + 1);
        const auto values = mac::handcraft_rssi(ev.mcs_index, ev.success, budget_, table_, n, *rng_,
                                                sinr_floor_db_);
        for (float v : values) state_.queue.push(v);
        cache_count_ = 0;  // speculative windows no longer match the queue
        next_batch_ = 1;
        if (instr_) {
            const auto [lo, hi] =
                mac::handcraft_bounds(ev.mcs_index, ev.success, budget_, table_, sinr_floor_db_);
            Instrumentation::Fill fill;
            fill.first_slot = ev.start_slot;
            fill.last_slot = ev.end_slot;
            fill.mcs_index = ev.mcs_index;
            fill.success = ev.success;
            fill.bound_lo_dbm = lo;
            fill.bound_hi_dbm = hi;
            fill.min_value = *std::min_element(values.begin(), values.end());
            fill.max_value = *std::max_element(values.begin(), values.end());
            instr_->fills.push_back(fill);
        }
    }

  private:
    static constexpr int kMaxLookahead = 32;

    void ensure(std::int64_t slot) {
        if (cache_count_ > 0 && slot >= cache_slot0_ &&
            slot < cache_slot0_ + static_cast<std::int64_t>(cache_count_) &&
            observed_ == cache_observed0_ + static_cast<std::uint64_t>(slot - cache_slot0_))
            return;
        build(slot);
    }

    void build(std::int64_t t) {
        int batch = 1;
        if (tr_) {
            const auto last = static_cast<std::int64_t>(tr_->size()) - 1;
            batch = static_cast<int>(std::min<std::int64_t>(next_batch_, last - t + 1));
            batch = std::max(batch, 1);
            next_batch_ = std::min(next_batch_ * 2, kMaxLookahead);
        }
        const auto w = static_cast<Eigen::Index>(state_.queue.capacity());
        windows_.resize(batch, w);
        state_.queue.snapshot(window_buf_.data());
        for (int k = 0; k < batch; ++k) {
            if (k > 0) {
                // Advance the speculative window by one observed slot.
                std::memmove(window_buf_.data(), window_buf_.data() + 1,
                             (static_cast<std::size_t>(w) - 1) * sizeof(float));
                window_buf_[static_cast<std::size_t>(w) - 1] =
                    tr_->rssi[static_cast<std::size_t>(t + k)];
            }
            for (Eigen::Index c = 0; c < w; ++c)
                windows_(k, c) = window_buf_[static_cast<std::size_t>(c)];
        }
        const auto& logits = engine_->logits_batch(windows_);
        classes_.resize(static_cast<std::size_t>(batch));
        mcs_classes_.resize(static_cast<std::size_t>(batch));
        for (int k = 0; k < batch; ++k) {
            int best = 0, best_tx = 1;
            for (int c = 1; c < static_cast<int>(logits.cols()); ++c) {
                if (logits(k, c) > logits(k, best)) best = c;
                if (c >= 2 && logits(k, c) > logits(k, best_tx)) best_tx = c;
            }
            classes_[static_cast<std::size_t>(k)] = best;
            mcs_classes_[static_cast<std::size_t>(k)] = best_tx;
        }
        cache_slot0_ = t;
        cache_count_ = static_cast<std::size_t>(batch);
        cache_observed0_ = observed_;
    }

    mac::DlMacState state_;
    phy::LinkBudget budget_;
    const phy::McsTable& table_;
    double sinr_floor_db_;
    Rng* rng_;
    Instrumentation* instr_;
    const trace::SlotTrace* tr_;
    std::vector<float> window_buf_;
    std::optional<nn::Inference> engine_;

    nn::Mat<float> windows_;
    std::vector<int> classes_, mcs_classes_;
    std::int64_t cache_slot0_ = 0;
    std::size_t cache_count_ = 0;
    std::uint64_t cache_observed0_ = 0;
    std::uint64_t observed_ = 0;
    int next_batch_ = 1;
};

class GoptPolicy final : public PolicyRuntime {
  public:
    GoptPolicy(const trace::SlotTrace& tr, const phy::LinkBudget& budget, const phy::McsTable& table,
               int horizon)
        : tr_(tr), budget_(budget), table_(table), horizon_(horizon) {}

    Decision decide(std::int64_t t, std::optional<float>) override {
        const auto d = mac::gopt_decide(tr_, t, budget_, table_, horizon_);
        if (!d.transmit) return {};
        return {true, d.mcs_index, d.start_slot};
    }

  private:
    const trace::SlotTrace& tr_;
    phy::LinkBudget budget_;
    const phy::McsTable& table_;
    int horizon_;
};

class CsmaPolicy : public PolicyRuntime {
  public:
    CsmaPolicy(const mac::CsmaParams& params, Rng* rng) : rng_(rng), csma_(mac::make_csma(params, *rng)) {}

    Decision decide(std::int64_t t, std::optional<float> rssi) override {
        if (!rssi) return {};  // cannot sense while finishing own transmission
        if (!mac::csma_step(csma_, *rssi)) return {};
        const int mcs = select_rate(t);
        if (mcs < 0) return {};  // rate source not ready; grant stays pending
        return {true, mcs, t};
    }

    void on_tx_complete(const TxEvent& ev) override {
        mac::csma_on_result(csma_, ev.success, *rng_);
        rate_result(ev);
    }

  protected:
    virtual int select_rate(std::int64_t t) = 0;
    virtual void rate_result(const TxEvent& ev) = 0;
    Rng* rng_;

  private:
    mac::CsmaState csma_;
};

class CsmaArfPolicy final : public CsmaPolicy {
  public:
    CsmaArfPolicy(const mac::CsmaParams& params, int up, int down, int max_mcs, Rng* rng)
        : CsmaPolicy(params, rng), max_mcs_(max_mcs) {
        arf_.up_threshold = up;
        arf_.down_threshold = down;
    }

  protected:
    int select_rate(std::int64_t) override { return arf_.current_mcs; }
    void rate_result(const TxEvent& ev) override { mac::arf_update(arf_, ev.success, max_mcs_); }

  private:
    mac::ArfState arf_;
    int max_mcs_;
};

class CsmaIwlPolicy final : public CsmaPolicy {
  public:
    CsmaIwlPolicy(const mac::CsmaParams& params, const mac::IwlParams& iwl, const phy::McsTable& table,
                  Rng* rng)
        : CsmaPolicy(params, rng), table_(table), iwl_(mac::make_iwl(iwl, table)) {}

  protected:
    int select_rate(std::int64_t) override { return mac::iwl_select(iwl_, table_, *rng_); }
    void rate_result(const TxEvent& ev) override { mac::iwl_update(iwl_, ev.mcs_index, ev.success); }

  private:
    const phy::McsTable& table_;
    mac::IwlState iwl_;
};

class CsmaDlMcsPolicy final : public CsmaPolicy {
  public:
    CsmaDlMcsPolicy(const mac::CsmaParams& params, DlQueue queue, Rng* rng)
        : CsmaPolicy(params, rng), queue_(std::move(queue)) {}

    void on_observe(std::int64_t, float rssi) override { queue_.observe(rssi); }

    void on_tx_complete(const TxEvent& ev) override {
        CsmaPolicy::on_tx_complete(ev);
        queue_.fill_blind_window(ev);
    }

  protected:
    int select_rate(std::int64_t t) override {
        if (!queue_.warm()) return -1;
        // MCS head only: argmax restricted to the transmit classes.
        return dataset::class_to_label(queue_.predicted_mcs_class(t));
    }
    void rate_result(const TxEvent&) override {}

  private:
    DlQueue queue_;
};

class DlCaIwlPolicy final : public PolicyRuntime {
  public:
    DlCaIwlPolicy(DlQueue queue, const mac::IwlParams& iwl, const phy::McsTable& table, Rng* rng)
        : queue_(std::move(queue)), table_(table), iwl_(mac::make_iwl(iwl, table)), rng_(rng) {}

    void on_observe(std::int64_t, float rssi) override { queue_.observe(rssi); }

    Decision decide(std::int64_t t, std::optional<float>) override {
        if (!queue_.warm()) return {};
        // Access head only: transmit iff the model picks any non-idle class.
        if (queue_.predicted_class(t) == 0) return {};
        return {true, mac::iwl_select(iwl_, table_, *rng_), t};
    }

    void on_tx_complete(const TxEvent& ev) override {
        mac::iwl_update(iwl_, ev.mcs_index, ev.success);
        queue_.fill_blind_window(ev);
    }

  private:
    DlQueue queue_;
    const phy::McsTable& table_;
    mac::IwlState iwl_;
    Rng* rng_;
};

class DlMacPolicy final : public PolicyRuntime {
  public:
    explicit DlMacPolicy(DlQueue queue) : queue_(std::move(queue)) {}

    void on_observe(std::int64_t, float rssi) override { queue_.observe(rssi); }

    Decision decide(std::int64_t t, std::optional<float>) override {
        if (!queue_.warm()) return {};
        const int cls = queue_.predicted_class(t);
        if (cls == 0) return {};
        return {true, dataset::class_to_label(cls), t};
    }

    void on_tx_complete(const TxEvent& ev) override { queue_.fill_blind_window(ev); }

  private:
    DlQueue queue_;
};

bool needs_model(PolicyKind kind) {
    return kind == PolicyKind::csma_dlmcs || kind == PolicyKind::dlca_iwl || kind == PolicyKind::dlmac;
}

std::unique_ptr<PolicyRuntime> make_policy(const trace::SlotTrace& tr, const SimConfig& cfg,
                                           Rng* policy_rng, Instrumentation* instr) {
    const int mtxop = cfg.resolved_mtxop();
    const int window = 3 * mtxop;
    if (needs_model(cfg.policy)) {
        if (!cfg.model) throw std::invalid_argument("policy requires a trained model");
        if (cfg.model->net.spec.input_dim != window)
            throw std::invalid_argument("model input " + std::to_string(cfg.model->net.spec.input_dim) +
                                        " does not match window " + std::to_string(window));
        if (static_cast<std::int64_t>(tr.size()) <= window)
            throw std::invalid_argument("trace too short for the DL warm-up window");
    }
    DlQueue queue(cfg.model, window, cfg.budget, cfg.table, cfg.sinr_floor_db, policy_rng, instr,
                  &tr);
    switch (cfg.policy) {
        case PolicyKind::gopt:
            return std::make_unique<GoptPolicy>(tr, cfg.budget, cfg.table, cfg.resolved_horizon());
        case PolicyKind::csma_arf:
            return std::make_unique<CsmaArfPolicy>(cfg.csma, cfg.arf_up_threshold,
                                                   cfg.arf_down_threshold, cfg.table.max_index(),
                                                   policy_rng);
        case PolicyKind::csma_iwl:
            return std::make_unique<CsmaIwlPolicy>(cfg.csma, cfg.iwl, cfg.table, policy_rng);
        case PolicyKind::csma_dlmcs:
            return std::make_unique<CsmaDlMcsPolicy>(cfg.csma, std::move(queue), policy_rng);
        case PolicyKind::dlca_iwl:
            return std::make_unique<DlCaIwlPolicy>(std::move(queue), cfg.iwl, cfg.table, policy_rng);
        case PolicyKind::dlmac:
            return std::make_unique<DlMacPolicy>(std::move(queue));
    }
    throw std::logic_error("unreachable policy kind");
}

}  // namespace

std::vector<double> measure_throughput(std::span<const TxEvent> events, double window_s,
                                       double slot_us, std::uint64_t n_slots, int payload_bytes) {
    if (!(window_s > 0.0)) throw std::invalid_argument("measure_throughput: window must be positive");
    const double duration_s = static_cast<double>(n_slots) * slot_us * 1e-6;
    const auto n_windows = static_cast<std::size_t>(std::floor(duration_s / window_s)) + 1;
    std::vector<double> bits(n_windows, 0.0);
    const double payload_bits = 8.0 * payload_bytes;
    for (const TxEvent& ev : events) {
        if (!ev.success) continue;
        const double completion_s = static_cast<double>(ev.end_slot + 1) * slot_us * 1e-6;
        auto idx = static_cast<std::size_t>(std::floor(completion_s / window_s));
        if (idx >= n_windows) idx = n_windows - 1;
        bits[idx] += payload_bits;
    }
    for (double& b : bits) b /= window_s;
    return bits;
}

SimResult run_simulation(const trace::SlotTrace& tr, const SimConfig& cfg) {
    const auto slots = static_cast<std::int64_t>(tr.size());
    if (slots < 2) throw std::invalid_argument("run_simulation: trace too short");
    const int mtxop = cfg.resolved_mtxop();
    const int longest = phy::packet_duration_slots(cfg.table.by_index(0), cfg.budget);

    SimResult result;
    result.slots = static_cast<std::uint64_t>(slots);
    result.duration_s = static_cast<double>(slots) * tr.slot_us * 1e-6;

    Rng arrival_rng(mix_seed(cfg.seed, 0x41525256ULL));
    Rng policy_rng(mix_seed(cfg.seed, fnv1a(policy_name(cfg.policy))));
    Instrumentation* instr = cfg.instrument ? &result.instr : nullptr;
    auto policy = make_policy(tr, cfg, &policy_rng, instr);

    const double p_arrival = std::min(1.0, cfg.lambda_per_mtxop / static_cast<double>(mtxop));
    // Beyond this slot a freshly granted transmission might not fit in the
    // trace. The cutoff covers the oracle's search horizon and is identical
    // for every policy, so end-of-trace stranding never skews a comparison.
    const std::int64_t consult_limit = slots - 2 - longest - cfg.resolved_horizon();

    struct ActiveTx {
        std::int64_t decision_slot, start, end, arrival;
        int mcs;
    };
    std::optional<ActiveTx> tx;
    std::deque<std::int64_t> buffer;

    for (std::int64_t t = 0; t < slots; ++t) {
        if (p_arrival > 0.0 && arrival_rng.uniform01() < p_arrival) {
            buffer.push_back(t);
            ++result.offered;
        }

        bool completed_now = false;
        if (tx && t >= tx->start) {
            if (t < tx->end) continue;
            // Transmission ends with this slot: score it against the real
            // trace (receiver side; the transmitter itself heard nothing).
            const phy::McsEntry& entry = cfg.table.by_index(tx->mcs);
            const std::span<const float> window(tr.rssi.data() + tx->start,
                                                static_cast<std::size_t>(tx->end - tx->start + 1));
            const phy::TxOutcome outcome = phy::transmission_outcome(window, entry, cfg.budget);

            TxEvent ev;
            ev.decision_slot = tx->decision_slot;
            ev.start_slot = tx->start;
            ev.end_slot = tx->end;
            ev.mcs_index = tx->mcs;
            ev.success = outcome.success;
            ev.avg_sinr_db = outcome.avg_sinr_db;
            ev.arrival_slot = tx->arrival;
            ++result.mcs_usage[static_cast<std::size_t>(tx->mcs)];
            if (outcome.success)
                ++result.delivered;
            else
                ++result.failed;
            policy->on_tx_complete(ev);
            if (cfg.keep_event_log) result.events.push_back(ev);
            tx.reset();
            completed_now = true;
        }

        const bool device_idle = !tx || t < tx->start;
        std::optional<float> rssi;
        if (device_idle && !completed_now) {
            rssi = tr.rssi[static_cast<std::size_t>(t)];
            policy->on_observe(t, *rssi);
            if (instr) instr->observed_slots.push_back(t);
        }

        if (!tx && !buffer.empty()) {
            if (t > consult_limit) {
                result.partial = true;
            } else {
                const Decision d = policy->decide(t, rssi);
                if (d.transmit) {
                    const int duration = phy::packet_duration_slots(cfg.table.by_index(d.mcs), cfg.budget);
                    ActiveTx active;
                    active.decision_slot = t;
                    active.start = d.start + 1;
                    active.end = d.start + duration;
                    active.arrival = buffer.front();
                    active.mcs = d.mcs;
                    if (active.end >= slots)
                        throw std::logic_error("run_simulation: policy scheduled past the trace end");
                    buffer.pop_front();
                    tx = active;
                }
            }
        }

        // Packet conservation, every slot.
        const std::uint64_t accounted =
            result.delivered + result.failed + buffer.size() + (tx ? 1u : 0u);
        if (accounted != result.offered)
            throw std::logic_error("run_simulation: packet conservation violated at slot " +
                                   std::to_string(t));
    }
    if (!buffer.empty() || tx) result.partial = true;

    result.throughput_bps = measure_throughput(result.events, cfg.measure_window_s, tr.slot_us,
                                               result.slots, cfg.budget.payload_bytes);
    result.mean_throughput_bps =
        result.duration_s > 0.0
            ? static_cast<double>(result.delivered_bits(cfg.budget.payload_bytes)) / result.duration_s
            : 0.0;
    return result;
}

RunStats multi_run(const trace::SlotTrace& tr, const SimConfig& cfg, int n_runs) {
    if (n_runs < 1) throw std::invalid_argument("multi_run: n_runs must be >= 1");
    RunStats stats;
    for (int r = 0; r < n_runs; ++r) {
        SimConfig run_cfg = cfg;
        run_cfg.seed = mix_seed(cfg.seed, 0x52554e00ULL + static_cast<std::uint64_t>(r));
        run_cfg.keep_event_log = true;  // needed for the series
        const SimResult res = run_simulation(tr, run_cfg);
        stats.run_means.push_back(res.mean_throughput_bps);
        if (stats.mean_series.empty()) stats.mean_series.assign(res.throughput_bps.size(), 0.0);
        for (std::size_t i = 0; i < res.throughput_bps.size(); ++i)
            stats.mean_series[i] += res.throughput_bps[i];
    }
    for (double& v : stats.mean_series) v /= n_runs;
    double sum = 0.0, sumsq = 0.0;
    for (double m : stats.run_means) {
        sum += m;
        sumsq += m * m;
    }
    const double n = static_cast<double>(n_runs);
    stats.mean_bps = sum / n;
    stats.std_bps = std::sqrt(std::max(0.0, sumsq / n - stats.mean_bps * stats.mean_bps));
    return stats;
}

std::vector<ComparisonRow> compare_policies(const trace::SlotTrace& tr,
                                            std::span<const PolicyKind> policies,
                                            const SimConfig& cfg, int n_runs) {
    std::vector<ComparisonRow> rows;
    for (PolicyKind kind : policies) {
        SimConfig policy_cfg = cfg;
        policy_cfg.policy = kind;
        rows.push_back({kind, multi_run(tr, policy_cfg, n_runs)});
    }
    return rows;
}

void apply_config_file(SimConfig& cfg, const std::string& path) {
    const KvFile kv = KvFile::parse_file(path);
    for (const auto& [key, value] : kv.values()) {
        if (key == "policy") cfg.policy = parse_policy(value);
        else if (key == "lambda") cfg.lambda_per_mtxop = kv.get_double(key, cfg.lambda_per_mtxop);
        else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(kv.get_int(key, 1));
        else if (key == "payload_bytes") cfg.budget.payload_bytes = static_cast<int>(kv.get_int(key, 1500));
        else if (key == "slot_us") cfg.budget.slot_us = kv.get_double(key, 9.0);
        else if (key == "p_r_dbm") cfg.budget.p_r_dbm = kv.get_double(key, -60.0);
        else if (key == "mtxop") cfg.mtxop_slots = static_cast<int>(kv.get_int(key, 0));
        else if (key == "measure_window_s") cfg.measure_window_s = kv.get_double(key, 2.0);
        else if (key == "cw_min") cfg.csma.cw_min = static_cast<int>(kv.get_int(key, 16));
        else if (key == "cw_max") cfg.csma.cw_max = static_cast<int>(kv.get_int(key, 1024));
        else if (key == "difs_slots") cfg.csma.difs_slots = static_cast<int>(kv.get_int(key, 4));
        else if (key == "busy_threshold_dbm")
            cfg.csma.busy_threshold_dbm = kv.get_double(key, -75.0);
        else if (key == "iwl_alpha") cfg.iwl.ewma_alpha = kv.get_double(key, 0.25);
        else if (key == "iwl_probe_interval")
            cfg.iwl.probe_interval = static_cast<int>(kv.get_int(key, 10));
        else if (key == "arf_up") cfg.arf_up_threshold = static_cast<int>(kv.get_int(key, 10));
        else if (key == "arf_down") cfg.arf_down_threshold = static_cast<int>(kv.get_int(key, 2));
        else if (key == "gopt_horizon") cfg.gopt_horizon_slots = static_cast<int>(kv.get_int(key, 0));
        else if (key == "sinr_floor_db") cfg.sinr_floor_db = kv.get_double(key, 0.0);
        else if (key == "mcs_table") cfg.table = phy::McsTable::load(value);
        else if (key == "instrument") cfg.instrument = kv.get_bool(key, false);
        else throw std::runtime_error(path + ": unknown config key '" + key + "'");
    }
}

}  // namespace dlmac::sim
