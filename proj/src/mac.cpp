#include "dlmac/mac.hpp"

#include <algorithm>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace dlmac::mac {

CsmaState make_csma(const CsmaParams& params, Rng& rng) {
    if (params.cw_min < 1 || params.cw_max < params.cw_min)
        throw std::invalid_argument("csma: need 1 <= cw_min <= cw_max");
    if (params.difs_slots < 1) throw std::invalid_argument("csma: difs_slots must be >= 1");
    CsmaState s;
    s.params = params;
    s.cw = params.cw_min;
    s.backoff = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(s.cw)));
    s.difs_remaining = params.difs_slots;
    s.phase = CsmaState::Phase::sensing;
    return s;
}

bool csma_step(CsmaState& state, double rssi_dbm) {
    const bool busy = rssi_dbm >= state.params.busy_threshold_dbm;
    if (state.phase == CsmaState::Phase::sensing) {
        if (busy) {
            state.difs_remaining = state.params.difs_slots;
        } else if (--state.difs_remaining == 0) {
            state.phase = CsmaState::Phase::backoff;
        }
        return false;
    }
    // backoff phase
    if (busy) {
        // Freeze the counter and wait for another idle DIFS.
        state.phase = CsmaState::Phase::sensing;
        state.difs_remaining = state.params.difs_slots;
        return false;
    }
    if (state.backoff == 0) return true;
    --state.backoff;
    return false;
}

void csma_on_result(CsmaState& state, bool success, Rng& rng) {
    if (success) {
        state.cw = state.params.cw_min;
    } else {
        state.cw = std::min(state.cw * 2, state.params.cw_max);
    }
    state.backoff = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(state.cw)));
    state.phase = CsmaState::Phase::sensing;
    state.difs_remaining = state.params.difs_slots;
}

void arf_update(ArfState& state, bool success, int max_mcs) {
    if (success) {
        state.consecutive_failures = 0;
        if (++state.consecutive_successes >= state.up_threshold) {
            state.current_mcs = std::min(state.current_mcs + 1, max_mcs);
            state.consecutive_successes = 0;
        }
    } else {
        state.consecutive_successes = 0;
        if (++state.consecutive_failures >= state.down_threshold) {
            state.current_mcs = std::max(state.current_mcs - 1, 0);
            state.consecutive_failures = 0;
        }
    }
}

IwlState make_iwl(const IwlParams& params, const phy::McsTable& table) {
    IwlState s;
    s.params = params;
    s.ewma.assign(static_cast<std::size_t>(table.max_index()) + 1, 1.0);  // optimistic start
    s.attempts.assign(s.ewma.size(), 0);
    return s;
}

namespace {
int iwl_best(const IwlState& state, const phy::McsTable& table) {
    int best = 0;
    double best_score = -1.0;
    for (std::size_t i = 0; i < state.ewma.size(); ++i) {
        const double score = state.ewma[i] * table.by_index(static_cast<int>(i)).rate_mbps;
        if (score >= best_score) {  // ties go to the higher rate
            best_score = score;
            best = static_cast<int>(i);
        }
    }
    return best;
}
}  // namespace

int iwl_select(IwlState& state, const phy::McsTable& table, Rng& rng) {
    const int best = iwl_best(state, table);
    if (++state.packets_since_probe >= state.params.probe_interval) {
        state.packets_since_probe = 0;
        // Probe a uniformly random non-best rate.
        const auto n = static_cast<std::uint64_t>(state.ewma.size() - 1);
        auto pick = static_cast<int>(rng.uniform_int(n));
        if (pick >= best) ++pick;
        return pick;
    }
    return best;
}

void iwl_update(IwlState& state, int mcs, bool success) {
    if (mcs < 0 || mcs >= static_cast<int>(state.ewma.size()))
        throw std::out_of_range("iwl_update: mcs out of range");
    auto& e = state.ewma[static_cast<std::size_t>(mcs)];
    e = (1.0 - state.params.ewma_alpha) * e + state.params.ewma_alpha * (success ? 1.0 : 0.0);
    ++state.attempts[static_cast<std::size_t>(mcs)];
}

void RssiQueue::snapshot(float* dst) const {
    const std::size_t tail = head_;  // oldest element once warm
    const std::size_t first_run = capacity_ - tail;
    std::memcpy(dst, buf_.data() + tail, first_run * sizeof(float));
    std::memcpy(dst + first_run, buf_.data(), tail * sizeof(float));
}

PolicyDecision dlmac_decide(DlMacState& state) {
    if (!state.model) throw std::invalid_argument("dlmac_decide: no model");
    if (!state.queue.warm()) throw std::logic_error("dlmac_decide: queue not warm yet");
    std::vector<float> window(state.queue.capacity());
    state.queue.snapshot(window.data());
    const int cls = nn::predict_class(*state.model, window);
    if (cls == 0) return PolicyDecision::idle();
    return PolicyDecision::tx(dataset::class_to_label(cls));
}

std::pair<double, double> handcraft_bounds(int mcs_used, bool success, const phy::LinkBudget& budget,
                                           const phy::McsTable& table, double sinr_floor_db) {
    if (mcs_used < 0 || mcs_used > table.max_index())
        throw std::out_of_range("handcraft_rssi: mcs must be in 0.." + std::to_string(table.max_index()));
    double lo, hi;
    if (success) {
        lo = phy::rssi_from_sinr(table.by_index(table.max_index()).sinr_min_db, budget);
        hi = phy::rssi_from_sinr(table.by_index(mcs_used).sinr_min_db, budget);
    } else {
        const double upper_sinr =
            mcs_used == 0 ? sinr_floor_db : table.by_index(mcs_used - 1).sinr_min_db;
        lo = phy::rssi_from_sinr(upper_sinr, budget);
        hi = phy::rssi_from_sinr(sinr_floor_db, budget);
    }
    return {lo, hi};
}

std::vector<float> handcraft_rssi(int mcs_used, bool success, const phy::LinkBudget& budget,
                                  const phy::McsTable& table, int n_slots, Rng& rng,
                                  double sinr_floor_db) {
    const auto [lo, hi] = handcraft_bounds(mcs_used, success, budget, table, sinr_floor_db);
    std::vector<float> out(static_cast<std::size_t>(n_slots));
    for (auto& v : out) v = static_cast<float>(rng.uniform(lo, hi));
    return out;
}

GoptDecision gopt_decide(const trace::SlotTrace& tr, std::int64_t t, const phy::LinkBudget& budget,
                         const phy::McsTable& table, int horizon_slots) {
    if (horizon_slots < 0) throw std::invalid_argument("gopt_decide: negative horizon");
    const auto len = static_cast<std::int64_t>(tr.size());
    const int top = table.max_index();
    const int shortest = phy::packet_duration_slots(table.by_index(top), budget);
    if (t < 0 || t + 1 + shortest > len)
        throw std::runtime_error("gopt_decide: not even the shortest packet fits after slot " +
                                 std::to_string(t));

    GoptDecision best;
    std::int64_t best_completion = std::numeric_limits<std::int64_t>::max();
    for (int mcs = 0; mcs <= top; ++mcs) {
        const phy::McsEntry& entry = table.by_index(mcs);
        const int d = phy::packet_duration_slots(entry, budget);
        const double max_avg_rssi = phy::rssi_from_sinr(entry.sinr_min_db, budget);
        if (t + 1 + d > len) continue;

        // Slide the candidate window, maintaining its running sum.
        double sum = 0.0;
        for (std::int64_t l = t + 1; l <= t + d; ++l) sum += tr.rssi[static_cast<std::size_t>(l)];
        for (std::int64_t s = t; s <= t + horizon_slots; ++s) {
            if (s > t) {
                if (s + d > len - 1) break;
                sum += tr.rssi[static_cast<std::size_t>(s + d)] - tr.rssi[static_cast<std::size_t>(s)];
            }
            const std::int64_t completion = s + d;
            if (completion > best_completion) break;  // later starts only finish later
            const double avg = sum / d;
            if (avg <= max_avg_rssi) {
                // Feasible. Better if it completes earlier; on equal
                // completion prefer the higher rate, then the earlier start.
                const bool better =
                    completion < best_completion ||
                    (completion == best_completion &&
                     (!best.transmit || mcs > best.mcs_index ||
                      (mcs == best.mcs_index && s < best.start_slot)));
                if (better) {
                    best = {true, s, mcs};
                    best_completion = completion;
                }
                break;  // later starts at this MCS cannot improve
            }
        }
    }
    return best;
}

}  // namespace dlmac::mac
