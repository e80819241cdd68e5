#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dlmac/phy.hpp"
#include "dlmac/trace.hpp"

namespace dlmac::dataset {

struct Normalization {
    double mean_dbm = 0.0;
    double std_dbm = 1.0;
    bool enabled = true;
};

// One supervised example: the 3*MTXOP-slot window ending at slot t, labeled
// with the MCS feasible over the following MTXOP slots (-1 = do not access).
struct Example {
    std::uint32_t trace_id = 0;
    std::int64_t t = 0;
    std::int8_t label = -1;
};

// Windows are views into the referenced traces rather than materialized
// copies; at stride 1 a materialized copy would be ~3*MTXOP times the trace.
// Datasets loaded from disk carry an explicit window buffer instead.
class Dataset {
  public:
    std::vector<std::shared_ptr<const trace::SlotTrace>> traces;
    std::vector<Example> examples;
    int mtxop_slots = 0;
    Normalization norm;

    // raw value statistics over all window cells, kept so fused datasets can
    // recompute joint normalization exactly
    double value_sum = 0.0;
    double value_sumsq = 0.0;
    std::uint64_t value_count = 0;

    std::size_t size() const { return examples.size(); }
    std::size_t window_len() const { return static_cast<std::size_t>(3 * mtxop_slots); }

    // Copies example i's raw dBm window (oldest slot first) into dst.
    void copy_window(std::size_t i, float* dst) const;

    void recompute_norm();

  private:
    friend Dataset load_dataset(const std::string&);
    std::vector<float> window_buf_;  // used by file-loaded datasets only
};

// Average the MTXOP slots after t, convert to SINR, and look the MCS up.
// Valid t satisfies t >= 3*mtxop - 1 and t + mtxop < trace length.
int label_at(const trace::SlotTrace& t, std::int64_t slot, const phy::LinkBudget& budget,
             const phy::McsTable& table, int mtxop_slots);

// One example per valid t, stepping by stride, with normalization statistics
// computed over the emitted windows.
Dataset build_dataset(std::shared_ptr<const trace::SlotTrace> t, const phy::LinkBudget& budget,
                      const phy::McsTable& table, int mtxop_slots, int stride = 1);

// Example-level concatenation with jointly recomputed normalization.
Dataset fuse(std::vector<Dataset> parts);

std::map<int, std::size_t> class_histogram(const Dataset& ds);

// Flat binary: header (magic, version, count, window length, normalization)
// then float32 windows + int8 labels per example.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
void export_csv(const Dataset& ds, const std::string& path);  // t,label debug dump

// Label -1 maps to class 0, MCS k to class k+1.
inline int label_to_class(int label) { return label + 1; }
inline int class_to_label(int cls) { return cls - 1; }

}  // namespace dlmac::dataset
