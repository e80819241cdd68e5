#include "dlmac/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dlmac::dataset {

namespace {
constexpr char kDatasetMagic[8] = {'D', 'L', 'M', 'A', 'C', 'D', 'S', '1'};
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

void Dataset::copy_window(std::size_t i, float* dst) const {
    const Example& ex = examples[i];
    const std::size_t w = window_len();
    if (!window_buf_.empty()) {
        std::memcpy(dst, window_buf_.data() + i * w, w * sizeof(float));
        return;
    }
    const trace::SlotTrace& tr = *traces[ex.trace_id];
    const std::int64_t first = ex.t - static_cast<std::int64_t>(w) + 1;
    std::memcpy(dst, tr.rssi.data() + first, w * sizeof(float));
}

void Dataset::recompute_norm() {
    if (value_count == 0) {
        norm = Normalization{0.0, 1.0, false};
        return;
    }
    const double n = static_cast<double>(value_count);
    const double mean = value_sum / n;
    const double var = std::max(0.0, value_sumsq / n - mean * mean);
    const double sd = std::sqrt(var);
    if (sd > 0.0) {
        norm = Normalization{mean, sd, true};
    } else {
        norm = Normalization{mean, 1.0, false};  // constant data, leave values centered only
    }
}

int label_at(const trace::SlotTrace& t, std::int64_t slot, const phy::LinkBudget& budget,
             const phy::McsTable& table, int mtxop_slots) {
    if (mtxop_slots < 1) throw std::invalid_argument("label_at: mtxop_slots must be >= 1");
    const std::int64_t len = static_cast<std::int64_t>(t.size());
    if (slot < 3 * static_cast<std::int64_t>(mtxop_slots) - 1 || slot + mtxop_slots >= len)
        throw std::out_of_range("label_at: slot " + std::to_string(slot) +
                                " leaves no room for the window or the future MTXOP");
    double sum = 0.0;
    for (std::int64_t l = 1; l <= mtxop_slots; ++l) sum += t.rssi[static_cast<std::size_t>(slot + l)];
    const double avg_rssi = sum / static_cast<double>(mtxop_slots);
    return phy::mcs_for_sinr(phy::sinr_from_rssi(avg_rssi, budget), table).index;
}

Dataset build_dataset(std::shared_ptr<const trace::SlotTrace> t, const phy::LinkBudget& budget,
                      const phy::McsTable& table, int mtxop_slots, int stride) {
    if (!t) throw std::invalid_argument("build_dataset: null trace");
    if (stride < 1) throw std::invalid_argument("build_dataset: stride must be >= 1");
    const std::int64_t len = static_cast<std::int64_t>(t->size());
    const std::int64_t first_t = 3 * static_cast<std::int64_t>(mtxop_slots) - 1;
    const std::int64_t last_t = len - mtxop_slots - 1;
    if (last_t < first_t)
        throw std::runtime_error("build_dataset: trace has " + std::to_string(len) +
                                 " slots, need at least " + std::to_string(4 * mtxop_slots));

    Dataset ds;
    ds.mtxop_slots = mtxop_slots;
    ds.traces.push_back(t);
    ds.examples.reserve(static_cast<std::size_t>((last_t - first_t) / stride + 1));
    for (std::int64_t s = first_t; s <= last_t; s += stride) {
        Example ex;
        ex.trace_id = 0;
        ex.t = s;
        ex.label = static_cast<std::int8_t>(label_at(*t, s, budget, table, mtxop_slots));
        ds.examples.push_back(ex);
    }

    // Window statistics via prefix sums over the trace; each slot contributes
    // once per window covering it.
    const std::size_t w = ds.window_len();
    std::vector<double> prefix(t->size() + 1, 0.0), prefix_sq(t->size() + 1, 0.0);
    for (std::size_t i = 0; i < t->size(); ++i) {
        const double v = t->rssi[i];
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    for (const Example& ex : ds.examples) {
        const std::size_t hi = static_cast<std::size_t>(ex.t) + 1;
        const std::size_t lo = hi - w;
        ds.value_sum += prefix[hi] - prefix[lo];
        ds.value_sumsq += prefix_sq[hi] - prefix_sq[lo];
        ds.value_count += w;
    }
    ds.recompute_norm();
    return ds;
}

Dataset fuse(std::vector<Dataset> parts) {
    if (parts.empty()) throw std::invalid_argument("fuse: nothing to fuse");
    Dataset out = std::move(parts.front());
    for (std::size_t p = 1; p < parts.size(); ++p) {
        Dataset& d = parts[p];
        if (d.mtxop_slots != out.mtxop_slots)
            throw std::invalid_argument("fuse: datasets disagree on MTXOP (" +
                                        std::to_string(d.mtxop_slots) + " vs " +
                                        std::to_string(out.mtxop_slots) + ")");
        const auto base = static_cast<std::uint32_t>(out.traces.size());
        for (auto& tr : d.traces) out.traces.push_back(std::move(tr));
        for (Example ex : d.examples) {
            ex.trace_id += base;
            out.examples.push_back(ex);
        }
        out.value_sum += d.value_sum;
        out.value_sumsq += d.value_sumsq;
        out.value_count += d.value_count;
    }
    out.recompute_norm();
    return out;
}

std::map<int, std::size_t> class_histogram(const Dataset& ds) {
    std::map<int, std::size_t> counts;
    for (const Example& ex : ds.examples) ++counts[ex.label];
    return counts;
}

void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("dataset: cannot write " + path);
    out.write(kDatasetMagic, 8);
    auto put_u32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_u64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    auto put_f64 = [&](double v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put_u32(kDatasetVersion);
    put_u64(ds.size());
    put_u32(static_cast<std::uint32_t>(ds.window_len()));
    put_u32(static_cast<std::uint32_t>(ds.mtxop_slots));
    put_f64(ds.norm.mean_dbm);
    put_f64(ds.norm.std_dbm);
    put_u32(ds.norm.enabled ? 1 : 0);

    std::vector<float> window(ds.window_len());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        ds.copy_window(i, window.data());
        out.write(reinterpret_cast<const char*>(window.data()),
                  static_cast<long>(window.size() * sizeof(float)));
        out.write(reinterpret_cast<const char*>(&ds.examples[i].label), 1);
    }
    if (!out) throw std::runtime_error("dataset: write failed for " + path);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("dataset: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kDatasetMagic, 8) != 0)
        throw std::runtime_error("dataset: " + path + ": bad magic");
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
    auto get_f64 = [&] {
        double v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    if (get_u32() != kDatasetVersion) throw std::runtime_error("dataset: " + path + ": unsupported version");
    const std::uint64_t count = get_u64();
    const std::uint32_t window_len = get_u32();
    const std::uint32_t mtxop = get_u32();
    if (window_len != 3 * mtxop) throw std::runtime_error("dataset: " + path + ": window/MTXOP mismatch");

    Dataset ds;
    ds.mtxop_slots = static_cast<int>(mtxop);
    ds.norm.mean_dbm = get_f64();
    ds.norm.std_dbm = get_f64();
    ds.norm.enabled = get_u32() != 0;
    ds.examples.resize(count);
    ds.window_buf_.resize(count * window_len);
    for (std::uint64_t i = 0; i < count; ++i) {
        in.read(reinterpret_cast<char*>(ds.window_buf_.data() + i * window_len),
                static_cast<long>(window_len * sizeof(float)));
        in.read(reinterpret_cast<char*>(&ds.examples[i].label), 1);
        ds.examples[i].t = static_cast<std::int64_t>(i);
    }
    if (!in) throw std::runtime_error("dataset: " + path + ": truncated file");
    return ds;
}

void export_csv(const Dataset& ds, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("dataset: cannot write " + path);
    std::fputs("t,label\n", f);
    for (const Example& ex : ds.examples)
        std::fprintf(f, "%lld,%d\n", static_cast<long long>(ex.t), static_cast<int>(ex.label));
    std::fclose(f);
}

}  // namespace dlmac::dataset
