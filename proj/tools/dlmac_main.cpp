// dlmac - trace-driven MAC experiments: preprocess spectrum captures,
// synthesize test traces, build labeled datasets, train the policy network,
// and run closed-loop policy comparisons.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dlmac/dataset.hpp"
#include "dlmac/mac.hpp"
#include "dlmac/nn.hpp"
#include "dlmac/phy.hpp"
#include "dlmac/sim.hpp"
#include "dlmac/trace.hpp"

namespace fs = std::filesystem;
using namespace dlmac;

namespace {

struct SplitSpec {
    double train_s = 0.0;
    double eval_s = 0.0;
    bool set = false;
};

SplitSpec parse_split(const std::string& text) {
    SplitSpec s;
    const auto comma = text.find(',');
    if (comma == std::string::npos)
        throw CLI::ValidationError("--split", "expected <train_s>,<eval_s>");
    s.train_s = std::stod(text.substr(0, comma));
    s.eval_s = std::stod(text.substr(comma + 1));
    s.set = true;
    return s;
}

trace::Interferer parse_interferer(const std::string& text) {
    trace::Interferer itf;
    std::array<std::string, 4> parts;
    std::size_t start = 0, n = 0;
    for (; n < 4; ++n) {
        const auto colon = text.find(':', start);
        parts[n] = text.substr(start, colon == std::string::npos ? std::string::npos : colon - start);
        if (colon == std::string::npos) {
            ++n;
            break;
        }
        start = colon + 1;
    }
    if (n < 3) throw CLI::ValidationError("--interferer", "expected period:duty:power[:jitter]");
    itf.period_slots = std::stoi(parts[0]);
    itf.duty_cycle = std::stod(parts[1]);
    itf.power_dbm = std::stod(parts[2]);
    itf.jitter_slots = n >= 4 && !parts[3].empty() ? std::stoi(parts[3]) : 0;
    return itf;
}

int resolve_mtxop(int mtxop_flag, const phy::LinkBudget& budget, const phy::McsTable& table) {
    if (mtxop_flag > 0) return mtxop_flag;
    return phy::packet_duration_slots(table.by_index(0), budget);
}

std::string trace_stem(const std::string& path) { return fs::path(path).stem().string(); }

void write_series_csv(const std::string& path, std::span<const double> series, double window_s) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path);
    std::fputs("window,t_start_s,throughput_bps\n", f);
    for (std::size_t i = 0; i < series.size(); ++i)
        std::fprintf(f, "%zu,%.6f,%.6f\n", i, static_cast<double>(i) * window_s, series[i]);
    std::fclose(f);
}

void write_events_csv(const std::string& path, std::span<const sim::TxEvent> events) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path);
    std::fputs("decision_slot,start_slot,end_slot,mcs,success,avg_sinr_db,arrival_slot\n", f);
    for (const sim::TxEvent& ev : events)
        std::fprintf(f, "%lld,%lld,%lld,%d,%d,%.4f,%lld\n", static_cast<long long>(ev.decision_slot),
                     static_cast<long long>(ev.start_slot), static_cast<long long>(ev.end_slot),
                     ev.mcs_index, ev.success ? 1 : 0, ev.avg_sinr_db,
                     static_cast<long long>(ev.arrival_slot));
    std::fclose(f);
}

// Shared PHY/simulation flags.
struct CommonOpts {
    int payload = 1500;
    double slot_us = 9.0;
    double p_r_dbm = -60.0;
    int mtxop = 0;
    std::string mcs_table_path;

    void attach(CLI::App* cmd) {
        cmd->add_option("--payload", payload, "Payload size in bytes")->check(CLI::PositiveNumber);
        cmd->add_option("--slot-us", slot_us, "Mini-slot length in microseconds")
            ->check(CLI::PositiveNumber);
        cmd->add_option("--pr", p_r_dbm, "Receive power P_r in dBm");
        cmd->add_option("--mtxop", mtxop,
                        "MTXOP in mini-slots (default: airtime at the lowest MCS)");
        cmd->add_option("--mcs-table", mcs_table_path, "MCS table config file");
    }

    phy::LinkBudget budget() const { return {p_r_dbm, slot_us, payload}; }
    phy::McsTable table() const {
        return mcs_table_path.empty() ? phy::McsTable::defaults() : phy::McsTable::load(mcs_table_path);
    }
};

int cmd_preprocess(const std::string& raw_path, int channel, const std::string& out, double slot_us) {
    const trace::RawTrace raw = trace::load_raw_csv(raw_path);
    const std::vector<float> channel_seq = trace::aggregate_channel(raw, channel);
    trace::SlotTrace slot_trace =
        trace::interpolate_to_slots(channel_seq, raw.sample_interval_us, slot_us);
    slot_trace.channel_id = channel;
    slot_trace.origin = fs::path(raw_path).filename().string() + ":ch" + std::to_string(channel);
    trace::save_slot_trace(slot_trace, out);

    double lo = 0.0, hi = -300.0, sum = 0.0;
    for (float v : slot_trace.rssi) {
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
        sum += v;
    }
    std::printf("wrote %s: %zu slots (%.3f s at %.1f us), rssi min/mean/max = %.2f/%.2f/%.2f dBm\n",
                out.c_str(), slot_trace.size(), slot_trace.duration_s(), slot_us, lo,
                sum / static_cast<double>(slot_trace.size()), hi);
    return 0;
}

int cmd_synth(const trace::SyntheticScenario& scenario, const std::string& out) {
    const trace::SlotTrace t = trace::generate_synthetic(scenario);
    trace::save_slot_trace(t, out);
    std::printf("wrote %s: %zu slots (%.3f s), noise %.1f dBm, %zu interferer(s), seed %llu\n",
                out.c_str(), t.size(), t.duration_s(), scenario.noise_floor_dbm,
                scenario.interferers.size(), static_cast<unsigned long long>(scenario.seed));
    return 0;
}

int cmd_label(const std::string& trace_path, const std::string& out, const std::string& csv,
              const CommonOpts& common, int stride) {
    auto tr = std::make_shared<trace::SlotTrace>(trace::load_slot_trace(trace_path));
    const phy::LinkBudget budget = common.budget();
    const phy::McsTable table = common.table();
    const int mtxop = resolve_mtxop(common.mtxop, budget, table);
    const dataset::Dataset ds = dataset::build_dataset(tr, budget, table, mtxop, stride);
    dataset::save_dataset(ds, out);
    if (!csv.empty()) dataset::export_csv(ds, csv);

    std::printf("wrote %s: %zu examples, window %zu, norm mean/std = %.3f/%.3f dBm\n", out.c_str(),
                ds.size(), ds.window_len(), ds.norm.mean_dbm, ds.norm.std_dbm);
    std::printf("labels:");
    for (const auto& [label, count] : dataset::class_histogram(ds))
        std::printf(" %d:%zu", label, count);
    std::printf("\n");
    return 0;
}

int cmd_train(const std::vector<std::string>& trace_paths, const std::string& out,
              const std::string& history_path, const SplitSpec& split, const CommonOpts& common,
              int stride, int epochs, int batch, double lr, std::uint64_t seed, bool balance) {
    const phy::LinkBudget budget = common.budget();
    const phy::McsTable table = common.table();
    const int mtxop = resolve_mtxop(common.mtxop, budget, table);

    std::vector<dataset::Dataset> train_parts, val_parts;
    for (const std::string& path : trace_paths) {
        auto full = std::make_shared<trace::SlotTrace>(trace::load_slot_trace(path));
        auto [train_seg, eval_seg] = trace::split_train_eval(*full, split.train_s, split.eval_s);
        train_parts.push_back(dataset::build_dataset(
            std::make_shared<trace::SlotTrace>(std::move(train_seg)), budget, table, mtxop, stride));
        val_parts.push_back(dataset::build_dataset(
            std::make_shared<trace::SlotTrace>(std::move(eval_seg)), budget, table, mtxop, stride));
        std::printf("%s: %zu train / %zu val examples\n", path.c_str(), train_parts.back().size(),
                    val_parts.back().size());
    }
    dataset::Dataset train_ds = dataset::fuse(std::move(train_parts));
    dataset::Dataset val_ds = dataset::fuse(std::move(val_parts));
    if (trace_paths.size() > 1)
        std::printf("fused: %zu train / %zu val examples\n", train_ds.size(), val_ds.size());

    nn::ModelSpec spec;
    spec.input_dim = 3 * mtxop;
    nn::Network<float> net = nn::init_model<float>(spec, seed);

    nn::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.adam.lr = lr;
    cfg.seed = seed;
    cfg.verbose = true;
    if (balance) {
        const auto hist = dataset::class_histogram(train_ds);
        cfg.class_weights.assign(10, 1.0f);
        const double total = static_cast<double>(train_ds.size());
        for (const auto& [label, count] : hist)
            cfg.class_weights[static_cast<std::size_t>(dataset::label_to_class(label))] =
                static_cast<float>(total / (10.0 * static_cast<double>(count)));
    }

    const nn::TrainHistory history = nn::train(net, train_ds, val_ds, cfg);
    nn::PolicyModel model{std::move(net), train_ds.norm, mtxop};
    nn::save_model(model, out);
    if (!history_path.empty()) nn::write_history_csv(history, history_path);

    std::printf("wrote %s (input %d, MTXOP %d)\n", out.c_str(), spec.input_dim, mtxop);
    std::printf("best val accuracy: %.4f (epoch %d)\n", history.best_val_acc, history.best_epoch);
    return 0;
}

sim::SimConfig build_sim_config(const CommonOpts& common, const std::string& config_path,
                                double lambda, std::uint64_t seed, const std::string& model_path,
                                nn::PolicyModel& model_storage) {
    sim::SimConfig cfg;
    cfg.budget = common.budget();
    cfg.table = common.table();
    cfg.mtxop_slots = common.mtxop;
    if (!config_path.empty()) sim::apply_config_file(cfg, config_path);
    cfg.lambda_per_mtxop = lambda;
    cfg.seed = seed;
    if (!model_path.empty()) {
        model_storage = nn::load_model(model_path);
        cfg.model = &model_storage;
        if (cfg.mtxop_slots == 0) cfg.mtxop_slots = model_storage.mtxop_slots;
    }
    return cfg;
}

trace::SlotTrace eval_segment(const std::string& path, const SplitSpec& split) {
    trace::SlotTrace full = trace::load_slot_trace(path);
    if (!split.set) return full;
    auto [train_seg, eval_seg] = trace::split_train_eval(full, split.train_s, split.eval_s);
    (void)train_seg;
    return std::move(eval_seg);
}

int cmd_simulate(const std::string& trace_path, const std::string& policy, const CommonOpts& common,
                 const std::string& config_path, const std::string& model_path, double lambda,
                 std::uint64_t seed, const SplitSpec& split, const std::string& out,
                 const std::string& event_log) {
    const trace::SlotTrace tr = eval_segment(trace_path, split);
    nn::PolicyModel model_storage;
    sim::SimConfig cfg = build_sim_config(common, config_path, lambda, seed, model_path, model_storage);
    cfg.policy = sim::parse_policy(policy);
    cfg.instrument = false;

    const sim::SimResult res = sim::run_simulation(tr, cfg);
    std::printf("%s on %s: offered %llu, delivered %llu, failed %llu%s\n", policy.c_str(),
                trace_path.c_str(), static_cast<unsigned long long>(res.offered),
                static_cast<unsigned long long>(res.delivered),
                static_cast<unsigned long long>(res.failed), res.partial ? " (partial)" : "");
    std::printf("mean throughput: %.0f bit/s over %.3f s\n", res.mean_throughput_bps, res.duration_s);
    std::printf("mcs usage:");
    for (std::size_t i = 0; i < res.mcs_usage.size(); ++i)
        if (res.mcs_usage[i]) std::printf(" %zu:%llu", i, static_cast<unsigned long long>(res.mcs_usage[i]));
    std::printf("\n");
    if (!out.empty()) write_series_csv(out, res.throughput_bps, cfg.measure_window_s);
    if (!event_log.empty()) write_events_csv(event_log, res.events);
    return 0;
}

int cmd_compare(const std::vector<std::string>& trace_paths, const std::vector<std::string>& policies,
                const CommonOpts& common, const std::string& config_path, const std::string& model_path,
                double lambda, std::uint64_t seed, int runs, const SplitSpec& split,
                const std::string& out_dir) {
    if (!out_dir.empty()) fs::create_directories(out_dir);
    nn::PolicyModel model_storage;
    sim::SimConfig cfg = build_sim_config(common, config_path, lambda, seed, model_path, model_storage);

    std::vector<sim::PolicyKind> kinds;
    for (const std::string& p : policies) kinds.push_back(sim::parse_policy(p));

    std::FILE* summary = nullptr;
    if (!out_dir.empty()) {
        const std::string path = out_dir + "/summary.csv";
        summary = std::fopen(path.c_str(), "w");
        if (!summary) throw std::runtime_error("cannot write " + path);
        std::fputs("trace,policy,mean_bps,std_bps\n", summary);
    }

    for (const std::string& path : trace_paths) {
        const trace::SlotTrace tr = eval_segment(path, split);
        const auto rows = sim::compare_policies(tr, kinds, cfg, runs);
        std::printf("== %s (%zu slots, %.3f s, %d run%s) ==\n", path.c_str(), tr.size(),
                    tr.duration_s(), runs, runs == 1 ? "" : "s");
        for (const sim::ComparisonRow& row : rows) {
            std::printf("  %-10s mean %12.0f bit/s  std %10.0f\n", sim::policy_name(row.policy),
                        row.stats.mean_bps, row.stats.std_bps);
            if (summary)
                std::fprintf(summary, "%s,%s,%.6f,%.6f\n", trace_stem(path).c_str(),
                             sim::policy_name(row.policy), row.stats.mean_bps, row.stats.std_bps);
            if (!out_dir.empty())
                write_series_csv(out_dir + "/series_" + trace_stem(path) + "_" +
                                     sim::policy_name(row.policy) + ".csv",
                                 row.stats.mean_series, cfg.measure_window_s);
        }
    }
    if (summary) std::fclose(summary);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trace-driven Wi-Fi MAC simulator with a learned joint access/rate policy"};
    app.require_subcommand(1);

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Raw spectrum CSV -> per-channel mini-slot trace");
    std::string raw_path, out_path;
    int channel = 6;
    double slot_us = 9.0;
    pre->add_option("--raw", raw_path, "Raw RSSI CSV")->required()->check(CLI::ExistingFile);
    pre->add_option("--channel", channel, "Wi-Fi channel (1..13)")->required()->check(CLI::Range(1, 13));
    pre->add_option("--out", out_path, "Output trace (.csv or binary)")->required();
    pre->add_option("--slot-us", slot_us, "Mini-slot length")->check(CLI::PositiveNumber);

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic interference trace");
    trace::SyntheticScenario scenario;
    std::string synth_out;
    double duration_s = 0.0;
    std::uint64_t synth_slots = 0;
    std::vector<std::string> interferer_specs;
    synth->add_option("--out", synth_out, "Output trace path")->required();
    synth->add_option("--noise-floor", scenario.noise_floor_dbm, "Noise floor in dBm");
    synth->add_option("--duration-s", duration_s, "Trace length in seconds");
    synth->add_option("--slots", synth_slots, "Trace length in mini-slots");
    synth->add_option("--seed", scenario.seed, "Generator seed");
    synth->add_option("--slot-us", scenario.slot_us, "Mini-slot length")->check(CLI::PositiveNumber);
    synth->add_option("--interferer", interferer_specs,
                      "period_slots:duty:power_dbm[:jitter_slots] (repeatable)");

    // label
    auto* label = app.add_subcommand("label", "Build a labeled dataset from a slot trace");
    std::string label_trace, label_out, label_csv;
    int label_stride = 1;
    CommonOpts label_common;
    label->add_option("--trace", label_trace, "Slot trace")->required()->check(CLI::ExistingFile);
    label->add_option("--out", label_out, "Output dataset file")->required();
    label->add_option("--csv", label_csv, "Optional t,label CSV dump");
    label->add_option("--stride", label_stride, "Slot stride between examples")->check(CLI::PositiveNumber);
    label_common.attach(label);

    // train
    auto* train = app.add_subcommand("train", "Train the policy network");
    std::vector<std::string> train_traces;
    std::string model_out, history_out, split_text = "100,20";
    int stride = 1, epochs = 30, batch = 256;
    double lr = 1e-3;
    std::uint64_t train_seed = 1;
    bool balance = false;
    CommonOpts train_common;
    train->add_option("--trace", train_traces, "Slot trace(s); several fuse into one dataset")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--out", model_out, "Output model file")->required();
    train->add_option("--history", history_out, "Training history CSV");
    train->add_option("--split", split_text, "train_s,eval_s split (default 100,20)");
    train->add_option("--stride", stride, "Slot stride between examples")->check(CLI::PositiveNumber);
    train->add_option("--epochs", epochs, "Training epochs")->check(CLI::NonNegativeNumber);
    train->add_option("--batch", batch, "Mini-batch size")->check(CLI::Range(2, 1 << 20));
    train->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    train->add_option("--seed", train_seed, "Init/shuffle seed");
    train->add_flag("--balance", balance, "Inverse-frequency class weights");
    train_common.attach(train);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Run one policy over a trace");
    std::string sim_trace, sim_policy, sim_config, sim_model, sim_out, sim_events, sim_split_text;
    double sim_lambda = 0.18;
    std::uint64_t sim_seed = 1;
    CommonOpts sim_common;
    simulate->add_option("--trace", sim_trace, "Slot trace")->required()->check(CLI::ExistingFile);
    simulate->add_option("--policy", sim_policy, "Policy id")->required();
    simulate->add_option("--config", sim_config, "Key-value config file")->check(CLI::ExistingFile);
    simulate->add_option("--model", sim_model, "Trained model (DL policies)")->check(CLI::ExistingFile);
    simulate->add_option("--lambda", sim_lambda, "Packet arrivals per MTXOP");
    simulate->add_option("--seed", sim_seed, "Run seed");
    simulate->add_option("--split", sim_split_text, "Use the eval segment of train_s,eval_s");
    simulate->add_option("--out", sim_out, "Throughput series CSV");
    simulate->add_option("--event-log", sim_events, "Full event log CSV");
    sim_common.attach(simulate);

    // compare
    auto* compare = app.add_subcommand("compare", "Compare policies over eval traces");
    std::vector<std::string> cmp_traces, cmp_policies;
    std::string cmp_config, cmp_model, cmp_out, cmp_split_text;
    double cmp_lambda = 0.18;
    std::uint64_t cmp_seed = 1;
    int cmp_runs = 10;
    CommonOpts cmp_common;
    compare->add_option("--trace", cmp_traces, "Eval trace(s), e.g. one per channel")
        ->required()
        ->check(CLI::ExistingFile);
    compare->add_option("--policy", cmp_policies, "Policy ids (repeatable)")->required();
    compare->add_option("--config", cmp_config, "Key-value config file")->check(CLI::ExistingFile);
    compare->add_option("--model", cmp_model, "Trained model (DL policies)")->check(CLI::ExistingFile);
    compare->add_option("--lambda", cmp_lambda, "Packet arrivals per MTXOP");
    compare->add_option("--seed", cmp_seed, "Master seed; runs derive from it");
    compare->add_option("--runs", cmp_runs, "Independent runs per policy")->check(CLI::PositiveNumber);
    compare->add_option("--split", cmp_split_text, "Use the eval segment of train_s,eval_s");
    compare->add_option("--out", cmp_out, "Output directory for summary/series CSVs");
    cmp_common.attach(compare);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (pre->parsed()) return cmd_preprocess(raw_path, channel, out_path, slot_us);
        if (synth->parsed()) {
            for (const std::string& s : interferer_specs) scenario.interferers.push_back(parse_interferer(s));
            if (synth_slots == 0) {
                if (!(duration_s > 0.0)) throw std::runtime_error("synth: need --slots or --duration-s");
                synth_slots = static_cast<std::uint64_t>(std::floor(duration_s * 1e6 / scenario.slot_us));
            }
            scenario.duration_slots = synth_slots;
            return cmd_synth(scenario, synth_out);
        }
        if (label->parsed()) return cmd_label(label_trace, label_out, label_csv, label_common, label_stride);
        if (train->parsed())
            return cmd_train(train_traces, model_out, history_out, parse_split(split_text), train_common,
                             stride, epochs, batch, lr, train_seed, balance);
        if (simulate->parsed()) {
            SplitSpec split;
            if (!sim_split_text.empty()) split = parse_split(sim_split_text);
            return cmd_simulate(sim_trace, sim_policy, sim_common, sim_config, sim_model, sim_lambda,
                                sim_seed, split, sim_out, sim_events);
        }
        if (compare->parsed()) {
            SplitSpec split;
            if (!cmp_split_text.empty()) split = parse_split(cmp_split_text);
            return cmd_compare(cmp_traces, cmp_policies, cmp_common, cmp_config, cmp_model, cmp_lambda,
                               cmp_seed, cmp_runs, split, cmp_out);
        }
    } catch (const CLI::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
