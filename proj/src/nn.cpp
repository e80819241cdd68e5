#include "dlmac/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "dlmac/util.hpp"

namespace dlmac::nn {

std::vector<std::pair<int, int>> ModelSpec::layer_dims() const {
    std::vector<std::pair<int, int>> dims;
    dims.emplace_back(input_dim, stem_widths[0]);
    dims.emplace_back(stem_widths[0], stem_widths[1]);
    for (int b = 0; b < n_blocks; ++b) {
        dims.emplace_back(block_width, block_width);
        dims.emplace_back(block_width, block_width);
    }
    dims.emplace_back(block_width, tail_widths[0]);
    dims.emplace_back(tail_widths[0], tail_widths[1]);
    return dims;
}

namespace {

void validate_spec(const ModelSpec& spec) {
    if (spec.input_dim < 1 || spec.output_dim < 1) throw std::invalid_argument("model spec: bad dims");
    if (spec.n_blocks < 0) throw std::invalid_argument("model spec: negative block count");
    if (spec.stem_widths[1] != spec.block_width)
        throw std::invalid_argument("model spec: identity shortcut needs stem output == block width");
}

}  // namespace

template <typename T>
Gradients<T> Network<T>::make_gradients() const {
    Gradients<T> g;
    g.hidden.resize(hidden.size());
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        g.hidden[i].w = Mat<T>::Zero(hidden[i].w.rows(), hidden[i].w.cols());
        g.hidden[i].b = RowVec<T>::Zero(hidden[i].b.cols());
        g.hidden[i].gamma = RowVec<T>::Zero(hidden[i].gamma.cols());
        g.hidden[i].beta = RowVec<T>::Zero(hidden[i].beta.cols());
    }
    g.out_w = Mat<T>::Zero(out_w.rows(), out_w.cols());
    g.out_b = RowVec<T>::Zero(out_b.cols());
    return g;
}

template <typename T>
void Gradients<T>::set_zero() {
    for (auto& l : hidden) {
        l.w.setZero();
        l.b.setZero();
        l.gamma.setZero();
        l.beta.setZero();
    }
    out_w.setZero();
    out_b.setZero();
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : hidden)
        n += static_cast<std::size_t>(l.w.size() + l.b.size() + l.gamma.size() + l.beta.size());
    return n + static_cast<std::size_t>(out_w.size() + out_b.size());
}

template <typename T>
Network<T> init_model(const ModelSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    Network<T> net;
    net.spec = spec;
    Rng rng(seed);
    auto he_fill = [&](Mat<T>& w, int fan_in) {
        const double sd = std::sqrt(2.0 / fan_in);
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.data()[i] = static_cast<T>(rng.normal() * sd);
    };
    for (auto [fan_in, fan_out] : spec.layer_dims()) {
        DenseBnLayer<T> layer;
        layer.w.resize(fan_in, fan_out);
        he_fill(layer.w, fan_in);
        layer.b = RowVec<T>::Zero(fan_out);
        layer.gamma = RowVec<T>::Ones(fan_out);
        layer.beta = RowVec<T>::Zero(fan_out);
        layer.run_mean = RowVec<T>::Zero(fan_out);
        layer.run_var = RowVec<T>::Ones(fan_out);
        net.hidden.push_back(std::move(layer));
    }
    net.out_w.resize(spec.tail_widths[1], spec.output_dim);
    he_fill(net.out_w, spec.tail_widths[1]);
    net.out_b = RowVec<T>::Zero(spec.output_dim);
    return net;
}

template <typename T>
Mat<T> Network<T>::forward(const Mat<T>& x, Mode mode, ForwardCache<T>* cache, bool update_running) {
    if (x.cols() != spec.input_dim)
        throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                    " features, spec wants " + std::to_string(spec.input_dim));
    const auto batch = x.rows();
    if (batch < 1) throw std::invalid_argument("forward: empty batch");
    if (mode == Mode::train && batch < 2)
        throw std::invalid_argument("forward: train mode needs batch size >= 2 for batch statistics");

    if (cache) cache->layers.assign(hidden.size(), {});

    Mat<T> h = x;
    Mat<T> block_input;  // saved at each block entry for the shortcut
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        DenseBnLayer<T>& layer = hidden[i];
        if (is_block_first(static_cast<int>(i))) block_input = h;

        Mat<T> z = (h * layer.w).rowwise() + layer.b;

        RowVec<T> mean, inv_std;
        if (mode == Mode::train) {
            mean = z.colwise().mean();
            RowVec<T> var =
                ((z.rowwise() - mean).array().square().colwise().sum() / static_cast<T>(batch)).matrix();
            inv_std = (var.array() + bn_eps).rsqrt().matrix();
            if (update_running) {
                const T m = bn_momentum;
                const T unbias = static_cast<T>(batch) / static_cast<T>(batch - 1);
                layer.run_mean = (1 - m) * layer.run_mean + m * mean;
                layer.run_var = (1 - m) * layer.run_var + m * (var * unbias);
            }
        } else {
            mean = layer.run_mean;
            inv_std = (layer.run_var.array() + bn_eps).rsqrt().matrix();
        }
        Mat<T> xhat = ((z.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
        Mat<T> pre_act =
            ((xhat.array().rowwise() * layer.gamma.array()).rowwise() + layer.beta.array()).matrix();
        if (is_block_second(static_cast<int>(i))) pre_act += block_input;
        Mat<T> post = pre_act.cwiseMax(static_cast<T>(0));

        if (cache) {
            LayerCache<T>& lc = cache->layers[i];
            lc.input = h;
            lc.z = std::move(z);
            lc.xhat = std::move(xhat);
            lc.inv_std = inv_std;
            lc.pre_act = std::move(pre_act);
            lc.post = post;
        }
        h = std::move(post);
    }

    Mat<T> logits = (h * out_w).rowwise() + out_b;
    Mat<T> shifted = logits.colwise() - logits.rowwise().maxCoeff();
    Mat<T> expv = shifted.array().exp().matrix();
    Mat<T> probs = (expv.array().colwise() / expv.rowwise().sum().array()).matrix();
    if (cache) {
        cache->logits = std::move(logits);
        cache->probs = probs;
    }
    return probs;
}

namespace {

template <typename T>
Mat<T> log_softmax(const Mat<T>& logits) {
    Mat<T> shifted = logits.colwise() - logits.rowwise().maxCoeff();
    return (shifted.array().colwise() - shifted.array().exp().rowwise().sum().log()).matrix();
}

}  // namespace

template <typename T>
T loss_and_gradients(Network<T>& net, const Mat<T>& x, std::span<const int> classes,
                     std::span<const T> class_weights, Gradients<T>& out, bool update_running) {
    const auto batch = x.rows();
    if (static_cast<std::size_t>(batch) != classes.size())
        throw std::invalid_argument("loss_and_gradients: batch/label size mismatch");
    if (!class_weights.empty() && static_cast<int>(class_weights.size()) != net.spec.output_dim)
        throw std::invalid_argument("loss_and_gradients: class weight vector must match output_dim");
    for (int c : classes)
        if (c < 0 || c >= net.spec.output_dim)
            throw std::out_of_range("loss_and_gradients: class id " + std::to_string(c) + " out of range");

    ForwardCache<T> cache;
    net.forward(x, Mode::train, &cache, update_running);

    std::vector<T> w(static_cast<std::size_t>(batch), static_cast<T>(1));
    if (!class_weights.empty())
        for (Eigen::Index i = 0; i < batch; ++i) w[static_cast<std::size_t>(i)] = class_weights[classes[i]];
    T sum_w = std::accumulate(w.begin(), w.end(), static_cast<T>(0));

    if (out.hidden.empty()) out = net.make_gradients();
    out.set_zero();
    if (sum_w <= static_cast<T>(0)) return static_cast<T>(0);

    Mat<T> logp = log_softmax(cache.logits);
    T loss = 0;
    for (Eigen::Index i = 0; i < batch; ++i)
        loss -= w[static_cast<std::size_t>(i)] * logp(i, classes[i]);
    loss /= sum_w;

    Mat<T> dlogits = cache.probs;
    for (Eigen::Index i = 0; i < batch; ++i) {
        dlogits(i, classes[i]) -= static_cast<T>(1);
        dlogits.row(i) *= w[static_cast<std::size_t>(i)] / sum_w;
    }

    const Mat<T>& head_in = cache.layers.back().post;
    out.out_w = head_in.transpose() * dlogits;
    out.out_b = dlogits.colwise().sum();
    Mat<T> d_post = dlogits * net.out_w.transpose();

    Mat<T> shortcut_grad;
    for (int i = static_cast<int>(net.hidden.size()) - 1; i >= 0; --i) {
        const LayerCache<T>& lc = cache.layers[static_cast<std::size_t>(i)];
        DenseBnLayer<T>& layer = net.hidden[static_cast<std::size_t>(i)];
        auto& g = out.hidden[static_cast<std::size_t>(i)];

        Mat<T> d_pre =
            ((lc.pre_act.array() > static_cast<T>(0)).template cast<T>() * d_post.array()).matrix();
        if (net.is_block_second(i)) shortcut_grad = d_pre;  // identity path

        // Full batch-norm backward, differentiating through the batch
        // mean/variance.
        g.gamma = (d_pre.array() * lc.xhat.array()).colwise().sum().matrix();
        g.beta = d_pre.colwise().sum();
        Mat<T> d_xhat = (d_pre.array().rowwise() * layer.gamma.array()).matrix();
        const T n = static_cast<T>(batch);
        RowVec<T> sum_dxhat = d_xhat.colwise().sum();
        RowVec<T> sum_dxhat_xhat = (d_xhat.array() * lc.xhat.array()).colwise().sum().matrix();
        Mat<T> dz = n * d_xhat;
        dz.rowwise() -= sum_dxhat;
        dz.array() -= lc.xhat.array().rowwise() * sum_dxhat_xhat.array();
        dz = (dz.array().rowwise() * (lc.inv_std.array() / n)).matrix();

        g.w = lc.input.transpose() * dz;
        g.b = dz.colwise().sum();
        d_post = dz * layer.w.transpose();
        if (net.is_block_first(i)) d_post += shortcut_grad;
    }
    return loss;
}

template <typename T>
T compute_loss(Network<T>& net, const Mat<T>& x, std::span<const int> classes,
               std::span<const T> class_weights) {
    ForwardCache<T> cache;
    net.forward(x, Mode::train, &cache, /*update_running=*/false);
    std::vector<T> w(static_cast<std::size_t>(x.rows()), static_cast<T>(1));
    if (!class_weights.empty())
        for (Eigen::Index i = 0; i < x.rows(); ++i) w[static_cast<std::size_t>(i)] = class_weights[classes[i]];
    T sum_w = std::accumulate(w.begin(), w.end(), static_cast<T>(0));
    if (sum_w <= static_cast<T>(0)) return static_cast<T>(0);
    Mat<T> logp = log_softmax(cache.logits);
    T loss = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        loss -= w[static_cast<std::size_t>(i)] * logp(i, classes[i]);
    return loss / sum_w;
}

template <typename T>
AdamState<T> make_adam(const Network<T>& net, const AdamHyper& hyper) {
    AdamState<T> st;
    st.hyper = hyper;
    st.m = net.make_gradients();
    st.v = net.make_gradients();
    return st;
}

template <typename T>
void adam_step(Network<T>& net, const Gradients<T>& grads, AdamState<T>& state) {
    ++state.step;
    const T b1 = static_cast<T>(state.hyper.beta1);
    const T b2 = static_cast<T>(state.hyper.beta2);
    const T lr = static_cast<T>(state.hyper.lr);
    const T eps = static_cast<T>(state.hyper.eps);
    const T bc1 = 1 - std::pow(b1, static_cast<T>(state.step));
    const T bc2 = 1 - std::pow(b2, static_cast<T>(state.step));

    auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
        if (param.rows() != g.rows() || param.cols() != g.cols())
            throw std::invalid_argument("adam_step: gradient shape mismatch");
        m = b1 * m + (1 - b1) * g;
        v.array() = b2 * v.array() + (1 - b2) * g.array().square();
        param.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    };
    for (std::size_t i = 0; i < net.hidden.size(); ++i) {
        update(net.hidden[i].w, grads.hidden[i].w, state.m.hidden[i].w, state.v.hidden[i].w);
        update(net.hidden[i].b, grads.hidden[i].b, state.m.hidden[i].b, state.v.hidden[i].b);
        update(net.hidden[i].gamma, grads.hidden[i].gamma, state.m.hidden[i].gamma,
               state.v.hidden[i].gamma);
        update(net.hidden[i].beta, grads.hidden[i].beta, state.m.hidden[i].beta, state.v.hidden[i].beta);
    }
    update(net.out_w, grads.out_w, state.m.out_w, state.v.out_w);
    update(net.out_b, grads.out_b, state.m.out_b, state.v.out_b);
}

namespace {

void fill_batch(const dataset::Dataset& ds, const dataset::Normalization& norm,
                std::span<const std::size_t> idx, Mat<float>& x, std::vector<int>& classes) {
    const std::size_t w = ds.window_len();
    x.resize(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(w));
    classes.resize(idx.size());
    std::vector<float> window(w);
    const float mean = static_cast<float>(norm.mean_dbm);
    const float inv_sd = norm.enabled ? 1.0f / static_cast<float>(norm.std_dbm) : 1.0f;
    for (std::size_t r = 0; r < idx.size(); ++r) {
        ds.copy_window(idx[r], window.data());
        for (std::size_t c = 0; c < w; ++c)
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = (window[c] - mean) * inv_sd;
        classes[r] = dataset::label_to_class(ds.examples[idx[r]].label);
    }
}

struct Snapshot {
    std::vector<DenseBnLayer<float>> hidden;
    Mat<float> out_w;
    RowVec<float> out_b;
};

Snapshot take_snapshot(const Network<float>& net) { return {net.hidden, net.out_w, net.out_b}; }

void restore_snapshot(Network<float>& net, const Snapshot& snap) {
    net.hidden = snap.hidden;
    net.out_w = snap.out_w;
    net.out_b = snap.out_b;
}

}  // namespace

std::pair<double, double> evaluate(Network<float>& net, const dataset::Dataset& ds,
                                   const dataset::Normalization& norm, int batch_size) {
    if (ds.size() == 0) return {0.0, 0.0};
    double loss_sum = 0.0;
    std::size_t correct = 0;
    Mat<float> x;
    std::vector<int> classes;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(ds.size(), start + static_cast<std::size_t>(batch_size));
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        fill_batch(ds, norm, idx, x, classes);
        ForwardCache<float> cache;
        Mat<float> probs = net.forward(x, Mode::eval, &cache);
        Mat<float> logp = log_softmax(cache.logits);
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            loss_sum -= logp(i, classes[static_cast<std::size_t>(i)]);
            Eigen::Index arg = 0;
            probs.row(i).maxCoeff(&arg);  // first maximum = lowest class id
            if (static_cast<int>(arg) == classes[static_cast<std::size_t>(i)]) ++correct;
        }
    }
    return {loss_sum / static_cast<double>(ds.size()),
            static_cast<double>(correct) / static_cast<double>(ds.size())};
}

TrainHistory train(Network<float>& net, const dataset::Dataset& train_ds,
                   const dataset::Dataset& val_ds, const TrainConfig& cfg) {
    if (train_ds.size() == 0 || val_ds.size() == 0)
        throw std::invalid_argument("train: datasets must be non-empty");
    if (static_cast<int>(train_ds.window_len()) != net.spec.input_dim ||
        static_cast<int>(val_ds.window_len()) != net.spec.input_dim)
        throw std::invalid_argument("train: window length " + std::to_string(train_ds.window_len()) +
                                    " does not match model input " + std::to_string(net.spec.input_dim));

    TrainHistory history;
    if (cfg.epochs == 0) return history;

    AdamState<float> adam = make_adam<float>(net, cfg.adam);
    Gradients<float> grads = net.make_gradients();
    std::vector<std::size_t> order(train_ds.size());
    std::iota(order.begin(), order.end(), 0);

    Snapshot best = take_snapshot(net);
    Mat<float> x;
    std::vector<int> classes;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch) + 1));
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = shuffle_rng.uniform_int(i);
            std::swap(order[i - 1], order[j]);
        }

        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            if (end - start < 2) break;  // BN needs batch statistics
            fill_batch(train_ds, train_ds.norm, std::span(order).subspan(start, end - start), x, classes);
            const float loss = loss_and_gradients<float>(
                net, x, classes, std::span<const float>(cfg.class_weights), grads, /*update_running=*/true);
            adam_step(net, grads, adam);
            loss_sum += static_cast<double>(loss) * static_cast<double>(end - start);
            seen += end - start;
        }

        const auto [val_loss, val_acc] = evaluate(net, val_ds, train_ds.norm);
        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        stats.val_loss = val_loss;
        stats.val_acc = val_acc;
        history.epochs.push_back(stats);
        if (history.best_epoch < 0 || val_acc > history.best_val_acc) {
            history.best_epoch = epoch;
            history.best_val_acc = val_acc;
            best = take_snapshot(net);
        }
        if (cfg.verbose)
            std::fprintf(stderr, "epoch %d: train_loss=%.4f val_loss=%.4f val_acc=%.4f\n", epoch,
                         stats.train_loss, val_loss, val_acc);
    }
    restore_snapshot(net, best);
    return history;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {
constexpr char kModelMagic[8] = {'D', 'L', 'M', 'A', 'C', 'N', 'N', '1'};
constexpr std::uint32_t kModelVersion = 1;

void write_floats(std::ofstream& out, const float* data, std::size_t n) {
    out.write(reinterpret_cast<const char*>(data), static_cast<long>(n * sizeof(float)));
}

void read_floats(std::ifstream& in, float* data, std::size_t n) {
    in.read(reinterpret_cast<char*>(data), static_cast<long>(n * sizeof(float)));
}
}  // namespace

void save_model(const PolicyModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("model: cannot write " + path);
    out.write(kModelMagic, 8);
    auto put_i32 = [&](std::int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    auto put_f64 = [&](double v) { out.write(reinterpret_cast<const char*>(&v), 8); };
    put_i32(static_cast<std::int32_t>(kModelVersion));
    const ModelSpec& s = model.net.spec;
    put_i32(s.input_dim);
    put_i32(s.stem_widths[0]);
    put_i32(s.stem_widths[1]);
    put_i32(s.block_width);
    put_i32(s.n_blocks);
    put_i32(s.tail_widths[0]);
    put_i32(s.tail_widths[1]);
    put_i32(s.output_dim);
    put_i32(model.mtxop_slots);
    put_f64(model.norm.mean_dbm);
    put_f64(model.norm.std_dbm);
    put_i32(model.norm.enabled ? 1 : 0);
    put_f64(static_cast<double>(model.net.bn_eps));
    put_f64(static_cast<double>(model.net.bn_momentum));
    for (const auto& l : model.net.hidden) {
        write_floats(out, l.w.data(), static_cast<std::size_t>(l.w.size()));
        write_floats(out, l.b.data(), static_cast<std::size_t>(l.b.size()));
        write_floats(out, l.gamma.data(), static_cast<std::size_t>(l.gamma.size()));
        write_floats(out, l.beta.data(), static_cast<std::size_t>(l.beta.size()));
        write_floats(out, l.run_mean.data(), static_cast<std::size_t>(l.run_mean.size()));
        write_floats(out, l.run_var.data(), static_cast<std::size_t>(l.run_var.size()));
    }
    write_floats(out, model.net.out_w.data(), static_cast<std::size_t>(model.net.out_w.size()));
    write_floats(out, model.net.out_b.data(), static_cast<std::size_t>(model.net.out_b.size()));
    if (!out) throw std::runtime_error("model: write failed for " + path);
}

PolicyModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("model: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kModelMagic, 8) != 0)
        throw std::runtime_error("model: " + path + ": bad magic");
    auto get_i32 = [&] {
        std::int32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_f64 = [&] {
        double v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    if (get_i32() != static_cast<std::int32_t>(kModelVersion))
        throw std::runtime_error("model: " + path + ": unsupported version");

    ModelSpec spec;
    spec.input_dim = get_i32();
    spec.stem_widths[0] = get_i32();
    spec.stem_widths[1] = get_i32();
    spec.block_width = get_i32();
    spec.n_blocks = get_i32();
    spec.tail_widths[0] = get_i32();
    spec.tail_widths[1] = get_i32();
    spec.output_dim = get_i32();

    PolicyModel model;
    model.mtxop_slots = get_i32();
    model.norm.mean_dbm = get_f64();
    model.norm.std_dbm = get_f64();
    model.norm.enabled = get_i32() != 0;
    model.net = init_model<float>(spec, 0);
    model.net.bn_eps = static_cast<float>(get_f64());
    model.net.bn_momentum = static_cast<float>(get_f64());
    for (auto& l : model.net.hidden) {
        read_floats(in, l.w.data(), static_cast<std::size_t>(l.w.size()));
        read_floats(in, l.b.data(), static_cast<std::size_t>(l.b.size()));
        read_floats(in, l.gamma.data(), static_cast<std::size_t>(l.gamma.size()));
        read_floats(in, l.beta.data(), static_cast<std::size_t>(l.beta.size()));
        read_floats(in, l.run_mean.data(), static_cast<std::size_t>(l.run_mean.size()));
        read_floats(in, l.run_var.data(), static_cast<std::size_t>(l.run_var.size()));
    }
    read_floats(in, model.net.out_w.data(), static_cast<std::size_t>(model.net.out_w.size()));
    read_floats(in, model.net.out_b.data(), static_cast<std::size_t>(model.net.out_b.size()));
    if (!in) throw std::runtime_error("model: " + path + ": truncated file");
    in.peek();
    if (!in.eof()) throw std::runtime_error("model: " + path + ": trailing bytes");
    return model;
}

std::array<float, 10> predict(PolicyModel& model, std::span<const float> window_dbm) {
    if (static_cast<int>(window_dbm.size()) != model.net.spec.input_dim)
        throw std::invalid_argument("predict: window has " + std::to_string(window_dbm.size()) +
                                    " slots, model wants " + std::to_string(model.net.spec.input_dim));
    if (model.net.spec.output_dim != 10)
        throw std::invalid_argument("predict: model is not a 10-class policy head");
    Mat<float> x(1, model.net.spec.input_dim);
    const float mean = static_cast<float>(model.norm.mean_dbm);
    const float inv_sd = model.norm.enabled ? 1.0f / static_cast<float>(model.norm.std_dbm) : 1.0f;
    for (std::size_t i = 0; i < window_dbm.size(); ++i)
        x(0, static_cast<Eigen::Index>(i)) = (window_dbm[i] - mean) * inv_sd;
    Mat<float> probs = model.net.forward(x, Mode::eval);
    std::array<float, 10> out{};
    for (int i = 0; i < 10; ++i) out[static_cast<std::size_t>(i)] = probs(0, i);
    return out;
}

int predict_class(PolicyModel& model, std::span<const float> window_dbm) {
    const auto probs = predict(model, window_dbm);
    int best = 0;
    for (int i = 1; i < 10; ++i)
        if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
    return best;
}

Inference::Inference(const PolicyModel& model) : model_(&model) {
    const auto& net = model.net;
    for (const auto& layer : net.hidden) {
        // Eval-mode BN is affine per feature: fold gamma/rsqrt(var+eps) and
        // the mean/bias into one scale/shift pair applied after the GEMV.
        RowVec<float> inv_std = (layer.run_var.array() + net.bn_eps).rsqrt().matrix();
        RowVec<float> scale = (layer.gamma.array() * inv_std.array()).matrix();
        RowVec<float> shift =
            (layer.beta.array() - (layer.run_mean - layer.b).array() * scale.array()).matrix();
        scale_.push_back(std::move(scale));
        shift_.push_back(std::move(shift));
        act_.emplace_back(layer.w.cols());
    }
    input_.resize(net.spec.input_dim);
    logits_.resize(net.spec.output_dim);
}

std::span<const float> Inference::logits(std::span<const float> window_dbm) {
    const auto& net = model_->net;
    if (static_cast<int>(window_dbm.size()) != net.spec.input_dim)
        throw std::invalid_argument("inference: window has " + std::to_string(window_dbm.size()) +
                                    " slots, model wants " + std::to_string(net.spec.input_dim));
    const float mean = static_cast<float>(model_->norm.mean_dbm);
    const float inv_sd = model_->norm.enabled ? 1.0f / static_cast<float>(model_->norm.std_dbm) : 1.0f;
    for (std::size_t i = 0; i < window_dbm.size(); ++i)
        input_(static_cast<Eigen::Index>(i)) = (window_dbm[i] - mean) * inv_sd;

    const RowVec<float>* h = &input_;
    const RowVec<float>* block_in = nullptr;
    for (std::size_t i = 0; i < net.hidden.size(); ++i) {
        if (net.is_block_first(static_cast<int>(i))) block_in = h;
        RowVec<float>& out = act_[i];
        out.noalias() = *h * net.hidden[i].w;  // bias folded into shift_
        out.array() = out.array() * scale_[i].array() + shift_[i].array();
        if (net.is_block_second(static_cast<int>(i))) out += *block_in;
        out.array() = out.array().max(0.0f);
        h = &out;
    }
    logits_.noalias() = *h * net.out_w;
    logits_ += net.out_b;
    return {logits_.data(), static_cast<std::size_t>(logits_.size())};
}

int Inference::predict_class(std::span<const float> window_dbm) {
    const auto l = logits(window_dbm);
    int best = 0;
    for (int i = 1; i < static_cast<int>(l.size()); ++i)
        if (l[static_cast<std::size_t>(i)] > l[static_cast<std::size_t>(best)]) best = i;
    return best;
}

const Mat<float>& Inference::logits_batch(const Mat<float>& windows_dbm) {
    const auto& net = model_->net;
    if (windows_dbm.cols() != net.spec.input_dim)
        throw std::invalid_argument("inference: batch window length mismatch");
    const float mean = static_cast<float>(model_->norm.mean_dbm);
    const float inv_sd = model_->norm.enabled ? 1.0f / static_cast<float>(model_->norm.std_dbm) : 1.0f;
    bin_ = (windows_dbm.array() - mean) * inv_sd;

    if (bact_.empty()) bact_.resize(net.hidden.size());
    const Mat<float>* h = &bin_;
    const Mat<float>* block_in = nullptr;
    for (std::size_t i = 0; i < net.hidden.size(); ++i) {
        if (net.is_block_first(static_cast<int>(i))) block_in = h;
        Mat<float>& out = bact_[i];
        out.noalias() = *h * net.hidden[i].w;
        out.array() = (out.array().rowwise() * scale_[i].array()).rowwise() + shift_[i].array();
        if (net.is_block_second(static_cast<int>(i))) out += *block_in;
        out = out.cwiseMax(0.0f);
        h = &out;
    }
    blogits_.noalias() = *h * net.out_w;
    blogits_.rowwise() += net.out_b;
    return blogits_;
}

void write_history_csv(const TrainHistory& history, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("history: cannot write " + path);
    std::fputs("epoch,train_loss,val_loss,val_acc\n", f);
    for (const EpochStats& e : history.epochs)
        std::fprintf(f, "%d,%.6f,%.6f,%.6f\n", e.epoch, e.train_loss, e.val_loss, e.val_acc);
    std::fclose(f);
}

// Explicit instantiations: float for training/inference, double for the
// finite-difference gradient checks.
template class Network<float>;
template class Network<double>;
template struct Gradients<float>;
template struct Gradients<double>;
template Network<float> init_model<float>(const ModelSpec&, std::uint64_t);
template Network<double> init_model<double>(const ModelSpec&, std::uint64_t);
template float loss_and_gradients<float>(Network<float>&, const Mat<float>&, std::span<const int>,
                                         std::span<const float>, Gradients<float>&, bool);
template double loss_and_gradients<double>(Network<double>&, const Mat<double>&, std::span<const int>,
                                           std::span<const double>, Gradients<double>&, bool);
template float compute_loss<float>(Network<float>&, const Mat<float>&, std::span<const int>,
                                   std::span<const float>);
template double compute_loss<double>(Network<double>&, const Mat<double>&, std::span<const int>,
                                     std::span<const double>);
template AdamState<float> make_adam<float>(const Network<float>&, const AdamHyper&);
template AdamState<double> make_adam<double>(const Network<double>&, const AdamHyper&);
template void adam_step<float>(Network<float>&, const Gradients<float>&, AdamState<float>&);
template void adam_step<double>(Network<double>&, const Gradients<double>&, AdamState<double>&);

}  // namespace dlmac::nn
