#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

#include "dlmac/nn.hpp"
#include "dlmac/util.hpp"

using namespace dlmac;

namespace {

// Reduced geometry (input 36, widths / 8) keeps perturbation sweeps fast.
nn::ModelSpec reduced_spec() {
    nn::ModelSpec spec;
    spec.input_dim = 36;
    spec.stem_widths = {64, 32};
    spec.block_width = 32;
    spec.n_blocks = 2;
    spec.tail_widths = {16, 8};
    spec.output_dim = 10;
    return spec;
}

template <typename T>
nn::Mat<T> random_batch(int rows, int cols, std::uint64_t seed) {
    nn::Mat<T> x(rows, cols);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<T>(rng.normal());
    return x;
}

// Two constant-window regimes, linearly separable by construction.
std::pair<dataset::Dataset, dataset::Dataset> separable_fixture(int mtxop, std::size_t per_class) {
    const phy::McsTable table = phy::McsTable::defaults();
    const phy::LinkBudget budget;
    const std::size_t len = static_cast<std::size_t>(4 * mtxop) + per_class;
    auto lo = std::make_shared<trace::SlotTrace>();
    lo->rssi.assign(len, -82.0f);  // SINR 22 -> MCS 5
    auto hi = std::make_shared<trace::SlotTrace>();
    hi->rssi.assign(len, -95.0f);  // SINR 35 -> MCS 8
    dataset::Dataset train = dataset::fuse({dataset::build_dataset(lo, budget, table, mtxop, 1),
                                            dataset::build_dataset(hi, budget, table, mtxop, 1)});
    dataset::Dataset val = train;
    return {std::move(train), std::move(val)};
}

}  // namespace

TEST_CASE("init_model: shapes and determinism") {
    nn::ModelSpec spec;  // the full 360-input architecture
    const auto a = nn::init_model<float>(spec, 7);
    const auto b = nn::init_model<float>(spec, 7);
    const auto c = nn::init_model<float>(spec, 8);

    REQUIRE(a.hidden.size() == 8);
    CHECK(a.hidden[0].w.rows() == 360);
    CHECK(a.hidden[0].w.cols() == 512);
    CHECK(a.hidden[1].w.rows() == 512);
    CHECK(a.hidden[1].w.cols() == 256);
    for (int i = 2; i < 6; ++i) {
        CHECK(a.hidden[static_cast<std::size_t>(i)].w.rows() == 256);
        CHECK(a.hidden[static_cast<std::size_t>(i)].w.cols() == 256);
    }
    CHECK(a.out_w.rows() == 64);
    CHECK(a.out_w.cols() == 10);

    CHECK(a.hidden[0].w == b.hidden[0].w);
    CHECK(a.out_w == b.out_w);
    CHECK(a.hidden[0].w != c.hidden[0].w);
}

TEST_CASE("forward: softmax rows are distributions") {
    auto net = nn::init_model<float>(reduced_spec(), 3);
    SUBCASE("random inputs") {
        const auto x = random_batch<float>(9, 36, 11);
        const auto probs = net.forward(x, nn::Mode::train);
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            CHECK(probs.row(i).minCoeff() >= 0.0f);
            CHECK(std::abs(probs.row(i).sum() - 1.0f) < 1e-6f);
        }
    }
    SUBCASE("all-zero input in eval mode") {
        nn::Mat<float> x = nn::Mat<float>::Zero(1, 36);
        const auto probs = net.forward(x, nn::Mode::eval);
        CHECK(probs.rows() == 1);
        CHECK(probs.cols() == 10);
        CHECK(std::abs(probs.sum() - 1.0f) < 1e-6f);
    }
    SUBCASE("eval mode is deterministic") {
        const auto x = random_batch<float>(4, 36, 12);
        const auto p1 = net.forward(x, nn::Mode::eval);
        const auto p2 = net.forward(x, nn::Mode::eval);
        CHECK(p1 == p2);
    }
    SUBCASE("train mode rejects batches of one") {
        nn::Mat<float> x = nn::Mat<float>::Zero(1, 36);
        CHECK_THROWS_AS(net.forward(x, nn::Mode::train), std::invalid_argument);
    }
    SUBCASE("shape mismatch rejected") {
        nn::Mat<float> x = nn::Mat<float>::Zero(2, 35);
        CHECK_THROWS_AS(net.forward(x, nn::Mode::train), std::invalid_argument);
    }
}

TEST_CASE("identity shortcut: zeroed block computes the activated input") {
    auto net = nn::init_model<float>(reduced_spec(), 5);
    // Zero the first block's linear weights (layers 2 and 3).
    for (int i : {2, 3}) {
        net.hidden[static_cast<std::size_t>(i)].w.setZero();
        net.hidden[static_cast<std::size_t>(i)].b.setZero();
    }
    const auto x = random_batch<float>(3, 36, 6);
    nn::ForwardCache<float> cache;
    net.forward(x, nn::Mode::eval, &cache);
    const auto& block_in = cache.layers[2].input;
    const auto& block_out = cache.layers[3].post;
    const nn::Mat<float> expected = block_in.cwiseMax(0.0f);
    CHECK(((block_out - expected).array().abs().maxCoeff()) < 1e-6f);
}

TEST_CASE("cross-entropy of a uniform output is ln(10)") {
    auto net = nn::init_model<float>(reduced_spec(), 4);
    net.out_w.setZero();
    net.out_b.setZero();  // logits all zero -> uniform softmax
    const auto x = random_batch<float>(4, 36, 21);
    const std::vector<int> classes{0, 3, 7, 9};
    auto grads = net.make_gradients();
    const float loss = nn::loss_and_gradients<float>(net, x, classes, {}, grads);
    CHECK(loss == doctest::Approx(std::log(10.0)).epsilon(1e-5));
}

TEST_CASE("zero class weight removes an example from the loss") {
    auto net = nn::init_model<float>(reduced_spec(), 4);
    const auto x = random_batch<float>(2, 36, 22);
    const std::vector<int> classes{0, 4};
    std::vector<float> weights(10, 1.0f);
    weights[0] = 0.0f;

    auto grads = net.make_gradients();
    const float loss = nn::loss_and_gradients<float>(net, x, classes, weights, grads);
    // Recompute the second example's NLL from the same train-mode forward.
    nn::ForwardCache<float> cache;
    net.forward(x, nn::Mode::train, &cache, false);
    const float expected = -std::log(cache.probs(1, 4));
    CHECK(loss == doctest::Approx(expected).epsilon(1e-4));
}

TEST_CASE("analytic gradients match central finite differences") {
    auto net = nn::init_model<double>(reduced_spec(), 17);
    // A soft BN epsilon keeps the check well conditioned: with the default
    // 1e-5 and a 2-example batch, the eps-suppressed gradients sit below the
    // finite-difference noise floor.
    net.bn_eps = 1e-2;
    const auto x = random_batch<double>(2, 36, 23);
    const std::vector<int> classes{3, 8};

    auto grads = net.make_gradients();
    nn::loss_and_gradients<double>(net, x, classes, {}, grads);

    // Flatten parameter/gradient pairs in the shared order.
    std::vector<double*> params;
    std::vector<double> analytic;
    auto collect = [&](auto& tensor, const auto& gtensor) {
        for (Eigen::Index i = 0; i < tensor.size(); ++i) {
            params.push_back(tensor.data() + i);
            analytic.push_back(gtensor.data()[i]);
        }
    };
    for (std::size_t i = 0; i < net.hidden.size(); ++i) {
        collect(net.hidden[i].w, grads.hidden[i].w);
        collect(net.hidden[i].b, grads.hidden[i].b);
        collect(net.hidden[i].gamma, grads.hidden[i].gamma);
        collect(net.hidden[i].beta, grads.hidden[i].beta);
    }
    collect(net.out_w, grads.out_w);
    collect(net.out_b, grads.out_b);

    const double h = 1e-5;
    double max_rel = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double saved = *params[k];
        *params[k] = saved + h;
        const double lp = nn::compute_loss<double>(net, x, classes, {});
        *params[k] = saved - h;
        const double lm = nn::compute_loss<double>(net, x, classes, {});
        *params[k] = saved;
        const double fd = (lp - lm) / (2.0 * h);
        const double denom = std::max({1e-6, std::abs(fd), std::abs(analytic[k])});
        max_rel = std::max(max_rel, std::abs(fd - analytic[k]) / denom);
    }
    CHECK(params.size() == net.parameter_count());
    CHECK(max_rel < 1e-4);
}

TEST_CASE("adam_step") {
    auto net = nn::init_model<float>(reduced_spec(), 2);
    auto state = nn::make_adam<float>(net);

    SUBCASE("zero gradients leave parameters unchanged") {
        const auto before = net.hidden[0].w;
        auto grads = net.make_gradients();
        nn::adam_step(net, grads, state);
        CHECK(net.hidden[0].w == before);
        CHECK(state.step == 1);
    }
    SUBCASE("first step with unit gradient moves by about -lr") {
        auto grads = net.make_gradients();
        grads.hidden[0].w(0, 0) = 1.0f;  // single active coordinate
        const float before = net.hidden[0].w(0, 0);
        nn::adam_step(net, grads, state);
        // Bias-corrected first step: lr * 1 / (1 + eps).
        CHECK(net.hidden[0].w(0, 0) == doctest::Approx(before - 1e-3f).epsilon(1e-4));
        CHECK(net.hidden[0].w(0, 1) == doctest::Approx(before * 0 + net.hidden[0].w(0, 1)));
    }
    SUBCASE("moment memory: the update path depends on past gradients") {
        // For a constant gradient mhat/(sqrt(vhat)+eps) is scale invariant,
        // so path dependence only shows once the gradients differ: a
        // zero-gradient step after a non-zero one still moves parameters.
        auto g1 = net.make_gradients();
        g1.hidden[0].w(0, 0) = 1.0f;
        auto g0 = net.make_gradients();

        auto net_a = net;
        auto st_a = nn::make_adam<float>(net_a);
        nn::adam_step(net_a, g1, st_a);
        const float after_one = net_a.hidden[0].w(0, 0);
        nn::adam_step(net_a, g0, st_a);
        CHECK(net_a.hidden[0].w(0, 0) != after_one);  // decayed moments keep pushing

        // And it lands elsewhere than a single call at doubled learning rate.
        auto net_b = net;
        nn::AdamHyper hyper;
        hyper.lr = 2e-3;
        auto st_b = nn::make_adam<float>(net_b, hyper);
        nn::adam_step(net_b, g1, st_b);
        CHECK(net_a.hidden[0].w(0, 0) != net_b.hidden[0].w(0, 0));
    }
}

TEST_CASE("train") {
    const int mtxop = 12;  // window 36 matches the reduced spec
    auto [train_ds, val_ds] = separable_fixture(mtxop, 200);

    SUBCASE("zero epochs returns the model untouched") {
        auto net = nn::init_model<float>(reduced_spec(), 9);
        const auto before = net.hidden[0].w;
        nn::TrainConfig cfg;
        cfg.epochs = 0;
        const auto history = nn::train(net, train_ds, val_ds, cfg);
        CHECK(history.epochs.empty());
        CHECK(net.hidden[0].w == before);
    }
    SUBCASE("separable fixture reaches 99% within 20 epochs") {
        auto net = nn::init_model<float>(reduced_spec(), 9);
        nn::TrainConfig cfg;
        cfg.epochs = 20;
        cfg.batch_size = 32;
        cfg.seed = 5;
        const auto history = nn::train(net, train_ds, val_ds, cfg);
        REQUIRE_FALSE(history.epochs.empty());
        CHECK(history.best_val_acc >= 0.99);
        const auto [loss, acc] = nn::evaluate(net, train_ds, train_ds.norm);
        (void)loss;
        CHECK(acc >= 0.99);
    }
    SUBCASE("fixed seed reproduces the loss history") {
        nn::TrainConfig cfg;
        cfg.epochs = 3;
        cfg.batch_size = 32;
        cfg.seed = 4;
        auto net1 = nn::init_model<float>(reduced_spec(), 9);
        auto net2 = nn::init_model<float>(reduced_spec(), 9);
        const auto h1 = nn::train(net1, train_ds, val_ds, cfg);
        const auto h2 = nn::train(net2, train_ds, val_ds, cfg);
        REQUIRE(h1.epochs.size() == h2.epochs.size());
        for (std::size_t i = 0; i < h1.epochs.size(); ++i) {
            CHECK(h1.epochs[i].train_loss == h2.epochs[i].train_loss);
            CHECK(h1.epochs[i].val_acc == h2.epochs[i].val_acc);
        }
        CHECK(net1.hidden[0].w == net2.hidden[0].w);
    }
    SUBCASE("window length mismatch rejected") {
        auto net = nn::init_model<float>(nn::ModelSpec{}, 9);  // wants 360
        nn::TrainConfig cfg;
        CHECK_THROWS_AS(nn::train(net, train_ds, val_ds, cfg), std::invalid_argument);
    }
}

TEST_CASE("fast single-window inference agrees with the reference forward") {
    const int mtxop = 12;
    auto [train_ds, val_ds] = separable_fixture(mtxop, 80);
    auto net = nn::init_model<float>(reduced_spec(), 41);
    nn::TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    nn::train(net, train_ds, val_ds, cfg);
    nn::PolicyModel model{std::move(net), train_ds.norm, mtxop};
    nn::Inference engine(model);

    Rng rng(55);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<float> window(36);
        for (auto& v : window) v = static_cast<float>(rng.uniform(-100.0, -55.0));
        CHECK(engine.predict_class(window) == nn::predict_class(model, window));
    }
    std::vector<float> wrong(37, -80.0f);
    CHECK_THROWS_AS(engine.logits(wrong), std::invalid_argument);
}

TEST_CASE("model persistence") {
    const int mtxop = 12;
    auto [train_ds, val_ds] = separable_fixture(mtxop, 60);
    auto net = nn::init_model<float>(reduced_spec(), 31);
    nn::TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    nn::train(net, train_ds, val_ds, cfg);
    nn::PolicyModel model{std::move(net), train_ds.norm, mtxop};

    const std::string path = (std::filesystem::temp_directory_path() / "model_rt.bin").string();
    nn::save_model(model, path);

    SUBCASE("round-trip reproduces eval outputs bit-exactly") {
        nn::PolicyModel back = nn::load_model(path);
        std::vector<float> window(36, -83.0f);
        const auto p1 = nn::predict(model, window);
        const auto p2 = nn::predict(back, window);
        CHECK(p1 == p2);
        CHECK(back.mtxop_slots == mtxop);
        CHECK(back.norm.mean_dbm == model.norm.mean_dbm);
    }
    SUBCASE("corrupted magic rejected") {
        std::string bytes;
        {
            std::ifstream in(path, std::ios::binary);
            bytes.assign(std::istreambuf_iterator<char>(in), {});
        }
        bytes[0] = 'X';
        const std::string bad = (std::filesystem::temp_directory_path() / "model_bad.bin").string();
        std::ofstream(bad, std::ios::binary).write(bytes.data(), static_cast<long>(bytes.size()));
        CHECK_THROWS_WITH_AS(nn::load_model(bad), doctest::Contains("bad magic"), std::runtime_error);
    }
    SUBCASE("truncated file rejected") {
        std::string bytes;
        {
            std::ifstream in(path, std::ios::binary);
            bytes.assign(std::istreambuf_iterator<char>(in), {});
        }
        const std::string cut = (std::filesystem::temp_directory_path() / "model_cut.bin").string();
        std::ofstream(cut, std::ios::binary).write(bytes.data(), static_cast<long>(bytes.size() / 2));
        CHECK_THROWS_WITH_AS(nn::load_model(cut), doctest::Contains("truncated"), std::runtime_error);
    }
    SUBCASE("window length mismatch surfaces as an error") {
        nn::PolicyModel back = nn::load_model(path);
        std::vector<float> wrong(618, -83.0f);
        CHECK_THROWS_AS(nn::predict(back, wrong), std::invalid_argument);
    }
}
