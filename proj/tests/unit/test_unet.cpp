#include <doctest.h>

#include <cmath>

#include "cardioseg/loss.hpp"
#include "cardioseg/model_io.hpp"
#include "cardioseg/optim.hpp"
#include "cardioseg/unet.hpp"
#include "oracles.hpp"

using namespace cardioseg;

namespace {

UNetConfig small_config() {
    UNetConfig c;
    c.base_channels = 2;
    c.levels = 3;
    c.patch = {8, 8, 4};
    c.seed = 9;
    return c;
}

TensorF random_batch(std::size_t n, const UNetConfig& c, std::uint64_t seed) {
    Rng rng(seed);
    return oracle::random_tensor(Shape{n, 1, c.patch.z, c.patch.y, c.patch.x}, rng).cast<float>();
}

// Independent parameter count: two 3x3x3 conv + BN blocks per level, a
// transposed conv per decoder level, and a 1x1x1 head.
std::size_t expected_parameters(const UNetConfig& c) {
    auto double_conv = [](std::size_t ci, std::size_t co) { return co * ci * 27 + co + 2 * co + co * co * 27 + co + 2 * co; };
    std::size_t total = 0, prev = c.in_channels;
    for (std::size_t l = 0; l < c.levels; ++l) {
        total += double_conv(prev, c.channels(l));
        prev = c.channels(l);
    }
    for (std::size_t l = 0; l + 1 < c.levels; ++l) {
        const Triple w = c.pool_window(l);
        total += c.channels(l + 1) * c.channels(l) * w.d * w.h * w.w + c.channels(l);
        total += double_conv(2 * c.channels(l), c.channels(l));
    }
    return total + c.classes * c.channels(0) + c.classes;
}

}  // namespace

TEST_CASE("parameter count follows the layer chain") {
    UNetConfig c;
    c.base_channels = 8;
    CHECK(build_unet(c).parameter_count() == expected_parameters(c));
    CHECK(expected_parameters(c) == 85355);
    UNetConfig d;
    CHECK(build_unet(d).parameter_count() == expected_parameters(d));
    CHECK(build_unet(small_config()).parameter_count() == expected_parameters(small_config()));
}

TEST_CASE("axial pooling is skipped when the depth is odd") {
    UNetConfig c;
    c.patch = {64, 64, 4};
    CHECK(c.pool_window(0) == Triple{2, 2, 2});
    CHECK(c.pool_window(1) == Triple{2, 2, 2});
    c.patch = {64, 64, 8};
    c.levels = 4;
    CHECK(c.pool_window(2) == Triple{2, 2, 2});
    c.patch = {16, 16, 4};
    c.levels = 4;
    CHECK(c.pool_window(2) == Triple{1, 2, 2});
    CHECK(c.level_extent(3) == Triple{1, 2, 2});
}

TEST_CASE("config validation") {
    UNetConfig c;
    c.patch = {62, 64, 4};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = UNetConfig{};
    c.base_channels = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("forward shapes, determinism and eval purity") {
    const UNetConfig c = small_config();
    UNetParams p = build_unet(c);
    const TensorF x = random_batch(2, c, 1);
    const TensorF y = unet_forward(p, x, Mode::Train);
    CHECK(y.shape() == Shape{2, 3, 4, 8, 8});
    CHECK(y.all_finite());
    const UNetParams q = build_unet(c);
    CHECK(q.params[0].value == build_unet(c).params[0].value);
    const auto stats_before = p.norm_stats[0].mean;
    const TensorF e1 = unet_infer(p, x);
    CHECK(p.norm_stats[0].mean == stats_before);
    CHECK(e1 == unet_infer(p, x));
    CHECK_THROWS_AS(unet_infer(p, random_batch(1, UNetConfig{}, 1)), std::invalid_argument);
}

TEST_CASE("backward agrees with finite differences along random directions") {
    const UNetConfig c = small_config();
    UNetParams p = build_unet(c);
    const TensorF x = random_batch(2, c, 4);
    TensorF target(Shape{2, 3, 4, 8, 8});
    for (std::size_t i = 0; i < 2 * 4 * 8 * 8; ++i) {
        const std::size_t n = i / 256, v = i % 256;
        target[(n * 3 + (v * 7 % 3)) * 256 + v] = 1.0f;
    }
    auto loss_of = [&](UNetParams& params) {
        UNetParams copy = params;
        const TensorF probs = activation_forward(unet_forward(copy, x, Mode::Train), Activation::Sigmoid);
        return dice_loss(probs, target, {1e-6, true}).loss;
    };
    UNetTape tape;
    p.zero_grad();
    const TensorF logits = unet_forward(p, x, Mode::Train, &tape);
    const TensorF probs = activation_forward(logits, Activation::Sigmoid);
    const auto l = dice_loss(probs, target, {1e-6, true});
    unet_backward(p, tape, activation_backward(l.grad, probs, Activation::Sigmoid));

    Rng rng(77);
    for (int trial = 0; trial < 3; ++trial) {
        // unit-norm direction keeps every weight's perturbation tiny, so the
        // ReLU/max-pool switching pattern stays fixed
        std::vector<TensorF> dir;
        double norm2 = 0.0;
        for (const auto& prm : p.params) {
            dir.push_back(oracle::random_tensor(prm.value.shape(), rng).cast<float>());
            norm2 += dot(dir.back(), dir.back());
        }
        double analytic = 0.0;
        for (std::size_t k = 0; k < dir.size(); ++k) {
            for (std::size_t i = 0; i < dir[k].size(); ++i) dir[k][i] = static_cast<float>(dir[k][i] / std::sqrt(norm2));
            analytic += dot(dir[k], p.params[k].grad);
        }
        // float32 loss noise is ~1e-7, so at h = 1e-3 the quotient carries
        // ~1e-4 absolute noise; larger h picks up curvature from BN/sigmoid
        const double h = 1e-3;
        UNetParams plus = p, minus = p;
        for (std::size_t k = 0; k < p.params.size(); ++k)
            for (std::size_t i = 0; i < dir[k].size(); ++i) {
                plus.params[k].value[i] += static_cast<float>(h * dir[k][i]);
                minus.params[k].value[i] -= static_cast<float>(h * dir[k][i]);
            }
        const double numeric = (loss_of(plus) - loss_of(minus)) / (2 * h);
        INFO("analytic " << analytic << " numeric " << numeric);
        CHECK(std::abs(analytic - numeric) <= 0.02 * std::abs(analytic) + 1e-4);
    }
}

TEST_CASE("a few Adam steps reduce the loss on a fixed batch") {
    const UNetConfig c = small_config();
    UNetParams p = build_unet(c);
    const TensorF x = random_batch(2, c, 2);
    TensorF target(Shape{2, 3, 4, 8, 8});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t v = 0; v < 256; ++v) target[(n * 3 + (x[n * 256 + v] > 0 ? 1 : 0)) * 256 + v] = 1.0f;
    std::vector<AdamState<float>> st;
    for (const auto& prm : p.params) st.push_back(AdamState<float>::for_parameter(prm));
    const auto ptrs = p.parameter_pointers();
    double first = 0, last = 0;
    for (int it = 0; it < 15; ++it) {
        UNetTape tape;
        p.zero_grad();
        const TensorF probs = activation_forward(unet_forward(p, x, Mode::Train, &tape), Activation::Sigmoid);
        const auto l = dice_loss(probs, target, {1e-6, true});
        unet_backward(p, tape, activation_backward(l.grad, probs, Activation::Sigmoid));
        adam_step<float>(ptrs, st, 0.01);
        if (it == 0) first = l.loss;
        last = l.loss;
    }
    CHECK(last < first);
}

TEST_CASE("predict_labels breaks ties toward the lower class") {
    TensorF logits(Shape{1, 3, 1, 1, 3});
    // voxel 0: all equal; voxel 1: class 2 wins; voxel 2: classes 1 and 2 tie
    logits[1] = -1, logits[3 + 1] = 0, logits[6 + 1] = 5;
    logits[2] = -1, logits[3 + 2] = 2, logits[6 + 2] = 2;
    const LabelMask m = predict_labels(logits);
    CHECK(m.labels == std::vector<std::uint8_t>{0, 2, 1});
}

TEST_CASE("sliding window geometry") {
    CHECK(window_starts(156, 64, 32) == std::vector<std::size_t>{0, 32, 64, 92});
    CHECK(window_starts(6, 4, 2) == std::vector<std::size_t>{0, 2});
    CHECK(window_starts(64, 64, 32) == std::vector<std::size_t>{0});
    CHECK_THROWS_AS(window_starts(3, 4, 2), std::invalid_argument);
}

TEST_CASE("sliding window over a single patch equals direct inference") {
    const UNetConfig c = small_config();
    const UNetParams p = build_unet(c);
    Volume v({8, 8, 4}, {1, 1, 1});
    Rng rng(3);
    for (auto& f : v.values) f = static_cast<float>(rng.uniform01());
    const TensorF direct = unet_infer(p, TensorF(Shape{1, 1, 4, 8, 8}, v.values));
    CHECK(sliding_window_logits(p, v) == direct);

    Volume big({20, 12, 6}, {1, 1, 1});
    for (auto& f : big.values) f = static_cast<float>(rng.uniform01());
    const LabelMask m = sliding_window_infer(p, big, {{4, 4, 2}, 3});
    CHECK(m.dims() == big.dims());
}

TEST_CASE("model serialization round-trips byte for byte") {
    UNetConfig c = small_config();
    UNetParams p = build_unet(c);
    p.norm_stats[1].mean[0] = 0.25f;
    const auto bytes = serialize_model(p);
    std::size_t used = 0;
    const UNetParams q = deserialize_model(bytes, &used);
    CHECK(used == bytes.size());
    CHECK(q.config == c);
    CHECK(q.params[3].value == p.params[3].value);
    CHECK(q.norm_stats[1].mean[0] == 0.25f);
    CHECK(serialize_model(q) == bytes);

    auto code_of = [](const std::vector<std::uint8_t>& b) {
        try {
            deserialize_model(b);
        } catch (const ModelError& e) {
            return static_cast<int>(e.code());
        }
        return -1;
    };
    auto bad = bytes;
    bad[0] = 'X';
    CHECK(code_of(bad) == static_cast<int>(ModelErrorCode::BadMagic));
    bad = bytes;
    bad[4] = 9;
    CHECK(code_of(bad) == static_cast<int>(ModelErrorCode::Version));
    bad = std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 5);
    CHECK(code_of(bad) == static_cast<int>(ModelErrorCode::Truncated));
    bad = bytes;
    bad[12] = '!';
    CHECK(code_of(bad) == static_cast<int>(ModelErrorCode::Header));
}

TEST_CASE("model and checkpoint files") {
    oracle::TempDir dir("unet");
    UNetParams p = build_unet(small_config());
    save_model(p, dir / "m.csg");
    CHECK(serialize_model(load_model(dir / "m.csg")) == serialize_model(p));
    CHECK_THROWS_AS(load_model(dir / "missing.csg"), IoError);

    TrainingState st;
    for (const auto& prm : p.params) st.adam.push_back(AdamState<float>::for_parameter(prm));
    st.adam[0].m[0] = 0.5f;
    st.adam[0].t = 7;
    st.epoch = 3;
    st.log_csv = "epoch\n1\n";
    save_checkpoint(p, st, dir / "c.ckpt");
    UNetParams q;
    TrainingState s2;
    load_checkpoint(dir / "c.ckpt", q, s2);
    CHECK(s2.epoch == 3);
    CHECK(s2.log_csv == st.log_csv);
    CHECK(s2.adam[0].m[0] == 0.5f);
    CHECK(s2.adam[0].t == 7);
    CHECK(serialize_model(q) == serialize_model(p));
}
