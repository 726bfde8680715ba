#include "cardioseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cardioseg/errors.hpp"
#include "cardioseg/layers.hpp"
#include "cardioseg/loss.hpp"
#include "cardioseg/rng.hpp"

namespace cardioseg {

bool GradCheckReport::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

double GradCheckReport::worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_error);
    return w;
}

GradCheckReport gradient_check(const ScalarMap& f, const std::vector<GradCheckInput>& inputs, double tolerance) {
    std::vector<TensorD> point;
    point.reserve(inputs.size());
    for (const auto& in : inputs) {
        if (!(in.analytic.shape() == in.value.shape()))
            throw std::invalid_argument("gradient_check: analytic gradient for " + in.name + " has shape " +
                                        in.analytic.shape().str() + ", value has " + in.value.shape().str());
        point.push_back(in.value);
    }
    auto eval = [&](const std::vector<TensorD>& x) {
        const double v = f(x);
        if (!std::isfinite(v)) throw NumericError("gradient_check: forward map returned a non-finite value");
        return v;
    };
    eval(point);

    GradCheckReport report{tolerance, {}};
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        TensorD numeric(inputs[t].value.shape());
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            const double x0 = point[t][i];
            const double h = 1e-4 * std::max(1.0, std::abs(x0));
            point[t][i] = x0 + h;
            const double fp = eval(point);
            point[t][i] = x0 - h;
            const double fm = eval(point);
            point[t][i] = x0;
            numeric[i] = (fp - fm) / (2.0 * h);
        }
        double scale = 0.0, diff = 0.0;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            scale = std::max({scale, std::abs(numeric[i]), std::abs(inputs[t].analytic[i])});
            diff = std::max(diff, std::abs(numeric[i] - inputs[t].analytic[i]));
        }
        const double err = scale > 0.0 ? diff / scale : 0.0;
        report.entries.push_back({inputs[t].name, err, err <= tolerance});
    }
    return report;
}

namespace {

TensorD random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    TensorD t(shape);
    for (auto& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

// Values bounded away from zero, for activations with a kink at 0.
TensorD away_from_zero(Rng& rng, Shape shape) {
    TensorD t(shape);
    for (auto& v : t.values()) {
        const double mag = rng.uniform(0.05, 1.0);
        v = rng.uniform01() < 0.5 ? -mag : mag;
    }
    return t;
}

std::size_t pick(Rng& rng, std::initializer_list<std::size_t> options) {
    return *(options.begin() + rng.uniform_index(options.size()));
}

double weighted_sum(const TensorD& y, const TensorD& r) { return dot(y, r); }

void record(LayerCheckSummary& s, const GradCheckReport& report) {
    ++s.trials;
    if (!report.passed()) ++s.failures;
    s.worst_error = std::max(s.worst_error, report.worst());
}

GradCheckReport check_conv(Rng& rng, double tol) {
    const std::size_t n = pick(rng, {1, 2}), cin = pick(rng, {1, 2, 3}), cout = pick(rng, {1, 2});
    Conv3dOptions opt;
    opt.stride = {pick(rng, {1, 2}), pick(rng, {1, 2}), pick(rng, {1, 2})};
    opt.padding = rng.uniform01() < 0.75 ? Padding::Same : Padding::Valid;
    const std::size_t kd = pick(rng, {1, 3}), kh = pick(rng, {1, 3}), kw = pick(rng, {1, 3});
    const std::size_t d = 3 + rng.uniform_index(3), h = 3 + rng.uniform_index(3), w = 3 + rng.uniform_index(3);
    TensorD x = random_tensor(rng, Shape{n, cin, d, h, w});
    TensorD wt = random_tensor(rng, Shape{cout, cin, kd, kh, kw});
    TensorD b = random_tensor(rng, Shape{cout});
    TensorD y = conv3d_forward(x, wt, b, opt);
    TensorD r = random_tensor(rng, y.shape());
    const auto g = conv3d_backward(r, x, wt, opt);
    return gradient_check(
        [&](const std::vector<TensorD>& v) { return weighted_sum(conv3d_forward(v[0], v[1], v[2], opt), r); },
        {{"input", x, g.input}, {"weight", wt, g.weight}, {"bias", b, g.bias}}, tol);
}

GradCheckReport check_conv_transpose(Rng& rng, double tol) {
    const std::size_t n = pick(rng, {1, 2}), cin = pick(rng, {1, 2, 3}), cout = pick(rng, {1, 2});
    const Triple s{pick(rng, {1, 2}), pick(rng, {1, 2}), pick(rng, {1, 2})};
    const std::size_t d = 1 + rng.uniform_index(3), h = 2 + rng.uniform_index(3), w = 2 + rng.uniform_index(3);
    TensorD x = random_tensor(rng, Shape{n, cin, d, h, w});
    TensorD wt = random_tensor(rng, Shape{cin, cout, s.d, s.h, s.w});
    TensorD b = random_tensor(rng, Shape{cout});
    TensorD y = conv_transpose3d_forward(x, wt, b, s);
    TensorD r = random_tensor(rng, y.shape());
    const auto g = conv_transpose3d_backward(r, x, wt, s);
    return gradient_check(
        [&](const std::vector<TensorD>& v) { return weighted_sum(conv_transpose3d_forward(v[0], v[1], v[2], s), r); },
        {{"input", x, g.input}, {"weight", wt, g.weight}, {"bias", b, g.bias}}, tol);
}

GradCheckReport check_batchnorm(Rng& rng, double tol) {
    const std::size_t n = pick(rng, {1, 2}), c = pick(rng, {1, 2, 3});
    const Shape shape{n, c, 2 + rng.uniform_index(2), 2 + rng.uniform_index(3), 2 + rng.uniform_index(3)};
    TensorD x = random_tensor(rng, shape, -2.0, 2.0);
    TensorD gamma = random_tensor(rng, Shape{c}, 0.5, 2.0);
    TensorD beta = random_tensor(rng, Shape{c});
    auto stats = RunningStats<double>::fresh(c);
    BatchNormCache<double> cache;
    TensorD y = batchnorm3d_forward(x, gamma, beta, stats, Mode::Train, {}, &cache);
    TensorD r = random_tensor(rng, y.shape());
    const auto g = batchnorm3d_backward(r, gamma, cache);
    return gradient_check(
        [&](const std::vector<TensorD>& v) {
            auto scratch = RunningStats<double>::fresh(c);
            return weighted_sum(batchnorm3d_forward(v[0], v[1], v[2], scratch, Mode::Train), r);
        },
        {{"input", x, g.input}, {"gamma", gamma, g.gamma}, {"beta", beta, g.beta}}, tol);
}

GradCheckReport check_activation(Rng& rng, double tol, Activation kind) {
    const Shape shape{pick(rng, {1, 2}), pick(rng, {1, 2}), 2 + rng.uniform_index(2), 2 + rng.uniform_index(3),
                      2 + rng.uniform_index(3)};
    TensorD x = kind == Activation::Relu ? away_from_zero(rng, shape) : random_tensor(rng, shape, -4.0, 4.0);
    TensorD y = activation_forward(x, kind);
    TensorD r = random_tensor(rng, y.shape());
    TensorD g = activation_backward(r, y, kind);
    return gradient_check(
        [&](const std::vector<TensorD>& v) { return weighted_sum(activation_forward(v[0], kind), r); },
        {{"input", x, g}}, tol);
}

GradCheckReport check_maxpool(Rng& rng, double tol) {
    const Triple win{pick(rng, {1, 2}), 2, 2};
    const Shape shape{pick(rng, {1, 2}), pick(rng, {1, 2}), win.d * (1 + rng.uniform_index(2)),
                      2 * (1 + rng.uniform_index(2)), 2 * (1 + rng.uniform_index(3))};
    // A shuffled ladder with spacing 0.01 keeps every window free of ties
    // closer than the finite-difference step.
    std::vector<double> ladder(shape.numel());
    std::iota(ladder.begin(), ladder.end(), 0.0);
    for (std::size_t i = ladder.size(); i > 1; --i) std::swap(ladder[i - 1], ladder[rng.uniform_index(i)]);
    for (auto& v : ladder) v = v * 0.01 - 0.5;
    TensorD x(shape, ladder);
    const auto fwd = maxpool3d_forward(x, win);
    TensorD r = random_tensor(rng, fwd.output.shape());
    TensorD g = maxpool3d_backward(r, fwd.argmax, x.shape());
    return gradient_check(
        [&](const std::vector<TensorD>& v) { return weighted_sum(maxpool3d_forward(v[0], win).output, r); },
        {{"input", x, g}}, tol);
}

TensorD random_onehot(Rng& rng, Shape shape) {
    const Dims5 d = dims5(shape);
    TensorD t(shape);
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t v = 0; v < d.spatial(); ++v) {
            const std::size_t c = rng.uniform_index(d.c);
            t[(n * d.c + c) * d.spatial() + v] = 1.0;
        }
    return t;
}

GradCheckReport check_dice(Rng& rng, double tol) {
    const std::size_t classes = pick(rng, {2, 3});
    const Shape shape{pick(rng, {1, 2}), classes, 2, 2 + rng.uniform_index(3), 2 + rng.uniform_index(3)};
    TensorD p = random_tensor(rng, shape, 0.05, 0.95);
    TensorD g = random_onehot(rng, shape);
    DiceLossOptions opt;
    opt.include_background = rng.uniform01() < 0.5;
    const auto res = dice_loss(p, g, opt);
    return gradient_check([&](const std::vector<TensorD>& v) { return dice_loss(v[0], g, opt).loss; },
                          {{"probs", p, res.grad}}, tol);
}

GradCheckReport check_composite(Rng& rng, double tol) {
    const Shape shape{1, 2, 4, 8, 8};
    TensorD x, wt, b, z;
    // Redraw until no pre-activation sits within reach of the relu kink.
    for (;;) {
        x = random_tensor(rng, shape);
        wt = random_tensor(rng, Shape{3, 2, 3, 3, 3}, -0.3, 0.3);
        b = random_tensor(rng, Shape{3}, -0.1, 0.1);
        z = conv3d_forward(x, wt, b);
        if (std::none_of(z.values().begin(), z.values().end(), [](double v) { return std::abs(v) < 1e-3; })) break;
    }
    TensorD target = random_onehot(rng, Shape{1, 3, 4, 8, 8});
    auto forward = [&](const TensorD& in, const TensorD& w, const TensorD& bias) {
        return activation_forward(activation_forward(conv3d_forward(in, w, bias), Activation::Relu),
                                  Activation::Sigmoid);
    };
    TensorD a = activation_forward(z, Activation::Relu);
    TensorD p = activation_forward(a, Activation::Sigmoid);
    const auto loss = dice_loss(p, target);
    TensorD ga = activation_backward(loss.grad, p, Activation::Sigmoid);
    TensorD gz = activation_backward(ga, a, Activation::Relu);
    const auto g = conv3d_backward(gz, x, wt);
    return gradient_check(
        [&](const std::vector<TensorD>& v) { return dice_loss(forward(v[0], v[1], v[2]), target).loss; },
        {{"input", x, g.input}, {"weight", wt, g.weight}, {"bias", b, g.bias}}, tol);
}

}  // namespace

std::vector<LayerCheckSummary> run_layer_gradient_suite(std::uint64_t seed, std::size_t trials, double tolerance) {
    std::vector<LayerCheckSummary> out{{"conv3d"},    {"conv_transpose3d"}, {"batchnorm3d"}, {"relu"},
                                       {"sigmoid"},   {"maxpool3d"},        {"dice_loss"},   {"conv3d+relu+sigmoid+dice"}};
    Rng rng(seed);
    for (std::size_t t = 0; t < trials; ++t) {
        record(out[0], check_conv(rng, tolerance));
        record(out[1], check_conv_transpose(rng, tolerance));
        record(out[2], check_batchnorm(rng, tolerance));
        record(out[3], check_activation(rng, tolerance, Activation::Relu));
        record(out[4], check_activation(rng, tolerance, Activation::Sigmoid));
        record(out[5], check_maxpool(rng, tolerance));
        record(out[6], check_dice(rng, tolerance));
        record(out[7], check_composite(rng, tolerance));
    }
    return out;
}

}  // namespace cardioseg
