#include "cardioseg/unet.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cardioseg/rng.hpp"

namespace cardioseg {

namespace {

constexpr std::size_t kDoubleConvParams = 8;
constexpr std::size_t kUpParams = 2;

// Parameter and norm-layer positions in build order:
// enc.0 .. enc.{L-2}, bottleneck, (up.i, dec.i) for i = L-2 .. 0, head.
struct Layout {
    std::size_t L;

    std::size_t enc(std::size_t i) const { return kDoubleConvParams * i; }
    std::size_t bottleneck() const { return kDoubleConvParams * (L - 1); }
    std::size_t step(std::size_t level) const { return L - 2 - level; }
    std::size_t up(std::size_t level) const {
        return kDoubleConvParams * L + (kUpParams + kDoubleConvParams) * step(level);
    }
    std::size_t dec(std::size_t level) const { return up(level) + kUpParams; }
    std::size_t head() const { return kDoubleConvParams * L + (kUpParams + kDoubleConvParams) * (L - 1); }

    std::size_t enc_norm(std::size_t i) const { return 2 * i; }
    std::size_t bottleneck_norm() const { return 2 * (L - 1); }
    std::size_t dec_norm(std::size_t level) const { return 2 * L + 2 * step(level); }
};

Shape kernel_shape(std::size_t cout, std::size_t cin, std::size_t k) { return Shape{cout, cin, k, k, k}; }

void add_double_conv(std::vector<TensorSpec>& out, std::vector<std::string>& norms, const std::string& prefix,
                     std::size_t cin, std::size_t cout) {
    for (int j = 1; j <= 2; ++j) {
        const std::string conv = prefix + ".conv" + std::to_string(j);
        const std::string bn = prefix + ".bn" + std::to_string(j);
        out.push_back({conv + ".weight", kernel_shape(cout, j == 1 ? cin : cout, 3)});
        out.push_back({conv + ".bias", Shape{cout}});
        out.push_back({bn + ".gamma", Shape{cout}});
        out.push_back({bn + ".beta", Shape{cout}});
        norms.push_back(bn);
    }
}

struct FullLayout {
    std::vector<TensorSpec> params;
    std::vector<std::string> norms;
};

FullLayout full_layout(const UNetConfig& c) {
    FullLayout f;
    const std::size_t L = c.levels;
    for (std::size_t i = 0; i + 1 < L; ++i)
        add_double_conv(f.params, f.norms, "enc." + std::to_string(i), i == 0 ? c.in_channels : c.channels(i - 1),
                        c.channels(i));
    add_double_conv(f.params, f.norms, "bottleneck", L >= 2 ? c.channels(L - 2) : c.in_channels, c.channels(L - 1));
    for (std::size_t s = 0; s + 1 < L; ++s) {
        const std::size_t i = L - 2 - s;
        const Triple w = c.pool_window(i);
        const std::string up = "up." + std::to_string(i);
        f.params.push_back({up + ".weight", Shape{c.channels(i + 1), c.channels(i), w.d, w.h, w.w}});
        f.params.push_back({up + ".bias", Shape{c.channels(i)}});
        add_double_conv(f.params, f.norms, "dec." + std::to_string(i), 2 * c.channels(i), c.channels(i));
    }
    f.params.push_back({"head.weight", kernel_shape(c.classes, c.channels(0), 1)});
    f.params.push_back({"head.bias", Shape{c.classes}});
    return f;
}

std::size_t fan_in(const TensorSpec& s) {
    const Shape& sh = s.shape;
    // Transposed kernels are [Cin, Cout, ...] with one tap per output voxel.
    if (s.name.rfind("up.", 0) == 0) return sh[0];
    return sh[1] * sh[2] * sh[3] * sh[4];
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// One forward pass; `stats` is non-null in train mode.
class Runner {
public:
    Runner(const UNetParams& p, std::vector<RunningStats<float>>* stats, Mode mode, UNetTape* tape)
        : p_(p), stats_(stats), mode_(mode), tape_(tape), lay_{p.config.levels} {}

    TensorF run(const TensorF& x) {
        const UNetConfig& c = p_.config;
        const std::size_t L = c.levels;
        if (tape_) {
            *tape_ = UNetTape{};
            tape_->encoder.resize(L - 1);
            tape_->pool_argmax.resize(L - 1);
            tape_->pool_input_shape.resize(L - 1);
            tape_->up_input.resize(L - 1);
            tape_->decoder.resize(L - 1);
        }
        std::vector<TensorF> skips(L - 1);
        TensorF h = x;
        for (std::size_t i = 0; i + 1 < L; ++i) {
            skips[i] = double_conv(h, lay_.enc(i), lay_.enc_norm(i), tape_ ? &tape_->encoder[i] : nullptr);
            MaxPoolResult<float> pooled = maxpool3d_forward(skips[i], c.pool_window(i));
            if (tape_) {
                tape_->pool_argmax[i] = std::move(pooled.argmax);
                tape_->pool_input_shape[i] = skips[i].shape();
            }
            h = std::move(pooled.output);
        }
        h = double_conv(h, lay_.bottleneck(), lay_.bottleneck_norm(), tape_ ? &tape_->bottleneck : nullptr);
        for (std::size_t s = 0; s + 1 < L; ++s) {
            const std::size_t i = L - 2 - s;
            const std::size_t u = lay_.up(i);
            if (tape_) tape_->up_input[i] = h;
            TensorF up = conv_transpose3d_forward(h, p_.params[u].value, p_.params[u + 1].value, c.pool_window(i));
            TensorF cat = concat_channels(skips[i], up);
            h = double_conv(cat, lay_.dec(i), lay_.dec_norm(i), tape_ ? &tape_->decoder[i] : nullptr);
        }
        if (tape_) tape_->head_input = h;
        const std::size_t hd = lay_.head();
        return conv3d_forward(h, p_.params[hd].value, p_.params[hd + 1].value);
    }

private:
    TensorF block(const TensorF& x, std::size_t pi, std::size_t ni, ConvBlockTape* t) {
        TensorF z = conv3d_forward(x, p_.params[pi].value, p_.params[pi + 1].value);
        const TensorF& gamma = p_.params[pi + 2].value;
        const TensorF& beta = p_.params[pi + 3].value;
        TensorF n;
        if (mode_ == Mode::Train && stats_) {
            n = batchnorm3d_forward(z, gamma, beta, (*stats_)[ni], Mode::Train, p_.config.batchnorm,
                                    t ? &t->norm : nullptr);
        } else {
            n = batchnorm3d_inference(z, gamma, beta, p_.norm_stats[ni], p_.config.batchnorm);
        }
        TensorF a = activation_forward(n, Activation::Relu);
        if (t) {
            t->input = x;
            t->output = a;
        }
        return a;
    }

    TensorF double_conv(const TensorF& x, std::size_t pi, std::size_t ni, DoubleConvTape* t) {
        TensorF a = block(x, pi, ni, t ? &t->first : nullptr);
        return block(a, pi + 4, ni + 1, t ? &t->second : nullptr);
    }

    const UNetParams& p_;
    std::vector<RunningStats<float>>* stats_;
    Mode mode_;
    UNetTape* tape_;
    Layout lay_;
};

void check_batch(const UNetConfig& c, const TensorF& batch) {
    require_rank5(batch, "unet input");
    const Dims5 d = dims5(batch.shape());
    if (d.c != c.in_channels || d.d != c.patch.z || d.h != c.patch.y || d.w != c.patch.x)
        throw std::invalid_argument("unet: input " + batch.shape().str() + " does not match [N, " +
                                    std::to_string(c.in_channels) + ", " + std::to_string(c.patch.z) + ", " +
                                    std::to_string(c.patch.y) + ", " + std::to_string(c.patch.x) + "]");
}

void accumulate(TensorF& into, const TensorF& g) {
    for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

TensorF block_backward(UNetParams& p, std::size_t pi, const ConvBlockTape& t, const TensorF& grad) {
    TensorF g = activation_backward(grad, t.output, Activation::Relu);
    BatchNormGrads<float> bn = batchnorm3d_backward(g, p.params[pi + 2].value, t.norm);
    accumulate(p.params[pi + 2].grad, bn.gamma);
    accumulate(p.params[pi + 3].grad, bn.beta);
    Conv3dGrads<float> cg = conv3d_backward(bn.input, t.input, p.params[pi].value);
    accumulate(p.params[pi].grad, cg.weight);
    accumulate(p.params[pi + 1].grad, cg.bias);
    return std::move(cg.input);
}

TensorF double_conv_backward(UNetParams& p, std::size_t pi, const DoubleConvTape& t, const TensorF& grad) {
    return block_backward(p, pi, t.first, block_backward(p, pi + 4, t.second, grad));
}

}  // namespace

void UNetConfig::validate() const {
    if (in_channels < 1) throw std::invalid_argument("unet: in_channels must be >= 1");
    if (classes < 2) throw std::invalid_argument("unet: classes must be >= 2");
    if (base_channels < 1) throw std::invalid_argument("unet: base_channels must be >= 1");
    if (levels < 1 || levels > 6) throw std::invalid_argument("unet: levels must be in [1, 6]");
    const std::size_t f = std::size_t{1} << (levels - 1);
    if (patch.x % f != 0 || patch.y % f != 0 || patch.x == 0 || patch.y == 0 || patch.z == 0)
        throw std::invalid_argument("unet: patch " + std::to_string(patch.x) + "x" + std::to_string(patch.y) + "x" +
                                    std::to_string(patch.z) + " must have X and Y divisible by " +
                                    std::to_string(f));
    if (!(batchnorm.epsilon > 0.0) || !(batchnorm.momentum > 0.0) || batchnorm.momentum > 1.0)
        throw std::invalid_argument("unet: batch-norm epsilon must be > 0 and momentum in (0, 1]");
}

Triple UNetConfig::pool_window(std::size_t level) const {
    const Triple e = level_extent(level);
    return {e.d % 2 == 0 ? 2u : 1u, 2, 2};
}

Triple UNetConfig::level_extent(std::size_t level) const {
    Triple e{patch.z, patch.y, patch.x};
    for (std::size_t i = 0; i < level; ++i) {
        if (e.d % 2 == 0) e.d /= 2;
        e.h /= 2;
        e.w /= 2;
    }
    return e;
}

std::vector<TensorSpec> unet_tensor_layout(const UNetConfig& config) {
    config.validate();
    FullLayout f = full_layout(config);
    std::vector<TensorSpec> out = f.params;
    // Running stats follow the parameters, mean then var per norm layer.
    for (const std::string& n : f.norms) {
        const auto it = std::find_if(f.params.begin(), f.params.end(),
                                     [&](const TensorSpec& s) { return s.name == n + ".gamma"; });
        out.push_back({n + ".running_mean", it->shape});
        out.push_back({n + ".running_var", it->shape});
    }
    return out;
}

std::size_t UNetParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

void UNetParams::zero_grad() {
    for (auto& p : params) p.zero_grad();
}

std::vector<Parameter<float>*> UNetParams::parameter_pointers() {
    std::vector<Parameter<float>*> out;
    out.reserve(params.size());
    for (auto& p : params) out.push_back(&p);
    return out;
}

UNetParams build_unet(const UNetConfig& config) {
    config.validate();
    FullLayout f = full_layout(config);
    UNetParams p;
    p.config = config;
    Rng rng(config.seed);
    for (const TensorSpec& s : f.params) {
        TensorF v(s.shape);
        if (ends_with(s.name, ".weight")) {
            const double sd = std::sqrt(2.0 / static_cast<double>(fan_in(s)));
            for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(sd * rng.normal());
        } else if (ends_with(s.name, ".gamma")) {
            v.fill(1.0f);
        }
        p.params.emplace_back(s.name, std::move(v));
    }
    for (const std::string& n : f.norms) {
        const auto it = std::find_if(f.params.begin(), f.params.end(),
                                     [&](const TensorSpec& s) { return s.name == n + ".gamma"; });
        p.norm_stats.push_back(RunningStats<float>::fresh(it->shape[0]));
        p.norm_names.push_back(n);
    }
    return p;
}

TensorF unet_forward(UNetParams& params, const TensorF& batch, Mode mode, UNetTape* tape) {
    check_batch(params.config, batch);
    if (mode == Mode::Eval) return unet_infer(params, batch);
    Runner r(params, &params.norm_stats, Mode::Train, tape);
    return r.run(batch);
}

TensorF unet_infer(const UNetParams& params, const TensorF& batch) {
    check_batch(params.config, batch);
    Runner r(params, nullptr, Mode::Eval, nullptr);
    return r.run(batch);
}

void unet_backward(UNetParams& p, const UNetTape& tape, const TensorF& grad_logits) {
    const UNetConfig& c = p.config;
    const std::size_t L = c.levels;
    const Layout lay{L};
    if (tape.encoder.size() != L - 1) throw std::invalid_argument("unet_backward: tape was not recorded");

    const std::size_t hd = lay.head();
    Conv3dGrads<float> head = conv3d_backward(grad_logits, tape.head_input, p.params[hd].value);
    accumulate(p.params[hd].grad, head.weight);
    accumulate(p.params[hd + 1].grad, head.bias);
    TensorF g = std::move(head.input);

    std::vector<TensorF> skip_grads(L - 1);
    for (std::size_t i = 0; i + 1 < L; ++i) {
        TensorF gcat = double_conv_backward(p, lay.dec(i), tape.decoder[i], g);
        auto [gskip, gup] = split_channels(gcat, c.channels(i));
        skip_grads[i] = std::move(gskip);
        const std::size_t u = lay.up(i);
        Conv3dGrads<float> ug = conv_transpose3d_backward(gup, tape.up_input[i], p.params[u].value, c.pool_window(i));
        accumulate(p.params[u].grad, ug.weight);
        accumulate(p.params[u + 1].grad, ug.bias);
        g = std::move(ug.input);
    }
    g = double_conv_backward(p, lay.bottleneck(), tape.bottleneck, g);
    for (std::size_t i = L - 1; i-- > 0;) {
        TensorF gskip = maxpool3d_backward(g, tape.pool_argmax[i], tape.pool_input_shape[i]);
        accumulate(gskip, skip_grads[i]);
        g = double_conv_backward(p, lay.enc(i), tape.encoder[i], gskip);
    }
}

LabelMask predict_labels(const TensorF& logits, Vec3 spacing) {
    require_rank5(logits, "predict_labels logits");
    const Dims5 d = dims5(logits.shape());
    if (d.n != 1) throw std::invalid_argument("predict_labels: expects batch size 1");
    if (d.c > 255) throw std::invalid_argument("predict_labels: too many classes");
    LabelMask out(Extent3{d.w, d.h, d.d}, spacing, 0);
    const std::size_t V = d.spatial();
    for (std::size_t v = 0; v < V; ++v) {
        std::size_t best = 0;
        float best_val = logits[v];
        for (std::size_t c = 1; c < d.c; ++c)
            if (logits[c * V + v] > best_val) {
                best_val = logits[c * V + v];
                best = c;
            }
        out.labels[v] = static_cast<std::uint8_t>(best);
    }
    return out;
}

std::vector<std::size_t> window_starts(std::size_t extent, std::size_t patch, std::size_t stride) {
    if (patch > extent) throw std::invalid_argument("sliding window: patch larger than volume");
    if (stride == 0) throw std::invalid_argument("sliding window: stride must be >= 1");
    std::vector<std::size_t> out;
    for (std::size_t s = 0; s + patch < extent; s += stride) out.push_back(s);
    if (out.empty() || out.back() != extent - patch) out.push_back(extent - patch);
    return out;
}

TensorF sliding_window_logits(const UNetParams& params, const Volume& volume, const SlidingWindowOptions& options) {
    const UNetConfig& c = params.config;
    const Extent3 d = volume.dims();
    const Extent3 pt = c.patch;
    if (pt.x > d.x || pt.y > d.y || pt.z > d.z)
        throw std::invalid_argument("sliding window: volume smaller than the model patch");
    if (c.in_channels != 1) throw std::invalid_argument("sliding window: model must take one input channel");
    const auto xs = window_starts(d.x, pt.x, std::min(options.stride.x, pt.x));
    const auto ys = window_starts(d.y, pt.y, std::min(options.stride.y, pt.y));
    const auto zs = window_starts(d.z, pt.z, std::min(options.stride.z, pt.z));
    std::vector<Coord3> windows;
    for (std::size_t z : zs)
        for (std::size_t y : ys)
            for (std::size_t x : xs)
                windows.push_back({static_cast<std::int64_t>(x), static_cast<std::int64_t>(y),
                                   static_cast<std::int64_t>(z)});

    const std::size_t V = d.count();
    const std::size_t pv = pt.count();
    TensorF sum(Shape{1, c.classes, d.z, d.y, d.x});
    std::vector<std::uint32_t> hits(V, 0);
    const std::size_t B = std::max<std::size_t>(1, options.batch);

    for (std::size_t first = 0; first < windows.size(); first += B) {
        const std::size_t n = std::min(B, windows.size() - first);
        TensorF batch(Shape{n, 1, pt.z, pt.y, pt.x});
        for (std::size_t b = 0; b < n; ++b) {
            const Coord3 o = windows[first + b];
            float* dst = batch.data() + b * pv;
            for (std::size_t z = 0; z < pt.z; ++z)
                for (std::size_t y = 0; y < pt.y; ++y) {
                    const float* src = volume.values.data() +
                                       volume.index(static_cast<std::size_t>(o.x), static_cast<std::size_t>(o.y) + y,
                                                    static_cast<std::size_t>(o.z) + z);
                    std::copy(src, src + pt.x, dst + (z * pt.y + y) * pt.x);
                }
        }
        const TensorF logits = unet_infer(params, batch);
        for (std::size_t b = 0; b < n; ++b) {
            const Coord3 o = windows[first + b];
            for (std::size_t z = 0; z < pt.z; ++z)
                for (std::size_t y = 0; y < pt.y; ++y) {
                    const std::size_t row = volume.index(static_cast<std::size_t>(o.x),
                                                         static_cast<std::size_t>(o.y) + y,
                                                         static_cast<std::size_t>(o.z) + z);
                    for (std::size_t x = 0; x < pt.x; ++x) ++hits[row + x];
                    for (std::size_t k = 0; k < c.classes; ++k) {
                        const float* src = logits.data() + ((b * c.classes + k) * pt.z + z) * pt.y * pt.x + y * pt.x;
                        float* dst = sum.data() + k * V + row;
                        for (std::size_t x = 0; x < pt.x; ++x) dst[x] += src[x];
                    }
                }
        }
    }
    for (std::size_t k = 0; k < c.classes; ++k)
        for (std::size_t v = 0; v < V; ++v) sum[k * V + v] /= static_cast<float>(hits[v]);
    return sum;
}

LabelMask sliding_window_infer(const UNetParams& params, const Volume& volume, const SlidingWindowOptions& options) {
    return predict_labels(sliding_window_logits(params, volume, options), volume.header.spacing_mm);
}

}  // namespace cardioseg
