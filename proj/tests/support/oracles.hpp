#pragma once

// Slow, obviously-correct reference implementations used as test oracles.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cardioseg/layers.hpp"
#include "cardioseg/metrics.hpp"
#include "cardioseg/rng.hpp"
#include "cardioseg/tensor.hpp"
#include "cardioseg/volume.hpp"

namespace oracle {

using cardioseg::TensorD;
using cardioseg::Triple;

inline TensorD random_tensor(cardioseg::Shape shape, cardioseg::Rng& rng) {
    TensorD t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
    return t;
}

// Direct six-loop cross-correlation with explicit zero padding.
inline TensorD conv3d(const TensorD& x, const TensorD& w, const TensorD& b, Triple stride, bool same) {
    const auto X = cardioseg::dims5(x.shape());
    const auto K = cardioseg::dims5(w.shape());
    const std::size_t pd = same ? K.d / 2 : 0, ph = same ? K.h / 2 : 0, pw = same ? K.w / 2 : 0;
    auto out_extent = [&](std::size_t in, std::size_t k, std::size_t s) {
        return same ? (in + s - 1) / s : (in - k) / s + 1;
    };
    const std::size_t Do = out_extent(X.d, K.d, stride.d), Ho = out_extent(X.h, K.h, stride.h),
                      Wo = out_extent(X.w, K.w, stride.w);
    TensorD y(cardioseg::Shape{X.n, K.n, Do, Ho, Wo});
    for (std::size_t n = 0; n < X.n; ++n)
        for (std::size_t co = 0; co < K.n; ++co)
            for (std::size_t od = 0; od < Do; ++od)
                for (std::size_t oh = 0; oh < Ho; ++oh)
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                        double acc = b[co];
                        for (std::size_t ci = 0; ci < X.c; ++ci)
                            for (std::size_t a = 0; a < K.d; ++a)
                                for (std::size_t bb = 0; bb < K.h; ++bb)
                                    for (std::size_t e = 0; e < K.w; ++e) {
                                        const long id = long(od * stride.d + a) - long(pd);
                                        const long ih = long(oh * stride.h + bb) - long(ph);
                                        const long iw = long(ow * stride.w + e) - long(pw);
                                        if (id < 0 || ih < 0 || iw < 0 || id >= long(X.d) || ih >= long(X.h) ||
                                            iw >= long(X.w))
                                            continue;
                                        acc += x.at(n, ci, std::size_t(id), std::size_t(ih), std::size_t(iw)) *
                                               w.at(co, ci, a, bb, e);
                                    }
                        y.at(n, co, od, oh, ow) = acc;
                    }
    return y;
}

// Scatter form of a transposed convolution with kernel == stride.
inline TensorD conv_transpose3d(const TensorD& x, const TensorD& w, const TensorD& b, Triple s) {
    const auto X = cardioseg::dims5(x.shape());
    const auto K = cardioseg::dims5(w.shape());
    TensorD y(cardioseg::Shape{X.n, K.c, X.d * s.d, X.h * s.h, X.w * s.w});
    for (std::size_t n = 0; n < X.n; ++n)
        for (std::size_t co = 0; co < K.c; ++co)
            for (std::size_t d = 0; d < X.d * s.d; ++d)
                for (std::size_t h = 0; h < X.h * s.h; ++h)
                    for (std::size_t ww = 0; ww < X.w * s.w; ++ww) {
                        double acc = b[co];
                        for (std::size_t ci = 0; ci < X.c; ++ci)
                            acc += x.at(n, ci, d / s.d, h / s.h, ww / s.w) * w.at(ci, co, d % s.d, h % s.h, ww % s.w);
                        y.at(n, co, d, h, ww) = acc;
                    }
    return y;
}

inline double max_abs_diff(const TensorD& a, const TensorD& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Confusion counts by enumerating every voxel.
struct Counts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Counts enumerate(const cardioseg::LabelMask& pred, const cardioseg::LabelMask& gt, std::uint8_t label) {
    Counts c;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const bool p = pred.labels[i] == label, g = gt.labels[i] == label;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

inline cardioseg::LabelMask random_mask(cardioseg::Extent3 dims, std::mt19937_64& gen, double fg = 0.5) {
    cardioseg::LabelMask m(dims, {1.0, 1.0, 1.0});
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& l : m.labels) l = u(gen) < fg ? static_cast<std::uint8_t>(1 + (u(gen) < 0.5)) : 0;
    return m;
}

// Scratch directory removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("cardioseg_" + tag + "_" + std::to_string((std::uint64_t(rd()) << 32) | rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace oracle
