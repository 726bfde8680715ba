#include "cardioseg/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <tuple>

#include "cardioseg/parallel.hpp"

namespace cardioseg {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
    Dims5 in;
    std::size_t cout;
    Triple kernel;
    Triple stride;
    Triple pad;
    Triple out;

    std::size_t kernel_volume() const { return kernel.d * kernel.h * kernel.w; }
    std::size_t col_rows() const { return in.c * kernel_volume(); }
    std::size_t out_spatial() const { return out.d * out.h * out.w; }
    bool is_pointwise() const {
        return kernel_volume() == 1 && stride == Triple{1, 1, 1} && pad == Triple{0, 0, 0};
    }
};

std::size_t extent_out(std::size_t in, std::size_t k, std::size_t s, Padding p) {
    if (p == Padding::Same) return (in + s - 1) / s;
    if (in < k) throw std::invalid_argument("conv3d: valid padding needs input extent >= kernel extent");
    return (in - k) / s + 1;
}

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           const Conv3dOptions& options) {
    require_rank5(input, "conv3d input");
    require_rank5(weight, "conv3d weight");
    const Dims5 in = dims5(input.shape());
    const Dims5 wd = dims5(weight.shape());
    if (wd.c != in.c)
        throw std::invalid_argument("conv3d: input has " + std::to_string(in.c) + " channels but weight " +
                                    weight.shape().str() + " expects " + std::to_string(wd.c));
    if (bias.shape().rank() != 1 || bias.size() != wd.n)
        throw std::invalid_argument("conv3d: bias must have shape [" + std::to_string(wd.n) + "], got " +
                                    bias.shape().str());
    const Triple s = options.stride;
    if (s.d == 0 || s.h == 0 || s.w == 0) throw std::invalid_argument("conv3d: stride must be >= 1");
    Triple pad{0, 0, 0};
    if (options.padding == Padding::Same) {
        if (wd.d % 2 == 0 || wd.h % 2 == 0 || wd.w % 2 == 0)
            throw std::invalid_argument("conv3d: same padding needs odd kernel extents, got " + weight.shape().str());
        pad = {wd.d / 2, wd.h / 2, wd.w / 2};
    }
    ConvGeometry g{in, wd.n, {wd.d, wd.h, wd.w}, s, pad, {}};
    g.out = {extent_out(in.d, wd.d, s.d, options.padding), extent_out(in.h, wd.h, s.h, options.padding),
             extent_out(in.w, wd.w, s.w, options.padding)};
    return g;
}

// Output columns [ow_lo, ow_hi) read an in-bounds input column for kernel
// tap e.
struct ColumnRange {
    std::size_t lo, hi;
};

ColumnRange valid_columns(const ConvGeometry& g, std::size_t e) {
    const auto s = static_cast<std::ptrdiff_t>(g.stride.w);
    const auto off = static_cast<std::ptrdiff_t>(e) - static_cast<std::ptrdiff_t>(g.pad.w);
    const auto W = static_cast<std::ptrdiff_t>(g.in.w);
    const auto Wo = static_cast<std::ptrdiff_t>(g.out.w);
    // smallest ow with ow*s + off >= 0, and first ow with ow*s + off >= W
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
    std::ptrdiff_t hi = W - off <= 0 ? 0 : (W - off + s - 1) / s;
    lo = std::min(lo, Wo);
    hi = std::clamp(hi, lo, Wo);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Unfolds output rows [r0, r1) of one sample [Cin, D, H, W] into a
// [Cin*kd*kh*kw, (r1-r0)*Wo] matrix; row r is (od, oh) = (r / Ho, r % Ho).
template <typename T>
void im2col(const T* in, const ConvGeometry& g, std::size_t r0, std::size_t r1, T* col) {
    const auto [D, H, W] = std::tuple{g.in.d, g.in.h, g.in.w};
    const std::size_t Wo = g.out.w;
    const std::size_t cols = (r1 - r0) * Wo;
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in.c; ++c) {
        const T* plane = in + c * D * H * W;
        for (std::size_t a = 0; a < g.kernel.d; ++a)
            for (std::size_t b = 0; b < g.kernel.h; ++b)
                for (std::size_t e = 0; e < g.kernel.w; ++e, ++row) {
                    const ColumnRange cr = valid_columns(g, e);
                    const auto off = static_cast<std::ptrdiff_t>(e) - static_cast<std::ptrdiff_t>(g.pad.w);
                    T* dst = col + row * cols;
                    for (std::size_t r = r0; r < r1; ++r, dst += Wo) {
                        const auto id = static_cast<std::ptrdiff_t>((r / g.out.h) * g.stride.d + a) -
                                        static_cast<std::ptrdiff_t>(g.pad.d);
                        const auto ih = static_cast<std::ptrdiff_t>((r % g.out.h) * g.stride.h + b) -
                                        static_cast<std::ptrdiff_t>(g.pad.h);
                        if (id < 0 || id >= static_cast<std::ptrdiff_t>(D) || ih < 0 ||
                            ih >= static_cast<std::ptrdiff_t>(H)) {
                            std::fill_n(dst, Wo, T{0});
                            continue;
                        }
                        const T* src = plane + (static_cast<std::size_t>(id) * H + static_cast<std::size_t>(ih)) * W;
                        std::fill_n(dst, cr.lo, T{0});
                        if (g.stride.w == 1) {
                            std::copy_n(src + (static_cast<std::ptrdiff_t>(cr.lo) + off), cr.hi - cr.lo, dst + cr.lo);
                        } else {
                            for (std::size_t ow = cr.lo; ow < cr.hi; ++ow)
                                dst[ow] = src[static_cast<std::ptrdiff_t>(ow * g.stride.w) + off];
                        }
                        std::fill(dst + cr.hi, dst + Wo, T{0});
                    }
                }
    }
}

// Adjoint of im2col: accumulates a column tile back into one sample.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, std::size_t r0, std::size_t r1, T* in) {
    const auto [D, H, W] = std::tuple{g.in.d, g.in.h, g.in.w};
    const std::size_t Wo = g.out.w;
    const std::size_t cols = (r1 - r0) * Wo;
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in.c; ++c) {
        T* plane = in + c * D * H * W;
        for (std::size_t a = 0; a < g.kernel.d; ++a)
            for (std::size_t b = 0; b < g.kernel.h; ++b)
                for (std::size_t e = 0; e < g.kernel.w; ++e, ++row) {
                    const ColumnRange cr = valid_columns(g, e);
                    const auto off = static_cast<std::ptrdiff_t>(e) - static_cast<std::ptrdiff_t>(g.pad.w);
                    const T* src = col + row * cols;
                    for (std::size_t r = r0; r < r1; ++r, src += Wo) {
                        const auto id = static_cast<std::ptrdiff_t>((r / g.out.h) * g.stride.d + a) -
                                        static_cast<std::ptrdiff_t>(g.pad.d);
                        const auto ih = static_cast<std::ptrdiff_t>((r % g.out.h) * g.stride.h + b) -
                                        static_cast<std::ptrdiff_t>(g.pad.h);
                        if (id < 0 || id >= static_cast<std::ptrdiff_t>(D) || ih < 0 ||
                            ih >= static_cast<std::ptrdiff_t>(H))
                            continue;
                        T* dst = plane + (static_cast<std::size_t>(id) * H + static_cast<std::size_t>(ih)) * W;
                        if (g.stride.w == 1) {
                            T* d = dst + (static_cast<std::ptrdiff_t>(cr.lo) + off);
                            for (std::size_t ow = cr.lo; ow < cr.hi; ++ow) *d++ += src[ow];
                        } else {
                            for (std::size_t ow = cr.lo; ow < cr.hi; ++ow)
                                dst[static_cast<std::ptrdiff_t>(ow * g.stride.w) + off] += src[ow];
                        }
                    }
                }
    }
}

// Output rows per GEMM tile, sized so a tile spans roughly 256 columns and
// the unfolded block stays cache resident.
std::size_t tile_rows(const ConvGeometry& g) {
    return std::clamp<std::size_t>(256 / std::max<std::size_t>(g.out.w, 1), 1, g.out.d * g.out.h);
}

template <typename T>
void check_transpose_args(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, Triple stride) {
    require_rank5(input, "conv_transpose3d input");
    require_rank5(weight, "conv_transpose3d weight");
    for (std::size_t s : {stride.d, stride.h, stride.w})
        if (s != 1 && s != 2)
            throw std::invalid_argument("conv_transpose3d: unsupported stride " + std::to_string(s) +
                                        " (only 1 and 2)");
    const Dims5 in = dims5(input.shape());
    const Dims5 wd = dims5(weight.shape());
    if (wd.n != in.c)
        throw std::invalid_argument("conv_transpose3d: input has " + std::to_string(in.c) +
                                    " channels but weight " + weight.shape().str() + " expects " +
                                    std::to_string(wd.n));
    if (wd.d != stride.d || wd.h != stride.h || wd.w != stride.w)
        throw std::invalid_argument("conv_transpose3d: kernel extents " + weight.shape().str() +
                                    " must equal the stride");
    if (bias.shape().rank() != 1 || bias.size() != wd.c)
        throw std::invalid_argument("conv_transpose3d: bias must have shape [" + std::to_string(wd.c) + "]");
}

}  // namespace

Triple conv3d_output_extent(Triple input, Triple kernel, const Conv3dOptions& options) {
    return {extent_out(input.d, kernel.d, options.stride.d, options.padding),
            extent_out(input.h, kernel.h, options.stride.h, options.padding),
            extent_out(input.w, kernel.w, options.stride.w, options.padding)};
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         const Conv3dOptions& options) {
    const ConvGeometry g = conv_geometry(input, weight, bias, options);
    const std::size_t K = g.col_rows();
    const std::size_t V = g.out_spatial();
    Tensor<T> out(Shape{g.in.n, g.cout, g.out.d, g.out.h, g.out.w});
    const Eigen::Map<const MatRM<T>> w(weight.data(), g.cout, K);

    parallel_for(g.in.n, [&](std::size_t n) {
        const T* in_n = input.data() + n * g.in.c * g.in.spatial();
        Eigen::Map<MatRM<T>> out_n(out.data() + n * g.cout * V, g.cout, V);
        if (g.is_pointwise()) {
            out_n.noalias() = w * Eigen::Map<const MatRM<T>>(in_n, K, V);
        } else {
            const std::size_t rows = g.out.d * g.out.h, step = tile_rows(g);
            std::vector<T> col(K * step * g.out.w);
            for (std::size_t r0 = 0; r0 < rows; r0 += step) {
                const std::size_t r1 = std::min(rows, r0 + step), cols = (r1 - r0) * g.out.w;
                im2col(in_n, g, r0, r1, col.data());
                out_n.middleCols(r0 * g.out.w, cols).noalias() = w * Eigen::Map<const MatRM<T>>(col.data(), K, cols);
            }
        }
        for (std::size_t co = 0; co < g.cout; ++co) out_n.row(co).array() += bias[co];
    });
    return out;
}

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weight,
                               const Conv3dOptions& options) {
    const Tensor<T> bias_shape(Shape{weight.shape().rank() == 5 ? weight.shape()[0] : 1});
    const ConvGeometry g = conv_geometry(input, weight, bias_shape, options);
    const Shape expected{g.in.n, g.cout, g.out.d, g.out.h, g.out.w};
    if (!(grad_out.shape() == expected))
        throw std::invalid_argument("conv3d_backward: grad_out " + grad_out.shape().str() +
                                    " does not match forward output " + expected.str());
    const std::size_t K = g.col_rows();
    const std::size_t V = g.out_spatial();

    Conv3dGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), Tensor<T>(Shape{g.cout})};
    const Eigen::Map<const MatRM<T>> w(weight.data(), g.cout, K);
    // Per-sample weight gradients are reduced in sample order afterwards so
    // the sum does not depend on the worker count.
    std::vector<MatRM<T>> partial(g.in.n);

    parallel_for(g.in.n, [&](std::size_t n) {
        const T* in_n = input.data() + n * g.in.c * g.in.spatial();
        const Eigen::Map<const MatRM<T>> gout(grad_out.data() + n * g.cout * V, g.cout, V);
        T* gin_n = grads.input.data() + n * g.in.c * g.in.spatial();
        if (g.is_pointwise()) {
            partial[n].noalias() = gout * Eigen::Map<const MatRM<T>>(in_n, K, V).transpose();
            Eigen::Map<MatRM<T>>(gin_n, K, V).noalias() = w.transpose() * gout;
            return;
        }
        const std::size_t rows = g.out.d * g.out.h, step = tile_rows(g);
        std::vector<T> col(K * step * g.out.w);
        partial[n].setZero(g.cout, K);
        for (std::size_t r0 = 0; r0 < rows; r0 += step) {
            const std::size_t r1 = std::min(rows, r0 + step), cols = (r1 - r0) * g.out.w;
            const auto gout_tile = gout.middleCols(r0 * g.out.w, cols);
            Eigen::Map<MatRM<T>> c(col.data(), K, cols);
            im2col(in_n, g, r0, r1, col.data());
            partial[n].noalias() += gout_tile * c.transpose();
            c.noalias() = w.transpose() * gout_tile;
            col2im(col.data(), g, r0, r1, gin_n);
        }
    });

    Eigen::Map<MatRM<T>> gw(grads.weight.data(), g.cout, K);
    for (std::size_t n = 0; n < g.in.n; ++n) gw += partial[n];

    for (std::size_t co = 0; co < g.cout; ++co) {
        double acc = 0.0;
        for (std::size_t n = 0; n < g.in.n; ++n) {
            const T* row = grad_out.data() + (n * g.cout + co) * V;
            for (std::size_t v = 0; v < V; ++v) acc += row[v];
        }
        grads.bias[co] = static_cast<T>(acc);
    }
    return grads;
}

template <typename T>
Tensor<T> conv_transpose3d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                                   Triple stride) {
    check_transpose_args(input, weight, bias, stride);
    const Dims5 in = dims5(input.shape());
    const std::size_t cout = weight.shape()[1];
    const std::size_t K = stride.d * stride.h * stride.w;
    const std::size_t Vin = in.spatial();
    const Triple o{in.d * stride.d, in.h * stride.h, in.w * stride.w};
    Tensor<T> out(Shape{in.n, cout, o.d, o.h, o.w});
    const Eigen::Map<const MatRM<T>> w(weight.data(), in.c, cout * K);

    parallel_for(in.n, [&](std::size_t n) {
        MatRM<T> col = w.transpose() * Eigen::Map<const MatRM<T>>(input.data() + n * in.c * Vin, in.c, Vin);
        T* out_n = out.data() + n * cout * o.d * o.h * o.w;
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t a = 0; a < stride.d; ++a)
                for (std::size_t b = 0; b < stride.h; ++b)
                    for (std::size_t e = 0; e < stride.w; ++e) {
                        const T* src = col.data() + (co * K + (a * stride.h + b) * stride.w + e) * Vin;
                        for (std::size_t d = 0; d < in.d; ++d)
                            for (std::size_t h = 0; h < in.h; ++h) {
                                T* dst = out_n + ((co * o.d + d * stride.d + a) * o.h + h * stride.h + b) * o.w + e;
                                const T* s = src + (d * in.h + h) * in.w;
                                for (std::size_t x = 0; x < in.w; ++x) dst[x * stride.w] = s[x] + bias[co];
                            }
                    }
    });
    return out;
}

template <typename T>
Conv3dGrads<T> conv_transpose3d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                         const Tensor<T>& weight, Triple stride) {
    const Tensor<T> bias_shape(Shape{weight.shape().rank() == 5 ? weight.shape()[1] : 1});
    check_transpose_args(input, weight, bias_shape, stride);
    const Dims5 in = dims5(input.shape());
    const std::size_t cout = weight.shape()[1];
    const std::size_t K = stride.d * stride.h * stride.w;
    const std::size_t Vin = in.spatial();
    const Triple o{in.d * stride.d, in.h * stride.h, in.w * stride.w};
    const Shape expected{in.n, cout, o.d, o.h, o.w};
    if (!(grad_out.shape() == expected))
        throw std::invalid_argument("conv_transpose3d_backward: grad_out " + grad_out.shape().str() +
                                    " does not match forward output " + expected.str());

    Conv3dGrads<T> grads{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), Tensor<T>(Shape{cout})};
    const Eigen::Map<const MatRM<T>> w(weight.data(), in.c, cout * K);
    std::vector<MatRM<T>> partial(in.n);

    parallel_for(in.n, [&](std::size_t n) {
        MatRM<T> gcol(cout * K, Vin);
        const T* g_n = grad_out.data() + n * cout * o.d * o.h * o.w;
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t a = 0; a < stride.d; ++a)
                for (std::size_t b = 0; b < stride.h; ++b)
                    for (std::size_t e = 0; e < stride.w; ++e) {
                        T* dst = gcol.data() + (co * K + (a * stride.h + b) * stride.w + e) * Vin;
                        for (std::size_t d = 0; d < in.d; ++d)
                            for (std::size_t h = 0; h < in.h; ++h) {
                                const T* src = g_n + ((co * o.d + d * stride.d + a) * o.h + h * stride.h + b) * o.w + e;
                                T* dd = dst + (d * in.h + h) * in.w;
                                for (std::size_t x = 0; x < in.w; ++x) dd[x] = src[x * stride.w];
                            }
                    }
        const Eigen::Map<const MatRM<T>> in_n(input.data() + n * in.c * Vin, in.c, Vin);
        Eigen::Map<MatRM<T>>(grads.input.data() + n * in.c * Vin, in.c, Vin).noalias() = w * gcol;
        partial[n].noalias() = in_n * gcol.transpose();
    });

    Eigen::Map<MatRM<T>> gw(grads.weight.data(), in.c, cout * K);
    for (std::size_t n = 0; n < in.n; ++n) gw += partial[n];

    const std::size_t Vout = o.d * o.h * o.w;
    for (std::size_t co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (std::size_t n = 0; n < in.n; ++n) {
            const T* row = grad_out.data() + (n * cout + co) * Vout;
            for (std::size_t v = 0; v < Vout; ++v) acc += row[v];
        }
        grads.bias[co] = static_cast<T>(acc);
    }
    return grads;
}

template <typename T>
MaxPoolResult<T> maxpool3d_forward(const Tensor<T>& input, Triple window) {
    require_rank5(input, "maxpool3d");
    const Dims5 in = dims5(input.shape());
    if (window.d == 0 || window.h == 0 || window.w == 0) throw std::invalid_argument("maxpool3d: zero window");
    if (in.d % window.d || in.h % window.h || in.w % window.w)
        throw std::invalid_argument("maxpool3d: input " + input.shape().str() + " not divisible by window (" +
                                    std::to_string(window.d) + "," + std::to_string(window.h) + "," +
                                    std::to_string(window.w) + ")");
    const Triple o{in.d / window.d, in.h / window.h, in.w / window.w};
    MaxPoolResult<T> r{Tensor<T>(Shape{in.n, in.c, o.d, o.h, o.w}), {}};
    r.argmax.resize(r.output.size());

    std::size_t out_index = 0;
    for (std::size_t nc = 0; nc < in.n * in.c; ++nc) {
        const std::size_t base = nc * in.spatial();
        for (std::size_t d = 0; d < o.d; ++d)
            for (std::size_t h = 0; h < o.h; ++h)
                for (std::size_t w = 0; w < o.w; ++w, ++out_index) {
                    std::size_t best = 0;
                    bool have = false;
                    // Scan in increasing flat index; strict '>' keeps the first maximum.
                    for (std::size_t a = 0; a < window.d; ++a)
                        for (std::size_t b = 0; b < window.h; ++b)
                            for (std::size_t e = 0; e < window.w; ++e) {
                                const std::size_t idx =
                                    base + ((d * window.d + a) * in.h + h * window.h + b) * in.w + w * window.w + e;
                                if (!have || input[idx] > input[best]) {
                                    best = idx;
                                    have = true;
                                }
                            }
                    r.output[out_index] = input[best];
                    r.argmax[out_index] = best;
                }
    }
    return r;
}

template <typename T>
Tensor<T> maxpool3d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                             const Shape& input_shape) {
    if (grad_out.size() != argmax.size())
        throw std::invalid_argument("maxpool3d_backward: grad_out and argmax sizes differ");
    Tensor<T> grad_in(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) {
        if (argmax[i] >= grad_in.size()) throw std::invalid_argument("maxpool3d_backward: argmax out of range");
        grad_in[argmax[i]] += grad_out[i];
    }
    return grad_in;
}

template <typename T>
RunningStats<T> RunningStats<T>::fresh(std::size_t channels) {
    return {Tensor<T>(Shape{channels}, T{0}), Tensor<T>(Shape{channels}, T{1})};
}

namespace {

template <typename T>
void check_norm_args(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta) {
    require_rank5(input, "batchnorm3d");
    const std::size_t c = input.shape()[1];
    if (gamma.size() != c || beta.size() != c)
        throw std::invalid_argument("batchnorm3d: gamma/beta length must equal channel count " + std::to_string(c));
}

template <typename T>
Tensor<T> apply_affine(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       const std::vector<double>& mean, const std::vector<double>& inv_std,
                       Tensor<T>* normalized) {
    const Dims5 d = dims5(input.shape());
    const std::size_t vol = d.spatial();
    Tensor<T> out(input.shape());
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t c = 0; c < d.c; ++c) {
            const std::size_t off = (n * d.c + c) * vol;
            const T m = static_cast<T>(mean[c]);
            const T s = static_cast<T>(inv_std[c]);
            for (std::size_t v = 0; v < vol; ++v) {
                const T xhat = (input[off + v] - m) * s;
                if (normalized) (*normalized)[off + v] = xhat;
                out[off + v] = gamma[c] * xhat + beta[c];
            }
        }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> batchnorm3d_inference(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                                const RunningStats<T>& stats, const BatchNormOptions& options) {
    check_norm_args(input, gamma, beta);
    if (!stats.initialized()) throw std::invalid_argument("batchnorm3d: eval mode with uninitialized running stats");
    const std::size_t C = input.shape()[1];
    if (stats.mean.size() != C || stats.var.size() != C)
        throw std::invalid_argument("batchnorm3d: running stats do not match channel count");
    std::vector<double> mean(C), inv_std(C);
    for (std::size_t c = 0; c < C; ++c) {
        mean[c] = stats.mean[c];
        inv_std[c] = 1.0 / std::sqrt(static_cast<double>(stats.var[c]) + options.epsilon);
    }
    return apply_affine<T>(input, gamma, beta, mean, inv_std, nullptr);
}

template <typename T>
Tensor<T> batchnorm3d_forward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                              RunningStats<T>& stats, Mode mode, const BatchNormOptions& options,
                              BatchNormCache<T>* cache) {
    check_norm_args(input, gamma, beta);
    const Dims5 d = dims5(input.shape());
    if (mode == Mode::Eval) {
        Tensor<T> out = batchnorm3d_inference(input, gamma, beta, stats, options);
        if (cache) {
            cache->mode = Mode::Eval;
            cache->inv_std.assign(d.c, T{0});
            for (std::size_t c = 0; c < d.c; ++c)
                cache->inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[c]) + options.epsilon));
            cache->normalized = Tensor<T>();
        }
        return out;
    }

    const std::size_t vol = d.spatial();
    const double count = static_cast<double>(d.n * vol);
    std::vector<double> mean(d.c, 0.0), var(d.c, 0.0), inv_std(d.c);
    for (std::size_t c = 0; c < d.c; ++c) {
        double s = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) {
            const T* p = input.data() + (n * d.c + c) * vol;
            for (std::size_t v = 0; v < vol; ++v) s += p[v];
        }
        mean[c] = s / count;
        double ss = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) {
            const T* p = input.data() + (n * d.c + c) * vol;
            for (std::size_t v = 0; v < vol; ++v) {
                const double dv = p[v] - mean[c];
                ss += dv * dv;
            }
        }
        var[c] = ss / count;
        inv_std[c] = 1.0 / std::sqrt(var[c] + options.epsilon);
    }

    if (!stats.initialized()) stats = RunningStats<T>::fresh(d.c);
    if (stats.mean.size() != d.c || stats.var.size() != d.c)
        throw std::invalid_argument("batchnorm3d: running stats do not match channel count");
    for (std::size_t c = 0; c < d.c; ++c) {
        stats.mean[c] = static_cast<T>((1.0 - options.momentum) * stats.mean[c] + options.momentum * mean[c]);
        stats.var[c] = static_cast<T>((1.0 - options.momentum) * stats.var[c] + options.momentum * var[c]);
    }

    Tensor<T> normalized;
    if (cache) normalized = Tensor<T>(input.shape());
    Tensor<T> out = apply_affine(input, gamma, beta, mean, inv_std, cache ? &normalized : nullptr);
    if (cache) {
        cache->mode = Mode::Train;
        cache->normalized = std::move(normalized);
        cache->inv_std.assign(inv_std.begin(), inv_std.end());
    }
    return out;
}

template <typename T>
BatchNormGrads<T> batchnorm3d_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma,
                                       const BatchNormCache<T>& cache) {
    require_rank5(grad_out, "batchnorm3d_backward");
    const Dims5 d = dims5(grad_out.shape());
    if (gamma.size() != d.c || cache.inv_std.size() != d.c)
        throw std::invalid_argument("batchnorm3d_backward: channel count mismatch");
    BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), Tensor<T>(Shape{d.c}), Tensor<T>(Shape{d.c})};
    const std::size_t vol = d.spatial();

    if (cache.mode == Mode::Eval) {
        // Statistics are constants here; gamma/beta gradients need x-hat,
        // which eval mode does not keep, so only the input gradient is formed.
        for (std::size_t n = 0; n < d.n; ++n)
            for (std::size_t c = 0; c < d.c; ++c) {
                const std::size_t off = (n * d.c + c) * vol;
                const T scale = gamma[c] * cache.inv_std[c];
                for (std::size_t v = 0; v < vol; ++v) g.input[off + v] = grad_out[off + v] * scale;
            }
        return g;
    }

    if (!(cache.normalized.shape() == grad_out.shape()))
        throw std::invalid_argument("batchnorm3d_backward: cache does not match grad_out " + grad_out.shape().str());
    const double count = static_cast<double>(d.n * vol);
    for (std::size_t c = 0; c < d.c; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t off = (n * d.c + c) * vol;
            for (std::size_t v = 0; v < vol; ++v) {
                sum_dy += grad_out[off + v];
                sum_dy_xhat += static_cast<double>(grad_out[off + v]) * cache.normalized[off + v];
            }
        }
        g.beta[c] = static_cast<T>(sum_dy);
        g.gamma[c] = static_cast<T>(sum_dy_xhat);
        // dx = gamma * inv_std / M * (M * dy - sum(dy) - xhat * sum(dy * xhat))
        const double k = static_cast<double>(gamma[c]) * cache.inv_std[c];
        const double mean_dy = sum_dy / count;
        const double mean_dy_xhat = sum_dy_xhat / count;
        for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t off = (n * d.c + c) * vol;
            for (std::size_t v = 0; v < vol; ++v)
                g.input[off + v] =
                    static_cast<T>(k * (grad_out[off + v] - mean_dy - cache.normalized[off + v] * mean_dy_xhat));
        }
    }
    return g;
}

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& input, Activation kind) {
    Tensor<T> out(input.shape());
    if (kind == Activation::Relu) {
        for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T{0} ? input[i] : T{0};
    } else {
        for (std::size_t i = 0; i < input.size(); ++i) out[i] = T{1} / (T{1} + std::exp(-input[i]));
    }
    return out;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& grad_out, const Tensor<T>& output, Activation kind) {
    if (!(grad_out.shape() == output.shape()))
        throw std::invalid_argument("activation_backward: shape mismatch " + grad_out.shape().str() + " vs " +
                                    output.shape().str());
    Tensor<T> g(output.shape());
    if (kind == Activation::Relu) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = output[i] > T{0} ? grad_out[i] : T{0};
    } else {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * output[i] * (T{1} - output[i]);
    }
    return g;
}

#define CARDIOSEG_INSTANTIATE(T)                                                                                  \
    template Tensor<T> conv3d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                                         const Conv3dOptions&);                                                  \
    template Conv3dGrads<T> conv3d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                               const Conv3dOptions&);                                            \
    template Tensor<T> conv_transpose3d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                                   Triple);                                                      \
    template Conv3dGrads<T> conv_transpose3d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                                         Triple);                                                \
    template MaxPoolResult<T> maxpool3d_forward<T>(const Tensor<T>&, Triple);                                   \
    template Tensor<T> maxpool3d_backward<T>(const Tensor<T>&, const std::vector<std::size_t>&, const Shape&);  \
    template struct RunningStats<T>;                                                                             \
    template Tensor<T> batchnorm3d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                              RunningStats<T>&, Mode, const BatchNormOptions&,                  \
                                              BatchNormCache<T>*);                                               \
    template Tensor<T> batchnorm3d_inference<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                                const RunningStats<T>&, const BatchNormOptions&);               \
    template BatchNormGrads<T> batchnorm3d_backward<T>(const Tensor<T>&, const Tensor<T>&,                      \
                                                       const BatchNormCache<T>&);                                \
    template Tensor<T> activation_forward<T>(const Tensor<T>&, Activation);                                     \
    template Tensor<T> activation_backward<T>(const Tensor<T>&, const Tensor<T>&, Activation);

CARDIOSEG_INSTANTIATE(float)
CARDIOSEG_INSTANTIATE(double)

#undef CARDIOSEG_INSTANTIATE

}  // namespace cardioseg
