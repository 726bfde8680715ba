#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cardioseg/tensor.hpp"

namespace cardioseg {

// Layer kernels for rank-5 (N, C, D, H, W) feature maps. Each forward has a
// matching backward that takes what the forward saw and returns gradients;
// there is no graph, callers keep what they need.

enum class Padding {
    Same,   ///< pad k/2 on each side (odd kernels only); output = ceil(in / stride)
    Valid,  ///< no padding; output = (in - k) / stride + 1
};

struct Conv3dOptions {
    Triple stride{1, 1, 1};
    Padding padding = Padding::Same;
};

/// Cross-correlation. weight is [Cout, Cin, kd, kh, kw], bias is [Cout].
template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         const Conv3dOptions& options = {});

template <typename T>
struct Conv3dGrads {
    Tensor<T> input;
    Tensor<T> weight;
    Tensor<T> bias;
};

template <typename T>
Conv3dGrads<T> conv3d_backward(const Tensor<T>& grad_out, const Tensor<T>& input, const Tensor<T>& weight,
                               const Conv3dOptions& options = {});

/// Output extents of conv3d for the given input and kernel extents.
Triple conv3d_output_extent(Triple input, Triple kernel, const Conv3dOptions& options);

/// Transposed convolution with kernel extent equal to stride on each axis
/// (non-overlapping scatter). weight is [Cin, Cout, sd, sh, sw]; output
/// spatial extents are input extents times stride. Strides must be 1 or 2.
template <typename T>
Tensor<T> conv_transpose3d_forward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                                   Triple stride);

template <typename T>
Conv3dGrads<T> conv_transpose3d_backward(const Tensor<T>& grad_out, const Tensor<T>& input,
                                         const Tensor<T>& weight, Triple stride);

/// Non-overlapping max pooling. argmax holds the flat input index that
/// produced each output element; ties go to the lowest flat index.
template <typename T>
struct MaxPoolResult {
    Tensor<T> output;
    std::vector<std::size_t> argmax;
};

template <typename T>
MaxPoolResult<T> maxpool3d_forward(const Tensor<T>& input, Triple window);

template <typename T>
Tensor<T> maxpool3d_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                             const Shape& input_shape);

enum class Mode { Train, Eval };

/// Per-channel running mean and variance. Empty tensors mean
/// "not initialized"; eval-mode normalization rejects that state.
template <typename T>
struct RunningStats {
    Tensor<T> mean;
    Tensor<T> var;

    bool initialized() const { return !mean.empty() && !var.empty(); }
    /// mean 0, variance 1 for `channels` channels.
    static RunningStats fresh(std::size_t channels);
};

struct BatchNormOptions {
    double epsilon = 1e-5;
    double momentum = 0.1;
};

template <typename T>
struct BatchNormCache {
    Mode mode = Mode::Train;
    Tensor<T> normalized;     // x-hat, before the affine transform
    std::vector<T> inv_std;   // per channel
};

/// Train mode normalizes with batch statistics over (N, D, H, W) and
/// updates `stats` as running <- (1 - momentum) * running + momentum * batch
/// (biased batch variance). Eval mode reads `stats` only.
template <typename T>
Tensor<T> batchnorm3d_forward(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                              RunningStats<T>& stats, Mode mode, const BatchNormOptions& options = {},
                              BatchNormCache<T>* cache = nullptr);

/// Eval-mode normalization without touching the statistics.
template <typename T>
Tensor<T> batchnorm3d_inference(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                                const RunningStats<T>& stats, const BatchNormOptions& options = {});

template <typename T>
struct BatchNormGrads {
    Tensor<T> input;
    Tensor<T> gamma;
    Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm3d_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma,
                                       const BatchNormCache<T>& cache);

enum class Activation { Relu, Sigmoid };

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& input, Activation kind);

/// `output` is the forward result; both derivatives are expressed in it.
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& grad_out, const Tensor<T>& output, Activation kind);

}  // namespace cardioseg
