#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cardioseg/layers.hpp"
#include "cardioseg/optim.hpp"
#include "cardioseg/tensor.hpp"
#include "cardioseg/volume.hpp"

namespace cardioseg {

struct UNetConfig {
    std::size_t in_channels = 1;
    std::size_t classes = 3;
    std::size_t base_channels = 16;
    /// Resolution levels including the bottleneck; levels - 1 poolings.
    std::size_t levels = 3;
    /// Patch extents in voxels (X, Y, Z); tensors see them as (W, H, D).
    Extent3 patch{64, 64, 4};
    std::uint64_t seed = 0;
    BatchNormOptions batchnorm{};

    /// Throws std::invalid_argument: classes < 2, base_channels or levels
    /// zero, or patch X/Y not divisible by 2^(levels-1).
    void validate() const;

    /// Channels at encoder level i (the bottleneck is level levels-1).
    std::size_t channels(std::size_t level) const { return base_channels << level; }

    /// Pool window below level i. The axial window drops to 1 once the
    /// depth at that level is odd, so shallow patches stay valid.
    Triple pool_window(std::size_t level) const;

    /// Spatial extent (D, H, W) of feature maps at level i.
    Triple level_extent(std::size_t level) const;

    friend bool operator==(const UNetConfig& a, const UNetConfig& b) {
        return a.in_channels == b.in_channels && a.classes == b.classes && a.base_channels == b.base_channels &&
               a.levels == b.levels && a.patch == b.patch && a.seed == b.seed &&
               a.batchnorm.epsilon == b.batchnorm.epsilon && a.batchnorm.momentum == b.batchnorm.momentum;
    }
};

/// Name and shape of every tensor in the model, in serialization order:
/// all parameters, then running mean/var of every norm layer.
struct TensorSpec {
    std::string name;
    Shape shape;
};
std::vector<TensorSpec> unet_tensor_layout(const UNetConfig& config);

struct UNetParams {
    UNetConfig config;
    std::vector<Parameter<float>> params;
    /// One entry per batch-norm layer, in layer order.
    std::vector<RunningStats<float>> norm_stats;
    std::vector<std::string> norm_names;

    std::size_t parameter_count() const;
    void zero_grad();
    std::vector<Parameter<float>*> parameter_pointers();
};

/// He-normal conv weights (std sqrt(2 / fan_in)), zero biases and betas,
/// unit gammas, fresh running statistics.
UNetParams build_unet(const UNetConfig& config);

/// Intermediate values of a train-mode forward pass, enough for backward.
struct ConvBlockTape {
    TensorF input;
    BatchNormCache<float> norm;
    TensorF output;  // after ReLU
};

struct DoubleConvTape {
    ConvBlockTape first, second;
};

struct UNetTape {
    std::vector<DoubleConvTape> encoder;    // levels - 1
    std::vector<std::vector<std::size_t>> pool_argmax;
    std::vector<Shape> pool_input_shape;
    DoubleConvTape bottleneck;
    std::vector<TensorF> up_input;          // indexed by level
    std::vector<DoubleConvTape> decoder;    // indexed by level
    TensorF head_input;
};

/// Forward pass over a batch [N, in_channels, D, H, W] whose spatial shape
/// equals the configured patch. Train mode updates running statistics and,
/// if `tape` is given, records what backward needs.
TensorF unet_forward(UNetParams& params, const TensorF& batch, Mode mode, UNetTape* tape = nullptr);

/// Eval-mode forward; never mutates the model.
TensorF unet_infer(const UNetParams& params, const TensorF& batch);

/// Accumulates d loss / d parameter into every Parameter::grad.
void unet_backward(UNetParams& params, const UNetTape& tape, const TensorF& grad_logits);

/// Per-voxel argmax over channels of logits [1, C, D, H, W]; ties go to the
/// lowest class. Sigmoid is monotone, so the argmax of the sigmoid outputs
/// is the argmax of the logits.
LabelMask predict_labels(const TensorF& logits, Vec3 spacing = {1.0, 1.0, 1.0});

struct SlidingWindowOptions {
    Extent3 stride{32, 32, 2};
    std::size_t batch = 4;
};

/// Window origins along one axis: 0, stride, ... and a final window
/// clamped to extent - patch so every voxel is covered.
std::vector<std::size_t> window_starts(std::size_t extent, std::size_t patch, std::size_t stride);

/// Logits [1, C, Z, Y, X] for a whole volume, averaging overlapping
/// windows voxelwise in window order. Strides larger than the patch are
/// clamped to it so every voxel is covered.
TensorF sliding_window_logits(const UNetParams& params, const Volume& volume, const SlidingWindowOptions& options = {});

LabelMask sliding_window_infer(const UNetParams& params, const Volume& volume,
                               const SlidingWindowOptions& options = {});

}  // namespace cardioseg
