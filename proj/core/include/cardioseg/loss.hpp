#pragma once

#include "cardioseg/tensor.hpp"

namespace cardioseg {

struct DiceLossOptions {
    double smoothing = 1e-6;
    /// Channel 0 is background. By default only channels 1..C-1 enter the
    /// mean; set this to average over every channel.
    bool include_background = false;
};

template <typename T>
struct DiceLossResult {
    double loss = 0.0;
    std::vector<double> per_class_dice;  // one entry per averaged channel
    Tensor<T> grad;                      // d loss / d probs
};

/// Soft Dice loss over probabilities [N, C, D, H, W]. For each averaged
/// class c, dice_c = (2 * sum(p * g) + s) / (sum(p) + sum(g) + s), with sums
/// over batch and space; loss = 1 - mean_c dice_c.
template <typename T>
DiceLossResult<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target_onehot,
                            const DiceLossOptions& options = {});

}  // namespace cardioseg
