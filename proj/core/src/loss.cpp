#include "cardioseg/loss.hpp"

#include <stdexcept>
#include <string>

namespace cardioseg {

template <typename T>
DiceLossResult<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target_onehot, const DiceLossOptions& options) {
    require_rank5(probs, "dice_loss probs");
    if (!(probs.shape() == target_onehot.shape()))
        throw std::invalid_argument("dice_loss: probs " + probs.shape().str() + " and target " +
                                    target_onehot.shape().str() + " differ");
    if (!(options.smoothing > 0.0)) throw std::invalid_argument("dice_loss: smoothing must be positive");
    const Dims5 d = dims5(probs.shape());
    const std::size_t first = options.include_background ? 0 : 1;
    if (first >= d.c) throw std::invalid_argument("dice_loss: no foreground classes (C=" + std::to_string(d.c) + ")");

    const std::size_t classes = d.c - first;
    const std::size_t vol = d.spatial();
    const double s = options.smoothing;
    DiceLossResult<T> r;
    r.grad = Tensor<T>(probs.shape());
    double dice_sum = 0.0;
    for (std::size_t c = first; c < d.c; ++c) {
        double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
        for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t off = (n * d.c + c) * vol;
            for (std::size_t v = 0; v < vol; ++v) {
                const double p = probs[off + v];
                const double g = target_onehot[off + v];
                inter += p * g;
                sum_p += p;
                sum_g += g;
            }
        }
        const double num = 2.0 * inter + s;
        const double den = sum_p + sum_g + s;
        const double dice = num / den;
        r.per_class_dice.push_back(dice);
        dice_sum += dice;
        // d dice / d p_i = (2 g_i den - num) / den^2; loss carries -1/classes.
        const double scale = -1.0 / (static_cast<double>(classes) * den * den);
        for (std::size_t n = 0; n < d.n; ++n) {
            const std::size_t off = (n * d.c + c) * vol;
            for (std::size_t v = 0; v < vol; ++v)
                r.grad[off + v] = static_cast<T>(scale * (2.0 * target_onehot[off + v] * den - num));
        }
    }
    r.loss = 1.0 - dice_sum / static_cast<double>(classes);
    return r;
}

template DiceLossResult<float> dice_loss<float>(const Tensor<float>&, const Tensor<float>&, const DiceLossOptions&);
template DiceLossResult<double> dice_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                                  const DiceLossOptions&);

}  // namespace cardioseg
