#include "cardioseg/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cardioseg {

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, std::span<AdamState<T>> states, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
    if (params.size() != states.size()) throw std::invalid_argument("adam_step: need exactly one state per parameter");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<T>& p = *params[i];
        AdamState<T>& s = states[i];
        if (!(p.grad.shape() == p.value.shape()) || !(s.m.shape() == p.value.shape()) ||
            !(s.v.shape() == p.value.shape()))
            throw std::invalid_argument("adam_step: state/grad shape mismatch for " + p.name);
        s.t += 1;
        const double b1 = s.options.beta1, b2 = s.options.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            const double m = b1 * s.m[k] + (1.0 - b1) * g;
            const double v = b2 * s.v[k] + (1.0 - b2) * g * g;
            s.m[k] = static_cast<T>(m);
            s.v[k] = static_cast<T>(v);
            const double step = lr * (m / c1) / (std::sqrt(v / c2) + s.options.epsilon);
            p.value[k] = static_cast<T>(p.value[k] - step);
        }
    }
}

template void adam_step<float>(std::span<Parameter<float>* const>, std::span<AdamState<float>>, double);
template void adam_step<double>(std::span<Parameter<double>* const>, std::span<AdamState<double>>, double);

}  // namespace cardioseg
