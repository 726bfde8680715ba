#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cardioseg/tensor.hpp"

namespace cardioseg {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor<T>(value.shape()); }
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
    Tensor<T> m;
    Tensor<T> v;
    std::uint64_t t = 0;
    AdamOptions options;

    static AdamState for_parameter(const Parameter<T>& p, AdamOptions options = {}) {
        return {Tensor<T>(p.value.shape()), Tensor<T>(p.value.shape()), 0, options};
    }
};

/// One bias-corrected Adam update of every parameter with its own state.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, std::span<AdamState<T>> states, double lr);

}  // namespace cardioseg
