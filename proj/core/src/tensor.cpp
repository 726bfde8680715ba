#include "cardioseg/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace cardioseg {

Shape::Shape(std::initializer_list<std::size_t> extents)
    : Shape(std::span<const std::size_t>(extents.begin(), extents.size())) {}

Shape::Shape(std::span<const std::size_t> extents) {
    if (extents.empty() || extents.size() > kMaxRank)
        throw std::invalid_argument("Shape: rank must be in [1, 5], got " +
                                    std::to_string(extents.size()));
    for (std::size_t i = 0; i < extents.size(); ++i) {
        if (extents[i] == 0) throw std::invalid_argument("Shape: zero-sized extent on axis " + std::to_string(i));
        extents_[i] = extents[i];
    }
    rank_ = extents.size();
}

std::size_t Shape::numel() const {
    if (rank_ == 0) return 0;
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= extents_[i];
    return n;
}

std::string Shape::str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "x" : "") << extents_[i];
    os << ']';
    return os.str();
}

Dims5 dims5(const Shape& shape) {
    if (shape.rank() != 5) throw std::invalid_argument("expected a rank-5 tensor, got " + shape.str());
    return {shape[0], shape[1], shape[2], shape[3], shape[4]};
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape), data_(shape.numel(), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
    if (data_.size() != shape_.numel())
        throw std::invalid_argument("Tensor: " + std::to_string(data_.size()) + " values do not fit shape " +
                                    shape_.str());
}

template <typename T>
T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) {
    return data_[(((n * shape_[1] + c) * shape_[2] + d) * shape_[3] + h) * shape_[4] + w];
}

template <typename T>
const T& Tensor<T>::at(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w) const {
    return data_[(((n * shape_[1] + c) * shape_[2] + d) * shape_[3] + h) * shape_[4] + w];
}

template <typename T>
void Tensor<T>::fill(T value) {
    std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    if (shape.numel() != data_.size())
        throw std::invalid_argument("reshape " + shape_.str() + " -> " + shape.str() + " changes element count");
    return Tensor(shape, data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (T v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    if (!(a.shape() == b.shape()))
        throw std::invalid_argument("dot: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <typename T>
void require_rank5(const Tensor<T>& t, const char* what) {
    if (t.empty()) throw std::invalid_argument(std::string(what) + ": empty tensor");
    if (t.shape().rank() != 5)
        throw std::invalid_argument(std::string(what) + ": expected rank-5 tensor, got " + t.shape().str());
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    require_rank5(a, "concat_channels");
    require_rank5(b, "concat_channels");
    const Dims5 da = dims5(a.shape());
    const Dims5 db = dims5(b.shape());
    if (da.n != db.n || da.d != db.d || da.h != db.h || da.w != db.w)
        throw std::invalid_argument("concat_channels: " + a.shape().str() + " and " + b.shape().str() +
                                    " differ outside the channel axis");
    Tensor<T> out(Shape{da.n, da.c + db.c, da.d, da.h, da.w});
    const std::size_t vol = da.spatial();
    for (std::size_t n = 0; n < da.n; ++n) {
        T* dst = out.data() + n * (da.c + db.c) * vol;
        std::copy_n(a.data() + n * da.c * vol, da.c * vol, dst);
        std::copy_n(b.data() + n * db.c * vol, db.c * vol, dst + da.c * vol);
    }
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t first) {
    require_rank5(x, "split_channels");
    const Dims5 d = dims5(x.shape());
    if (first == 0 || first >= d.c) throw std::invalid_argument("split_channels: split point out of range");
    Tensor<T> a(Shape{d.n, first, d.d, d.h, d.w});
    Tensor<T> b(Shape{d.n, d.c - first, d.d, d.h, d.w});
    const std::size_t vol = d.spatial();
    for (std::size_t n = 0; n < d.n; ++n) {
        const T* src = x.data() + n * d.c * vol;
        std::copy_n(src, first * vol, a.data() + n * first * vol);
        std::copy_n(src + first * vol, (d.c - first) * vol, b.data() + n * (d.c - first) * vol);
    }
    return {std::move(a), std::move(b)};
}

#define CARDIOSEG_INSTANTIATE(T)                                                        \
    template class Tensor<T>;                                                          \
    template double dot<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template void require_rank5<T>(const Tensor<T>&, const char*);                     \
    template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);         \
    template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, std::size_t);

CARDIOSEG_INSTANTIATE(float)
CARDIOSEG_INSTANTIATE(double)

#undef CARDIOSEG_INSTANTIATE

}  // namespace cardioseg
