#include "cardioseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cardioseg {

std::string to_string(DataType t) {
    switch (t) {
        case DataType::UInt8: return "uint8";
        case DataType::Int16: return "int16";
        case DataType::Float32: return "float32";
    }
    return "unknown";
}

void VolumeHeader::validate() const {
    if (dims.x == 0 || dims.y == 0 || dims.z == 0) throw std::invalid_argument("volume header: zero-sized dimension");
    if (!(spacing_mm.x > 0.0) || !(spacing_mm.y > 0.0) || !(spacing_mm.z > 0.0))
        throw std::invalid_argument("volume header: voxel spacing must be positive");
    if (slope == 0.0) throw std::invalid_argument("volume header: scaling slope must be non-zero");
}

Volume::Volume(Extent3 dims, Vec3 spacing, float fill) : values(dims.count(), fill) {
    header.dims = dims;
    header.spacing_mm = spacing;
    header.datatype = DataType::Float32;
    header.validate();
}

void Volume::validate() const {
    header.validate();
    if (values.size() != header.dims.count())
        throw std::invalid_argument("volume: value count does not match dims");
    for (float v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("volume: non-finite value");
}

LabelMask::LabelMask(Extent3 dims, Vec3 spacing, std::uint8_t fill) : labels(dims.count(), fill) {
    header.dims = dims;
    header.spacing_mm = spacing;
    header.datatype = DataType::UInt8;
    header.validate();
}

std::size_t LabelMask::count(std::uint8_t label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

void LabelMask::validate(std::uint8_t max_label) const {
    header.validate();
    if (labels.size() != header.dims.count()) throw std::invalid_argument("mask: label count does not match dims");
    for (std::uint8_t v : labels)
        if (v > max_label)
            throw std::invalid_argument("mask: label " + std::to_string(v) + " outside [0, " +
                                        std::to_string(max_label) + "]");
}

Volume normalize_intensity(const Volume& volume) {
    Volume out = volume;
    if (volume.values.empty()) return out;
    const auto [lo_it, hi_it] = std::minmax_element(volume.values.begin(), volume.values.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo)) {
        std::fill(out.values.begin(), out.values.end(), 0.0f);
        return out;
    }
    const double range = hi - lo;
    for (auto& v : out.values) v = static_cast<float>((v - lo) / range);
    return out;
}

}  // namespace cardioseg
