#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace cardioseg {

/// Voxel counts along X, Y, Z.
struct Extent3 {
    std::size_t x = 1, y = 1, z = 1;

    std::size_t count() const { return x * y * z; }
    friend bool operator==(const Extent3&, const Extent3&) = default;
};

/// Signed voxel coordinate; may lie outside a grid (crop origins, centers).
struct Coord3 {
    std::int64_t x = 0, y = 0, z = 0;
    friend bool operator==(const Coord3&, const Coord3&) = default;
};

/// Physical vector in millimeters.
struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

enum class DataType { UInt8, Int16, Float32 };

std::string to_string(DataType t);

struct VolumeHeader {
    Extent3 dims;
    Vec3 spacing_mm{1.0, 1.0, 1.0};
    DataType datatype = DataType::Float32;
    double slope = 1.0;
    double intercept = 0.0;

    /// Throws std::invalid_argument on zero dims, non-positive spacing or slope 0.
    void validate() const;
    double voxel_volume_mm3() const { return spacing_mm.x * spacing_mm.y * spacing_mm.z; }
};

/// Label values of a segmentation mask.
enum Label : std::uint8_t { kBackground = 0, kMyocardium = 1, kLvCavity = 2 };
inline constexpr std::size_t kNumClasses = 3;

/// Scalar image, X fastest: index = x + X * (y + Y * z).
struct Volume {
    VolumeHeader header;
    std::vector<float> values;

    Volume() = default;
    Volume(Extent3 dims, Vec3 spacing, float fill = 0.0f);

    const Extent3& dims() const { return header.dims; }
    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + header.dims.x * (y + header.dims.y * z);
    }
    float& at(std::size_t x, std::size_t y, std::size_t z) { return values[index(x, y, z)]; }
    float at(std::size_t x, std::size_t y, std::size_t z) const { return values[index(x, y, z)]; }

    /// Header validity, value count and finiteness.
    void validate() const;
};

/// 8-bit label field. Masks produced by this library hold {0, 1, 2};
/// raw public-dataset masks may carry up to label 3 until remapped.
struct LabelMask {
    VolumeHeader header;
    std::vector<std::uint8_t> labels;

    LabelMask() = default;
    LabelMask(Extent3 dims, Vec3 spacing, std::uint8_t fill = kBackground);

    const Extent3& dims() const { return header.dims; }
    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + header.dims.x * (y + header.dims.y * z);
    }
    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t z) { return labels[index(x, y, z)]; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const { return labels[index(x, y, z)]; }

    std::size_t count(std::uint8_t label) const;

    /// Throws std::invalid_argument unless every voxel is in [0, max_label].
    void validate(std::uint8_t max_label = kLvCavity) const;

    friend bool operator==(const LabelMask& a, const LabelMask& b) {
        return a.header.dims == b.header.dims && a.labels == b.labels;
    }
};

/// Per-volume min-max rescale to [0, 1]; a constant volume maps to zeros.
Volume normalize_intensity(const Volume& volume);

}  // namespace cardioseg
