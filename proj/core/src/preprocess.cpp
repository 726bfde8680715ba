#include "cardioseg/preprocess.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

#include "cardioseg/rng.hpp"

namespace cardioseg {

namespace {

struct Bounds {
    std::int64_t lo[3] = {std::numeric_limits<std::int64_t>::max(), std::numeric_limits<std::int64_t>::max(),
                          std::numeric_limits<std::int64_t>::max()};
    std::int64_t hi[3] = {-1, -1, -1};

    void add(std::int64_t x, std::int64_t y, std::int64_t z) {
        const std::int64_t p[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], p[a]);
            hi[a] = std::max(hi[a], p[a]);
        }
    }
    bool empty() const { return hi[0] < 0; }
    // Bounds are non-negative, so integer division is floor.
    Coord3 midpoint() const { return {(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2}; }
};

template <typename T>
void copy_window(const std::vector<T>& src, Extent3 sd, std::vector<T>& dst, Extent3 dd, Coord3 origin) {
    // dst(x, y, z) = src(origin + (x, y, z)) where inside the source.
    for (std::size_t z = 0; z < dd.z; ++z) {
        const std::int64_t sz = origin.z + static_cast<std::int64_t>(z);
        if (sz < 0 || sz >= static_cast<std::int64_t>(sd.z)) continue;
        for (std::size_t y = 0; y < dd.y; ++y) {
            const std::int64_t sy = origin.y + static_cast<std::int64_t>(y);
            if (sy < 0 || sy >= static_cast<std::int64_t>(sd.y)) continue;
            for (std::size_t x = 0; x < dd.x; ++x) {
                const std::int64_t sx = origin.x + static_cast<std::int64_t>(x);
                if (sx < 0 || sx >= static_cast<std::int64_t>(sd.x)) continue;
                dst[x + dd.x * (y + dd.y * z)] =
                    src[static_cast<std::size_t>(sx) + sd.x * (static_cast<std::size_t>(sy) + sd.y * static_cast<std::size_t>(sz))];
            }
        }
    }
}

}  // namespace

Coord3 locate_heart_bbox(const LabelMask& mask) {
    Bounds b;
    const Extent3 d = mask.dims();
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x)
                if (mask.at(x, y, z) != kBackground)
                    b.add(static_cast<std::int64_t>(x), static_cast<std::int64_t>(y), static_cast<std::int64_t>(z));
    if (b.empty()) throw std::invalid_argument("locate_heart_bbox: mask has no foreground voxels");
    return b.midpoint();
}

Coord3 locate_heart_auto(const Volume& normalized) {
    const Extent3 d = normalized.dims();
    const Coord3 grid_center{static_cast<std::int64_t>((d.x - 1) / 2), static_cast<std::int64_t>((d.y - 1) / 2),
                             static_cast<std::int64_t>((d.z - 1) / 2)};
    if (normalized.values.empty()) return grid_center;
    std::vector<float> sorted = normalized.values;
    const std::size_t k = (sorted.size() - 1) * 3 / 4;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end());
    const float threshold = sorted[k];

    std::vector<std::uint8_t> above(normalized.values.size());
    for (std::size_t i = 0; i < above.size(); ++i) above[i] = normalized.values[i] > threshold;
    const Components comps = label_components(above, d, Connectivity::Volume6);
    const std::uint32_t best = comps.largest();
    if (best == 0) return grid_center;

    Bounds b;
    for (std::size_t i = 0; i < comps.labels.size(); ++i)
        if (comps.labels[i] == best)
            b.add(static_cast<std::int64_t>(i % d.x), static_cast<std::int64_t>((i / d.x) % d.y),
                  static_cast<std::int64_t>(i / (d.x * d.y)));
    return b.midpoint();
}

CropWindow crop_window(Extent3 source, Coord3 center, Extent3 target) {
    auto start = [](std::int64_t c, std::size_t t) { return c - static_cast<std::int64_t>((t - 1) / 2); };
    return {{start(center.x, target.x), start(center.y, target.y), start(center.z, target.z)}, source, target};
}

Volume crop_or_pad(const Volume& volume, Coord3 center, Extent3 target) {
    const CropWindow w = crop_window(volume.dims(), center, target);
    Volume out(target, volume.header.spacing_mm, 0.0f);
    copy_window(volume.values, volume.dims(), out.values, target, w.origin);
    return out;
}

LabelMask crop_or_pad(const LabelMask& mask, Coord3 center, Extent3 target) {
    const CropWindow w = crop_window(mask.dims(), center, target);
    LabelMask out(target, mask.header.spacing_mm, kBackground);
    copy_window(mask.labels, mask.dims(), out.labels, target, w.origin);
    return out;
}

LabelMask uncrop(const LabelMask& cropped, const CropWindow& window, const VolumeHeader& source_header) {
    if (!(cropped.dims() == window.target)) throw std::invalid_argument("uncrop: mask does not match window");
    LabelMask out(source_header.dims, source_header.spacing_mm, kBackground);
    // Inverse placement: the source sees the window at -origin.
    copy_window(cropped.labels, window.target, out.labels, source_header.dims,
                {-window.origin.x, -window.origin.y, -window.origin.z});
    return out;
}

LabelMask clean_mask(const LabelMask& mask, const CleanOptions& options) {
    const Extent3 d = mask.dims();
    std::vector<std::uint8_t> myo(mask.labels.size());
    for (std::size_t i = 0; i < myo.size(); ++i) myo[i] = mask.labels[i] == kMyocardium;
    const Components comps = label_components(myo, d, options.connectivity);
    if (comps.count() <= 1) return mask;

    // The ring is the largest component per slice (or overall in 3-D mode).
    std::vector<bool> keep(comps.count() + 1, false);
    const bool planar = options.connectivity == Connectivity::Slice4 || options.connectivity == Connectivity::Slice8;
    if (planar) {
        const std::size_t plane = d.x * d.y;
        for (std::size_t z = 0; z < d.z; ++z) {
            std::uint32_t best = 0;
            for (std::size_t i = z * plane; i < (z + 1) * plane; ++i) {
                const std::uint32_t k = comps.labels[i];
                if (k && (best == 0 || comps.sizes[k - 1] > comps.sizes[best - 1] ||
                          (comps.sizes[k - 1] == comps.sizes[best - 1] && k < best)))
                    best = k;
            }
            if (best) keep[best] = true;
        }
    } else {
        keep[comps.largest()] = true;
    }

    std::vector<bool> enclosed(comps.count() + 1, true);
    const auto offsets = neighbour_offsets(options.connectivity);
    const auto X = static_cast<std::int64_t>(d.x), Y = static_cast<std::int64_t>(d.y), Z = static_cast<std::int64_t>(d.z);
    for (std::size_t i = 0; i < comps.labels.size(); ++i) {
        const std::uint32_t k = comps.labels[i];
        if (!k || keep[k] || !enclosed[k]) continue;
        const auto x = static_cast<std::int64_t>(i % d.x);
        const auto y = static_cast<std::int64_t>((i / d.x) % d.y);
        const auto z = static_cast<std::int64_t>(i / (d.x * d.y));
        for (const Coord3& o : offsets) {
            const std::int64_t nx = x + o.x, ny = y + o.y, nz = z + o.z;
            if (nx < 0 || ny < 0 || nz < 0 || nx >= X || ny >= Y || nz >= Z) {
                enclosed[k] = false;
                break;
            }
            const auto n = static_cast<std::size_t>(nx + X * (ny + Y * nz));
            if (mask.labels[n] != kLvCavity && comps.labels[n] != k) {
                enclosed[k] = false;
                break;
            }
        }
    }

    LabelMask out = mask;
    for (std::size_t i = 0; i < comps.labels.size(); ++i) {
        const std::uint32_t k = comps.labels[i];
        if (k && !keep[k]) out.labels[i] = enclosed[k] ? kLvCavity : kBackground;
    }
    return out;
}

LabelMask remap_labels(const LabelMask& raw) {
    static constexpr std::uint8_t kMap[4] = {kBackground, kBackground, kMyocardium, kLvCavity};
    LabelMask out = raw;
    for (auto& v : out.labels) {
        if (v > 3) throw std::invalid_argument("remap_labels: raw label " + std::to_string(v) + " outside {0,1,2,3}");
        v = kMap[v];
    }
    return out;
}

TensorF one_hot(const LabelMask& mask) {
    const Extent3 d = mask.dims();
    TensorF t(Shape{1, kNumClasses, d.z, d.y, d.x});
    const std::size_t vol = d.count();
    for (std::size_t i = 0; i < vol; ++i) {
        const std::uint8_t l = mask.labels[i];
        if (l >= kNumClasses) throw std::invalid_argument("one_hot: label " + std::to_string(l) + " out of range");
        t[l * vol + i] = 1.0f;
    }
    return t;
}

TensorF to_tensor(const Volume& volume) {
    const Extent3 d = volume.dims();
    return TensorF(Shape{1, 1, d.z, d.y, d.x}, volume.values);
}

void validate_patch_extent(Extent3 patch) {
    for (std::size_t e : {patch.x, patch.y, patch.z})
        if (e < 4 || e % 4 != 0)
            throw std::invalid_argument("patch extents must be multiples of 4 and at least 4, got " +
                                        std::to_string(patch.x) + "x" + std::to_string(patch.y) + "x" +
                                        std::to_string(patch.z));
}

std::vector<PatchSample> extract_patches(const Volume& image, const LabelMask& mask, Extent3 patch,
                                         std::size_t count, std::uint64_t seed) {
    validate_patch_extent(patch);
    const Extent3 d = image.dims();
    if (!(mask.dims() == d)) throw std::invalid_argument("extract_patches: image and mask dims differ");
    if (patch.x > d.x || patch.y > d.y || patch.z > d.z)
        throw std::invalid_argument("extract_patches: patch larger than volume");

    const bool has_foreground =
        std::any_of(mask.labels.begin(), mask.labels.end(), [](std::uint8_t l) { return l != kBackground; });
    auto contains_foreground = [&](Coord3 o) {
        for (std::size_t z = 0; z < patch.z; ++z)
            for (std::size_t y = 0; y < patch.y; ++y) {
                const std::size_t row = mask.index(static_cast<std::size_t>(o.x), static_cast<std::size_t>(o.y) + y,
                                                   static_cast<std::size_t>(o.z) + z);
                for (std::size_t x = 0; x < patch.x; ++x)
                    if (mask.labels[row + x] != kBackground) return true;
            }
        return false;
    };

    Rng rng(seed);
    auto draw = [&] {
        return Coord3{rng.uniform_int(0, static_cast<std::int64_t>(d.x - patch.x)),
                      rng.uniform_int(0, static_cast<std::int64_t>(d.y - patch.y)),
                      rng.uniform_int(0, static_cast<std::int64_t>(d.z - patch.z))};
    };

    std::vector<PatchSample> out;
    out.reserve(count);
    const std::size_t pvol = patch.count();
    for (std::size_t i = 0; i < count; ++i) {
        Coord3 o = draw();
        if (has_foreground && i % 2 == 0)
            for (int attempt = 1; attempt < 100 && !contains_foreground(o); ++attempt) o = draw();

        PatchSample s{TensorF(Shape{1, 1, patch.z, patch.y, patch.x}),
                      TensorF(Shape{1, kNumClasses, patch.z, patch.y, patch.x}), o};
        std::size_t j = 0;
        for (std::size_t z = 0; z < patch.z; ++z)
            for (std::size_t y = 0; y < patch.y; ++y)
                for (std::size_t x = 0; x < patch.x; ++x, ++j) {
                    const std::size_t src = image.index(static_cast<std::size_t>(o.x) + x,
                                                        static_cast<std::size_t>(o.y) + y,
                                                        static_cast<std::size_t>(o.z) + z);
                    s.image[j] = image.values[src];
                    s.label[mask.labels[src] * pvol + j] = 1.0f;
                }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace cardioseg
