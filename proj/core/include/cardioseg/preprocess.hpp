#pragma once

#include <cstdint>
#include <vector>

#include "cardioseg/components.hpp"
#include "cardioseg/tensor.hpp"
#include "cardioseg/volume.hpp"

namespace cardioseg {

/// Shape every image is cropped or zero-padded to before patching (X, Y, Z).
inline constexpr Extent3 kCanonicalShape{156, 156, 6};

/// Midpoint (rounded down) of the bounding box of non-zero labels.
/// Throws std::invalid_argument for an all-background mask.
Coord3 locate_heart_bbox(const LabelMask& mask);

/// Localization without annotations: threshold the normalized image above
/// its 75th percentile and return the bounding-box midpoint of the largest
/// 6-connected component. Falls back to the grid center when nothing
/// exceeds the threshold.
Coord3 locate_heart_auto(const Volume& normalized);

/// Placement of a target-sized window inside a source grid. The window
/// starts at center - (target - 1) / 2 on each axis and may hang over the
/// source boundary; uncovered voxels are zero.
struct CropWindow {
    Coord3 origin;
    Extent3 source;
    Extent3 target;
};

CropWindow crop_window(Extent3 source, Coord3 center, Extent3 target = kCanonicalShape);

Volume crop_or_pad(const Volume& volume, Coord3 center, Extent3 target = kCanonicalShape);
LabelMask crop_or_pad(const LabelMask& mask, Coord3 center, Extent3 target = kCanonicalShape);

/// Pastes a cropped mask back into the source grid described by `window`;
/// source voxels outside the window are background.
LabelMask uncrop(const LabelMask& cropped, const CropWindow& window, const VolumeHeader& source_header);

struct CleanOptions {
    /// Slice8 cleans each axial slice on its own; Volume26 treats the
    /// mask as one 3-D object.
    Connectivity connectivity = Connectivity::Slice8;
};

/// Papillary-muscle exclusion. Within each slice (or the whole volume for
/// Volume26) the largest myocardium component is kept; every other
/// myocardium component whose one-voxel dilation touches only LV cavity or
/// itself becomes LV cavity, and the rest become background. Cavity and
/// background voxels are never changed.
LabelMask clean_mask(const LabelMask& mask, const CleanOptions& options = {});

/// Public 4-class convention {0 bg, 1 RV, 2 myo, 3 LV} -> {0, 0, 1, 2}.
LabelMask remap_labels(const LabelMask& raw);

/// One-hot [1, kNumClasses, Z, Y, X] encoding of a whole mask.
TensorF one_hot(const LabelMask& mask);

/// Image as a [1, 1, Z, Y, X] tensor.
TensorF to_tensor(const Volume& volume);

struct PatchSample {
    TensorF image;  // [1, 1, pz, py, px]
    TensorF label;  // [1, kNumClasses, pz, py, px], one-hot
    Coord3 origin;  // voxel position of the patch corner in the source
};

/// Random patches with origins uniform over valid placements. When the mask
/// has foreground, every even-numbered draw is retried (up to 100 attempts)
/// until it holds a foreground voxel, so at least half the patches do.
std::vector<PatchSample> extract_patches(const Volume& image, const LabelMask& mask, Extent3 patch,
                                         std::size_t count, std::uint64_t seed);

/// Patch extents must be multiples of 4 and at least 4 on every axis.
void validate_patch_extent(Extent3 patch);

}  // namespace cardioseg
