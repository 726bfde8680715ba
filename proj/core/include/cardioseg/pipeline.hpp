#pragma once

#include "cardioseg/preprocess.hpp"
#include "cardioseg/unet.hpp"
#include "cardioseg/volume.hpp"

namespace cardioseg {

/// An image brought to the canonical grid, plus where it came from.
struct PreparedImage {
    Volume canonical;  // normalized, cropped or padded to kCanonicalShape
    CropWindow window;
    Coord3 center;
};

/// Normalizes the whole image, localizes the heart (from `mask` when given,
/// otherwise automatically) and crops to the canonical shape.
PreparedImage prepare_image(const Volume& image, const LabelMask* mask = nullptr);

struct SegmentOptions {
    bool clean = true;  // papillary exclusion on the prediction
    CleanOptions clean_options{};
    SlidingWindowOptions window{};
};

/// Full inference path: prepare (maskless), sliding-window prediction on
/// the canonical grid, optional cleaning, and pasting back into the source
/// grid with the source spacing.
LabelMask segment_volume(const UNetParams& params, const Volume& image, const SegmentOptions& options = {});

}  // namespace cardioseg
