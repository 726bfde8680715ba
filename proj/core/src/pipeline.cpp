#include "cardioseg/pipeline.hpp"

#include <stdexcept>

namespace cardioseg {

PreparedImage prepare_image(const Volume& image, const LabelMask* mask) {
    const Volume normalized = normalize_intensity(image);
    PreparedImage out;
    if (mask) {
        if (!(mask->dims() == image.dims())) throw std::invalid_argument("prepare_image: image and mask dims differ");
        out.center = locate_heart_bbox(*mask);
    } else {
        out.center = locate_heart_auto(normalized);
    }
    out.window = crop_window(image.dims(), out.center, kCanonicalShape);
    out.canonical = crop_or_pad(normalized, out.center, kCanonicalShape);
    return out;
}

LabelMask segment_volume(const UNetParams& params, const Volume& image, const SegmentOptions& options) {
    const PreparedImage prep = prepare_image(image);
    LabelMask pred = sliding_window_infer(params, prep.canonical, options.window);
    if (options.clean) pred = clean_mask(pred, options.clean_options);
    LabelMask out = uncrop(pred, prep.window, image.header);
    out.header.spacing_mm = image.header.spacing_mm;
    out.header.datatype = DataType::UInt8;
    return out;
}

}  // namespace cardioseg
