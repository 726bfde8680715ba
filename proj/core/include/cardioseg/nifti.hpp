#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cardioseg/errors.hpp"
#include "cardioseg/volume.hpp"

namespace cardioseg {

enum class NiftiErrorCode {
    Header,       ///< sizeof_hdr is not 348 in either byte order
    Magic,        ///< magic is neither "n+1\0" nor "ni1\0"
    Datatype,     ///< datatype outside {uint8, int16, float32}
    Dimensions,   ///< dim[0] not in {2, 3, 4} or a non-positive extent
    Truncated,    ///< file ends before header or payload is complete
    LabelValues,  ///< mask payload holds non-integral or out-of-range labels
};

class NiftiError : public FormatError {
public:
    NiftiError(NiftiErrorCode code, const std::string& message) : FormatError(message), code_(code) {}
    NiftiErrorCode code() const { return code_; }

private:
    NiftiErrorCode code_;
};

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiVoxOffset = 352;

/// Reads a NIfTI-1 image (.nii, .nii.gz, or .hdr/.img pair), applying
/// scl_slope/scl_inter when the slope is non-zero. 4-D files yield the
/// frame at `frame`.
Volume read_nifti(const std::filesystem::path& path, std::size_t frame = 0);

/// Reads a label image; every voxel must be an integer in [0, max_label].
LabelMask read_mask(const std::filesystem::path& path, std::uint8_t max_label = kLvCavity);

/// Writes little-endian single-file NIfTI-1 (vox_offset 352, slope 1,
/// intercept 0). Volumes are stored as float32, masks as uint8.
void write_nifti(const Volume& volume, const std::filesystem::path& path, bool gzip);
void write_nifti(const LabelMask& mask, const std::filesystem::path& path, bool gzip);

/// gzip chosen from the ".gz" extension.
void write_nifti(const Volume& volume, const std::filesystem::path& path);
void write_nifti(const LabelMask& mask, const std::filesystem::path& path);

/// True when the path names a NIfTI file by extension.
bool is_nifti_path(const std::filesystem::path& path);

}  // namespace cardioseg
