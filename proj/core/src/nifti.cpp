#include "cardioseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace cardioseg {

namespace {

namespace fs = std::filesystem;

// NIfTI-1 datatype codes
constexpr std::int16_t kDtUInt8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;

// Byte offsets inside the 348-byte header.
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffDescrip = 148;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffSrowX = 280;
constexpr std::size_t kOffMagic = 344;

std::vector<std::uint8_t> read_all(const fs::path& path) {
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes;
    std::array<std::uint8_t, 1 << 16> buf{};
    for (;;) {
        const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
        if (n < 0) {
            int errnum = 0;
            const std::string msg = gzerror(f, &errnum);
            gzclose(f);
            // A damaged gzip stream is a format problem, not an I/O one.
            throw NiftiError(NiftiErrorCode::Truncated, "corrupt compressed stream in " + path.string() + ": " + msg);
        }
        if (n == 0) break;
        bytes.insert(bytes.end(), buf.begin(), buf.begin() + n);
    }
    gzclose(f);
    return bytes;
}

class HeaderReader {
public:
    HeaderReader(const std::uint8_t* data, bool swap) : data_(data), swap_(swap) {}

    template <typename T>
    T get(std::size_t offset) const {
        std::array<std::uint8_t, sizeof(T)> raw{};
        std::memcpy(raw.data(), data_ + offset, sizeof(T));
        if (swap_) std::reverse(raw.begin(), raw.end());
        T v;
        std::memcpy(&v, raw.data(), sizeof(T));
        return v;
    }

private:
    const std::uint8_t* data_;
    bool swap_;
};

template <typename T>
void put(std::vector<std::uint8_t>& buf, std::size_t offset, T value) {
    static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
    std::memcpy(buf.data() + offset, &value, sizeof(T));
}

struct ParsedHeader {
    Extent3 dims;
    std::size_t frames = 1;
    Vec3 spacing;
    std::int16_t datatype = 0;
    std::size_t vox_offset = 0;
    double slope = 1.0;
    double intercept = 0.0;
    bool apply_scaling = false;
    bool swap = false;
    bool single_file = true;
};

ParsedHeader parse_header(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
    if (bytes.size() < kNiftiHeaderSize)
        throw NiftiError(NiftiErrorCode::Truncated, path.string() + ": shorter than the 348-byte header");
    ParsedHeader h;
    std::int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    if (sizeof_hdr != static_cast<std::int32_t>(kNiftiHeaderSize)) {
        if (HeaderReader(bytes.data(), true).get<std::int32_t>(0) != static_cast<std::int32_t>(kNiftiHeaderSize))
            throw NiftiError(NiftiErrorCode::Header,
                             path.string() + ": sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348");
        h.swap = true;
    }
    const char* magic = reinterpret_cast<const char*>(bytes.data() + kOffMagic);
    if (std::memcmp(magic, "n+1\0", 4) == 0) {
        h.single_file = true;
    } else if (std::memcmp(magic, "ni1\0", 4) == 0) {
        h.single_file = false;
    } else {
        throw NiftiError(NiftiErrorCode::Magic, path.string() + ": bad NIfTI-1 magic");
    }

    const HeaderReader r(bytes.data(), h.swap);
    const auto ndim = r.get<std::int16_t>(kOffDim);
    if (ndim < 2 || ndim > 4)
        throw NiftiError(NiftiErrorCode::Dimensions, path.string() + ": dim[0] = " + std::to_string(ndim) +
                                                         " (supported: 2, 3, 4)");
    std::array<std::size_t, 4> ext{1, 1, 1, 1};
    for (int i = 1; i <= ndim; ++i) {
        const auto e = r.get<std::int16_t>(kOffDim + 2 * static_cast<std::size_t>(i));
        if (e <= 0)
            throw NiftiError(NiftiErrorCode::Dimensions,
                             path.string() + ": dim[" + std::to_string(i) + "] = " + std::to_string(e));
        ext[static_cast<std::size_t>(i - 1)] = static_cast<std::size_t>(e);
    }
    h.dims = {ext[0], ext[1], ext[2]};
    h.frames = ext[3];

    h.datatype = r.get<std::int16_t>(kOffDatatype);
    if (h.datatype != kDtUInt8 && h.datatype != kDtInt16 && h.datatype != kDtFloat32)
        throw NiftiError(NiftiErrorCode::Datatype,
                         path.string() + ": unsupported datatype code " + std::to_string(h.datatype));

    auto spacing = [&](std::size_t i) {
        const double v = std::abs(static_cast<double>(r.get<float>(kOffPixdim + 4 * i)));
        return (v > 0.0 && std::isfinite(v)) ? v : 1.0;
    };
    h.spacing = {spacing(1), spacing(2), ndim >= 3 ? spacing(3) : 1.0};

    const double vox = r.get<float>(kOffVoxOffset);
    h.vox_offset = vox > 0.0 ? static_cast<std::size_t>(vox) : 0;
    if (h.single_file && h.vox_offset < kNiftiHeaderSize) h.vox_offset = kNiftiVoxOffset;

    const double slope = r.get<float>(kOffSclSlope);
    const double inter = r.get<float>(kOffSclInter);
    if (slope != 0.0 && std::isfinite(slope)) {
        h.slope = slope;
        h.intercept = std::isfinite(inter) ? inter : 0.0;
        // the identity map is skipped so float payloads round-trip bit-exactly (-0.0 stays -0.0)
        h.apply_scaling = !(h.slope == 1.0 && h.intercept == 0.0);
    }
    return h;
}

std::size_t bytes_per_voxel(std::int16_t datatype) {
    switch (datatype) {
        case kDtUInt8: return 1;
        case kDtInt16: return 2;
        default: return 4;
    }
}

fs::path image_companion(const fs::path& header_path) {
    std::string s = header_path.string();
    if (s.size() > 3 && s.ends_with(".gz")) s.resize(s.size() - 3);
    if (s.ends_with(".hdr")) s.replace(s.size() - 4, 4, ".img");
    if (fs::exists(s)) return s;
    if (fs::exists(s + ".gz")) return s + ".gz";
    throw IoError("missing image file for " + header_path.string());
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const fs::path& path, bool gzip) {
    if (gzip) {
        gzFile f = gzopen(path.string().c_str(), "wb6");
        if (!f) throw IoError("cannot open " + path.string() + " for writing");
        const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        const int rc = gzclose(f);
        if (n != static_cast<int>(bytes.size()) || rc != Z_OK) throw IoError("write failed: " + path.string());
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::uint8_t> make_header(const VolumeHeader& vh, std::int16_t datatype, std::size_t payload_bytes) {
    std::vector<std::uint8_t> buf(kNiftiVoxOffset + payload_bytes, 0);
    put<std::int32_t>(buf, 0, static_cast<std::int32_t>(kNiftiHeaderSize));
    const std::array<std::size_t, 3> dims{vh.dims.x, vh.dims.y, vh.dims.z};
    put<std::int16_t>(buf, kOffDim, 3);
    for (std::size_t i = 0; i < 3; ++i) put<std::int16_t>(buf, kOffDim + 2 * (i + 1), static_cast<std::int16_t>(dims[i]));
    for (std::size_t i = 4; i < 8; ++i) put<std::int16_t>(buf, kOffDim + 2 * i, 1);
    put<std::int16_t>(buf, kOffDatatype, datatype);
    put<std::int16_t>(buf, kOffBitpix, static_cast<std::int16_t>(8 * bytes_per_voxel(datatype)));
    const std::array<double, 3> sp{vh.spacing_mm.x, vh.spacing_mm.y, vh.spacing_mm.z};
    put<float>(buf, kOffPixdim, 1.0f);
    for (std::size_t i = 0; i < 3; ++i) put<float>(buf, kOffPixdim + 4 * (i + 1), static_cast<float>(sp[i]));
    for (std::size_t i = 4; i < 8; ++i) put<float>(buf, kOffPixdim + 4 * i, 1.0f);
    put<float>(buf, kOffVoxOffset, static_cast<float>(kNiftiVoxOffset));
    put<float>(buf, kOffSclSlope, 1.0f);
    put<float>(buf, kOffSclInter, 0.0f);
    buf[kOffXyztUnits] = 2;  // millimeters
    const char descrip[] = "cardioseg";
    std::memcpy(buf.data() + kOffDescrip, descrip, sizeof(descrip) - 1);
    // Scanner coordinates: diagonal sform from the voxel spacing.
    put<std::int16_t>(buf, kOffQformCode, 0);
    put<std::int16_t>(buf, kOffSformCode, 1);
    for (std::size_t row = 0; row < 3; ++row)
        put<float>(buf, kOffSrowX + 16 * row + 4 * row, static_cast<float>(sp[row]));
    std::memcpy(buf.data() + kOffMagic, "n+1\0", 4);
    return buf;
}

}  // namespace

Volume read_nifti(const fs::path& path, std::size_t frame) {
    const std::vector<std::uint8_t> bytes = read_all(path);
    const ParsedHeader h = parse_header(bytes, path);
    if (frame >= h.frames)
        throw NiftiError(NiftiErrorCode::Dimensions, path.string() + ": frame " + std::to_string(frame) +
                                                         " out of range (" + std::to_string(h.frames) + " frames)");

    std::vector<std::uint8_t> companion;
    const std::vector<std::uint8_t>* source = &bytes;
    if (!h.single_file) {
        companion = read_all(image_companion(path));
        source = &companion;
    }

    const std::size_t count = h.dims.count();
    const std::size_t bpv = bytes_per_voxel(h.datatype);
    const std::size_t begin = h.vox_offset + frame * count * bpv;
    if (source->size() < begin + count * bpv)
        throw NiftiError(NiftiErrorCode::Truncated, path.string() + ": payload truncated (" +
                                                        std::to_string(source->size()) + " bytes, need " +
                                                        std::to_string(begin + count * bpv) + ")");

    Volume vol;
    vol.header.dims = h.dims;
    vol.header.spacing_mm = h.spacing;
    vol.header.slope = h.apply_scaling ? h.slope : 1.0;
    vol.header.intercept = h.apply_scaling ? h.intercept : 0.0;
    vol.header.datatype = h.datatype == kDtUInt8 ? DataType::UInt8
                          : h.datatype == kDtInt16 ? DataType::Int16
                                                   : DataType::Float32;
    vol.values.resize(count);
    const HeaderReader r(source->data() + begin, h.swap);
    for (std::size_t i = 0; i < count; ++i) {
        double v = 0.0;
        switch (h.datatype) {
            case kDtUInt8: v = (*source)[begin + i]; break;
            case kDtInt16: v = r.get<std::int16_t>(2 * i); break;
            default: v = r.get<float>(4 * i); break;
        }
        if (h.apply_scaling) v = v * h.slope + h.intercept;
        vol.values[i] = static_cast<float>(v);
    }
    return vol;
}

LabelMask read_mask(const fs::path& path, std::uint8_t max_label) {
    const Volume v = read_nifti(path);
    LabelMask m(v.header.dims, v.header.spacing_mm);
    for (std::size_t i = 0; i < v.values.size(); ++i) {
        const float x = v.values[i];
        if (!(x >= 0.0f) || x > static_cast<float>(max_label) || std::floor(x) != x)
            throw NiftiError(NiftiErrorCode::LabelValues, path.string() + ": voxel value " + std::to_string(x) +
                                                              " is not a label in [0, " +
                                                              std::to_string(max_label) + "]");
        m.labels[i] = static_cast<std::uint8_t>(x);
    }
    return m;
}

void write_nifti(const Volume& volume, const fs::path& path, bool gzip) {
    volume.header.validate();
    if (volume.values.size() != volume.header.dims.count())
        throw std::invalid_argument("write_nifti: value count does not match dims");
    auto buf = make_header(volume.header, kDtFloat32, 4 * volume.values.size());
    std::memcpy(buf.data() + kNiftiVoxOffset, volume.values.data(), 4 * volume.values.size());
    write_bytes(buf, path, gzip);
}

void write_nifti(const LabelMask& mask, const fs::path& path, bool gzip) {
    mask.header.validate();
    if (mask.labels.size() != mask.header.dims.count())
        throw std::invalid_argument("write_nifti: label count does not match dims");
    auto buf = make_header(mask.header, kDtUInt8, mask.labels.size());
    std::memcpy(buf.data() + kNiftiVoxOffset, mask.labels.data(), mask.labels.size());
    write_bytes(buf, path, gzip);
}

void write_nifti(const Volume& volume, const fs::path& path) {
    write_nifti(volume, path, path.extension() == ".gz");
}

void write_nifti(const LabelMask& mask, const fs::path& path) { write_nifti(mask, path, path.extension() == ".gz"); }

bool is_nifti_path(const fs::path& path) {
    const std::string s = path.filename().string();
    return s.ends_with(".nii") || s.ends_with(".nii.gz") || s.ends_with(".hdr") || s.ends_with(".hdr.gz");
}

}  // namespace cardioseg
