#include <doctest.h>

#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "cardioseg/dataset.hpp"
#include "cardioseg/nifti.hpp"
#include "oracles.hpp"

using namespace cardioseg;

namespace {

// Hand-assembled NIfTI-1 header at the standard byte offsets.
struct RawHeader {
    std::vector<std::uint8_t> bytes = std::vector<std::uint8_t>(352, 0);
    bool big_endian = false;

    template <typename T>
    void put(std::size_t off, T v) {
        std::uint8_t b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        if (big_endian) std::reverse(b, b + sizeof(T));
        std::memcpy(bytes.data() + off, b, sizeof(T));
    }
};

RawHeader make_header(std::vector<std::int16_t> dims, std::int16_t datatype, std::int16_t bitpix, float slope,
                      float inter, bool big_endian = false, bool pair = false) {
    RawHeader h;
    h.big_endian = big_endian;
    h.put<std::int32_t>(0, 348);
    h.put<std::int16_t>(40, static_cast<std::int16_t>(dims.size()));
    for (std::size_t i = 0; i < dims.size(); ++i) h.put<std::int16_t>(42 + 2 * i, dims[i]);
    h.put<std::int16_t>(70, datatype);
    h.put<std::int16_t>(72, bitpix);
    for (int i = 0; i < 4; ++i) h.put<float>(76 + 4 * i, i == 0 ? 1.0f : 1.5f + float(i));
    h.put<float>(108, pair ? 0.0f : 352.0f);
    h.put<float>(112, slope);
    h.put<float>(116, inter);
    std::memcpy(h.bytes.data() + 344, pair ? "ni1\0" : "n+1\0", 4);
    return h;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

NiftiErrorCode error_code(const std::filesystem::path& p) {
    try {
        read_nifti(p);
    } catch (const NiftiError& e) {
        return e.code();
    }
    FAIL("no NiftiError");
    return NiftiErrorCode::Header;
}

}  // namespace

TEST_CASE("float32 volumes round-trip bit-exactly, plain and gzip") {
    oracle::TempDir dir("nifti");
    Volume v({5, 4, 3}, {1.25, 0.5, 8.0});
    std::mt19937_64 gen(1);
    for (auto& f : v.values) {
        std::uint32_t bits = static_cast<std::uint32_t>(gen());
        bits &= ~(0xffu << 23);  // finite: clear the exponent, then set one
        bits |= static_cast<std::uint32_t>(1 + gen() % 253) << 23;
        std::memcpy(&f, &bits, 4);
    }
    v.values[0] = -0.0f;
    v.values[1] = std::numeric_limits<float>::denorm_min();
    for (const char* name : {"v.nii", "v.nii.gz"}) {
        write_nifti(v, dir / name);
        const Volume r = read_nifti(dir / name);
        CHECK(r.dims() == v.dims());
        CHECK(r.header.spacing_mm == v.header.spacing_mm);
        CHECK(std::memcmp(r.values.data(), v.values.data(), v.values.size() * 4) == 0);
    }
}

TEST_CASE("masks round-trip and label checks") {
    oracle::TempDir dir("mask");
    std::mt19937_64 gen(2);
    const LabelMask m = oracle::random_mask({6, 5, 2}, gen);
    write_nifti(m, dir / "m.nii.gz");
    const LabelMask r = read_mask(dir / "m.nii.gz");
    CHECK(r == m);
    CHECK(r.header.datatype == DataType::UInt8);

    Volume frac({2, 1, 1}, {1, 1, 1});
    frac.values = {1.0f, 0.5f};
    write_nifti(frac, dir / "frac.nii");
    try {
        read_mask(dir / "frac.nii");
        FAIL("expected LabelValues");
    } catch (const NiftiError& e) {
        CHECK(e.code() == NiftiErrorCode::LabelValues);
    }
    LabelMask four = m;
    four.labels[0] = 3;
    write_nifti(four, dir / "four.nii");
    CHECK_THROWS_AS(read_mask(dir / "four.nii"), NiftiError);
    CHECK(read_mask(dir / "four.nii", 3).labels[0] == 3);
}

TEST_CASE("int16 payload with scl_slope/scl_inter, both byte orders") {
    oracle::TempDir dir("scl");
    for (bool be : {false, true}) {
        RawHeader h = make_header({3, 2, 1}, 4, 16, 2.0f, -1.0f, be);
        for (std::int16_t v : {std::int16_t(-3), std::int16_t(0), std::int16_t(7), std::int16_t(300), std::int16_t(-2), std::int16_t(1)}) {
            std::uint8_t b[2];
            std::memcpy(b, &v, 2);
            if (be) std::swap(b[0], b[1]);
            h.bytes.push_back(b[0]);
            h.bytes.push_back(b[1]);
        }
        write_bytes(dir / "s.nii", h.bytes);
        const Volume v = read_nifti(dir / "s.nii");
        CHECK(v.values == std::vector<float>{-7, -1, 13, 599, -5, 1});
        CHECK(v.header.spacing_mm == Vec3{2.5, 3.5, 4.5});
    }
    // slope 0 means "no scaling"
    RawHeader h = make_header({2, 1, 1}, 2, 8, 0.0f, 5.0f);
    h.bytes.push_back(4);
    h.bytes.push_back(9);
    write_bytes(dir / "u.nii", h.bytes);
    CHECK(read_nifti(dir / "u.nii").values == std::vector<float>{4, 9});
}

TEST_CASE("hdr/img pairs and 4-D frames") {
    oracle::TempDir dir("pair");
    RawHeader h = make_header({2, 1, 1}, 2, 8, 1.0f, 0.0f, false, true);
    h.bytes.resize(348);
    write_bytes(dir / "a.hdr", h.bytes);
    write_bytes(dir / "a.img", {1, 2});
    CHECK(read_nifti(dir / "a.hdr").values == std::vector<float>{1, 2});

    RawHeader f = make_header({2, 1, 1, 2}, 2, 8, 1.0f, 0.0f);
    for (std::uint8_t b : {1, 2, 3, 4}) f.bytes.push_back(b);
    write_bytes(dir / "t.nii", f.bytes);
    CHECK(read_nifti(dir / "t.nii", 1).values == std::vector<float>{3, 4});
    CHECK_THROWS(read_nifti(dir / "t.nii", 2));
}

TEST_CASE("malformed files raise typed errors") {
    oracle::TempDir dir("bad");
    RawHeader h = make_header({2, 2, 1}, 16, 32, 1.0f, 0.0f);
    auto bytes = h.bytes;
    bytes.resize(352 + 8);  // half of the 16-byte payload
    write_bytes(dir / "trunc.nii", bytes);
    CHECK(error_code(dir / "trunc.nii") == NiftiErrorCode::Truncated);

    bytes = h.bytes;
    bytes[0] = 1;
    write_bytes(dir / "hdr.nii", bytes);
    CHECK(error_code(dir / "hdr.nii") == NiftiErrorCode::Header);

    bytes = h.bytes;
    bytes[345] = 'x';
    write_bytes(dir / "magic.nii", bytes);
    CHECK(error_code(dir / "magic.nii") == NiftiErrorCode::Magic);

    RawHeader d = make_header({3, 2, 2, 1}, 64, 64, 1.0f, 0.0f);
    write_bytes(dir / "dt.nii", d.bytes);
    CHECK(error_code(dir / "dt.nii") == NiftiErrorCode::Datatype);

    RawHeader z = make_header({3, 2, 0, 1}, 2, 8, 1.0f, 0.0f);
    write_bytes(dir / "dim.nii", z.bytes);
    CHECK(error_code(dir / "dim.nii") == NiftiErrorCode::Dimensions);

    CHECK_THROWS_AS(read_nifti(dir / "nope.nii"), IoError);
    write_bytes(dir / "short.nii", {1, 2, 3});
    CHECK(error_code(dir / "short.nii") == NiftiErrorCode::Truncated);
}

TEST_CASE("intensity normalization") {
    Volume v({3, 1, 1}, {1, 1, 1});
    v.values = {2, 4, 6};
    CHECK(normalize_intensity(v).values == std::vector<float>{0, 0.5f, 1});
    v.values = {3, 3, 3};
    CHECK(normalize_intensity(v).values == std::vector<float>{0, 0, 0});
}

TEST_CASE("subject-coherent split arithmetic") {
    DatasetIndex idx;
    for (int s = 0; s < 4200; ++s)
        for (Phase p : {Phase::ED, Phase::ES})
            idx.entries.push_back({"s" + std::to_string(s), p, "i", "m", Split::Unassigned});
    const DatasetIndex a = split_dataset(idx, {}, 42);
    CHECK(a.select(Split::Train).size() == 5880);
    CHECK(a.select(Split::Val).size() == 840);
    CHECK(a.select(Split::Test).size() == 1680);
    std::map<std::string, std::set<Split>> per_subject;
    for (const auto& e : a.entries) per_subject[e.subject].insert(e.split);
    for (const auto& [s, splits] : per_subject) CHECK(splits.size() == 1);
    const DatasetIndex b = split_dataset(idx, {}, 42);
    bool same = true;
    for (std::size_t i = 0; i < a.entries.size(); ++i) same = same && a.entries[i].split == b.entries[i].split;
    CHECK(same);
    const DatasetIndex c = split_dataset(idx, {}, 43);
    bool differs = false;
    for (std::size_t i = 0; i < a.entries.size(); ++i) differs = differs || a.entries[i].split != c.entries[i].split;
    CHECK(differs);
}

TEST_CASE("index JSON round trip and relative resolution") {
    oracle::TempDir dir("index");
    DatasetIndex idx;
    idx.entries.push_back({"a", Phase::ES, "img.nii.gz", "/abs/m.nii", Split::Val});
    save_index(idx, dir / "index.json");
    const DatasetIndex r = load_index(dir / "index.json");
    REQUIRE(r.entries.size() == 1);
    CHECK(r.entries[0].phase == Phase::ES);
    CHECK(r.entries[0].split == Split::Val);
    CHECK(r.resolve(r.entries[0].image) == dir / "img.nii.gz");
    CHECK(r.resolve(r.entries[0].mask) == std::filesystem::path("/abs/m.nii"));
    std::ofstream(dir / "bad.json") << "[{\"subject\": 1}]";
    CHECK_THROWS_AS(load_index(dir / "bad.json"), FormatError);
}
