#include <doctest.h>

#include <deque>

#include "cardioseg/components.hpp"
#include "cardioseg/preprocess.hpp"
#include "oracles.hpp"

using namespace cardioseg;

namespace {

// Flood fill oracle: component sizes sorted by first voxel in scan order.
std::vector<std::size_t> flood_sizes(const std::vector<std::uint8_t>& b, Extent3 d, Connectivity conn) {
    std::vector<bool> seen(b.size(), false);
    const auto offs = neighbour_offsets(conn);
    std::vector<std::size_t> sizes;
    for (std::size_t i = 0; i < b.size(); ++i) {
        if (!b[i] || seen[i]) continue;
        std::size_t n = 0;
        std::deque<std::size_t> q{i};
        seen[i] = true;
        while (!q.empty()) {
            const std::size_t v = q.front();
            q.pop_front();
            ++n;
            const long x = long(v % d.x), y = long(v / d.x % d.y), z = long(v / (d.x * d.y));
            for (const auto& o : offs) {
                const long nx = x + o.x, ny = y + o.y, nz = z + o.z;
                if (nx < 0 || ny < 0 || nz < 0 || nx >= long(d.x) || ny >= long(d.y) || nz >= long(d.z)) continue;
                const std::size_t u = std::size_t(nx) + d.x * (std::size_t(ny) + d.y * std::size_t(nz));
                if (b[u] && !seen[u]) {
                    seen[u] = true;
                    q.push_back(u);
                }
            }
        }
        sizes.push_back(n);
    }
    return sizes;
}

LabelMask ring_slice(std::size_t n) {
    // cavity disk of radius 4 inside a myocardium ring out to radius 6
    LabelMask m({n, n, 1}, {1, 1, 1});
    const double c = (double(n) - 1) / 2;
    for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x) {
            const double r = std::hypot(double(x) - c, double(y) - c);
            m.at(x, y, 0) = r <= 4 ? kLvCavity : r <= 6 ? kMyocardium : kBackground;
        }
    return m;
}

}  // namespace

TEST_CASE("neighbour offset counts") {
    CHECK(neighbour_offsets(Connectivity::Slice4).size() == 4);
    CHECK(neighbour_offsets(Connectivity::Slice8).size() == 8);
    CHECK(neighbour_offsets(Connectivity::Volume6).size() == 6);
    CHECK(neighbour_offsets(Connectivity::Volume26).size() == 26);
}

TEST_CASE("component labeling agrees with flood fill") {
    std::mt19937_64 gen(4);
    const Extent3 d{9, 7, 4};
    for (int t = 0; t < 20; ++t) {
        std::vector<std::uint8_t> b(d.count());
        for (auto& v : b) v = gen() % 100 < 40;
        for (Connectivity c : {Connectivity::Slice4, Connectivity::Slice8, Connectivity::Volume6, Connectivity::Volume26}) {
            const Components comp = label_components(b, d, c);
            CHECK(comp.sizes == flood_sizes(b, d, c));
            for (std::size_t i = 0; i < b.size(); ++i) CHECK((comp.labels[i] != 0) == (b[i] != 0));
        }
    }
    Components empty = label_components(std::vector<std::uint8_t>(d.count(), 0), d, Connectivity::Volume6);
    CHECK(empty.largest() == 0);
}

TEST_CASE("bbox localization and crop windows") {
    LabelMask m({10, 10, 4}, {1, 1, 1});
    m.at(2, 3, 1) = 1;
    m.at(7, 4, 2) = 2;
    CHECK(locate_heart_bbox(m) == Coord3{4, 3, 1});
    CHECK_THROWS_AS(locate_heart_bbox(LabelMask({3, 3, 3}, {1, 1, 1})), std::invalid_argument);

    const CropWindow w = crop_window({160, 160, 6}, {80, 80, 3}, kCanonicalShape);
    CHECK(w.origin == Coord3{3, 3, 1});
}

TEST_CASE("automatic localization finds the bright blob") {
    Volume v({40, 40, 4}, {1, 1, 1});
    for (std::size_t z = 0; z < 4; ++z)
        for (std::size_t y = 25; y < 33; ++y)
            for (std::size_t x = 5; x < 15; ++x) v.at(x, y, z) = 1.0f;
    v.at(39, 0, 0) = 1.0f;  // isolated bright speck
    const Coord3 c = locate_heart_auto(normalize_intensity(v));
    CHECK(c == Coord3{9, 28, 1});
    CHECK(locate_heart_auto(Volume({8, 6, 2}, {1, 1, 1})) == Coord3{3, 2, 0});
}

TEST_CASE("crop then uncrop restores the covered region") {
    std::mt19937_64 gen(6);
    LabelMask m = oracle::random_mask({20, 18, 5}, gen);
    m.header.spacing_mm = {1.5, 1.5, 8};
    const Coord3 center{3, 15, 2};
    const Extent3 target{12, 12, 4};
    const LabelMask c = crop_or_pad(m, center, target);
    CHECK(c.dims() == target);
    const CropWindow w = crop_window(m.dims(), center, target);
    const LabelMask back = uncrop(c, w, m.header);
    for (std::size_t z = 0; z < 5; ++z)
        for (std::size_t y = 0; y < 18; ++y)
            for (std::size_t x = 0; x < 20; ++x) {
                const long lx = long(x) - w.origin.x, ly = long(y) - w.origin.y, lz = long(z) - w.origin.z;
                const bool inside = lx >= 0 && ly >= 0 && lz >= 0 && lx < 12 && ly < 12 && lz < 4;
                CHECK(back.at(x, y, z) == (inside ? m.at(x, y, z) : 0));
            }
    // padded region of the crop is background
    CHECK(c.at(0, 0, 0) == 0);
}

TEST_CASE("clean_mask relabels enclosed islands and drops loose ones") {
    LabelMask m = ring_slice(17);
    const LabelMask ring = m;
    m.at(8, 8, 0) = kMyocardium;   // papillary island inside the cavity
    m.at(0, 0, 0) = kMyocardium;   // stray speck in the background
    const LabelMask c = clean_mask(m);
    CHECK(c.at(8, 8, 0) == kLvCavity);
    CHECK(c.at(0, 0, 0) == kBackground);
    CHECK(c == ring);
    CHECK(clean_mask(c) == c);

    // an island touching the grid edge is not enclosed
    LabelMask edge({5, 5, 1}, {1, 1, 1}, kLvCavity);
    for (std::size_t x = 0; x < 5; ++x) edge.at(x, 0, 0) = kMyocardium;
    edge.at(2, 4, 0) = kMyocardium;
    CHECK(clean_mask(edge).at(2, 4, 0) == kBackground);
}

TEST_CASE("clean_mask Volume26 keeps one 3-D object") {
    LabelMask m({17, 17, 3}, {1, 1, 1});
    const LabelMask s = ring_slice(17);
    for (std::size_t z = 0; z < 3; ++z) std::copy(s.labels.begin(), s.labels.end(), m.labels.begin() + 289 * z);
    // middle slice, so the island's 26-neighbourhood stays inside the grid
    m.at(8, 8, 1) = kMyocardium;
    const LabelMask c3 = clean_mask(m, {Connectivity::Volume26});
    CHECK(c3.at(8, 8, 1) == kLvCavity);
    CHECK(c3.count(kMyocardium) == m.count(kMyocardium) - 1);
    // on a two-slice grid the same island touches the z boundary
    LabelMask thin({17, 17, 2}, {1, 1, 1});
    for (std::size_t z = 0; z < 2; ++z) std::copy(s.labels.begin(), s.labels.end(), thin.labels.begin() + 289 * z);
    thin.at(8, 8, 1) = kMyocardium;
    CHECK(clean_mask(thin, {Connectivity::Volume26}).at(8, 8, 1) == kBackground);
}

TEST_CASE("clean_mask is idempotent on random masks") {
    std::mt19937_64 gen(12);
    for (int t = 0; t < 30; ++t) {
        const LabelMask m = oracle::random_mask({12, 12, 3}, gen, 0.7);
        const LabelMask c = clean_mask(m);
        CHECK(clean_mask(c) == c);
        CHECK(c.count(kLvCavity) >= m.count(kLvCavity));
        for (std::size_t i = 0; i < m.labels.size(); ++i)
            if (m.labels[i] != kMyocardium) CHECK(c.labels[i] == m.labels[i]);
    }
}

TEST_CASE("label remapping and tensors") {
    LabelMask raw({4, 1, 1}, {1, 1, 1});
    raw.labels = {0, 1, 2, 3};
    CHECK(remap_labels(raw).labels == std::vector<std::uint8_t>{0, 0, 1, 2});
    raw.labels[0] = 4;
    CHECK_THROWS_AS(remap_labels(raw), std::invalid_argument);

    LabelMask m({2, 1, 1}, {1, 1, 1});
    m.labels = {2, 0};
    const TensorF oh = one_hot(m);
    CHECK(oh.shape() == Shape{1, 3, 1, 1, 2});
    CHECK(oh.values()[4] == 1.0f);
    CHECK(oh.values()[1] == 1.0f);
    CHECK(oh.values()[0] == 0.0f);
}

TEST_CASE("patch extraction is seeded and favours foreground") {
    Volume v({40, 40, 8}, {1, 1, 1});
    LabelMask m({40, 40, 8}, {1, 1, 1});
    for (std::size_t z = 0; z < 8; ++z)
        for (std::size_t y = 30; y < 34; ++y)
            for (std::size_t x = 30; x < 34; ++x) m.at(x, y, z) = kLvCavity;
    const auto a = extract_patches(v, m, {8, 8, 4}, 10, 5);
    const auto b = extract_patches(v, m, {8, 8, 4}, 10, 5);
    REQUIRE(a.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(a[i].origin == b[i].origin);
        CHECK(a[i].label.shape() == Shape{1, 3, 4, 8, 8});
    }
    for (std::size_t i = 0; i < 10; i += 2) {
        float fg = 0;
        for (std::size_t k = 256; k < 768; ++k) fg += a[i].label[k];
        CHECK(fg > 0);
    }
    CHECK_THROWS_AS(validate_patch_extent({6, 8, 4}), std::invalid_argument);
    CHECK_THROWS_AS(extract_patches(v, m, {64, 8, 4}, 1, 0), std::invalid_argument);
}
