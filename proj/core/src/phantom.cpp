#include "cardioseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "cardioseg/clinical.hpp"
#include "cardioseg/errors.hpp"
#include "cardioseg/nifti.hpp"
#include "cardioseg/rng.hpp"

namespace cardioseg {

namespace fs = std::filesystem;

namespace {

constexpr float kBackgroundIntensity = 0.1f;
constexpr float kMyocardiumIntensity = 0.5f;
constexpr float kCavityIntensity = 0.9f;

double ellipsoid_ml(double a, double b, double c) { return 4.0 / 3.0 * std::numbers::pi * a * b * c / 1000.0; }

double quad(const Vec3& p, const Vec3& axes) {
    return (p.x / axes.x) * (p.x / axes.x) + (p.y / axes.y) * (p.y / axes.y) + (p.z / axes.z) * (p.z / axes.z);
}

}  // namespace

void PhantomSpec::validate() const {
    if (dims.x == 0 || dims.y == 0 || dims.z == 0) throw std::invalid_argument("phantom: empty grid");
    if (!(spacing_mm.x > 0 && spacing_mm.y > 0 && spacing_mm.z > 0))
        throw std::invalid_argument("phantom: spacing must be positive");
    if (!(endo_mm.x > 0 && endo_mm.y > 0 && endo_mm.z > 0))
        throw std::invalid_argument("phantom: endocardial semi-axes must be positive");
    if (!(thickness_mm > 0)) throw std::invalid_argument("phantom: thickness must be positive");
    if (!(es_scale > 0 && es_scale < 1)) throw std::invalid_argument("phantom: ES scale must lie in (0, 1)");
    if (noise_sigma < 0) throw std::invalid_argument("phantom: noise sigma must be >= 0");
    for (const auto& b : blobs) {
        if (!(b.radius_mm > 0)) throw std::invalid_argument("phantom: blob radius must be positive");
        // The ES cavity is the tighter fit: offsets and axes shrink by s, radii do not.
        const Vec3 axes{endo_mm.x * es_scale, endo_mm.y * es_scale, endo_mm.z * es_scale};
        const Vec3 off{b.offset_mm.x * es_scale, b.offset_mm.y * es_scale, b.offset_mm.z * es_scale};
        const double reach = std::sqrt(quad(off, axes)) + b.radius_mm / std::min({axes.x, axes.y, axes.z});
        if (reach >= 1.0) throw std::invalid_argument("phantom: papillary blob escapes the cavity");
    }
}

PhantomPhase generate_phase(const PhantomSpec& spec, double scale, std::uint64_t noise_seed) {
    spec.validate();
    const Extent3 d = spec.dims;
    const Vec3 s = spec.spacing_mm;
    const Vec3 endo{spec.endo_mm.x * scale, spec.endo_mm.y * scale, spec.endo_mm.z * scale};
    const Vec3 epi{endo.x + spec.thickness_mm, endo.y + spec.thickness_mm, endo.z + spec.thickness_mm};

    PhantomPhase out{Volume(d, s), LabelMask(d, s), LabelMask(d, s)};
    std::vector<std::uint8_t> in_blob(d.count(), 0);
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                const Vec3 p{static_cast<double>(x) * s.x - spec.center_mm.x,
                             static_cast<double>(y) * s.y - spec.center_mm.y,
                             static_cast<double>(z) * s.z - spec.center_mm.z};
                const std::size_t i = out.raw.index(x, y, z);
                if (quad(p, endo) <= 1.0) {
                    bool blob = false;
                    for (const auto& b : spec.blobs) {
                        const double dx = p.x - b.offset_mm.x * scale, dy = p.y - b.offset_mm.y * scale,
                                     dz = p.z - b.offset_mm.z * scale;
                        if (dx * dx + dy * dy + dz * dz <= b.radius_mm * b.radius_mm) blob = true;
                    }
                    in_blob[i] = blob;
                    out.raw.labels[i] = blob ? kMyocardium : kLvCavity;
                    out.cleaned.labels[i] = kLvCavity;
                } else if (quad(p, epi) <= 1.0) {
                    out.raw.labels[i] = kMyocardium;
                    out.cleaned.labels[i] = kMyocardium;
                }
            }

    // Blob sections must float in the blood pool: no in-plane neighbour of a
    // blob voxel may be wall or background.
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x) {
                if (!in_blob[out.raw.index(x, y, z)]) continue;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const auto nx = static_cast<std::int64_t>(x) + dx, ny = static_cast<std::int64_t>(y) + dy;
                        if (nx < 0 || ny < 0 || nx >= static_cast<std::int64_t>(d.x) ||
                            ny >= static_cast<std::int64_t>(d.y))
                            throw std::invalid_argument("phantom: blob reaches the grid edge");
                        const std::size_t n =
                            out.raw.index(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny), z);
                        if (!in_blob[n] && out.raw.labels[n] != kLvCavity)
                            throw std::invalid_argument("phantom: papillary blob touches the myocardial wall");
                    }
            }

    Rng rng(noise_seed);
    for (std::size_t i = 0; i < d.count(); ++i) {
        const std::uint8_t l = out.raw.labels[i];
        double v = l == kLvCavity ? kCavityIntensity : l == kMyocardium ? kMyocardiumIntensity : kBackgroundIntensity;
        if (spec.noise_sigma > 0) v = std::clamp(v + spec.noise_sigma * rng.normal(), 0.0, 1.0);
        out.image.values[i] = static_cast<float>(v);
    }
    return out;
}

PhantomTruth analytic_truth(const PhantomSpec& spec) {
    PhantomTruth t;
    const Vec3& a = spec.endo_mm;
    const double s = spec.es_scale;
    const double th = spec.thickness_mm;
    t.edv_ml = ellipsoid_ml(a.x, a.y, a.z);
    t.esv_ml = ellipsoid_ml(a.x * s, a.y * s, a.z * s);
    t.lvef_percent = (1.0 - s * s * s) * 100.0;
    t.myo_ml = ellipsoid_ml(a.x + th, a.y + th, a.z + th) - t.edv_ml;
    for (const auto& b : spec.blobs) t.papillary_ml += ellipsoid_ml(b.radius_mm, b.radius_mm, b.radius_mm);
    return t;
}

Phantom generate(const PhantomSpec& spec) {
    Phantom p;
    p.ed = generate_phase(spec, 1.0, derive_seed(spec.seed, 0));
    p.es = generate_phase(spec, spec.es_scale, derive_seed(spec.seed, 1));
    p.truth = analytic_truth(spec);
    return p;
}

std::string subject_id(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "sub%03zu", i);
    return buf;
}

PhantomSpec cohort_spec(const CohortOptions& o, std::size_t subject) {
    Rng rng(derive_seed(o.seed, subject));
    PhantomSpec s;
    s.dims = o.dims;
    s.spacing_mm = o.spacing_mm;
    const Vec3 mid{(static_cast<double>(o.dims.x) - 1) * o.spacing_mm.x / 2,
                   (static_cast<double>(o.dims.y) - 1) * o.spacing_mm.y / 2,
                   (static_cast<double>(o.dims.z) - 1) * o.spacing_mm.z / 2};
    s.center_mm = {mid.x + rng.uniform(-12.0, 12.0), mid.y + rng.uniform(-12.0, 12.0), mid.z};
    s.endo_mm = {rng.uniform(20.0, 28.0), rng.uniform(20.0, 28.0), rng.uniform(14.0, 16.0)};
    s.thickness_mm = rng.uniform(5.0, 8.0);
    s.es_scale = rng.uniform(0.62, 0.8);
    s.noise_sigma = o.noise_sigma;
    s.seed = derive_seed(o.seed, 1000 + subject);
    if (o.papillary) {
        // Two muscles on opposite sides, centred on a slice so each section is
        // slice-local.
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double below = std::fmod(s.center_mm.z, o.spacing_mm.z);
        for (int k = 0; k < 2; ++k) {
            const double th = angle + k * std::numbers::pi;
            const double rr = rng.uniform(0.25, 0.38);
            PapillaryBlob b;
            b.offset_mm = {rr * s.endo_mm.x * std::cos(th), rr * s.endo_mm.y * std::sin(th),
                           k == 0 ? -below : o.spacing_mm.z - below};
            b.radius_mm = rng.uniform(3.0, 4.0);
            s.blobs.push_back(b);
        }
    }
    return s;
}

DatasetIndex generate_cohort(const CohortOptions& o, const fs::path& out_dir) {
    if (o.count == 0) throw std::invalid_argument("generate_cohort: count must be >= 1");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create directory " + out_dir.string());

    DatasetIndex index;
    index.root = out_dir;
    for (std::size_t i = 0; i < o.count; ++i) {
        const std::string id = subject_id(i);
        const PhantomSpec spec = cohort_spec(o, i);
        const Phantom ph = generate(spec);
        for (const auto& [phase, data] : {std::pair{Phase::ED, &ph.ed}, std::pair{Phase::ES, &ph.es}}) {
            const std::string stem = id + "_" + to_string(phase);
            write_nifti(data->image, out_dir / (stem + "_image.nii.gz"));
            write_nifti(data->raw, out_dir / (stem + "_mask.nii.gz"));
            write_nifti(data->cleaned, out_dir / (stem + "_truth.nii.gz"));
            index.entries.push_back({id, phase, stem + "_image.nii.gz", stem + "_mask.nii.gz", Split::Unassigned});
        }
        const nlohmann::json truth{{"edv_ml", ph.truth.edv_ml},
                                   {"esv_ml", ph.truth.esv_ml},
                                   {"lvef_percent", ph.truth.lvef_percent},
                                   {"myo_ml", ph.truth.myo_ml},
                                   {"papillary_ml", ph.truth.papillary_ml}};
        write_text_file(out_dir / (id + "_truth.json"), truth.dump(2) + "\n");
    }
    index = split_dataset(index, SplitFractions{}, o.seed);
    save_index(index, out_dir / "index.json");
    return index;
}

}  // namespace cardioseg
