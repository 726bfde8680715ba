#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cardioseg/dataset.hpp"
#include "cardioseg/volume.hpp"

namespace cardioseg {

/// Sphere of myocardium-like tissue inside the cavity. `offset_mm` is
/// relative to the ventricle center.
struct PapillaryBlob {
    Vec3 offset_mm;
    double radius_mm = 0.0;
};

struct PhantomSpec {
    Extent3 dims{64, 64, 64};
    Vec3 spacing_mm{1.0, 1.0, 1.0};
    /// Ventricle center in millimeters from the center of voxel (0, 0, 0).
    Vec3 center_mm{32.0, 32.0, 32.0};
    /// Endocardial semi-axes at end diastole.
    Vec3 endo_mm{20.0, 20.0, 20.0};
    double thickness_mm = 6.0;
    /// Endocardial semi-axes at ES are endo_mm * es_scale. Blob offsets
    /// scale with them; blob radii do not.
    double es_scale = 0.75;
    std::vector<PapillaryBlob> blobs;
    double noise_sigma = 0.0;
    std::uint64_t seed = 0;

    /// Throws std::invalid_argument on non-positive geometry, es_scale
    /// outside (0, 1), or a blob not strictly inside the ES cavity.
    void validate() const;
};

struct PhantomTruth {
    double edv_ml = 0.0;        // analytic ellipsoid volume, blobs absorbed
    double esv_ml = 0.0;
    double lvef_percent = 0.0;  // (1 - s^3) * 100
    double myo_ml = 0.0;        // ED shell between endo and epi
    double papillary_ml = 0.0;  // sum of blob spheres
};

struct PhantomPhase {
    Volume image;
    LabelMask raw;      // blobs labeled myocardium
    LabelMask cleaned;  // blobs labeled cavity
};

struct Phantom {
    PhantomPhase ed, es;
    PhantomTruth truth;
};

/// Voxel v is labeled by its center: cavity if inside the endocardial
/// ellipsoid and outside every blob, myocardium if inside a blob or in the
/// shell up to the epicardium (endo semi-axes + thickness). Image values
/// are 0.1 / 0.5 / 0.9 for background / myocardium / cavity plus seeded
/// Gaussian noise, clipped to [0, 1].
PhantomPhase generate_phase(const PhantomSpec& spec, double scale, std::uint64_t noise_seed);

Phantom generate(const PhantomSpec& spec);

PhantomTruth analytic_truth(const PhantomSpec& spec);

struct CohortOptions {
    std::size_t count = 8;
    std::uint64_t seed = 0;
    bool papillary = true;
    double noise_sigma = 0.05;
    /// Every subject shares these; center, semi-axes, thickness, ES scale
    /// and blobs are jittered per subject.
    Extent3 dims{160, 160, 6};
    Vec3 spacing_mm{1.5, 1.5, 8.0};
};

/// Subject i's spec, drawn from a stream derived from (seed, i).
PhantomSpec cohort_spec(const CohortOptions& options, std::size_t subject);

/// Writes subNNN_{ED,ES}_{image,mask,truth}.nii.gz, subNNN_truth.json and
/// index.json (70/10/20 split from the same seed). Masks hold the raw
/// labels; *_truth files hold the cleaned labels.
DatasetIndex generate_cohort(const CohortOptions& options, const std::filesystem::path& out_dir);

std::string subject_id(std::size_t i);

}  // namespace cardioseg
