#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cardioseg/volume.hpp"

namespace cardioseg {

inline constexpr double kMyocardialDensity = 1.05;  // g/mL

enum class Variant { PapillaryIncluded, PapillaryExcluded };
std::string to_string(Variant v);

struct ClinicalReport {
    std::string subject;
    Variant variant = Variant::PapillaryExcluded;
    double edv_ml = 0.0;
    double esv_ml = 0.0;
    double sv_ml = 0.0;
    double lvef_percent = 0.0;
    double myo_mass_g = 0.0;
    /// Set when ESV exceeds EDV (physiologically invalid pair).
    bool esv_exceeds_edv = false;
};

/// count(label) * dx * dy * dz / 1000.
double label_volume_ml(const LabelMask& mask, std::uint8_t label);
double label_volume_ml(const LabelMask& mask, Vec3 spacing_mm, std::uint8_t label);

/// (edv - esv) / edv * 100. Throws std::invalid_argument if edv <= 0 or esv < 0.
double lvef(double edv_ml, double esv_ml);

/// myo_ml * 1.05. Throws std::invalid_argument for negative volume.
double myocardial_mass_g(double myo_ml);

/// EDV and mass from the ED mask, ESV from the ES mask.
ClinicalReport clinical_report(const std::string& subject, Variant variant, const LabelMask& ed, const LabelMask& es);

struct VariantComparison {
    ClinicalReport included;  // raw masks
    ClinicalReport excluded;  // cleaned masks
    bool edv_increases = false;
    bool esv_increases = false;
    bool mass_decreases = false;
};

VariantComparison compare_variants(const std::string& subject, const LabelMask& raw_ed, const LabelMask& raw_es,
                                   const LabelMask& clean_ed, const LabelMask& clean_es);

/// Header `subject,variant,edv_ml,esv_ml,sv_ml,lvef_percent,myo_mass_g`.
std::string clinical_csv(const std::vector<ClinicalReport>& reports);

struct BlandAltmanPoint {
    double mean = 0.0;
    double diff = 0.0;
};

struct BlandAltmanStats {
    double bias = 0.0;
    double sd_diff = 0.0;
    double loa_low = 0.0;
    double loa_high = 0.0;
    std::size_t n = 0;
    std::vector<BlandAltmanPoint> points;
};

/// d_i = a_i - b_i; bias = mean(d); sample SD (n - 1); limits bias -/+ 1.96 SD.
/// Throws std::invalid_argument for fewer than two pairs.
BlandAltmanStats bland_altman(const std::vector<double>& a, const std::vector<double>& b);

/// Header `parameter,bias,sd,loa_low,loa_high,n`.
std::string bland_altman_csv(const std::vector<std::pair<std::string, BlandAltmanStats>>& rows);
/// Header `mean,diff`.
std::string bland_altman_points_csv(const BlandAltmanStats& stats);

/// Writes text to a file, throwing IoError on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cardioseg
