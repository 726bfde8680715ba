#include "cardioseg/clinical.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "cardioseg/errors.hpp"

namespace cardioseg {

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

std::string to_string(Variant v) {
    return v == Variant::PapillaryIncluded ? "papillary_included" : "papillary_excluded";
}

double label_volume_ml(const LabelMask& mask, Vec3 s, std::uint8_t label) {
    if (!(s.x > 0 && s.y > 0 && s.z > 0)) throw std::invalid_argument("label_volume_ml: spacing must be positive");
    return static_cast<double>(mask.count(label)) * s.x * s.y * s.z / 1000.0;
}

double label_volume_ml(const LabelMask& mask, std::uint8_t label) {
    return label_volume_ml(mask, mask.header.spacing_mm, label);
}

double lvef(double edv_ml, double esv_ml) {
    if (!(edv_ml > 0.0)) throw std::invalid_argument("lvef: EDV must be positive");
    if (esv_ml < 0.0) throw std::invalid_argument("lvef: ESV must be non-negative");
    return (edv_ml - esv_ml) / edv_ml * 100.0;
}

double myocardial_mass_g(double myo_ml) {
    if (myo_ml < 0.0) throw std::invalid_argument("myocardial_mass_g: negative volume");
    return myo_ml * kMyocardialDensity;
}

ClinicalReport clinical_report(const std::string& subject, Variant variant, const LabelMask& ed, const LabelMask& es) {
    if (!(ed.dims() == es.dims())) throw std::invalid_argument("clinical: ED and ES masks have different dims");
    ClinicalReport r;
    r.subject = subject;
    r.variant = variant;
    r.edv_ml = label_volume_ml(ed, kLvCavity);
    r.esv_ml = label_volume_ml(es, kLvCavity);
    r.sv_ml = r.edv_ml - r.esv_ml;
    r.lvef_percent = lvef(r.edv_ml, r.esv_ml);
    r.myo_mass_g = myocardial_mass_g(label_volume_ml(ed, kMyocardium));
    r.esv_exceeds_edv = r.esv_ml > r.edv_ml;
    return r;
}

VariantComparison compare_variants(const std::string& subject, const LabelMask& raw_ed, const LabelMask& raw_es,
                                   const LabelMask& clean_ed, const LabelMask& clean_es) {
    if (!(raw_ed.dims() == clean_ed.dims()) || !(raw_es.dims() == clean_es.dims()))
        throw std::invalid_argument("compare_variants: raw and cleaned masks have different dims");
    VariantComparison c;
    c.included = clinical_report(subject, Variant::PapillaryIncluded, raw_ed, raw_es);
    c.excluded = clinical_report(subject, Variant::PapillaryExcluded, clean_ed, clean_es);
    c.edv_increases = c.excluded.edv_ml >= c.included.edv_ml;
    c.esv_increases = c.excluded.esv_ml >= c.included.esv_ml;
    c.mass_decreases = c.excluded.myo_mass_g <= c.included.myo_mass_g;
    return c;
}

std::string clinical_csv(const std::vector<ClinicalReport>& reports) {
    std::string out = "subject,variant,edv_ml,esv_ml,sv_ml,lvef_percent,myo_mass_g\n";
    for (const auto& r : reports)
        out += r.subject + "," + to_string(r.variant) + "," + fmt(r.edv_ml) + "," + fmt(r.esv_ml) + "," +
               fmt(r.sv_ml) + "," + fmt(r.lvef_percent) + "," + fmt(r.myo_mass_g) + "\n";
    return out;
}

BlandAltmanStats bland_altman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("bland_altman: series lengths differ");
    if (a.size() < 2) throw std::invalid_argument("bland_altman: need at least two pairs");
    BlandAltmanStats s;
    s.n = a.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) {
        const double d = a[i] - b[i];
        s.points.push_back({(a[i] + b[i]) / 2.0, d});
        sum += d;
    }
    s.bias = sum / static_cast<double>(s.n);
    double ss = 0.0;
    for (const auto& p : s.points) ss += (p.diff - s.bias) * (p.diff - s.bias);
    s.sd_diff = std::sqrt(ss / static_cast<double>(s.n - 1));
    s.loa_low = s.bias - 1.96 * s.sd_diff;
    s.loa_high = s.bias + 1.96 * s.sd_diff;
    return s;
}

std::string bland_altman_csv(const std::vector<std::pair<std::string, BlandAltmanStats>>& rows) {
    std::string out = "parameter,bias,sd,loa_low,loa_high,n\n";
    for (const auto& [name, s] : rows)
        out += name + "," + fmt(s.bias) + "," + fmt(s.sd_diff) + "," + fmt(s.loa_low) + "," + fmt(s.loa_high) +
               "," + std::to_string(s.n) + "\n";
    return out;
}

std::string bland_altman_points_csv(const BlandAltmanStats& stats) {
    std::string out = "mean,diff\n";
    for (const auto& p : stats.points) out += fmt(p.mean) + "," + fmt(p.diff) + "\n";
    return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace cardioseg
