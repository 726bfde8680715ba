#include "cardioseg/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "cardioseg/errors.hpp"

namespace cardioseg {

ConfusionCounts confusion(const LabelMask& pred, const LabelMask& gt, std::uint8_t label) {
    if (!(pred.dims() == gt.dims()) || pred.labels.size() != gt.labels.size())
        throw std::invalid_argument("confusion: prediction and ground truth dims differ");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const bool p = pred.labels[i] == label;
        const bool g = gt.labels[i] == label;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double dice(const ConfusionCounts& c) {
    const std::uint64_t den = 2 * c.tp + c.fp + c.fn;
    if (den == 0) return 1.0;
    return static_cast<double>(2 * c.tp) / static_cast<double>(den);
}

double dice(const LabelMask& pred, const LabelMask& gt, std::uint8_t label) { return dice(confusion(pred, gt, label)); }

PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c) {
    if (c.tp + c.fp + c.fn == 0) return {1.0, 1.0, 1.0};
    PrecisionRecallF1 r;
    if (c.tp + c.fp > 0) r.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fn > 0) r.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    // 2PR/(P+R) with P = tp/(tp+fp), R = tp/(tp+fn) reduces to
    // 2tp/(2tp+fp+fn); the reduced form is exact in floating point.
    if (c.tp > 0) r.f1 = static_cast<double>(2 * c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
    return r;
}

double iou_percent(const ConfusionCounts& c) {
    const std::uint64_t den = c.tp + c.fp + c.fn;
    if (den == 0) return 100.0;
    return static_cast<double>(c.tp) / static_cast<double>(den) * 100.0;
}

MetricRow make_row(std::string subject, Phase phase, std::uint8_t label, const ConfusionCounts& counts) {
    MetricRow r;
    r.subject = std::move(subject);
    r.phase = phase;
    r.label = label;
    r.counts = counts;
    r.dice = dice(counts);
    r.dice_loss = 1.0 - r.dice;
    r.f1 = precision_recall_f1(counts).f1;
    r.iou_percent = iou_percent(counts);
    return r;
}

std::string class_name(std::uint8_t label) {
    switch (label) {
        case kBackground: return "bg";
        case kMyocardium: return "myo";
        case kLvCavity: return "lv";
        default: return std::to_string(label);
    }
}

namespace {

struct Accumulator {
    double dice = 0, f1 = 0, iou = 0;
    std::size_t n = 0;
    ConfusionCounts pooled;

    void add(const MetricRow& r) {
        dice += r.dice;
        f1 += r.f1;
        iou += r.iou_percent;
        pooled += r.counts;
        ++n;
    }

    MetricSummary summary(Aggregation mode) const {
        MetricSummary s;
        s.volumes = n;
        if (mode == Aggregation::Pooled) {
            const MetricRow r = make_row("", Phase::ED, 0, pooled);
            s.dice = r.dice;
            s.f1 = r.f1;
            s.iou_percent = r.iou_percent;
        } else {
            s.dice = dice / static_cast<double>(n);
            s.f1 = f1 / static_cast<double>(n);
            s.iou_percent = iou / static_cast<double>(n);
        }
        s.dice_loss = 1.0 - s.dice;
        return s;
    }
};

MetricSummary macro(const std::vector<MetricSummary>& parts) {
    MetricSummary s;
    for (const auto& p : parts) {
        s.dice += p.dice;
        s.f1 += p.f1;
        s.iou_percent += p.iou_percent;
        s.volumes += p.volumes;
    }
    const auto k = static_cast<double>(parts.size());
    s.dice /= k;
    s.f1 /= k;
    s.iou_percent /= k;
    s.dice_loss = 1.0 - s.dice;
    return s;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

MetricsReport aggregate_report(const std::vector<MetricRow>& rows, Aggregation mode) {
    if (rows.empty()) throw std::invalid_argument("aggregate_report: no rows");
    MetricsReport rep;
    rep.rows = rows;
    std::map<std::pair<Phase, std::uint8_t>, Accumulator> acc;
    for (const auto& r : rows) acc[{r.phase, r.label}].add(r);
    std::map<Phase, std::vector<MetricSummary>> fg_phase;
    std::vector<MetricSummary> fg_all;
    for (const auto& [key, a] : acc) {
        const MetricSummary s = a.summary(mode);
        rep.by_phase_class[key] = s;
        if (key.second != kBackground) {
            fg_phase[key.first].push_back(s);
            fg_all.push_back(s);
        }
    }
    for (const auto& [phase, parts] : fg_phase) rep.foreground_by_phase[phase] = macro(parts);
    if (!fg_all.empty()) rep.foreground = macro(fg_all);
    return rep;
}

std::string metrics_csv(const MetricsReport& report) {
    std::string out = "subject,phase,class,dice,dice_loss,f1,iou_percent\n";
    for (const auto& r : report.rows)
        out += r.subject + "," + to_string(r.phase) + "," + class_name(r.label) + "," + fmt(r.dice) + "," +
               fmt(r.dice_loss) + "," + fmt(r.f1) + "," + fmt(r.iou_percent) + "\n";
    return out;
}

void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << metrics_csv(report);
    if (!out) throw IoError("write failed: " + path.string());
}

std::string format_summary(const MetricsReport& report) {
    std::string out;
    for (const auto& [key, s] : report.by_phase_class)
        out += to_string(key.first) + " " + class_name(key.second) + ": dice " + fmt(s.dice) + ", dice_loss " +
               fmt(s.dice_loss) + ", f1 " + fmt(s.f1) + ", iou " + fmt(s.iou_percent) + "% (" +
               std::to_string(s.volumes) + " volumes)\n";
    for (const auto& [phase, s] : report.foreground_by_phase)
        out += to_string(phase) + " foreground mean: dice " + fmt(s.dice) + ", iou " + fmt(s.iou_percent) + "%\n";
    return out;
}

}  // namespace cardioseg
