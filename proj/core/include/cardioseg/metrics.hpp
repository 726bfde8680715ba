#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cardioseg/dataset.hpp"
#include "cardioseg/volume.hpp"

namespace cardioseg {

struct ConfusionCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::uint64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Voxelwise comparison of (pred == label) against (gt == label).
ConfusionCounts confusion(const LabelMask& pred, const LabelMask& gt, std::uint8_t label);

// Both-empty cases (tp + fp + fn == 0) count as perfect: dice = f1 = 1,
// iou = 100.
double dice(const ConfusionCounts& c);
double dice(const LabelMask& pred, const LabelMask& gt, std::uint8_t label);

struct PrecisionRecallF1 {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};
/// A ratio with a zero denominator is 0 unless all of tp, fp, fn are 0.
PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c);

double iou_percent(const ConfusionCounts& c);

struct MetricRow {
    std::string subject;
    Phase phase = Phase::ED;
    std::uint8_t label = kMyocardium;
    ConfusionCounts counts;
    double dice = 0.0, dice_loss = 0.0, f1 = 0.0, iou_percent = 0.0;
};

MetricRow make_row(std::string subject, Phase phase, std::uint8_t label, const ConfusionCounts& counts);

/// Short class name used in reports: "bg", "myo", "lv".
std::string class_name(std::uint8_t label);

enum class Aggregation {
    PerVolume,  ///< unweighted mean of per-volume metrics
    Pooled,     ///< metrics of summed confusion counts
};

struct MetricSummary {
    double dice = 0.0, dice_loss = 0.0, f1 = 0.0, iou_percent = 0.0;
    std::size_t volumes = 0;
};

struct MetricsReport {
    std::vector<MetricRow> rows;
    /// Keyed by (phase, label).
    std::map<std::pair<Phase, std::uint8_t>, MetricSummary> by_phase_class;
    /// Macro average over foreground classes, per phase.
    std::map<Phase, MetricSummary> foreground_by_phase;
    /// Macro average over the foreground (phase, class) groups.
    MetricSummary foreground;
};

/// Throws std::invalid_argument on an empty row list.
MetricsReport aggregate_report(const std::vector<MetricRow>& rows, Aggregation mode = Aggregation::PerVolume);

/// Header `subject,phase,class,dice,dice_loss,f1,iou_percent`, one line per
/// row, 6 significant digits.
std::string metrics_csv(const MetricsReport& report);
void write_metrics_csv(const MetricsReport& report, const std::filesystem::path& path);

/// Human-readable aggregate lines (for the log stream).
std::string format_summary(const MetricsReport& report);

}  // namespace cardioseg
