#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cardioseg/dataset.hpp"
#include "cardioseg/metrics.hpp"
#include "cardioseg/model_io.hpp"
#include "cardioseg/pipeline.hpp"
#include "cardioseg/unet.hpp"

namespace cardioseg {

struct LearningRates {
    double phase1 = 0.005;     // epochs 1-40
    double phase2 = 0.001;     // epochs 41-60
    double final = 0.0004457;  // reached at the last epoch
};

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    std::size_t base_channels = 16;
    std::size_t levels = 3;
    Extent3 patch{64, 64, 4};
    std::size_t patches_per_volume = 8;
    std::uint64_t seed = 0;
    LearningRates lr{};
    /// Write a checkpoint every this many epochs (0 disables).
    std::size_t checkpoint_every = 0;

    /// Throws std::invalid_argument on zero epochs or batch size, or
    /// non-positive learning rates.
    void validate() const;
    UNetConfig model_config() const;
};

/// Parses the JSON config; unknown keys and wrong types are FormatErrors.
/// Missing keys keep their defaults.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::filesystem::path& path);

inline constexpr std::size_t kPhase1LastEpoch = 40;
inline constexpr std::size_t kPhase2LastEpoch = 60;

/// phase1 through epoch 40, phase2 through 60, then geometric decay
/// phase2 * r^(e - 60) with r chosen so the last epoch gets `final`.
/// Throws std::out_of_range outside [1, epochs].
double lr_schedule(std::size_t epoch, const TrainConfig& config);

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_dice = 0.0;  // hard foreground dice over the epoch's patches
    double train_loss = 0.0;  // mean soft-dice loss of the epoch's batches
    double val_dice = 0.0;    // NaN without a validation split
    double val_loss = 0.0;
    double val_f1 = 0.0;
    double val_iou = 0.0;
};

inline constexpr const char* kEpochLogHeader = "epoch,lr,train_dice,train_loss,val_dice,val_loss,val_f1,val_iou\n";
std::string epoch_log_line(const EpochLog& log);

struct TrainOptions {
    std::optional<std::filesystem::path> checkpoint_path;
    std::optional<std::filesystem::path> resume_from;
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    UNetParams params;
    std::vector<EpochLog> log;
    std::string log_csv;  // header plus one line per epoch
};

/// One canonical training volume.
struct TrainingVolume {
    Volume image;    // normalized, canonical shape
    LabelMask mask;  // cleaned, canonical shape
};

/// Loads, normalizes, cleans and crops every entry of a split (mask-based
/// localization).
std::vector<TrainingVolume> load_training_volumes(const DatasetIndex& index, Split split);

TrainResult train(const DatasetIndex& index, const TrainConfig& config, const TrainOptions& options = {});

/// Metrics of `segment_volume` predictions against the cleaned ground
/// truth, one row per (volume, myo|lv).
MetricsReport evaluate(const UNetParams& params, const DatasetIndex& index, Split split,
                       const SegmentOptions& options = {});

}  // namespace cardioseg
