#include "cardioseg/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "cardioseg/errors.hpp"
#include "cardioseg/loss.hpp"
#include "cardioseg/nifti.hpp"
#include "cardioseg/optim.hpp"
#include "cardioseg/rng.hpp"

namespace cardioseg {

using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (patches_per_volume < 1) throw std::invalid_argument("train config: patches_per_volume must be >= 1");
    if (!(lr.phase1 > 0 && lr.phase2 > 0 && lr.final > 0))
        throw std::invalid_argument("train config: learning rates must be positive");
    validate_patch_extent(patch);
    model_config().validate();
}

UNetConfig TrainConfig::model_config() const {
    UNetConfig c;
    c.base_channels = base_channels;
    c.levels = levels;
    c.patch = patch;
    c.seed = seed;
    return c;
}

TrainConfig parse_train_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("train config: ") + e.what());
    }
    if (!j.is_object()) throw FormatError("train config: expected a JSON object");
    TrainConfig c;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "epochs") c.epochs = v.get<std::size_t>();
            else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (key == "base_channels") c.base_channels = v.get<std::size_t>();
            else if (key == "levels") c.levels = v.get<std::size_t>();
            else if (key == "patches_per_volume") c.patches_per_volume = v.get<std::size_t>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "checkpoint_every") c.checkpoint_every = v.get<std::size_t>();
            else if (key == "patch") {
                const auto p = v.get<std::vector<std::size_t>>();
                if (p.size() != 3) throw FormatError("train config: patch must be [x, y, z]");
                c.patch = {p[0], p[1], p[2]};
            } else if (key == "lr") {
                for (const auto& [k2, r] : v.items()) {
                    if (k2 == "phase1") c.lr.phase1 = r.get<double>();
                    else if (k2 == "phase2") c.lr.phase2 = r.get<double>();
                    else if (k2 == "final") c.lr.final = r.get<double>();
                    else throw FormatError("train config: unknown key lr." + k2);
                }
            } else {
                throw FormatError("train config: unknown key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("train config: ") + e.what());
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(e.what());
    }
    return c;
}

TrainConfig load_train_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

double lr_schedule(std::size_t epoch, const TrainConfig& c) {
    if (epoch < 1 || epoch > c.epochs)
        throw std::out_of_range("lr_schedule: epoch " + std::to_string(epoch) + " outside [1, " +
                                std::to_string(c.epochs) + "]");
    if (epoch <= kPhase1LastEpoch) return c.lr.phase1;
    if (epoch <= kPhase2LastEpoch) return c.lr.phase2;
    const double span = static_cast<double>(c.epochs - kPhase2LastEpoch);
    const double r = std::pow(c.lr.final / c.lr.phase2, 1.0 / span);
    return c.lr.phase2 * std::pow(r, static_cast<double>(epoch - kPhase2LastEpoch));
}

std::string epoch_log_line(const EpochLog& l) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n", l.epoch, l.lr, l.train_dice,
                  l.train_loss, l.val_dice, l.val_loss, l.val_f1, l.val_iou);
    return buf;
}

std::vector<TrainingVolume> load_training_volumes(const DatasetIndex& index, Split split) {
    std::vector<TrainingVolume> out;
    for (const auto& e : index.select(split)) {
        const Volume image = read_nifti(index.resolve(e.image));
        const LabelMask mask = clean_mask(read_mask(index.resolve(e.mask)));
        if (!(image.dims() == mask.dims()))
            throw FormatError("image and mask dims differ for " + e.subject + " " + to_string(e.phase));
        const PreparedImage prep = prepare_image(image, &mask);
        out.push_back({prep.canonical, crop_or_pad(mask, prep.center, kCanonicalShape)});
    }
    return out;
}

namespace {

TensorF stack(const std::vector<const TensorF*>& parts) {
    const Dims5 d = dims5(parts.front()->shape());
    TensorF out(Shape{parts.size(), d.c, d.d, d.h, d.w});
    const std::size_t per = parts.front()->size();
    for (std::size_t i = 0; i < parts.size(); ++i) std::copy_n(parts[i]->data(), per, out.data() + i * per);
    return out;
}

// Adds hard-label confusion counts for classes 1..C-1 of a batch.
void count_batch(const TensorF& logits, const TensorF& onehot, std::vector<ConfusionCounts>& counts) {
    const Dims5 d = dims5(logits.shape());
    const std::size_t V = d.spatial();
    for (std::size_t n = 0; n < d.n; ++n)
        for (std::size_t v = 0; v < V; ++v) {
            std::size_t pred = 0, truth = 0;
            float best = logits[(n * d.c) * V + v];
            for (std::size_t c = 0; c < d.c; ++c) {
                const float l = logits[(n * d.c + c) * V + v];
                if (l > best) {
                    best = l;
                    pred = c;
                }
                if (onehot[(n * d.c + c) * V + v] > 0.5f) truth = c;
            }
            for (std::size_t c = 1; c < d.c; ++c) {
                const bool p = pred == c, g = truth == c;
                ConfusionCounts& k = counts[c];
                if (p && g) ++k.tp;
                else if (p) ++k.fp;
                else if (g) ++k.fn;
                else ++k.tn;
            }
        }
}

}  // namespace

TrainResult train(const DatasetIndex& index, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    const std::vector<TrainingVolume> volumes = load_training_volumes(index, Split::Train);
    if (volumes.empty()) throw std::invalid_argument("train: the training split is empty");
    const bool has_val = !index.select(Split::Val).empty();

    TrainResult result;
    TrainingState state;
    std::size_t first_epoch = 1;
    if (options.resume_from) {
        load_checkpoint(*options.resume_from, result.params, state);
        if (!(result.params.config == config.model_config()))
            throw FormatError("checkpoint model config does not match the training config");
        first_epoch = state.epoch + 1;
        result.log_csv = state.log_csv;
    } else {
        result.params = build_unet(config.model_config());
        for (const auto& p : result.params.params) state.adam.push_back(AdamState<float>::for_parameter(p));
        result.log_csv = kEpochLogHeader;
    }
    UNetParams& params = result.params;
    const std::vector<Parameter<float>*> pointers = params.parameter_pointers();
    const DiceLossOptions loss_options{1e-6, true};

    for (std::size_t epoch = first_epoch; epoch <= config.epochs; ++epoch) {
        const double lr = lr_schedule(epoch, config);
        const std::uint64_t epoch_seed = derive_seed(config.seed, epoch);

        std::vector<PatchSample> samples;
        for (std::size_t v = 0; v < volumes.size(); ++v) {
            auto p = extract_patches(volumes[v].image, volumes[v].mask, config.patch, config.patches_per_volume,
                                     derive_seed(epoch_seed, v));
            for (auto& s : p) samples.push_back(std::move(s));
        }
        Rng shuffle(derive_seed(epoch_seed, 0xffffffffULL));
        for (std::size_t i = samples.size(); i > 1; --i) std::swap(samples[i - 1], samples[shuffle.uniform_index(i)]);

        std::vector<ConfusionCounts> counts(params.config.classes);
        double loss_sum = 0.0;
        std::size_t steps = 0;
        for (std::size_t first = 0; first < samples.size(); first += config.batch_size) {
            const std::size_t n = std::min(config.batch_size, samples.size() - first);
            std::vector<const TensorF*> images, labels;
            for (std::size_t i = first; i < first + n; ++i) {
                images.push_back(&samples[i].image);
                labels.push_back(&samples[i].label);
            }
            const TensorF x = stack(images);
            const TensorF y = stack(labels);

            params.zero_grad();
            UNetTape tape;
            const TensorF logits = unet_forward(params, x, Mode::Train, &tape);
            const TensorF probs = activation_forward(logits, Activation::Sigmoid);
            const DiceLossResult<float> loss = dice_loss(probs, y, loss_options);
            if (!std::isfinite(loss.loss) || !logits.all_finite())
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(steps + 1) + " (lr " + std::to_string(lr) + ")");
            unet_backward(params, tape, activation_backward(loss.grad, probs, Activation::Sigmoid));
            adam_step<float>(pointers, state.adam, lr);

            count_batch(logits, y, counts);
            loss_sum += loss.loss;
            ++steps;
        }

        EpochLog log;
        log.epoch = epoch;
        log.lr = lr;
        double fg = 0.0;
        for (std::size_t c = 1; c < counts.size(); ++c) fg += dice(counts[c]);
        log.train_dice = fg / static_cast<double>(counts.size() - 1);
        log.train_loss = loss_sum / static_cast<double>(steps);
        const double nan = std::numeric_limits<double>::quiet_NaN();
        log.val_dice = log.val_loss = log.val_f1 = log.val_iou = nan;
        if (has_val) {
            const MetricsReport rep = evaluate(params, index, Split::Val);
            log.val_dice = rep.foreground.dice;
            log.val_loss = rep.foreground.dice_loss;
            log.val_f1 = rep.foreground.f1;
            log.val_iou = rep.foreground.iou_percent;
        }
        result.log.push_back(log);
        result.log_csv += epoch_log_line(log);
        if (options.on_epoch) options.on_epoch(log);

        state.epoch = epoch;
        if (options.checkpoint_path && config.checkpoint_every > 0 &&
            (epoch % config.checkpoint_every == 0 || epoch == config.epochs)) {
            state.log_csv = result.log_csv;
            save_checkpoint(params, state, *options.checkpoint_path);
        }
    }
    return result;
}

MetricsReport evaluate(const UNetParams& params, const DatasetIndex& index, Split split,
                       const SegmentOptions& options) {
    const auto entries = index.select(split);
    if (entries.empty()) throw std::invalid_argument("evaluate: split '" + to_string(split) + "' is empty");
    std::vector<MetricRow> rows;
    for (const auto& e : entries) {
        const Volume image = read_nifti(index.resolve(e.image));
        const LabelMask truth = clean_mask(read_mask(index.resolve(e.mask)));
        const LabelMask pred = segment_volume(params, image, options);
        for (std::uint8_t label : {kMyocardium, kLvCavity})
            rows.push_back(make_row(e.subject, e.phase, label, confusion(pred, truth, label)));
    }
    return aggregate_report(rows);
}

}  // namespace cardioseg
