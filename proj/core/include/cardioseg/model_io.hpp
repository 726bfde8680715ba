#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cardioseg/errors.hpp"
#include "cardioseg/optim.hpp"
#include "cardioseg/unet.hpp"

namespace cardioseg {

// Model file layout:
//   "CSG1" | version u8 | header length u32 LE | UTF-8 JSON header |
//   float32 LE payload of every tensor in header order.
// The header holds the config and the ordered {name, shape} list, which
// must match the layout implied by the config.

inline constexpr std::uint8_t kModelVersion = 1;

enum class ModelErrorCode {
    BadMagic,
    Version,
    Truncated,
    Header,      ///< JSON header malformed or missing fields
    ShapeChain,  ///< tensor list inconsistent with the config's layer chain
};

class ModelError : public FormatError {
public:
    ModelError(ModelErrorCode code, const std::string& message) : FormatError(message), code_(code) {}
    ModelErrorCode code() const { return code_; }

private:
    ModelErrorCode code_;
};

std::vector<std::uint8_t> serialize_model(const UNetParams& params);

/// Parses a model from the front of `bytes`; `consumed` receives its size.
UNetParams deserialize_model(const std::vector<std::uint8_t>& bytes, std::size_t* consumed = nullptr);

void save_model(const UNetParams& params, const std::filesystem::path& path);
UNetParams load_model(const std::filesystem::path& path);

/// Optimizer state and progress stored after the model in a checkpoint.
struct TrainingState {
    std::vector<AdamState<float>> adam;  // one per parameter
    std::size_t epoch = 0;               // last completed epoch
    std::string log_csv;                 // epoch log so far
};

/// Checkpoint = model file followed by "ADAM" | u32 JSON length | JSON |
/// m and v of every parameter as float32 LE. load_model reads the model
/// part of a checkpoint and ignores the rest.
void save_checkpoint(const UNetParams& params, const TrainingState& state, const std::filesystem::path& path);
void load_checkpoint(const std::filesystem::path& path, UNetParams& params, TrainingState& state);

}  // namespace cardioseg
