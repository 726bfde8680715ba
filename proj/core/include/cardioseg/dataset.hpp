#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cardioseg {

enum class Phase { ED, ES };
enum class Split { Unassigned, Train, Val, Test };

std::string to_string(Phase p);
std::string to_string(Split s);
Phase parse_phase(const std::string& s);
Split parse_split(const std::string& s);

struct DatasetEntry {
    std::string subject;
    Phase phase = Phase::ED;
    std::filesystem::path image;  // relative entries resolve against DatasetIndex::root
    std::filesystem::path mask;
    Split split = Split::Unassigned;
};

struct DatasetIndex {
    std::filesystem::path root;
    std::vector<DatasetEntry> entries;

    std::vector<DatasetEntry> select(Split split) const;
    /// Distinct subject ids in first-appearance order.
    std::vector<std::string> subjects() const;
    std::filesystem::path resolve(const std::filesystem::path& p) const;
};

struct SplitFractions {
    double train = 0.70;
    double val = 0.10;
    double test = 0.20;
};

/// Assigns whole subjects to splits: subjects are sorted, shuffled with a
/// seeded generator, then floor(n * val) go to val, floor(n * test) to test
/// and the remainder to train. Both phases of a subject share its split.
DatasetIndex split_dataset(const DatasetIndex& index, const SplitFractions& fractions, std::uint64_t seed);

/// JSON array of {subject, phase, image, mask, split}. Relative paths are
/// kept as written and resolved against the index file's directory.
DatasetIndex load_index(const std::filesystem::path& path);
void save_index(const DatasetIndex& index, const std::filesystem::path& path);

}  // namespace cardioseg
