#include "cardioseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "cardioseg/errors.hpp"
#include "cardioseg/rng.hpp"

namespace cardioseg {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Phase p) { return p == Phase::ED ? "ED" : "ES"; }

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
        default: return "unassigned";
    }
}

Phase parse_phase(const std::string& s) {
    if (s == "ED" || s == "ed") return Phase::ED;
    if (s == "ES" || s == "es") return Phase::ES;
    throw FormatError("unknown phase '" + s + "' (expected ED or ES)");
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    if (s.empty() || s == "unassigned") return Split::Unassigned;
    throw FormatError("unknown split '" + s + "'");
}

std::vector<DatasetEntry> DatasetIndex::select(Split split) const {
    std::vector<DatasetEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [split](const DatasetEntry& e) { return e.split == split; });
    return out;
}

std::vector<std::string> DatasetIndex::subjects() const {
    std::vector<std::string> out;
    for (const auto& e : entries)
        if (std::find(out.begin(), out.end(), e.subject) == out.end()) out.push_back(e.subject);
    return out;
}

fs::path DatasetIndex::resolve(const fs::path& p) const { return p.is_absolute() ? p : root / p; }

DatasetIndex split_dataset(const DatasetIndex& index, const SplitFractions& f, std::uint64_t seed) {
    if (index.entries.empty()) throw std::invalid_argument("split_dataset: empty index");
    if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        throw std::invalid_argument("split_dataset: fractions must be non-negative and sum to 1");

    std::vector<std::string> subjects = index.subjects();
    std::sort(subjects.begin(), subjects.end());
    Rng rng(seed);
    for (std::size_t i = subjects.size(); i > 1; --i) std::swap(subjects[i - 1], subjects[rng.uniform_index(i)]);

    const auto n = static_cast<double>(subjects.size());
    // The epsilon absorbs representation error such as 0.1 * 10 = 1.0000000000000002.
    const auto n_val = static_cast<std::size_t>(std::floor(n * f.val + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(n * f.test + 1e-9));
    const std::size_t n_train = subjects.size() - n_val - n_test;

    std::map<std::string, Split> assignment;
    for (std::size_t i = 0; i < subjects.size(); ++i)
        assignment[subjects[i]] = i < n_train ? Split::Train : i < n_train + n_val ? Split::Val : Split::Test;

    DatasetIndex out = index;
    for (auto& e : out.entries) e.split = assignment.at(e.subject);
    return out;
}

DatasetIndex load_index(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset index " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw FormatError("dataset index " + path.string() + ": " + e.what());
    }
    if (!doc.is_array()) throw FormatError("dataset index " + path.string() + ": expected a JSON array");
    DatasetIndex index;
    index.root = path.parent_path();
    for (const auto& item : doc) {
        try {
            DatasetEntry e;
            e.subject = item.at("subject").get<std::string>();
            e.phase = parse_phase(item.at("phase").get<std::string>());
            e.image = item.at("image").get<std::string>();
            e.mask = item.at("mask").get<std::string>();
            e.split = parse_split(item.value("split", std::string{}));
            index.entries.push_back(std::move(e));
        } catch (const json::exception& e) {
            throw FormatError("dataset index " + path.string() + ": " + e.what());
        }
    }
    return index;
}

void save_index(const DatasetIndex& index, const fs::path& path) {
    json doc = json::array();
    for (const auto& e : index.entries)
        doc.push_back({{"subject", e.subject},
                       {"phase", to_string(e.phase)},
                       {"image", e.image.generic_string()},
                       {"mask", e.mask.generic_string()},
                       {"split", to_string(e.split)}});
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write dataset index " + path.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace cardioseg
