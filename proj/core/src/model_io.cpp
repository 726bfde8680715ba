#include "cardioseg/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace cardioseg {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "model files are little-endian");

constexpr char kMagic[4] = {'C', 'S', 'G', '1'};
constexpr char kAdamMagic[4] = {'A', 'D', 'A', 'M'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

void put_floats(std::vector<std::uint8_t>& out, const TensorF& t) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    out.insert(out.end(), p, p + t.size() * sizeof(float));
}

json shape_json(const Shape& s) {
    json a = json::array();
    for (std::size_t e : s.extents()) a.push_back(e);
    return a;
}

json config_json(const UNetConfig& c) {
    return {{"in_channels", c.in_channels},
            {"classes", c.classes},
            {"base_channels", c.base_channels},
            {"levels", c.levels},
            {"patch", {c.patch.x, c.patch.y, c.patch.z}},
            {"seed", c.seed},
            {"bn_epsilon", c.batchnorm.epsilon},
            {"bn_momentum", c.batchnorm.momentum}};
}

UNetConfig config_from_json(const json& j) {
    UNetConfig c;
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.classes = j.at("classes").get<std::size_t>();
    c.base_channels = j.at("base_channels").get<std::size_t>();
    c.levels = j.at("levels").get<std::size_t>();
    const auto p = j.at("patch").get<std::vector<std::size_t>>();
    if (p.size() != 3) throw ModelError(ModelErrorCode::Header, "model header: patch must have 3 entries");
    c.patch = {p[0], p[1], p[2]};
    c.seed = j.at("seed").get<std::uint64_t>();
    c.batchnorm.epsilon = j.at("bn_epsilon").get<double>();
    c.batchnorm.momentum = j.at("bn_momentum").get<double>();
    return c;
}

// All tensors of a model in serialization order.
std::vector<const TensorF*> ordered_tensors(const UNetParams& p) {
    std::vector<const TensorF*> out;
    for (const auto& q : p.params) out.push_back(&q.value);
    for (const auto& s : p.norm_stats) {
        out.push_back(&s.mean);
        out.push_back(&s.var);
    }
    return out;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const UNetParams& params) {
    const std::vector<TensorSpec> layout = unet_tensor_layout(params.config);
    const auto tensors = ordered_tensors(params);
    if (layout.size() != tensors.size()) throw std::invalid_argument("serialize_model: model is incomplete");
    json header{{"config", config_json(params.config)}, {"tensors", json::array()}};
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (!(tensors[i]->shape() == layout[i].shape))
            throw std::invalid_argument("serialize_model: tensor " + layout[i].name + " has shape " +
                                        tensors[i]->shape().str() + ", expected " + layout[i].shape.str());
        header["tensors"].push_back({{"name", layout[i].name}, {"shape", shape_json(layout[i].shape)}});
    }
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    out.push_back(kModelVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const TensorF* t : tensors) put_floats(out, *t);
    return out;
}

UNetParams deserialize_model(const std::vector<std::uint8_t>& bytes, std::size_t* consumed) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw ModelError(ModelErrorCode::BadMagic, "not a model file (bad magic)");
    if (bytes.size() < 9) throw ModelError(ModelErrorCode::Truncated, "model file truncated in preamble");
    if (bytes[4] != kModelVersion)
        throw ModelError(ModelErrorCode::Version, "unsupported model version " + std::to_string(bytes[4]) +
                                                      " (expected " + std::to_string(kModelVersion) + ")");
    const std::size_t hlen = get_u32(bytes.data() + 5);
    std::size_t pos = 9;
    if (bytes.size() - pos < hlen) throw ModelError(ModelErrorCode::Truncated, "model file truncated in header");

    json header;
    UNetConfig config;
    std::vector<TensorSpec> declared;
    try {
        header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                             bytes.begin() + static_cast<std::ptrdiff_t>(pos + hlen));
        config = config_from_json(header.at("config"));
        for (const auto& t : header.at("tensors")) {
            const auto ext = t.at("shape").get<std::vector<std::size_t>>();
            declared.push_back({t.at("name").get<std::string>(), Shape(std::span<const std::size_t>(ext))});
        }
    } catch (const ModelError&) {
        throw;
    } catch (const std::exception& e) {
        throw ModelError(ModelErrorCode::Header, std::string("model header: ") + e.what());
    }
    pos += hlen;

    std::vector<TensorSpec> expected;
    try {
        expected = unet_tensor_layout(config);
    } catch (const std::invalid_argument& e) {
        throw ModelError(ModelErrorCode::ShapeChain, std::string("model config invalid: ") + e.what());
    }
    if (declared.size() != expected.size())
        throw ModelError(ModelErrorCode::ShapeChain, "model declares " + std::to_string(declared.size()) +
                                                         " tensors, config implies " +
                                                         std::to_string(expected.size()));
    for (std::size_t i = 0; i < expected.size(); ++i)
        if (declared[i].name != expected[i].name || !(declared[i].shape == expected[i].shape))
            throw ModelError(ModelErrorCode::ShapeChain, "tensor " + std::to_string(i) + " is " + declared[i].name +
                                                             " " + declared[i].shape.str() + ", expected " +
                                                             expected[i].name + " " + expected[i].shape.str());

    std::size_t payload = 0;
    for (const auto& s : expected) payload += s.shape.numel() * sizeof(float);
    if (bytes.size() - pos < payload)
        throw ModelError(ModelErrorCode::Truncated, "model payload truncated: need " + std::to_string(payload) +
                                                        " bytes, have " + std::to_string(bytes.size() - pos));

    auto take = [&](const Shape& s) {
        TensorF t(s);
        std::memcpy(t.data(), bytes.data() + pos, t.size() * sizeof(float));
        pos += t.size() * sizeof(float);
        if (!t.all_finite()) throw ModelError(ModelErrorCode::Header, "model holds non-finite values");
        return t;
    };

    UNetParams p = build_unet(config);
    std::size_t k = 0;
    for (auto& q : p.params) q = Parameter<float>(q.name, take(expected[k++].shape));
    for (auto& s : p.norm_stats) {
        s.mean = take(expected[k++].shape);
        s.var = take(expected[k++].shape);
    }
    if (consumed) *consumed = pos;
    return p;
}

void save_model(const UNetParams& params, const fs::path& path) { write_file(serialize_model(params), path); }

UNetParams load_model(const fs::path& path) { return deserialize_model(read_file(path)); }

void save_checkpoint(const UNetParams& params, const TrainingState& state, const fs::path& path) {
    if (state.adam.size() != params.params.size())
        throw std::invalid_argument("save_checkpoint: optimizer state does not match the parameters");
    std::vector<std::uint8_t> out = serialize_model(params);
    const json meta{{"epoch", state.epoch},
                    {"steps", state.adam.empty() ? 0 : state.adam.front().t},
                    {"beta1", state.adam.empty() ? 0.9 : state.adam.front().options.beta1},
                    {"beta2", state.adam.empty() ? 0.999 : state.adam.front().options.beta2},
                    {"epsilon", state.adam.empty() ? 1e-8 : state.adam.front().options.epsilon},
                    {"log", state.log_csv}};
    const std::string text = meta.dump();
    out.insert(out.end(), kAdamMagic, kAdamMagic + 4);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& s : state.adam) {
        put_floats(out, s.m);
        put_floats(out, s.v);
    }
    write_file(out, path);
}

void load_checkpoint(const fs::path& path, UNetParams& params, TrainingState& state) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    std::size_t pos = 0;
    UNetParams p = deserialize_model(bytes, &pos);
    if (bytes.size() - pos < 8 || std::memcmp(bytes.data() + pos, kAdamMagic, 4) != 0)
        throw ModelError(ModelErrorCode::Truncated, path.string() + ": no optimizer section (not a checkpoint)");
    const std::size_t mlen = get_u32(bytes.data() + pos + 4);
    pos += 8;
    if (bytes.size() - pos < mlen) throw ModelError(ModelErrorCode::Truncated, "checkpoint metadata truncated");

    TrainingState s;
    std::uint64_t steps = 0;
    AdamOptions opts;
    try {
        const json meta = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                      bytes.begin() + static_cast<std::ptrdiff_t>(pos + mlen));
        s.epoch = meta.at("epoch").get<std::size_t>();
        steps = meta.at("steps").get<std::uint64_t>();
        opts.beta1 = meta.at("beta1").get<double>();
        opts.beta2 = meta.at("beta2").get<double>();
        opts.epsilon = meta.at("epsilon").get<double>();
        s.log_csv = meta.at("log").get<std::string>();
    } catch (const std::exception& e) {
        throw ModelError(ModelErrorCode::Header, std::string("checkpoint metadata: ") + e.what());
    }
    pos += mlen;

    for (const auto& q : p.params) {
        AdamState<float> a = AdamState<float>::for_parameter(q, opts);
        a.t = steps;
        const std::size_t n = q.value.size() * sizeof(float);
        if (bytes.size() - pos < 2 * n) throw ModelError(ModelErrorCode::Truncated, "checkpoint moments truncated");
        std::memcpy(a.m.data(), bytes.data() + pos, n);
        std::memcpy(a.v.data(), bytes.data() + pos + n, n);
        pos += 2 * n;
        s.adam.push_back(std::move(a));
    }
    params = std::move(p);
    state = std::move(s);
}

}  // namespace cardioseg
