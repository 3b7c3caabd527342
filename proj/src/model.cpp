#include "hiermask/model.hpp"

#include "hiermask/error.hpp"
#include "hiermask/hash.hpp"
#include "hiermask/json_util.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hiermask {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host byte order");

namespace {
constexpr const char* kCheckpointMagic = "hiermask-checkpoint";
constexpr int kCheckpointVersion = 1;
} // namespace

json to_json(const ModelConfig& config)
{
    return json{{"d", config.backbone.d},
                {"widths", config.backbone.widths},
                {"anisotropic", config.backbone.anisotropic},
                {"decoder_layers", config.decoder.layers},
                {"heads", config.decoder.heads},
                {"ffn_mult", config.decoder.ffn_mult},
                {"mode", to_string(config.mode)},
                {"seed", config.seed}};
}

ModelConfig model_config_from_json(const json& doc)
{
    constexpr std::string_view what = "model config";
    reject_unknown_keys(doc, {"d", "widths", "anisotropic", "decoder_layers", "heads", "ffn_mult", "mode", "seed"}, what);
    ModelConfig c;
    read_optional(doc, "d", c.backbone.d, what);
    read_optional(doc, "widths", c.backbone.widths, what);
    read_optional(doc, "anisotropic", c.backbone.anisotropic, what);
    read_optional(doc, "decoder_layers", c.decoder.layers, what);
    read_optional(doc, "heads", c.decoder.heads, what);
    read_optional(doc, "ffn_mult", c.decoder.ffn_mult, what);
    read_optional(doc, "seed", c.seed, what);
    std::string mode = to_string(c.mode);
    read_optional(doc, "mode", mode, what);
    c.mode = mode_from_string(mode);
    return c;
}

template <typename T>
Model<T>::Model(const Taxonomy& taxonomy, const ModelConfig& config) : taxonomy_(taxonomy), config_(config)
{
    Initializer init(config.seed);
    backbone_ = Backbone<T>(config.backbone, init);
    queries_ = QuerySet<T>(taxonomy, config.backbone.d, config.mode, config.decoder, init);
}

template <typename T>
DualMasks<T> Model<T>::forward(const ag::Tensor<T>& patch)
{
    auto features = backbone_.forward(patch);
    auto decoded = queries_.run_decoder(features);
    return decode_masks(decoded, features.levels[0], taxonomy_);
}

template <typename T>
ParamList<T> Model<T>::params() const
{
    auto out = backbone_.params();
    auto q = queries_.params();
    out.insert(out.end(), q.begin(), q.end());
    return out;
}

template <typename T>
std::int64_t Model<T>::parameter_count() const
{
    std::int64_t n = 0;
    for (const auto& p : params()) n += p.tensor.numel();
    return n;
}

template class Model<float>;
template class Model<double>;

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const json& metadata)
{
    json table = json::array();
    std::int64_t offset = 0;
    const auto params = model.params();
    for (const auto& p : params) {
        table.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
        offset += p.tensor.numel();
    }
    json header{{"version", kCheckpointVersion},
                {"mode", to_string(model.config().mode)},
                {"model", to_json(model.config())},
                {"taxonomy", model.taxonomy().serialize()},
                {"tensors", table},
                {"metadata", metadata.is_null() ? json::object() : metadata}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    out << kCheckpointMagic << "\n" << header.dump() << "\n";
    for (const auto& p : params)
        out.write(reinterpret_cast<const char*>(p.tensor.data().data()),
                  static_cast<std::streamsize>(p.tensor.numel() * sizeof(float)));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const std::string bytes = buffer.str();

    const auto first = bytes.find('\n');
    if (first == std::string::npos || bytes.substr(0, first) != kCheckpointMagic)
        throw DataError("'" + path.string() + "' is not a checkpoint");
    const auto second = bytes.find('\n', first + 1);
    if (second == std::string::npos) throw DataError("truncated checkpoint header in '" + path.string() + "'");
    json header;
    try {
        header = json::parse(bytes.substr(first + 1, second - first - 1));
    } catch (const json::exception& e) {
        throw DataError("corrupt checkpoint header: " + std::string(e.what()));
    }
    if (header.value("version", 0) != kCheckpointVersion)
        throw DataError("unsupported checkpoint version in '" + path.string() + "'");

    ModelConfig config;
    Taxonomy taxonomy;
    try {
        config = model_config_from_json(header.at("model"));
        taxonomy = Taxonomy::parse(header.at("taxonomy").get<std::string>());
    } catch (const std::exception& e) {
        throw DataError("checkpoint header: " + std::string(e.what()));
    }

    LoadedCheckpoint loaded{Model<float>(taxonomy, config), header.value("metadata", json::object()),
                            sha256_hex(std::string_view(bytes))};
    const char* payload = bytes.data() + second + 1;
    const std::size_t payload_size = bytes.size() - second - 1;
    auto params = loaded.model.params();
    const auto& table = header.at("tensors");
    if (table.size() != params.size()) throw DataError("checkpoint tensor count does not match the model");
    std::size_t expected = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = table[i];
        auto& tensor = params[i].tensor;
        if (entry.at("name").get<std::string>() != params[i].name || entry.at("shape").get<ag::Shape>() != tensor.shape())
            throw DataError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' does not match '" +
                            params[i].name + "' " + ag::to_string(tensor.shape()));
        const auto offset = entry.at("offset").get<std::int64_t>();
        const auto bytes_needed = static_cast<std::size_t>(offset + tensor.numel()) * sizeof(float);
        if (bytes_needed > payload_size) throw DataError("checkpoint payload is truncated");
        std::memcpy(tensor.data().data(), payload + offset * sizeof(float), tensor.numel() * sizeof(float));
        expected += tensor.numel() * sizeof(float);
    }
    if (expected != payload_size) throw DataError("checkpoint payload size mismatch");
    return loaded;
}

} // namespace hiermask
