#include "fiberlearn/model_io.hpp"

#include <fstream>
#include <iterator>

namespace fiberlearn {

const char* to_string(ModelMode mode) { return mode == ModelMode::voxel ? "voxel" : "neighborhood"; }

ModelMode parse_mode(const std::string& s) {
    if (s == "voxel") return ModelMode::voxel;
    if (s == "neighborhood") return ModelMode::neighborhood;
    throw ConfigError("unknown model mode '" + s + "'");
}

void ModelManifest::validate() const {
    if (layer_dims.size() < 2) throw FormatError("manifest: layer_dims needs at least two entries");
    for (auto d : layer_dims) {
        if (d == 0) throw FormatError("manifest: zero layer dimension");
    }
    const std::size_t expected_in = mode == ModelMode::voxel ? signal_length : 27 * signal_length;
    if (layer_dims.front() != expected_in) {
        throw FormatError("manifest: input width " + std::to_string(layer_dims.front()) + " does not match " +
                          std::string(to_string(mode)) + " contract " + std::to_string(expected_in));
    }
    if (layer_dims.back() != dictionary_m) {
        throw FormatError("manifest: output width " + std::to_string(layer_dims.back()) +
                          " does not match dictionary size " + std::to_string(dictionary_m));
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw FormatError("manifest: dropout rate out of range");
    if (patch_order != kPatchOrder) throw FormatError("manifest: unsupported patch order '" + patch_order + "'");
}

ModelManifest manifest_for(const MlpModel& model, ModelMode mode, std::size_t signal_length) {
    ModelManifest m;
    m.layer_dims = model.layer_dims();
    m.hidden_activation = model.layers.size() > 1 ? model.layers.front().activation : Activation::relu;
    m.output_activation = model.layers.back().activation;
    m.dropout_rate = model.dropout_rate;
    m.mode = mode;
    m.signal_length = signal_length;
    m.dictionary_m = model.output_dim();
    return m;
}

nlohmann::json to_json(const ModelManifest& m) {
    return {{"format_version", kFormatVersion},
            {"layer_dims", m.layer_dims},
            {"hidden_activation", to_string(m.hidden_activation)},
            {"output_activation", to_string(m.output_activation)},
            {"dropout_rate", m.dropout_rate},
            {"mode", to_string(m.mode)},
            {"signal_length", m.signal_length},
            {"protocol_hash", m.protocol_hash},
            {"dictionary_m", m.dictionary_m},
            {"dictionary_hash", m.dictionary_hash},
            {"patch_order", m.patch_order},
            {"label_sigma", m.label_sigma},
            {"lambdas", m.lambdas},
            {"extra", m.extra}};
}

ModelManifest manifest_from_json(const nlohmann::json& j) {
    ModelManifest m;
    try {
        m.layer_dims = j.at("layer_dims").get<std::vector<std::size_t>>();
        m.hidden_activation = parse_activation(j.at("hidden_activation").get<std::string>());
        m.output_activation = parse_activation(j.at("output_activation").get<std::string>());
        m.dropout_rate = j.at("dropout_rate").get<double>();
        m.mode = parse_mode(j.value("mode", std::string("voxel")));
        m.signal_length = j.at("signal_length").get<std::size_t>();
        m.protocol_hash = j.value("protocol_hash", std::string());
        m.dictionary_m = j.at("dictionary_m").get<std::size_t>();
        m.dictionary_hash = j.value("dictionary_hash", std::string());
        m.patch_order = j.value("patch_order", std::string(kPatchOrder));
        m.label_sigma = j.value("label_sigma", m.label_sigma);
        if (j.contains("lambdas")) m.lambdas = j.at("lambdas").get<Eigenvalues>();
        if (j.contains("extra")) m.extra = j.at("extra");
    } catch (const ConfigError& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    m.validate();
    return m;
}

void save_model(const MlpModel& model, const ModelManifest& manifest, const std::filesystem::path& dir) {
    model.validate();
    manifest.validate();
    if (model.layer_dims() != manifest.layer_dims) throw ConfigError("manifest layer_dims disagree with the model");
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json");
        if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
        out << to_json(manifest).dump(2) << '\n';
    }
    std::ofstream blob(dir / "weights.bin", std::ios::binary);
    if (!blob) throw Error("cannot write " + (dir / "weights.bin").string());
    for (const auto& layer : model.layers) {
        // Row-major out x in.
        const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w = layer.weights;
        write_floats_le(blob, w.data(), static_cast<std::size_t>(w.size()));
        write_floats_le(blob, layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
    }
    if (!blob) throw Error("short write to weights.bin");
}

std::pair<MlpModel, ModelManifest> load_model(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw FormatError("cannot open " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        mf >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest.json: ") + e.what());
    }
    ModelManifest manifest = manifest_from_json(j);

    std::ifstream in(dir / "weights.bin", std::ios::binary);
    if (!in) throw FormatError("cannot open " + (dir / "weights.bin").string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    MlpModel model;
    model.dropout_rate = manifest.dropout_rate;
    std::size_t offset = 0;
    const auto& dims = manifest.layer_dims;
    auto take = [&](std::size_t count, std::size_t layer, const char* part) {
        const std::size_t need = 4 * count;
        if (bytes.size() - offset < need) {
            throw FormatError("weights.bin size mismatch: layer " + std::to_string(layer) + " " + part + " needs " +
                              std::to_string(need) + " bytes at offset " + std::to_string(offset) + ", only " +
                              std::to_string(bytes.size() - offset) + " remain");
        }
        std::vector<float> v(count);
        decode_floats_le(bytes.data() + offset, v.data(), count);
        offset += need;
        return v;
    };
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const auto in_dim = static_cast<Eigen::Index>(dims[l]);
        const auto out_dim = static_cast<Eigen::Index>(dims[l + 1]);
        const auto w = take(dims[l] * dims[l + 1], l, "weights");
        const auto b = take(dims[l + 1], l, "bias");
        DenseLayer<float> layer;
        layer.weights = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            w.data(), out_dim, in_dim);
        layer.bias = Eigen::Map<const VectorT<float>>(b.data(), out_dim);
        layer.activation = l + 2 == dims.size() ? manifest.output_activation : manifest.hidden_activation;
        model.layers.push_back(std::move(layer));
    }
    if (offset != bytes.size()) {
        throw FormatError("weights.bin size mismatch: " + std::to_string(bytes.size() - offset) +
                          " trailing bytes after the last layer");
    }
    model.validate();
    return {std::move(model), std::move(manifest)};
}

}  // namespace fiberlearn
