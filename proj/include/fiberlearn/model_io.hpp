#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fiberlearn/mlp.hpp"
#include "fiberlearn/tensor_model.hpp"

namespace fiberlearn {

enum class ModelMode { voxel, neighborhood };

const char* to_string(ModelMode mode);
ModelMode parse_mode(const std::string& s);

/// Patch flattening order for neighborhood inputs: row-major (3, 3, 3, n),
/// i.e. channel fastest, then z, y, x offsets.
inline constexpr const char* kPatchOrder = "xyzc";

inline constexpr std::size_t kPatchVoxels = 27;

/// Index of voxel (x, y, z) in a 3x3x3 patch, z fastest.
constexpr std::size_t patch_index(std::size_t x, std::size_t y, std::size_t z) { return (x * 3 + y) * 3 + z; }
inline constexpr std::size_t kPatchCenter = patch_index(1, 1, 1);

struct ModelManifest {
    std::vector<std::size_t> layer_dims;
    Activation hidden_activation = Activation::relu;
    Activation output_activation = Activation::sigmoid;
    double dropout_rate = 0.2;
    ModelMode mode = ModelMode::voxel;
    std::size_t signal_length = 0;  // n, the b > 0 channel count
    std::string protocol_hash;
    std::size_t dictionary_m = 0;
    std::string dictionary_hash;
    std::string patch_order = kPatchOrder;
    double label_sigma = 0.1;
    Eigenvalues lambdas = kReferenceEigenvalues;
    nlohmann::json extra = nlohmann::json::object();  // training config, provenance

    /// layer_dims has >= 2 entries, starts with n (voxel) or 27n
    /// (neighborhood) and ends with dictionary_m.
    void validate() const;
};

/// Manifest fields derived from a model; the caller fills protocol/dictionary data.
ModelManifest manifest_for(const MlpModel& model, ModelMode mode, std::size_t signal_length);

nlohmann::json to_json(const ModelManifest& manifest);
ModelManifest manifest_from_json(const nlohmann::json& j);

/// Writes dir/manifest.json and dir/weights.bin (little-endian float32,
/// per layer: weights row-major out x in, then bias).
void save_model(const MlpModel& model, const ModelManifest& manifest, const std::filesystem::path& dir);
std::pair<MlpModel, ModelManifest> load_model(const std::filesystem::path& dir);

}  // namespace fiberlearn
