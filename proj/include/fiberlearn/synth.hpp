#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "fiberlearn/model_io.hpp"
#include "fiberlearn/parallel.hpp"
#include "fiberlearn/protocol.hpp"
#include "fiberlearn/sphere.hpp"
#include "fiberlearn/tensor_model.hpp"
#include "fiberlearn/training.hpp"

namespace fiberlearn {

enum class FiberCountPolicy { fixed3, uniform123 };

/// voxel: only the centre signal (n floats) per sample; patch: the whole
/// 3x3x3 neighbourhood (27n floats, row-major (3,3,3,n)).
enum class DatasetLayout { voxel, patch };

struct SynthConfig {
    Eigenvalues lambdas = kReferenceEigenvalues;
    std::array<double, 2> snr_range{20.0, 30.0};
    double sigma_r = 0.14;
    FiberCountPolicy t_policy = FiberCountPolicy::fixed3;
    std::uint64_t master_seed = 0;
    std::size_t count = 100000;
    DatasetLayout layout = DatasetLayout::voxel;

    void validate() const;
};

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig base = {});

/// Uniform on the simplex restricted to min > 0.1, sorted ascending.
/// `attempts`, when given, receives the number of Dirichlet draws used.
std::vector<double> sample_alphas(std::size_t t, Rng& rng, std::size_t* attempts = nullptr);

/// Haar-uniform rotation matrix.
Mat3 random_rotation(Rng& rng);

/// Unnormalized relative directions [1,0,0], [1,cos a2,0], [1,0,cos a3] (first t).
std::vector<Vec3> relative_pdds(std::size_t t, double theta2, double theta3);

/// Relative directions with theta2, theta3 ~ U[0, pi], jointly rotated by a
/// random rotation and normalized.
std::vector<Vec3> sample_pdds(std::size_t t, Rng& rng);

/// 27 pdd sets (index by patch_index): corners get base + N(0, sigma_r^2)
/// per component, the other voxels are trilinearly interpolated from the
/// corners, and every vector is normalized last.
std::array<std::vector<Vec3>, kPatchVoxels> build_patch_pdds(const std::vector<Vec3>& base, double sigma_r,
                                                             Rng& rng);

struct PatchSample {
    std::vector<float> signals;        // 27 * n, row-major (3,3,3,n)
    std::vector<double> center_label;  // length m
    FiberConfig center_truth;
    double snr = 0.0;
};

/// One self-supervised sample. `proto` is the full acquisition protocol; only
/// its b > 0 entries are simulated (signals are S0-normalized).
PatchSample generate_patch(const AcquisitionProtocol& proto, const SphereDictionary& dict,
                           const GaussianWeights& weights, const SynthConfig& cfg, Rng& rng);

struct SampleTruth {
    FiberConfig config;
    double snr = 0.0;
};

struct Dataset {
    SynthConfig config;
    DatasetLayout layout = DatasetLayout::voxel;
    TrainingData data;  // inputs = signals, targets = labels
    std::vector<SampleTruth> truth;
    std::string protocol_hash;
    std::string dictionary_hash;
    double label_sigma = kDefaultLabelSigma;

    std::size_t signal_length() const {
        return layout == DatasetLayout::voxel ? data.input_dim : data.input_dim / kPatchVoxels;
    }
};

/// Sample k is drawn from child_rng(master_seed, k); the result does not
/// depend on `threads`.
Dataset generate_dataset(const AcquisitionProtocol& proto, const SphereDictionary& dict,
                         const GaussianWeights& weights, const SynthConfig& cfg, int threads = 1);

/// Centre-voxel inputs of a patch-layout dataset (copy for voxel layout).
TrainingData voxel_training_data(const Dataset& dataset);

/// dir/{manifest.json, signals.bin, labels.bin, truth.json}.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                  const nlohmann::json& extra = nlohmann::json::object());
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace fiberlearn
