#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "fiberlearn/mlp.hpp"
#include "fiberlearn/model_io.hpp"
#include "fiberlearn/sphere.hpp"

namespace fiberlearn {

struct InferenceOptions {
    MathMode math = MathMode::batch_invariant;
    std::size_t max_batch_voxels = 16384;  // sub-batch cap; results do not depend on it
    int threads = 1;
};

struct PredictionRequest {
    const MlpModel* model = nullptr;
    const ModelManifest* manifest = nullptr;
    const Volume4D* input = nullptr;   // normalized signals, C = n
    const VoxelMask* mask = nullptr;   // optional; non-zero = predict
    ModelMode mode = ModelMode::voxel;

    void validate() const;
};

/// Every in-mask voxel's signal through the model; out-of-mask voxels are zero.
/// Tanh outputs are clamped to >= 0.
Volume4D predict_voxelwise(const PredictionRequest& req, const InferenceOptions& options = {});

/// Model outputs for loose signals (n x B). A neighbourhood model sees each
/// signal replicated over a homogeneous 3x3x3 patch.
Eigen::MatrixXf predict_signals(const MlpModel& model, ModelMode mode, const Eigen::MatrixXf& signals,
                                const InferenceOptions& options = {});

using Index3 = std::array<std::size_t, 3>;

/// 27 sets of voxel coordinates; set p = 9a + 3b + c holds (i, j, k) with
/// i = a, j = b, k = c (mod 3). Sets are disjoint, cover the grid, and the
/// 3x3x3 patches around the members of one set never overlap.
std::vector<std::vector<Index3>> strided_partitions(const Index3& dims);

/// Input vol zero-padded by one voxel on every side.
Volume4D zero_pad(const Volume4D& vol);

/// Copies the 3x3x3 patch centred at (x, y, z) of the unpadded volume, taken
/// from its padded version, in row-major (3,3,3,n) order.
void gather_patch(const Volume4D& padded, std::size_t x, std::size_t y, std::size_t z, float* dst);

/// Zero-padded neighbourhood inference, batched by the 27 strided partitions.
Volume4D predict_neighborhood(const PredictionRequest& req, const InferenceOptions& options = {});

/// Dispatches on req.mode.
Volume4D predict(const PredictionRequest& req, const InferenceOptions& options = {});

/// Text peaks file: "x y z k  dx dy dz w ..." per in-mask voxel with >= 1 peak.
void write_peaks(std::ostream& out, const Volume4D& coeffs, const SphereDictionary& dict,
                 const VoxelMask* mask = nullptr, const PeakOptions& options = {});

}  // namespace fiberlearn
