#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fiberlearn/common.hpp"

namespace fiberlearn {

/// The gradient table of one scan: n (unit gradient, b-value) pairs.
struct AcquisitionProtocol {
    std::vector<Vec3> gradients;
    std::vector<double> bvalues;  // s/mm^2

    std::size_t size() const { return bvalues.size(); }

    /// Checks equal lengths, n >= 1, finite non-negative b-values and unit
    /// gradients (within 1e-6) wherever b > 0.
    void validate() const;

    std::vector<std::size_t> b0_indices() const;
    std::vector<std::size_t> dwi_indices() const;

    /// Copy holding only the b > 0 entries, in their original order.
    AcquisitionProtocol diffusion_weighted() const;

    /// Checksum of the exact double values; used to pair models with protocols.
    std::string hash() const;
};

/// Parses FSL-style bvals (n scalars) and bvecs (3 rows of n scalars).
/// Gradients with b > 0 are renormalized to unit length.
AcquisitionProtocol parse_protocol(std::istream& bvals, std::istream& bvecs);
AcquisitionProtocol load_protocol(const std::filesystem::path& bvals_path,
                                  const std::filesystem::path& bvecs_path);
void save_protocol(const AcquisitionProtocol& proto, const std::filesystem::path& bvals_path,
                   const std::filesystem::path& bvecs_path);

/// Single-shell protocol: n_b0 leading b=0 entries followed by n_dirs
/// near-uniform hemisphere directions at the given b-value.
AcquisitionProtocol make_shell_protocol(std::size_t n_b0, std::size_t n_dirs, double bvalue);

inline constexpr double kDefaultS0Epsilon = 1e-8;

struct NormalizedSignals {
    Volume4D signals;   // b > 0 channels divided by S0
    Volume4D s0;        // C = 1
    VoxelMask excluded; // 1 where S0 <= epsilon (signals zero-filled there)
};

/// Divides each b > 0 channel by the per-voxel mean of the b = 0 channels.
/// Negative normalized values are clamped to 0.
NormalizedSignals normalize_signals(const Volume4D& vol, const AcquisitionProtocol& proto,
                                    double epsilon_s0 = kDefaultS0Epsilon);

}  // namespace fiberlearn
