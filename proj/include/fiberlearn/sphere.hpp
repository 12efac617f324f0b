#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "fiberlearn/common.hpp"
#include "fiberlearn/tensor_model.hpp"

namespace fiberlearn {

inline constexpr std::size_t kDefaultDictionarySize = 362;
inline constexpr double kDefaultLabelSigma = 0.1;  // radians
inline constexpr double kLabelClip = 1e-3;

/// m hemisphere axes (z >= 0 representatives) with their pairwise axial
/// angles and angular adjacency.
struct SphereDictionary {
    std::vector<Vec3> directions;
    Eigen::MatrixXd angles;                  // radians, in [0, pi/2]
    std::vector<std::vector<int>> adjacency; // atoms within adjacency_radius
    double adjacency_radius = 0.0;
    double max_nearest_angle = 0.0;          // max over atoms of the nearest-neighbour angle
    double min_pair_angle = 0.0;
    std::uint64_t seed = 0;
    bool converged = true;                   // false if the repulsion hit its iteration cap

    std::size_t size() const { return directions.size(); }
    std::string hash() const;
};

struct DictionaryOptions {
    int max_iterations = 4000;
    double tolerance = 1e-13;  // relative energy change
};

/// Electrostatic repulsion of m antipodal pairs from a spherical-Fibonacci
/// start, then one representative per pair (z > 0; ties by x > 0, then y > 0).
SphereDictionary build_dictionary(std::size_t m = kDefaultDictionarySize, std::uint64_t seed = 0,
                                  const DictionaryOptions& options = {});

/// Wraps given axes: canonicalizes them and derives angles and adjacency.
SphereDictionary dictionary_from_directions(std::vector<Vec3> directions, std::uint64_t seed = 0);

void save_dictionary(const std::filesystem::path& path, const SphereDictionary& dict);
SphereDictionary load_dictionary(const std::filesystem::path& path);

/// Index of the atom maximizing |d_k . d|; lowest index wins ties.
std::size_t nearest_atom(const SphereDictionary& dict, const Vec3& d);

struct GaussianWeights {
    double sigma = kDefaultLabelSigma;
    Eigen::MatrixXd matrix;  // W_ij = exp(-theta_ij^2 / (2 sigma^2))
};

GaussianWeights gaussian_weight_matrix(const SphereDictionary& dict, double sigma = kDefaultLabelSigma);

/// Places alpha_j at the nearest atom of each pdd, blurs with W, zeroes
/// entries below 1e-3 and L1-normalizes.
std::vector<double> encode_labels(const SphereDictionary& dict, const GaussianWeights& weights,
                                  const FiberConfig& config);

struct Peak {
    std::size_t atom = 0;
    Vec3 direction = Vec3::UnitZ();
    double weight = 0.0;
};

struct PeakSet {
    std::vector<Peak> peaks;  // strongest first, weights sum to 1
    bool degenerate = false;  // selection among tied candidates was arbitrary
};

struct PeakOptions {
    double rel_threshold = 0.1;
    double min_separation = deg2rad(15.0);
    std::size_t max_peaks = 3;
};

/// Local maxima over the adjacency neighbourhood above rel_threshold * max,
/// greedily suppressed within min_separation of a stronger peak.
PeakSet extract_peaks(const SphereDictionary& dict, std::span<const double> coeffs,
                      const PeakOptions& options = {});
PeakSet extract_peaks(const SphereDictionary& dict, std::span<const float> coeffs,
                      const PeakOptions& options = {});

}  // namespace fiberlearn
