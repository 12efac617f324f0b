#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "fiberlearn/protocol.hpp"
#include "fiberlearn/sphere.hpp"
#include "fiberlearn/tensor_model.hpp"

namespace fiberlearn {

struct AngularErrorResult {
    std::vector<double> matched_deg;  // one per matched truth/peak pair
    std::size_t missed = 0;           // unmatched truths
    std::size_t spurious = 0;         // unmatched peaks
};

/// Optimal one-to-one matching (exhaustive) of truth axes to peak axes that
/// minimizes the total axial angle.
AngularErrorResult angular_error(const std::vector<Vec3>& truth, const std::vector<Vec3>& peaks);
AngularErrorResult angular_error(const FiberConfig& truth, const PeakSet& peaks);

/// Maps a batch of signals (n x B, one column per voxel) to coefficients (m x B).
using BatchPredictor = std::function<Eigen::MatrixXf(const Eigen::MatrixXf& signals)>;

struct HeatmapConfig {
    std::vector<double> theta1_deg;       // angle between the first and second pdd
    std::vector<double> theta_plane_deg;  // angle of the third pdd to their plane
    double snr = 30.0;                    // infinity: noiseless
    std::size_t k_noise = 25;
    std::vector<double> alphas{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
    Eigenvalues lambdas = kReferenceEigenvalues;
    std::uint64_t seed = 0;
    int threads = 1;

    /// 0..90 degrees in 5 degree steps on both axes.
    static HeatmapConfig default_grid();
    void validate() const;
};

nlohmann::json to_json(const HeatmapConfig& cfg);
HeatmapConfig heatmap_config_from_json(const nlohmann::json& j, HeatmapConfig base = HeatmapConfig::default_grid());

/// First pdd along x, second at theta1 in the xy plane, third at elevation
/// theta_plane above that plane with its in-plane part perpendicular to the
/// bisector of the first two.
std::vector<Vec3> heatmap_pdds(double theta1_deg, double theta_plane_deg);

struct HeatmapGrid {
    std::vector<double> axis1;
    std::vector<double> axis2;
    std::vector<double> mean;  // axis1.size() x axis2.size(), row-major
    std::vector<double> stddev;

    double at(std::size_t i, std::size_t j) const { return mean[i * axis2.size() + j]; }
};

/// Per cell: encode the noiseless truth, draw k_noise Rician realizations
/// (cell (i, j) uses child_rng(seed, i * |axis2| + j)), predict and average the EMD.
HeatmapGrid heatmap(const BatchPredictor& predictor, const AcquisitionProtocol& proto, const SphereDictionary& dict,
                    const GaussianWeights& weights, const HeatmapConfig& cfg);

void write_heatmap_csv(std::ostream& out, const HeatmapGrid& grid, const HeatmapConfig& cfg);
void write_heatmap_svg(std::ostream& out, const HeatmapGrid& grid);

/// Per-voxel evaluation of one method.
struct MetricRecord {
    std::string method;
    double emd = 0.0;
    AngularErrorResult angular;
};

struct MethodSummary {
    std::string method;
    std::size_t count = 0;
    double mean_emd = 0.0;
    double median_emd = 0.0;
    double angle_p25 = 0.0;
    double angle_p50 = 0.0;
    double angle_p75 = 0.0;
    double angle_p95 = 0.0;
    double success_10 = 0.0;  // fraction of voxels with no missed truth and every match within 10 degrees
    double success_15 = 0.0;
    double success_20 = 0.0;
    double mean_missed = 0.0;
    double mean_spurious = 0.0;
    double seconds = 0.0;     // wall time, if supplied
};

/// Methods appear in order of first occurrence.
std::vector<MethodSummary> summarize(const std::vector<MetricRecord>& records,
                                     const std::map<std::string, double>& seconds = {});

/// True when no truth axis is missed and every matched error is within the threshold.
bool matched_within(const AngularErrorResult& r, double threshold_deg);

/// Held-out crossing voxels: t fibers with the given fractions, pairwise
/// axial angles in [min_crossing_deg, max_crossing_deg], a random global
/// rotation, and Rician noise at a fixed SNR. Voxel k uses child_rng(seed, k).
struct TestSetConfig {
    std::size_t count = 2000;
    std::vector<double> alphas{0.5, 0.5};
    double min_crossing_deg = 60.0;
    double max_crossing_deg = 90.0;
    double snr = 30.0;
    Eigenvalues lambdas = kReferenceEigenvalues;
    std::uint64_t seed = 1;

    void validate() const;
};

nlohmann::json to_json(const TestSetConfig& cfg);
TestSetConfig test_set_config_from_json(const nlohmann::json& j, TestSetConfig base = {});

struct TestSet {
    Eigen::MatrixXf signals;  // n x count, b > 0 channels, s0 = 1
    std::vector<FiberConfig> truth;
};

TestSet make_test_set(const AcquisitionProtocol& proto, const TestSetConfig& cfg, int threads = 1);

/// EMD against the encoded truth and angular error of the extracted peaks,
/// one record per column of `coeffs` (m x count).
std::vector<MetricRecord> evaluate_predictions(const std::string& method, const Eigen::MatrixXf& coeffs,
                                               const std::vector<FiberConfig>& truth, const SphereDictionary& dict,
                                               const GaussianWeights& weights, const PeakOptions& peaks = {},
                                               int threads = 1);

void write_summary_csv(std::ostream& out, const std::vector<MethodSummary>& rows);
nlohmann::json to_json(const std::vector<MethodSummary>& rows);

}  // namespace fiberlearn
