#pragma once

#include <vector>

#include <Eigen/Core>

#include "fiberlearn/common.hpp"
#include "fiberlearn/protocol.hpp"
#include "fiberlearn/sphere.hpp"
#include "fiberlearn/tensor_model.hpp"

namespace fiberlearn {

/// Fixed signal atoms: column k is the noiseless single-tensor signal
/// (s0 = 1, b > 0 entries only) along dictionary direction k. An optional
/// trailing isotropic column uses lambda_iso = mean(lambdas).
struct SignalDictionary {
    Eigen::MatrixXd atoms;  // n x (m [+1])
    std::size_t direction_count = 0;
    bool has_isotropic = false;
    double gram_norm = 0.0;  // ||A^T A||_inf
};

SignalDictionary build_signal_dictionary(const AcquisitionProtocol& proto, const SphereDictionary& dict,
                                         const Eigenvalues& lambdas = kReferenceEigenvalues,
                                         bool include_isotropic = false);

struct NnlsOptions {
    double tolerance = 1e-10;  // relative to ||A^T A||_inf
    int max_iterations = -1;   // < 0: 3 * columns
    bool record_objective = false;
    double gram_norm = 0.0;    // precomputed ||A^T A||_inf; 0: compute
};

struct NnlsResult {
    Eigen::VectorXd x;
    int iterations = 0;
    bool cap_reached = false;
    double objective = 0.0;              // ||Ax - s||^2
    std::vector<double> objective_trace; // after each outer iteration, if requested
};

/// Lawson-Hanson active-set NNLS: min ||Ax - s||_2 subject to x >= 0. The
/// passive-set least-squares problems are solved by column-pivoted QR.
NnlsResult nnls_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& s, const NnlsOptions& options = {});

/// ||A^T A||_inf, the scale used by the KKT tolerance.
double gram_inf_norm(const Eigen::MatrixXd& a);

struct NnlsVolumeReport {
    Volume4D coefficients;  // C = direction_count, L1-normalized per voxel when positive
    std::size_t cap_hits = 0;
    std::size_t solved_voxels = 0;
    double seconds = 0.0;
};

NnlsVolumeReport predict_nnls(const Volume4D& volume, const SignalDictionary& sigdict,
                              const VoxelMask* mask = nullptr, int threads = 1);

/// Column-wise NNLS on loose signals (n x B), L1-normalized like predict_nnls.
Eigen::MatrixXf nnls_predict_signals(const SignalDictionary& sigdict, const Eigen::MatrixXf& signals, int threads = 1,
                                     std::size_t* cap_hits = nullptr);

}  // namespace fiberlearn
