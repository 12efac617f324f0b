#pragma once

#include <span>
#include <vector>

#include "fiberlearn/common.hpp"
#include "fiberlearn/parallel.hpp"
#include "fiberlearn/protocol.hpp"

namespace fiberlearn {

/// Eigenvalues (mm^2/s) of the reference tensor, descending.
using Eigenvalues = std::array<double, 3>;

/// Corpus-callosum reference eigenvalues used throughout the toolkit.
inline constexpr Eigenvalues kReferenceEigenvalues{0.0014, 0.00029, 0.00029};

struct TensorSpec {
    Eigenvalues lambdas{kReferenceEigenvalues};
    Vec3 pdd{1.0, 0.0, 0.0};

    void validate() const;
};

/// Per-voxel ground truth: t in {1,2,3} fibers with fractions and unit axes.
struct FiberConfig {
    std::vector<double> alphas;
    std::vector<Vec3> pdds;

    std::size_t count() const { return alphas.size(); }

    /// Simplex (sum 1 within 1e-12), every alpha > 0.1, alphas non-decreasing,
    /// unit pdds. Throws ConfigError.
    void validate() const;
};

/// D = R diag(lambda) R^T with R's first column equal to pdd.
Mat3 tensor_matrix(const TensorSpec& spec);

/// Orthonormal frame whose first column is `pdd`; the second axis is obtained
/// by Gram-Schmidt against the canonical axis least aligned with pdd.
Mat3 eigenframe(const Vec3& pdd);

/// S_i = s0 * exp(-b_i g_i^T D g_i).
std::vector<double> single_tensor_signal(const AcquisitionProtocol& proto, const TensorSpec& spec,
                                         double s0 = 1.0);

/// Convex mixture of single-tensor signals sharing `lambdas`.
std::vector<double> multi_tensor_signal(const AcquisitionProtocol& proto, const FiberConfig& config,
                                        const Eigenvalues& lambdas, double s0 = 1.0);

/// In-place variant writing into `out` (length n); skips validation. Used on hot paths.
void multi_tensor_signal_into(const AcquisitionProtocol& proto, const FiberConfig& config,
                              const Eigenvalues& lambdas, double s0, std::span<double> out);

/// Rician magnitude noise: sqrt((S + e1)^2 + e2^2), e1, e2 ~ N(0, sigma^2) with
/// sigma = reference / snr. snr = +inf leaves the signal unchanged.
void add_rician_noise(std::span<double> signal, double snr, Rng& rng, double reference = 1.0);

std::vector<double> add_rician_noise(std::vector<double> signal, double snr, Rng& rng,
                                     double reference = 1.0);

}  // namespace fiberlearn
