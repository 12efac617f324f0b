#include "fiberlearn/nnls.hpp"

#include <atomic>
#include <chrono>
#include <cmath>

#include <Eigen/QR>

#include "fiberlearn/parallel.hpp"

namespace fiberlearn {

SignalDictionary build_signal_dictionary(const AcquisitionProtocol& proto, const SphereDictionary& dict,
                                         const Eigenvalues& lambdas, bool include_isotropic) {
    const AcquisitionProtocol dwi = proto.diffusion_weighted();
    if (dwi.size() == 0) throw ConfigError("protocol has no diffusion-weighted entries");
    const auto n = static_cast<Eigen::Index>(dwi.size());
    const auto m = static_cast<Eigen::Index>(dict.size());
    SignalDictionary out;
    out.direction_count = dict.size();
    out.has_isotropic = include_isotropic;
    out.atoms.resize(n, m + (include_isotropic ? 1 : 0));
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto col = single_tensor_signal(dwi, TensorSpec{lambdas, dict.directions[static_cast<std::size_t>(k)]});
        out.atoms.col(k) = Eigen::Map<const Eigen::VectorXd>(col.data(), n);
    }
    if (include_isotropic) {
        const double iso = (lambdas[0] + lambdas[1] + lambdas[2]) / 3.0;
        const auto col = single_tensor_signal(dwi, TensorSpec{{iso, iso, iso}, Vec3::UnitX()});
        out.atoms.col(m) = Eigen::Map<const Eigen::VectorXd>(col.data(), n);
    }
    out.gram_norm = gram_inf_norm(out.atoms);
    return out;
}

double gram_inf_norm(const Eigen::MatrixXd& a) {
    const Eigen::MatrixXd g = a.transpose() * a;
    return g.cwiseAbs().rowwise().sum().maxCoeff();
}

NnlsResult nnls_solve(const Eigen::MatrixXd& a, const Eigen::VectorXd& s, const NnlsOptions& options) {
    const Eigen::Index n = a.rows();
    const Eigen::Index m = a.cols();
    if (n < 1 || m < 1) throw ConfigError("NNLS needs a non-empty matrix");
    if (s.size() != n) throw ConfigError("NNLS right-hand side length does not match the matrix");

    const double tol = options.tolerance * (options.gram_norm > 0.0 ? options.gram_norm : gram_inf_norm(a));
    const int cap = options.max_iterations < 0 ? static_cast<int>(3 * m) : options.max_iterations;

    NnlsResult res;
    res.x = Eigen::VectorXd::Zero(m);
    std::vector<char> passive(static_cast<std::size_t>(m), 0);
    std::vector<Eigen::Index> pidx;
    Eigen::VectorXd residual = s;
    Eigen::VectorXd w = a.transpose() * residual;
    Eigen::VectorXd z;
    Eigen::MatrixXd ap;

    auto solve_passive = [&]() {
        ap.resize(n, static_cast<Eigen::Index>(pidx.size()));
        for (std::size_t i = 0; i < pidx.size(); ++i) ap.col(static_cast<Eigen::Index>(i)) = a.col(pidx[i]);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ap);
        z = qr.solve(s);
    };

    while (true) {
        Eigen::Index t = -1;
        double best = tol;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (!passive[static_cast<std::size_t>(j)] && w[j] > best) {
                best = w[j];
                t = j;
            }
        }
        if (t < 0) break;
        if (res.iterations >= cap) {
            res.cap_reached = true;
            break;
        }
        ++res.iterations;
        passive[static_cast<std::size_t>(t)] = 1;
        pidx.push_back(t);

        for (int inner = 0;; ++inner) {
            solve_passive();
            bool feasible = true;
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                if (z[i] <= 0.0) {
                    feasible = false;
                    break;
                }
            }
            if (feasible) {
                for (std::size_t i = 0; i < pidx.size(); ++i) res.x[pidx[i]] = z[static_cast<Eigen::Index>(i)];
                break;
            }
            // Step from x toward z until the first passive coefficient hits zero.
            double alpha = 1.0;
            for (std::size_t i = 0; i < pidx.size(); ++i) {
                const double zi = z[static_cast<Eigen::Index>(i)];
                if (zi <= 0.0) {
                    const double xi = res.x[pidx[i]];
                    alpha = std::min(alpha, xi / (xi - zi));
                }
            }
            for (std::size_t i = 0; i < pidx.size(); ++i) {
                double& xi = res.x[pidx[i]];
                xi += alpha * (z[static_cast<Eigen::Index>(i)] - xi);
            }
            std::vector<Eigen::Index> kept;
            for (std::size_t i = 0; i < pidx.size(); ++i) {
                const Eigen::Index j = pidx[i];
                if (res.x[j] <= 1e-15 * (1.0 + std::abs(z[static_cast<Eigen::Index>(i)]))) {
                    res.x[j] = 0.0;
                    passive[static_cast<std::size_t>(j)] = 0;
                } else {
                    kept.push_back(j);
                }
            }
            pidx.swap(kept);
            if (pidx.empty() || inner > 3 * m) break;
        }
        residual = s - a * res.x;
        w = a.transpose() * residual;
        if (options.record_objective) res.objective_trace.push_back(residual.squaredNorm());
    }
    res.objective = (s - a * res.x).squaredNorm();
    return res;
}

NnlsVolumeReport predict_nnls(const Volume4D& volume, const SignalDictionary& sigdict, const VoxelMask* mask,
                              int threads) {
    const auto n = sigdict.atoms.rows();
    if (static_cast<std::size_t>(n) != volume.channels()) {
        throw ConfigError("volume has " + std::to_string(volume.channels()) + " channels but the signal dictionary has " +
                          std::to_string(n) + " rows");
    }
    if (mask && mask->size() != volume.voxel_count()) throw ConfigError("mask size does not match the volume");
    const std::size_t m = sigdict.direction_count;
    NnlsVolumeReport report;
    report.coefficients = Volume4D(volume.nx(), volume.ny(), volume.nz(), m);
    report.coefficients.voxel_size = volume.voxel_size;

    std::atomic<std::size_t> cap_hits{0};
    std::atomic<std::size_t> solved{0};
    const auto start = std::chrono::steady_clock::now();
    NnlsOptions opts;
    opts.gram_norm = sigdict.gram_norm;
    parallel_for(volume.voxel_count(), threads, [&](std::size_t begin, std::size_t end) {
        Eigen::VectorXd s(n);
        for (std::size_t v = begin; v < end; ++v) {
            if (mask && !(*mask)[v]) continue;
            const float* in = volume.voxel(v);
            bool zero = true;
            for (Eigen::Index i = 0; i < n; ++i) {
                s[i] = in[i];
                zero = zero && in[i] == 0.0f;
            }
            if (zero) continue;
            const NnlsResult r = nnls_solve(sigdict.atoms, s, opts);
            solved.fetch_add(1, std::memory_order_relaxed);
            if (r.cap_reached) cap_hits.fetch_add(1, std::memory_order_relaxed);
            double sum = 0.0;
            for (std::size_t k = 0; k < m; ++k) sum += r.x[static_cast<Eigen::Index>(k)];
            float* dst = report.coefficients.voxel(v);
            if (sum > 0.0) {
                for (std::size_t k = 0; k < m; ++k) dst[k] = static_cast<float>(r.x[static_cast<Eigen::Index>(k)] / sum);
            }
        }
    });
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.cap_hits = cap_hits.load();
    report.solved_voxels = solved.load();
    return report;
}

Eigen::MatrixXf nnls_predict_signals(const SignalDictionary& sigdict, const Eigen::MatrixXf& signals, int threads,
                                     std::size_t* cap_hits) {
    if (signals.rows() != sigdict.atoms.rows()) {
        throw ConfigError("signals have " + std::to_string(signals.rows()) + " channels but the signal dictionary has " +
                          std::to_string(sigdict.atoms.rows()) + " rows");
    }
    const auto m = static_cast<Eigen::Index>(sigdict.direction_count);
    Eigen::MatrixXf out = Eigen::MatrixXf::Zero(m, signals.cols());
    std::atomic<std::size_t> caps{0};
    NnlsOptions opts;
    opts.gram_norm = sigdict.gram_norm;
    parallel_for(static_cast<std::size_t>(signals.cols()), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            const auto col = static_cast<Eigen::Index>(k);
            const Eigen::VectorXd s = signals.col(col).cast<double>();
            if (s.isZero(0.0)) continue;
            const NnlsResult r = nnls_solve(sigdict.atoms, s, opts);
            if (r.cap_reached) caps.fetch_add(1, std::memory_order_relaxed);
            const double sum = r.x.head(m).sum();
            if (sum > 0.0) out.col(col) = (r.x.head(m) / sum).cast<float>();
        }
    });
    if (cap_hits) *cap_hits = caps.load();
    return out;
}

}  // namespace fiberlearn
