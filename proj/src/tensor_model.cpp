#include "fiberlearn/tensor_model.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <limits>

namespace fiberlearn {

void TensorSpec::validate() const {
    for (double l : lambdas) {
        if (!(l > 0.0) || !std::isfinite(l)) throw ConfigError("tensor eigenvalues must be positive and finite");
    }
    if (!(lambdas[0] >= lambdas[1] && lambdas[1] >= lambdas[2])) {
        throw ConfigError("tensor eigenvalues must be in descending order");
    }
    if (!pdd.allFinite() || std::abs(pdd.norm() - 1.0) > 1e-9) {
        throw ConfigError("principal diffusion direction must be unit norm");
    }
}

void FiberConfig::validate() const {
    const std::size_t t = alphas.size();
    if (t < 1 || t > 3) throw ConfigError("fiber count must be 1, 2 or 3");
    if (pdds.size() != t) throw ConfigError("fiber config has mismatched alphas and pdds");
    double sum = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
        sum += alphas[j];
        if (!(alphas[j] > 0.1)) throw ConfigError("volume fraction must exceed 0.1");
        if (j > 0 && alphas[j] < alphas[j - 1]) throw ConfigError("volume fractions must be non-decreasing");
        if (!pdds[j].allFinite() || std::abs(pdds[j].norm() - 1.0) > 1e-9) {
            throw ConfigError("fiber direction must be unit norm");
        }
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("volume fractions must sum to 1");
}

Mat3 eigenframe(const Vec3& pdd) {
    int least = 0;
    for (int i = 1; i < 3; ++i) {
        if (std::abs(pdd[i]) < std::abs(pdd[least])) least = i;
    }
    Vec3 axis = Vec3::Zero();
    axis[least] = 1.0;
    Vec3 e2 = axis - axis.dot(pdd) * pdd;
    e2.normalize();
    const Vec3 e3 = pdd.cross(e2);
    Mat3 r;
    r.col(0) = pdd;
    r.col(1) = e2;
    r.col(2) = e3;
    return r;
}

Mat3 tensor_matrix(const TensorSpec& spec) {
    spec.validate();
    const auto& l = spec.lambdas;
    if (l[1] == l[2]) {
        return (l[0] - l[1]) * spec.pdd * spec.pdd.transpose() + l[1] * Mat3::Identity();
    }
    const Mat3 r = eigenframe(spec.pdd);
    return r * Vec3(l[0], l[1], l[2]).asDiagonal() * r.transpose();
}

std::vector<double> single_tensor_signal(const AcquisitionProtocol& proto, const TensorSpec& spec,
                                         double s0) {
    const Mat3 d = tensor_matrix(spec);
    std::vector<double> out(proto.size());
    for (std::size_t i = 0; i < proto.size(); ++i) {
        const Vec3& g = proto.gradients[i];
        out[i] = s0 * std::exp(-proto.bvalues[i] * g.dot(d * g));
    }
    return out;
}

void multi_tensor_signal_into(const AcquisitionProtocol& proto, const FiberConfig& config,
                              const Eigenvalues& lambdas, double s0, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t j = 0; j < config.count(); ++j) {
        const Mat3 d = tensor_matrix(TensorSpec{lambdas, config.pdds[j]});
        const double a = config.alphas[j];
        for (std::size_t i = 0; i < proto.size(); ++i) {
            const Vec3& g = proto.gradients[i];
            out[i] += a * std::exp(-proto.bvalues[i] * g.dot(d * g));
        }
    }
    for (auto& v : out) v *= s0;
}

std::vector<double> multi_tensor_signal(const AcquisitionProtocol& proto, const FiberConfig& config,
                                        const Eigenvalues& lambdas, double s0) {
    config.validate();
    std::vector<double> out(proto.size());
    multi_tensor_signal_into(proto, config, lambdas, s0, out);
    return out;
}

void add_rician_noise(std::span<double> signal, double snr, Rng& rng, double reference) {
    if (!(snr > 0.0)) throw ConfigError("SNR must be positive");
    if (std::isinf(snr)) return;
    const double sigma = reference / snr;
    std::normal_distribution<double> normal(0.0, sigma);
    for (auto& s : signal) {
        const double e1 = normal(rng);
        const double e2 = normal(rng);
        s = std::hypot(s + e1, e2);
    }
}

std::vector<double> add_rician_noise(std::vector<double> signal, double snr, Rng& rng, double reference) {
    add_rician_noise(std::span<double>(signal), snr, rng, reference);
    return signal;
}

}  // namespace fiberlearn
