#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "fiberlearn/nnls.hpp"
#include "test_support.hpp"

using namespace fiberlearn;

namespace {

Eigen::MatrixXd random_nonneg(Eigen::Index r, Eigen::Index c, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

Eigen::VectorXd projected_gradient(const Eigen::MatrixXd& a, const Eigen::VectorXd& s, int iterations) {
    const Eigen::MatrixXd g = a.transpose() * a;
    const Eigen::VectorXd b = a.transpose() * s;
    const double step = 1.0 / Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g).eigenvalues().maxCoeff();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(a.cols());
    for (int i = 0; i < iterations; ++i) x = (x - step * (g * x - b)).cwiseMax(0.0);
    return x;
}

struct Signals {
    AcquisitionProtocol proto = make_shell_protocol(1, 60, 2000);
    SphereDictionary dict = build_dictionary(100, 0);
    SignalDictionary sig = build_signal_dictionary(proto, dict);
};

const Signals& sx() {
    static const Signals s;
    return s;
}

}  // namespace

TEST(SignalDictionary, ColumnsAreSingleTensorSignals) {
    const auto& s = sx();
    EXPECT_EQ(s.sig.atoms.rows(), 60);
    EXPECT_EQ(s.sig.atoms.cols(), 100);
    EXPECT_FALSE(s.sig.has_isotropic);
    const auto col = single_tensor_signal(s.proto.diffusion_weighted(), TensorSpec{kReferenceEigenvalues, s.dict.directions[7]});
    for (Eigen::Index i = 0; i < 60; ++i) EXPECT_EQ(s.sig.atoms(i, 7), col[static_cast<std::size_t>(i)]);
    EXPECT_DOUBLE_EQ(s.sig.gram_norm, gram_inf_norm(s.sig.atoms));
    const auto iso = build_signal_dictionary(s.proto, s.dict, kReferenceEigenvalues, true);
    EXPECT_EQ(iso.atoms.cols(), 101);
    EXPECT_EQ(iso.direction_count, 100u);
    EXPECT_LT(iso.atoms.col(100).maxCoeff() - iso.atoms.col(100).minCoeff(), 1e-12);
}

TEST(Nnls, RecoversUnitVector) {
    const auto& a = sx().sig.atoms;
    for (Eigen::Index k : {0, 13, 99}) {
        const auto r = nnls_solve(a, a.col(k));
        Eigen::VectorXd e = Eigen::VectorXd::Zero(a.cols());
        e[k] = 1.0;
        EXPECT_LT((r.x - e).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_FALSE(r.cap_reached);
    }
}

TEST(Nnls, RecoversTwoAtomMixture) {
    const auto& a = sx().sig.atoms;
    const Eigen::VectorXd s = 0.3 * a.col(5) + 0.7 * a.col(60);
    const auto r = nnls_solve(a, s);
    EXPECT_NEAR(r.x[5], 0.3, 1e-6);
    EXPECT_NEAR(r.x[60], 0.7, 1e-6);
    EXPECT_NEAR(r.x.sum(), 1.0, 1e-6);
}

TEST(Nnls, ZeroSolutionWhenCorrelationsNonPositive) {
    Rng rng(1);
    const Eigen::MatrixXd a = random_nonneg(10, 4, rng);
    const Eigen::VectorXd s = -Eigen::VectorXd::Ones(10);
    const auto r = nnls_solve(a, s);
    EXPECT_EQ(r.x.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(r.iterations, 0);
}

TEST(Nnls, KktOnRandomInstances) {
    Rng rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::MatrixXd a(15, 10);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(rng);
        Eigen::VectorXd s(15);
        for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = n(rng);
        const auto r = nnls_solve(a, s);
        const Eigen::VectorXd w = a.transpose() * (s - a * r.x);
        const double tol = 1e-8 * gram_inf_norm(a);
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            EXPECT_GE(r.x[j], 0.0);
            EXPECT_LE(w[j], tol);
            if (r.x[j] > 0.0) EXPECT_NEAR(w[j], 0.0, tol);
        }
        const Eigen::VectorXd pg = projected_gradient(a, s, 20000);
        EXPECT_LE(r.objective, (a * pg - s).squaredNorm() + 1e-9);
    }
}

TEST(Nnls, ObjectiveIsMonotone) {
    Rng rng(3);
    const Eigen::MatrixXd a = random_nonneg(40, 30, rng);
    std::uniform_real_distribution<double> u(0, 1);
    Eigen::VectorXd s(40);
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = u(rng);
    NnlsOptions o;
    o.record_objective = true;
    const auto r = nnls_solve(a, s, o);
    ASSERT_FALSE(r.objective_trace.empty());
    EXPECT_LE(r.objective_trace.front(), s.squaredNorm());
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i)
        EXPECT_LE(r.objective_trace[i], r.objective_trace[i - 1] * (1 + 1e-12) + 1e-15);
}

TEST(Nnls, IterationCap) {
    const auto& a = sx().sig.atoms;
    const Eigen::VectorXd s = 0.2 * a.col(1) + 0.3 * a.col(40) + 0.5 * a.col(80);
    NnlsOptions o;
    o.max_iterations = 1;
    const auto r = nnls_solve(a, s, o);
    EXPECT_TRUE(r.cap_reached);
    EXPECT_EQ(r.iterations, 1);
}

TEST(Nnls, ShapeErrors) {
    EXPECT_THROW(nnls_solve(Eigen::MatrixXd(3, 2), Eigen::VectorXd(4)), ConfigError);
    EXPECT_THROW(nnls_solve(Eigen::MatrixXd(0, 0), Eigen::VectorXd(0)), ConfigError);
}

TEST(PredictNnls, SingleFiberVolume) {
    const auto& s = sx();
    Volume4D vol(2, 2, 1, 60);
    for (std::size_t v = 0; v < 3; ++v) {
        const auto sig = single_tensor_signal(s.proto.diffusion_weighted(), TensorSpec{kReferenceEigenvalues, s.dict.directions[10 * v]});
        for (std::size_t i = 0; i < 60; ++i) vol.voxel(v)[i] = static_cast<float>(sig[i]);
    }
    // voxel 3 stays all zero
    const auto rep = predict_nnls(vol, s.sig, nullptr, 2);
    EXPECT_EQ(rep.solved_voxels, 3u);
    EXPECT_EQ(rep.cap_hits, 0u);
    EXPECT_EQ(rep.coefficients.channels(), 100u);
    for (std::size_t v = 0; v < 3; ++v) {
        const float* c = rep.coefficients.voxel(v);
        const auto arg = std::max_element(c, c + 100) - c;
        EXPECT_EQ(arg, static_cast<long>(10 * v));
        EXPECT_NEAR(std::accumulate(c, c + 100, 0.0), 1.0, 1e-5);
    }
    for (std::size_t k = 0; k < 100; ++k) EXPECT_EQ(rep.coefficients.voxel(3)[k], 0.0f);

    VoxelMask mask{1, 0, 0, 0};
    const auto masked = predict_nnls(vol, s.sig, &mask);
    EXPECT_EQ(masked.solved_voxels, 1u);
    Volume4D wrong(1, 1, 1, 59);
    EXPECT_THROW(predict_nnls(wrong, s.sig), ConfigError);
}

TEST(PredictNnls, LooseSignalsMatchVolumePath) {
    const auto& s = sx();
    Rng rng(4);
    Volume4D vol(3, 1, 1, 60);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& f : vol.data) f = u(rng);
    const auto rep = predict_nnls(vol, s.sig);
    Eigen::MatrixXf sig = Eigen::Map<const Eigen::MatrixXf>(vol.data.data(), 60, 3);
    std::size_t caps = 99;
    const auto out = nnls_predict_signals(s.sig, sig, 1, &caps);
    EXPECT_EQ(caps, 0u);
    for (Eigen::Index c = 0; c < 3; ++c)
        for (Eigen::Index k = 0; k < 100; ++k) EXPECT_EQ(out(k, c), rep.coefficients.voxel(static_cast<std::size_t>(c))[k]);
}
