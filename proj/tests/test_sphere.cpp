#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fiberlearn/sphere.hpp"
#include "test_support.hpp"

using namespace fiberlearn;
using fiberlearn::testing::random_unit;
using fiberlearn::testing::TempDir;

namespace {

const SphereDictionary& dict362() {
    static const SphereDictionary d = build_dictionary(362, 0);
    return d;
}

const GaussianWeights& weights362() {
    static const GaussianWeights w = gaussian_weight_matrix(dict362());
    return w;
}

std::vector<double> brute_force_labels(const SphereDictionary& dict, double sigma, const FiberConfig& cfg) {
    const std::size_t m = dict.size();
    std::vector<double> sparse(m, 0.0);
    for (std::size_t j = 0; j < cfg.count(); ++j) {
        std::size_t best = 0;
        double bd = -1.0;
        for (std::size_t k = 0; k < m; ++k) {
            const double d = std::abs(dict.directions[k].dot(cfg.pdds[j]));
            if (d > bd) {
                bd = d;
                best = k;
            }
        }
        sparse[best] += cfg.alphas[j];
    }
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < m; ++k) {
            const double th = std::acos(std::min(1.0, std::abs(dict.directions[i].dot(dict.directions[k]))));
            out[i] += std::exp(-th * th / (2 * sigma * sigma)) * sparse[k];
        }
        if (out[i] < 1e-3) out[i] = 0.0;
    }
    const double s = std::accumulate(out.begin(), out.end(), 0.0);
    for (double& v : out) v /= s;
    return out;
}

}  // namespace

TEST(Dictionary, DefaultSizeCoverage) {
    const auto& d = dict362();
    ASSERT_EQ(d.size(), 362u);
    EXPECT_LE(rad2deg(d.max_nearest_angle), 12.0);
    EXPECT_GE(rad2deg(d.min_pair_angle), 6.0);
    for (const auto& v : d.directions) {
        EXPECT_NEAR(v.norm(), 1.0, 1e-12);
        EXPECT_GE(v.z(), 0.0);
    }
}

TEST(Dictionary, AngleMatrixInvariants) {
    const auto& d = dict362();
    const auto& a = d.angles;
    ASSERT_EQ(a.rows(), 362);
    EXPECT_EQ((a - a.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(a.diagonal().cwiseAbs().maxCoeff(), 0.0);
    EXPECT_GE(a.minCoeff(), 0.0);
    EXPECT_LE(a.maxCoeff(), kPi / 2 + 1e-15);
    double min_off = 10.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            if (i != j) min_off = std::min(min_off, a(i, j));
    EXPECT_GT(min_off, 1e-6);
}

TEST(Dictionary, AdjacencyRadius) {
    const auto& d = dict362();
    EXPECT_NEAR(d.adjacency_radius, 1.5 * d.max_nearest_angle, 1e-15);
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_FALSE(d.adjacency[i].empty());
        for (int j : d.adjacency[i]) EXPECT_LE(d.angles(static_cast<Eigen::Index>(i), j), d.adjacency_radius);
    }
}

TEST(Dictionary, Deterministic) {
    const auto a = build_dictionary(50, 4);
    const auto b = build_dictionary(50, 4);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.directions[i], b.directions[i]);
    EXPECT_EQ(a.hash(), b.hash());
}

TEST(Dictionary, TinyDictionaryIsOrthogonalTriad) {
    const auto d = build_dictionary(3, 0);
    ASSERT_EQ(d.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i + 1; j < 3; ++j) EXPECT_NEAR(rad2deg(d.angles(i, j)), 90.0, 0.5);
}

TEST(Dictionary, RejectsBadInput) {
    EXPECT_THROW(build_dictionary(2, 0), ConfigError);
    EXPECT_THROW(dictionary_from_directions({Vec3::UnitX(), -Vec3::UnitX()}), ConfigError);
    EXPECT_THROW(dictionary_from_directions({Vec3::UnitX(), Vec3::Zero()}), ConfigError);
}

TEST(Dictionary, SaveLoadKeepsHash) {
    TempDir tmp;
    const auto& d = dict362();
    save_dictionary(tmp / "dict.json", d);
    const auto back = load_dictionary(tmp / "dict.json");
    EXPECT_EQ(back.hash(), d.hash());
    EXPECT_EQ(back.seed, d.seed);
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(back.directions[i], d.directions[i]);
    EXPECT_THROW(load_dictionary(tmp / "missing.json"), Error);
}

TEST(NearestAtom, IdentityAntipodeAndBruteForce) {
    const auto& d = dict362();
    for (std::size_t k = 0; k < d.size(); k += 17) {
        EXPECT_EQ(nearest_atom(d, d.directions[k]), k);
        EXPECT_EQ(nearest_atom(d, -d.directions[k]), k);
    }
    Rng rng(8);
    for (int i = 0; i < 500; ++i) {
        const Vec3 v = random_unit(rng);
        std::size_t best = 0;
        double bd = -1.0;
        for (std::size_t k = 0; k < d.size(); ++k) {
            const double dd = std::abs(d.directions[k].dot(v));
            if (dd > bd) {
                bd = dd;
                best = k;
            }
        }
        EXPECT_EQ(nearest_atom(d, v), best);
    }
}

TEST(GaussianWeights, ValuesAndOrdering) {
    const auto& d = dict362();
    const auto& w = weights362();
    EXPECT_EQ(w.sigma, kDefaultLabelSigma);
    EXPECT_EQ((w.matrix - w.matrix.transpose()).cwiseAbs().maxCoeff(), 0.0);
    for (Eigen::Index i = 0; i < w.matrix.rows(); ++i) EXPECT_EQ(w.matrix(i, i), 1.0);
    // exhaustive strict ordering per row
    for (Eigen::Index i = 0; i < w.matrix.rows(); ++i) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(w.matrix.cols()));
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return d.angles(i, a) < d.angles(i, b); });
        for (std::size_t k = 1; k < idx.size(); ++k) {
            const double ta = d.angles(i, idx[k - 1]);
            const double tb = d.angles(i, idx[k]);
            if (tb > ta && w.matrix(i, idx[k - 1]) > 0.0) EXPECT_GT(w.matrix(i, idx[k - 1]), w.matrix(i, idx[k]));
            EXPECT_LE(w.matrix(i, idx[k]), 1.0);
        }
    }
    const auto tri = dictionary_from_directions({Vec3::UnitZ(), Vec3(std::sin(0.1), 0, std::cos(0.1)), Vec3::UnitX()});
    EXPECT_NEAR(gaussian_weight_matrix(tri, 0.1).matrix(0, 1), std::exp(-0.5), 1e-12);
    EXPECT_THROW(gaussian_weight_matrix(d, 0.0), ConfigError);
    EXPECT_THROW(gaussian_weight_matrix(d, -1.0), ConfigError);
}

TEST(EncodeLabels, SingleFiberIsBlurredPointMass) {
    const auto& d = dict362();
    Rng rng(2);
    const Vec3 v = random_unit(rng);
    const auto y = encode_labels(d, weights362(), FiberConfig{{1.0}, {v}});
    const auto arg = static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin());
    EXPECT_EQ(arg, nearest_atom(d, v));
    EXPECT_NEAR(std::accumulate(y.begin(), y.end(), 0.0), 1.0, 1e-9);
    for (double x : y) EXPECT_GE(x, 0.0);
}

TEST(EncodeLabels, CollisionSumsMass) {
    const auto& d = dict362();
    const Vec3 v = d.directions[10];
    const Vec3 near = (v + 1e-4 * v.unitOrthogonal()).normalized();
    const auto a = encode_labels(d, weights362(), FiberConfig{{0.4, 0.6}, {v, near}});
    const auto b = encode_labels(d, weights362(), FiberConfig{{1.0}, {v}});
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
}

TEST(EncodeLabels, MatchesBruteForceOracle) {
    const auto& d = dict362();
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        FiberConfig cfg{{0.2, 0.3, 0.5}, {random_unit(rng), random_unit(rng), random_unit(rng)}};
        const auto y = encode_labels(d, weights362(), cfg);
        const auto o = brute_force_labels(d, kDefaultLabelSigma, cfg);
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], o[i], 1e-12);
        auto flipped = cfg;
        for (auto& p : flipped.pdds) p = -p;
        EXPECT_EQ(encode_labels(d, weights362(), flipped), y);
    }
}

TEST(EncodeLabels, ClipsBelowThreshold) {
    const auto& d = dict362();
    const std::size_t k = nearest_atom(d, Vec3::UnitZ());
    const auto y = encode_labels(d, weights362(), FiberConfig{{1.0}, {Vec3::UnitZ()}});
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double w = weights362().matrix(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
        EXPECT_EQ(y[i] == 0.0, w < kLabelClip) << i;
    }
}

TEST(ExtractPeaks, SinglePeakAndEmpty) {
    const auto& d = dict362();
    const auto y = encode_labels(d, weights362(), FiberConfig{{1.0}, {d.directions[100]}});
    const auto p = extract_peaks(d, std::span<const double>(y));
    ASSERT_EQ(p.peaks.size(), 1u);
    EXPECT_EQ(p.peaks[0].atom, 100u);
    EXPECT_NEAR(p.peaks[0].weight, 1.0, 1e-12);
    EXPECT_FALSE(p.degenerate);
    const std::vector<double> zero(d.size(), 0.0);
    EXPECT_TRUE(extract_peaks(d, std::span<const double>(zero)).peaks.empty());
    const std::vector<double> bad(5, 1.0);
    EXPECT_THROW(extract_peaks(d, std::span<const double>(bad)), ConfigError);
}

TEST(ExtractPeaks, UniformInputIsDegenerate) {
    const auto& d = dict362();
    const std::vector<float> flat(d.size(), 1.0f);
    const auto p = extract_peaks(d, std::span<const float>(flat));
    EXPECT_LE(p.peaks.size(), 3u);
    EXPECT_TRUE(p.degenerate);
}

TEST(ExtractPeaks, RoundTripRecoversCrossings) {
    const auto& d = dict362();
    Rng rng(12);
    int tested = 0;
    while (tested < 200) {
        const std::size_t t = 2 + (tested % 2);
        FiberConfig cfg;
        for (std::size_t j = 0; j < t; ++j) cfg.pdds.push_back(random_unit(rng));
        bool ok = true;
        for (std::size_t a = 0; a < t; ++a)
            for (std::size_t b = a + 1; b < t; ++b) ok = ok && rad2deg(axial_angle(cfg.pdds[a], cfg.pdds[b])) >= 30.0;
        if (!ok) continue;
        std::uniform_real_distribution<double> u(0.2, 1.0);
        double s = 0.0;
        for (std::size_t j = 0; j < t; ++j) s += cfg.alphas.emplace_back(u(rng));
        for (double& a : cfg.alphas) a /= s;
        std::sort(cfg.alphas.begin(), cfg.alphas.end());
        if (*std::min_element(cfg.alphas.begin(), cfg.alphas.end()) <= 0.1) continue;
        ++tested;
        const auto y = encode_labels(d, weights362(), cfg);
        const auto p = extract_peaks(d, std::span<const double>(y));
        ASSERT_EQ(p.peaks.size(), t);
        std::vector<bool> used(t, false);
        for (std::size_t j = 0; j < t; ++j) {
            std::size_t best = 0;
            double bd = 1e9;
            for (std::size_t k = 0; k < t; ++k) {
                const double ang = axial_angle(cfg.pdds[j], p.peaks[k].direction);
                if (!used[k] && ang < bd) {
                    bd = ang;
                    best = k;
                }
            }
            used[best] = true;
            EXPECT_LE(bd, d.max_nearest_angle + 1e-12);
            EXPECT_NEAR(p.peaks[best].weight, cfg.alphas[j], 0.05);
        }
    }
}
