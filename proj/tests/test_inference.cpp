#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "fiberlearn/inference.hpp"
#include "test_support.hpp"

using namespace fiberlearn;

namespace {

Volume4D random_volume(std::size_t x, std::size_t y, std::size_t z, std::size_t c, std::uint64_t seed) {
    Volume4D v(x, y, z, c);
    Rng rng(seed);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& f : v.data) f = u(rng);
    return v;
}

struct Setup {
    MlpModel model;
    ModelManifest manifest;
};

Setup make_setup(ModelMode mode, std::size_t n, std::size_t m, Activation out = Activation::sigmoid) {
    const std::size_t in = mode == ModelMode::voxel ? n : kPatchVoxels * n;
    Setup s;
    s.model = init_model<float>({in, 16, m}, Activation::relu, out, 0.2, 21);
    s.manifest = manifest_for(s.model, mode, n);
    s.manifest.dictionary_m = m;
    return s;
}

PredictionRequest request(const Setup& s, const Volume4D& vol, const VoxelMask* mask = nullptr) {
    PredictionRequest r;
    r.model = &s.model;
    r.manifest = &s.manifest;
    r.input = &vol;
    r.mask = mask;
    r.mode = s.manifest.mode;
    return r;
}

}  // namespace

TEST(StridedPartitions, SmallestGrid) {
    const auto p = strided_partitions({3, 3, 3});
    ASSERT_EQ(p.size(), 27u);
    ASSERT_EQ(p[13].size(), 1u);
    EXPECT_EQ(p[13][0], (Index3{1, 1, 1}));
}

TEST(StridedPartitions, CoverDisjointAndNonOverlapping) {
    for (const Index3 dims : {Index3{4, 4, 4}, Index3{7, 6, 5}, Index3{1, 2, 9}, Index3{5, 1, 1}}) {
        const auto p = strided_partitions(dims);
        std::set<Index3> seen;
        std::size_t total = 0;
        for (std::size_t s = 0; s < p.size(); ++s) {
            std::set<Index3> covered;
            for (const auto& v : p[s]) {
                EXPECT_EQ(s, 9 * (v[0] % 3) + 3 * (v[1] % 3) + v[2] % 3);
                seen.insert(v);
                ++total;
                for (int dx = -1; dx <= 1; ++dx)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dz = -1; dz <= 1; ++dz) {
                            const Index3 q{v[0] + 1 + dx, v[1] + 1 + dy, v[2] + 1 + dz};  // padded coordinates
                            EXPECT_TRUE(covered.insert(q).second) << "patch overlap in set " << s;
                        }
            }
        }
        EXPECT_EQ(total, dims[0] * dims[1] * dims[2]);
        EXPECT_EQ(seen.size(), total);
    }
}

TEST(ZeroPad, BordersAreZero) {
    const auto v = random_volume(2, 3, 4, 2, 1);
    const auto p = zero_pad(v);
    EXPECT_EQ(p.dims, (std::array<std::size_t, 4>{4, 5, 6, 2}));
    EXPECT_EQ(p.voxel(0, 0, 0)[0], 0.0f);
    EXPECT_EQ(p.voxel(3, 4, 5)[1], 0.0f);
    EXPECT_EQ(p.voxel(1, 2, 3)[1], v.voxel(0, 1, 2)[1]);
}

TEST(GatherPatch, OrderAndPadding) {
    const auto v = random_volume(3, 3, 3, 2, 2);
    const auto p = zero_pad(v);
    std::vector<float> patch(27 * 2);
    gather_patch(p, 0, 0, 0, patch.data());
    for (std::size_t x = 0; x < 3; ++x)
        for (std::size_t y = 0; y < 3; ++y)
            for (std::size_t z = 0; z < 3; ++z)
                for (std::size_t c = 0; c < 2; ++c) {
                    const float got = patch[patch_index(x, y, z) * 2 + c];
                    if (x == 0 || y == 0 || z == 0) {
                        EXPECT_EQ(got, 0.0f);
                    } else {
                        EXPECT_EQ(got, v.voxel(x - 1, y - 1, z - 1)[c]);
                    }
                }
}

TEST(PredictVoxelwise, MatchesDirectForwardAndMask) {
    const auto s = make_setup(ModelMode::voxel, 5, 7);
    const auto vol = random_volume(4, 3, 2, 5, 3);
    VoxelMask mask(vol.voxel_count(), 1);
    mask[5] = 0;
    const auto out = predict_voxelwise(request(s, vol, &mask));
    EXPECT_EQ(out.dims, (std::array<std::size_t, 4>{4, 3, 2, 7}));
    for (std::size_t v = 0; v < vol.voxel_count(); ++v) {
        MatrixT<float> x = Eigen::Map<const Eigen::VectorXf>(vol.voxel(v), 5);
        const auto ref = forward(s.model, x, false, nullptr, nullptr, MathMode::batch_invariant);
        for (std::size_t k = 0; k < 7; ++k) {
            if (v == 5) {
                EXPECT_EQ(out.voxel(v)[k], 0.0f);
            } else {
                EXPECT_EQ(out.voxel(v)[k], ref(static_cast<Eigen::Index>(k), 0));
            }
        }
    }
}

TEST(PredictVoxelwise, IndependentOfBatchingThreadsAndOrder) {
    const auto s = make_setup(ModelMode::voxel, 6, 9);
    const auto vol = random_volume(5, 4, 3, 6, 4);
    const auto ref = predict_voxelwise(request(s, vol));
    InferenceOptions o;
    o.max_batch_voxels = 7;
    o.threads = 3;
    EXPECT_EQ(predict_voxelwise(request(s, vol), o).data, ref.data);
    // reversed voxel order
    Volume4D rev = vol;
    const std::size_t n = vol.voxel_count();
    for (std::size_t v = 0; v < n; ++v) std::copy_n(vol.voxel(v), 6, rev.voxel(n - 1 - v));
    const auto r = predict_voxelwise(request(s, rev));
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t k = 0; k < 9; ++k) EXPECT_EQ(r.voxel(n - 1 - v)[k], ref.voxel(v)[k]);
}

TEST(PredictVoxelwise, TanhOutputIsClamped) {
    auto s = make_setup(ModelMode::voxel, 4, 6, Activation::tanh);
    s.model.layers.back().bias.setConstant(-3.0f);
    const auto vol = random_volume(2, 2, 2, 4, 5);
    const auto out = predict_voxelwise(request(s, vol));
    for (float f : out.data) EXPECT_GE(f, 0.0f);
}

TEST(PredictVoxelwise, DimensionMismatch) {
    const auto s = make_setup(ModelMode::voxel, 5, 7);
    const auto vol = random_volume(2, 2, 2, 4, 6);
    EXPECT_THROW(predict_voxelwise(request(s, vol)), ConfigError);
    const auto ok = random_volume(2, 2, 2, 5, 6);
    VoxelMask short_mask(3, 1);
    EXPECT_THROW(predict_voxelwise(request(s, ok, &short_mask)), ConfigError);
}

TEST(PredictNeighborhood, MatchesNaiveLoopExactly) {
    const std::size_t n = 4;
    const auto s = make_setup(ModelMode::neighborhood, n, 6);
    const auto vol = random_volume(7, 6, 5, n, 7);
    const auto out = predict_neighborhood(request(s, vol));
    const auto padded = zero_pad(vol);
    for (std::size_t x = 0; x < 7; ++x)
        for (std::size_t y = 0; y < 6; ++y)
            for (std::size_t z = 0; z < 5; ++z) {
                MatrixT<float> patch(static_cast<Eigen::Index>(27 * n), 1);
                // naive gather straight from the padded grid
                for (std::size_t a = 0; a < 3; ++a)
                    for (std::size_t b = 0; b < 3; ++b)
                        for (std::size_t c = 0; c < 3; ++c)
                            for (std::size_t ch = 0; ch < n; ++ch)
                                patch(static_cast<Eigen::Index>(patch_index(a, b, c) * n + ch), 0) =
                                    padded.voxel(x + a, y + b, z + c)[ch];
                const auto ref = forward(s.model, patch, false, nullptr, nullptr, MathMode::batch_invariant);
                for (std::size_t k = 0; k < 6; ++k)
                    ASSERT_EQ(out.voxel(x, y, z)[k], ref(static_cast<Eigen::Index>(k), 0));
            }
    InferenceOptions o;
    o.threads = 4;
    o.max_batch_voxels = 3;
    EXPECT_EQ(predict_neighborhood(request(s, vol), o).data, out.data);
    PredictionRequest r = request(s, vol);
    EXPECT_EQ(predict(r).data, out.data);
}

TEST(PredictNeighborhood, MaskedVoxelsAreZero) {
    const auto s = make_setup(ModelMode::neighborhood, 3, 5);
    const auto vol = random_volume(3, 3, 3, 3, 8);
    VoxelMask mask(27, 0);
    mask[13] = 1;
    const auto out = predict_neighborhood(request(s, vol, &mask));
    for (std::size_t v = 0; v < 27; ++v)
        for (std::size_t k = 0; k < 5; ++k)
            if (v != 13) EXPECT_EQ(out.voxel(v)[k], 0.0f);
    EXPECT_NE(out.voxel(13)[0], 0.0f);
}

TEST(PredictSignals, ReplicatesPatchForNeighborhoodModels) {
    const auto s = make_setup(ModelMode::neighborhood, 3, 5);
    Rng rng(9);
    std::uniform_real_distribution<float> u(0, 1);
    Eigen::MatrixXf sig(3, 4);
    for (Eigen::Index i = 0; i < sig.size(); ++i) sig.data()[i] = u(rng);
    const auto out = predict_signals(s.model, ModelMode::neighborhood, sig);
    for (Eigen::Index c = 0; c < 4; ++c) {
        MatrixT<float> patch(81, 1);
        for (int p = 0; p < 27; ++p) patch.block(3 * p, 0, 3, 1) = sig.col(c);
        const auto ref = forward(s.model, patch, false, nullptr, nullptr, MathMode::batch_invariant);
        EXPECT_EQ(out.col(c), ref.col(0));
    }
}

TEST(WritePeaks, OneLinePerVoxelWithPeaks) {
    const auto dict = build_dictionary(30, 0);
    const auto w = gaussian_weight_matrix(dict);
    Volume4D coeffs(2, 1, 1, 30);
    const auto y = encode_labels(dict, w, FiberConfig{{1.0}, {dict.directions[4]}});
    for (std::size_t k = 0; k < 30; ++k) coeffs.voxel(0)[k] = static_cast<float>(y[k]);
    std::ostringstream os;
    write_peaks(os, coeffs, dict);
    const std::string s = os.str();
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 2);
    EXPECT_EQ(s.rfind("#", 0), 0u);
    EXPECT_NE(s.find("\n0 0 0 1 "), std::string::npos);
}
