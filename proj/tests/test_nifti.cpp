#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "fiberlearn/nifti.hpp"
#include "test_support.hpp"

using namespace fiberlearn;
using fiberlearn::testing::TempDir;

namespace {

// Independent byte-level NIfTI-1 writer used as a fixture generator.
struct Fixture {
    bool big_endian = false;
    short datatype = 16;
    short bitpix = 32;
    short dims[4] = {3, 2, 2, 2};  // x, y, z, t
    float slope = 0.0f;
    float inter = 0.0f;
    float vox_offset = 352.0f;
    std::vector<double> values;  // file order, x fastest

    template <typename T>
    void put(std::vector<unsigned char>& buf, std::size_t off, T v) const {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        if (big_endian) std::reverse(b, b + sizeof(T));
        std::memcpy(buf.data() + off, b, sizeof(T));
    }

    std::vector<unsigned char> bytes() const {
        std::vector<unsigned char> buf(static_cast<std::size_t>(vox_offset), 0);
        put<int>(buf, 0, 348);
        const short ndim = dims[3] > 1 ? 4 : 3;
        put<short>(buf, 40, ndim);
        for (int i = 0; i < 4; ++i) put<short>(buf, 42 + 2 * i, dims[i]);
        for (int i = 4; i < 7; ++i) put<short>(buf, 42 + 2 * i, 1);
        put<short>(buf, 70, datatype);
        put<short>(buf, 72, bitpix);
        put<float>(buf, 76, 1.0f);
        put<float>(buf, 80, 2.0f);
        put<float>(buf, 84, 2.5f);
        put<float>(buf, 88, 3.0f);
        put<float>(buf, 108, vox_offset);
        put<float>(buf, 112, slope);
        put<float>(buf, 116, inter);
        std::memcpy(buf.data() + 344, "n+1\0", 4);
        for (double v : values) {
            const std::size_t off = buf.size();
            buf.resize(off + static_cast<std::size_t>(bitpix / 8));
            switch (datatype) {
                case 2: buf[off] = static_cast<unsigned char>(v); break;
                case 4: put<std::int16_t>(buf, off, static_cast<std::int16_t>(v)); break;
                case 8: put<std::int32_t>(buf, off, static_cast<std::int32_t>(v)); break;
                case 16: put<float>(buf, off, static_cast<float>(v)); break;
                case 64: put<double>(buf, off, v); break;
            }
        }
        return buf;
    }

    void write(const std::filesystem::path& p) const {
        const auto b = bytes();
        std::ofstream out(p, std::ios::binary);
        out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    }
};

Fixture ramp(short datatype, short bitpix, bool big) {
    Fixture f;
    f.datatype = datatype;
    f.bitpix = bitpix;
    f.big_endian = big;
    for (int i = 0; i < 3 * 2 * 2 * 2; ++i) f.values.push_back(i + 1);
    return f;
}

}  // namespace

class NiftiDatatypes : public ::testing::TestWithParam<std::tuple<int, bool>> {};

TEST_P(NiftiDatatypes, DecodesIntoChannelFastestOrder) {
    const auto [code, big] = GetParam();
    const short bitpix = code == 2 ? 8 : code == 4 ? 16 : code == 64 ? 64 : 32;
    TempDir dir;
    const Fixture f = ramp(static_cast<short>(code), bitpix, big);
    f.write(dir / "v.nii");
    const Volume4D v = load_nifti(dir / "v.nii");
    ASSERT_EQ(v.dims, (std::array<std::size_t, 4>{3, 2, 2, 2}));
    EXPECT_EQ(v.voxel_size, (std::array<double, 3>{2.0, 2.5, 3.0}));
    for (std::size_t t = 0; t < 2; ++t)
        for (std::size_t z = 0; z < 2; ++z)
            for (std::size_t y = 0; y < 2; ++y)
                for (std::size_t x = 0; x < 3; ++x) {
                    const double expected = f.values[((t * 2 + z) * 2 + y) * 3 + x];
                    EXPECT_EQ(v.voxel(x, y, z)[t], static_cast<float>(expected));
                }
}

INSTANTIATE_TEST_SUITE_P(AllTypesBothOrders, NiftiDatatypes,
                         ::testing::Combine(::testing::Values(2, 4, 8, 16, 64), ::testing::Bool()));

TEST(Nifti, AppliesScaling) {
    TempDir dir;
    Fixture f = ramp(4, 16, false);
    f.slope = 0.5f;
    f.inter = -1.0f;
    f.write(dir / "s.nii");
    const Volume4D v = load_nifti(dir / "s.nii");
    EXPECT_FLOAT_EQ(v.voxel(0, 0, 0)[0], 0.5f * 1 - 1.0f);
    EXPECT_FLOAT_EQ(v.voxel(2, 1, 1)[1], 0.5f * 24 - 1.0f);
}

TEST(Nifti, ThreeDimensionalVolumeHasOneChannel) {
    TempDir dir;
    Fixture f;
    f.dims[3] = 1;
    for (int i = 0; i < 12; ++i) f.values.push_back(i);
    f.write(dir / "m.nii");
    const Volume4D v = load_nifti(dir / "m.nii");
    EXPECT_EQ(v.channels(), 1u);
    EXPECT_EQ(v.voxel(2, 1, 1)[0], 11.0f);
}

TEST(Nifti, TruncatedDataReportsSizes) {
    TempDir dir;
    const auto b = ramp(16, 32, false).bytes();
    std::ofstream(dir / "t.nii", std::ios::binary).write(reinterpret_cast<const char*>(b.data()), 352 + 40);
    try {
        load_nifti(dir / "t.nii");
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("448"), std::string::npos) << msg;
        EXPECT_NE(msg.find("392"), std::string::npos) << msg;
    }
}

TEST(Nifti, RejectsBadHeaders) {
    TempDir dir;
    auto b = ramp(16, 32, false).bytes();
    b[345] = 'x';
    std::ofstream(dir / "magic.nii", std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    EXPECT_THROW(load_nifti(dir / "magic.nii"), FormatError);

    Fixture f = ramp(16, 32, false);
    f.datatype = 512;  // uint16, unsupported
    f.bitpix = 16;
    f.values.clear();
    f.write(dir / "type.nii");
    EXPECT_THROW(load_nifti(dir / "type.nii"), FormatError);

    Fixture g = ramp(16, 32, false);
    g.bitpix = 64;  // disagrees with float32
    g.write(dir / "bitpix.nii");
    EXPECT_THROW(load_nifti(dir / "bitpix.nii"), FormatError);

    EXPECT_THROW(load_nifti(dir / "missing.nii"), FormatError);
}

TEST(Nifti, SaveLoadRoundTrip) {
    TempDir dir;
    Volume4D v(4, 3, 2, 5);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<float>(i) * 0.25f - 3.0f;
    v.voxel_size = {1.5, 2.0, 2.5};
    save_nifti(dir / "r.nii", v);
    const Volume4D w = load_nifti(dir / "r.nii");
    EXPECT_EQ(w.dims, v.dims);
    EXPECT_EQ(w.data, v.data);
    EXPECT_EQ(w.voxel_size, v.voxel_size);
    EXPECT_EQ(std::filesystem::file_size(dir / "r.nii"), 352u + 4u * v.data.size());
}
