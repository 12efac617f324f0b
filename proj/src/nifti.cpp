#include "fiberlearn/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fiberlearn {
namespace {

constexpr std::size_t kHeaderSize = 348;

// Byte offsets inside the 348-byte header.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffMagic = 344;

template <typename T>
T read_raw(const unsigned char* p, bool swap) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, p, sizeof(T));
    if (swap) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

template <typename T>
void write_le(unsigned char* p, T v) {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    }
    std::memcpy(p, buf, sizeof(T));
}

std::size_t datatype_size(short datatype) {
    switch (datatype) {
        case nifti::kUint8: return 1;
        case nifti::kInt16: return 2;
        case nifti::kInt32: return 4;
        case nifti::kFloat32: return 4;
        case nifti::kFloat64: return 8;
        default: return 0;
    }
}

double read_element(const unsigned char* p, short datatype, bool swap) {
    switch (datatype) {
        case nifti::kUint8: return *p;
        case nifti::kInt16: return read_raw<std::int16_t>(p, swap);
        case nifti::kInt32: return read_raw<std::int32_t>(p, swap);
        case nifti::kFloat32: return read_raw<float>(p, swap);
        case nifti::kFloat64: return read_raw<double>(p, swap);
        default: return 0.0;
    }
}

}  // namespace

Volume4D load_nifti(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open NIfTI file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < kHeaderSize) {
        throw FormatError(path.string() + ": file shorter than a NIfTI-1 header (" +
                          std::to_string(bytes.size()) + " bytes)");
    }
    const unsigned char* h = bytes.data();

    bool swap = false;
    const auto sizeof_hdr = read_raw<std::int32_t>(h + kOffSizeofHdr, false);
    if (sizeof_hdr != 348) {
        if (read_raw<std::int32_t>(h + kOffSizeofHdr, true) != 348) {
            throw FormatError(path.string() + ": sizeof_hdr is not 348 in either byte order");
        }
        swap = true;
    }
    if (std::memcmp(h + kOffMagic, "n+1\0", 4) != 0) {
        throw FormatError(path.string() + ": bad magic (only single-file NIfTI-1 'n+1' is supported)");
    }

    std::array<std::int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i) dim[i] = read_raw<std::int16_t>(h + kOffDim + 2 * i, swap);
    const int ndim = dim[0];
    if (ndim < 1 || ndim > 7) throw FormatError(path.string() + ": invalid dim[0]=" + std::to_string(ndim));
    for (int i = 5; i <= ndim; ++i) {
        if (dim[i] != 1) throw FormatError(path.string() + ": volumes with more than 4 dimensions are not supported");
    }
    std::array<std::size_t, 4> dims{1, 1, 1, 1};
    for (int i = 1; i <= std::min(ndim, 4); ++i) {
        if (dim[i] < 1) throw FormatError(path.string() + ": non-positive dim[" + std::to_string(i) + "]");
        dims[i - 1] = static_cast<std::size_t>(dim[i]);
    }

    const short datatype = read_raw<std::int16_t>(h + kOffDatatype, swap);
    const std::size_t esize = datatype_size(datatype);
    if (esize == 0) {
        throw FormatError(path.string() + ": unsupported datatype code " + std::to_string(datatype));
    }
    const short bitpix = read_raw<std::int16_t>(h + kOffBitpix, swap);
    if (bitpix != static_cast<short>(8 * esize)) {
        throw FormatError(path.string() + ": bitpix " + std::to_string(bitpix) + " disagrees with datatype");
    }

    const float vox_offset_f = read_raw<float>(h + kOffVoxOffset, swap);
    if (!std::isfinite(vox_offset_f) || vox_offset_f < static_cast<float>(kHeaderSize) ||
        vox_offset_f != std::floor(vox_offset_f)) {
        throw FormatError(path.string() + ": invalid vox_offset " + std::to_string(vox_offset_f));
    }
    const auto vox_offset = static_cast<std::size_t>(vox_offset_f);
    const std::size_t n_elems = dims[0] * dims[1] * dims[2] * dims[3];
    const std::size_t expected = vox_offset + n_elems * esize;
    if (bytes.size() < expected) {
        throw FormatError(path.string() + ": truncated voxel data: expected " + std::to_string(expected) +
                          " bytes (vox_offset " + std::to_string(vox_offset) + " + " +
                          std::to_string(n_elems * esize) + " data), file has " + std::to_string(bytes.size()));
    }

    float slope = read_raw<float>(h + kOffSclSlope, swap);
    float inter = read_raw<float>(h + kOffSclInter, swap);
    const bool scale = std::isfinite(slope) && slope != 0.0f && std::isfinite(inter) &&
                       !(slope == 1.0f && inter == 0.0f);

    Volume4D vol;
    vol.dims = dims;
    vol.data.resize(n_elems);
    for (int i = 0; i < 3; ++i) {
        const float p = read_raw<float>(h + kOffPixdim + 4 * (i + 1), swap);
        vol.voxel_size[i] = (std::isfinite(p) && p > 0.0f) ? p : 1.0;
    }

    // File order is x fastest, then y, z, t; working order is channel fastest.
    const unsigned char* data = bytes.data() + vox_offset;
    const std::size_t nx = dims[0], ny = dims[1], nz = dims[2], nc = dims[3];
    std::size_t file_index = 0;
    for (std::size_t c = 0; c < nc; ++c) {
        for (std::size_t z = 0; z < nz; ++z) {
            for (std::size_t y = 0; y < ny; ++y) {
                for (std::size_t x = 0; x < nx; ++x, ++file_index) {
                    double v = read_element(data + file_index * esize, datatype, swap);
                    if (scale) v = v * slope + inter;
                    vol.data[((x * ny + y) * nz + z) * nc + c] = static_cast<float>(v);
                }
            }
        }
    }
    vol.validate();
    return vol;
}

void save_nifti(const std::filesystem::path& path, const Volume4D& vol) {
    vol.validate();
    for (int i = 0; i < 4; ++i) {
        if (vol.dims[i] > 32767) throw FormatError("dimension too large for NIfTI-1");
    }
    constexpr std::size_t vox_offset = 352;
    std::vector<unsigned char> header(vox_offset, 0);
    unsigned char* h = header.data();
    write_le<std::int32_t>(h + kOffSizeofHdr, 348);
    const bool four_d = vol.channels() > 1;
    write_le<std::int16_t>(h + kOffDim, four_d ? 4 : 3);
    for (int i = 0; i < 4; ++i) write_le<std::int16_t>(h + kOffDim + 2 * (i + 1), static_cast<std::int16_t>(vol.dims[i]));
    for (int i = 5; i < 8; ++i) write_le<std::int16_t>(h + kOffDim + 2 * i, 1);
    write_le<std::int16_t>(h + kOffDatatype, nifti::kFloat32);
    write_le<std::int16_t>(h + kOffBitpix, 32);
    write_le<float>(h + kOffPixdim, 1.0f);
    for (int i = 0; i < 3; ++i) write_le<float>(h + kOffPixdim + 4 * (i + 1), static_cast<float>(vol.voxel_size[i]));
    write_le<float>(h + kOffPixdim + 16, 1.0f);
    write_le<float>(h + kOffVoxOffset, static_cast<float>(vox_offset));
    write_le<float>(h + kOffSclSlope, 1.0f);
    h[kOffXyztUnits] = 2;  // mm
    std::memcpy(h + kOffMagic, "n+1\0", 4);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write NIfTI file " + path.string());
    out.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));

    const std::size_t nx = vol.nx(), ny = vol.ny(), nz = vol.nz(), nc = vol.channels();
    std::vector<unsigned char> buf(nx * ny * nz * nc * 4);
    std::size_t file_index = 0;
    for (std::size_t c = 0; c < nc; ++c)
        for (std::size_t z = 0; z < nz; ++z)
            for (std::size_t y = 0; y < ny; ++y)
                for (std::size_t x = 0; x < nx; ++x, ++file_index)
                    write_le<float>(buf.data() + 4 * file_index, vol.data[((x * ny + y) * nz + z) * nc + c]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("short write to " + path.string());
}

}  // namespace fiberlearn
