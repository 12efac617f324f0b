#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fiberlearn {

using Vec3 = Eigen::Vector3d;

/// Three draws in x, y, z order (constructor argument order is unspecified).
template <typename Dist, typename Gen>
Vec3 draw_vec3(Dist& dist, Gen& gen) {
    const double x = dist(gen);
    const double y = dist(gen);
    const double z = dist(gen);
    return {x, y, z};
}
using Mat3 = Eigen::Matrix3d;

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kFormatVersion = 1;

/// Base class of every error the toolkit throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent external input (files, headers, manifests).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Invalid parameters or configuration values.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// X*Y*Z grid of length-C vectors, stored row-major over (x, y, z, c):
/// the channel index varies fastest.
struct Volume4D {
    std::array<std::size_t, 4> dims{0, 0, 0, 0};
    std::vector<float> data;
    std::array<double, 3> voxel_size{1.0, 1.0, 1.0};

    Volume4D() = default;
    Volume4D(std::size_t x, std::size_t y, std::size_t z, std::size_t c);

    std::size_t nx() const { return dims[0]; }
    std::size_t ny() const { return dims[1]; }
    std::size_t nz() const { return dims[2]; }
    std::size_t channels() const { return dims[3]; }
    std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }

    std::size_t voxel_index(std::size_t x, std::size_t y, std::size_t z) const {
        return (x * dims[1] + y) * dims[2] + z;
    }
    float* voxel(std::size_t v) { return data.data() + v * dims[3]; }
    const float* voxel(std::size_t v) const { return data.data() + v * dims[3]; }
    float* voxel(std::size_t x, std::size_t y, std::size_t z) { return voxel(voxel_index(x, y, z)); }
    const float* voxel(std::size_t x, std::size_t y, std::size_t z) const {
        return voxel(voxel_index(x, y, z));
    }

    /// Throws FormatError if the data length disagrees with dims or a value is non-finite.
    void validate() const;
};

/// Per-voxel boolean mask in the same (x, y, z) order as Volume4D.
using VoxelMask = std::vector<std::uint8_t>;

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(const void* bytes, std::size_t size, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_hex(std::uint64_t value);

/// Little-endian IEEE-754 float32 serialization, independent of host order.
void write_floats_le(std::ostream& out, const float* values, std::size_t count);
void decode_floats_le(const unsigned char* bytes, float* values, std::size_t count);

/// Axial angle in radians between two unit axes: arccos(min(1, |a.b|)).
double axial_angle(const Vec3& a, const Vec3& b);

inline constexpr double kPi = 3.14159265358979323846;
inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

}  // namespace fiberlearn
