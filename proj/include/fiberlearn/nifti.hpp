#pragma once

#include <filesystem>

#include "fiberlearn/common.hpp"

namespace fiberlearn {

/// Reads a single-file uncompressed NIfTI-1 volume (magic "n+1"), either
/// byte order, datatype uint8/int16/int32/float32/float64, 3D or 4D.
/// 3D volumes come back with one channel. scl_slope/scl_inter are applied
/// when the slope is non-zero.
Volume4D load_nifti(const std::filesystem::path& path);

/// Writes a little-endian float32 NIfTI-1 file (vox_offset 352). Single-channel
/// volumes are written as 3D.
void save_nifti(const std::filesystem::path& path, const Volume4D& vol);

namespace nifti {
// NIfTI-1 datatype codes accepted by load_nifti.
inline constexpr short kUint8 = 2;
inline constexpr short kInt16 = 4;
inline constexpr short kInt32 = 8;
inline constexpr short kFloat32 = 16;
inline constexpr short kFloat64 = 64;
}  // namespace nifti

}  // namespace fiberlearn
