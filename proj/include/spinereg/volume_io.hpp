#pragma once

#include <filesystem>

#include "spinereg/volume.hpp"

namespace spinereg {

/// Reads a label volume.
///
/// Two formats are understood:
///  - single-file NIfTI-1 (`.nii`, magic "n+1", uncompressed) with an integer
///    datatype; the s-form is used when present, then the q-form, then pixdim alone;
///  - a plain-text sidecar (`dims`, `spacing`, `origin`, `direction`,
///    `datatype`, `raw_path` lines) pointing at a little-endian raw voxel file.
///
/// The format is detected from the file contents, not the extension.
/// Throws IoError for unreadable or malformed files and for unsupported
/// content (floating-point voxels, dimension count != 3, singular affine).
LabelVolume read_volume(const std::filesystem::path& path);

/// Writes NIfTI-1 when `path` ends in `.nii`, otherwise the sidecar format
/// (raw payload written next to it as `<stem>.raw`).
void write_volume(const LabelVolume& vol, const std::filesystem::path& path);

}  // namespace spinereg
