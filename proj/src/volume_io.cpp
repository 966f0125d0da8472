#include "spinereg/volume_io.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <bit>
#include <cfloat>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "spinereg/error.hpp"

namespace spinereg {

namespace {

namespace fs = std::filesystem;

constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiVoxOffset = 352;

// NIfTI datatype codes
constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kDtInt8 = 256;
constexpr std::int16_t kDtUint16 = 512;
constexpr std::int16_t kDtUint32 = 768;

// Affines are stored as float32 in NIfTI-1, so a direction matrix read back
// from disk carries ~1e-7 quantisation on top of whatever the writer intended.
constexpr double kFileOrthonormalTolerance = 2.0 * (VolumeGeometry::kOrthonormalTolerance + FLT_EPSILON);

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("error while reading '" + path.string() + "'");
    return ss.str();
}

template <typename T>
T load(const char* p, bool swap) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if (swap) {
        auto* b = reinterpret_cast<unsigned char*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    return v;
}

template <typename T>
void store(char* p, T v) {
    static_assert(std::endian::native == std::endian::little, "writer assumes a little-endian host");
    std::memcpy(p, &v, sizeof(T));
}

int datatype_size(std::int16_t dt) {
    switch (dt) {
        case kDtUint8:
        case kDtInt8: return 1;
        case kDtInt16:
        case kDtUint16: return 2;
        case kDtInt32:
        case kDtUint32: return 4;
        default: return 0;
    }
}

const char* datatype_name(std::int16_t dt) {
    switch (dt) {
        case kDtUint8: return "uint8";
        case kDtInt8: return "int8";
        case kDtInt16: return "int16";
        case kDtUint16: return "uint16";
        case kDtInt32: return "int32";
        case kDtUint32: return "uint32";
        default: return "unknown";
    }
}

std::int16_t datatype_from_name(const std::string& name) {
    for (std::int16_t dt : {kDtUint8, kDtInt8, kDtInt16, kDtUint16, kDtInt32, kDtUint32}) {
        if (name == datatype_name(dt)) return dt;
    }
    throw IoError("unsupported voxel datatype '" + name + "'");
}

// Widens raw integer voxels into 16-bit labels; rejects values that do not fit.
std::vector<LabelVolume::Label> decode_voxels(const char* data, std::size_t count, std::int16_t dt, bool swap,
                                              const std::string& where) {
    std::vector<LabelVolume::Label> out(count);
    const int sz = datatype_size(dt);
    for (std::size_t i = 0; i < count; ++i) {
        const char* p = data + i * sz;
        std::int64_t v = 0;
        switch (dt) {
            case kDtUint8: v = static_cast<unsigned char>(*p); break;
            case kDtInt8: v = static_cast<signed char>(*p); break;
            case kDtInt16: v = load<std::int16_t>(p, swap); break;
            case kDtUint16: v = load<std::uint16_t>(p, swap); break;
            case kDtInt32: v = load<std::int32_t>(p, swap); break;
            case kDtUint32: v = load<std::uint32_t>(p, swap); break;
        }
        if (v < 0 || v > std::numeric_limits<LabelVolume::Label>::max()) {
            throw IoError(where + ": label value " + std::to_string(v) + " does not fit in 16 unsigned bits");
        }
        out[i] = static_cast<LabelVolume::Label>(v);
    }
    return out;
}

// Splits an affine's linear part into unit direction columns and checks them.
Mat3 direction_from_columns(const Mat3& linear, const Vec3& spacing, const std::string& where) {
    if (std::abs(linear.determinant()) < 1e-12) throw IoError(where + ": voxel-to-world affine is not invertible");
    Mat3 dir = linear * spacing.cwiseInverse().asDiagonal();
    const double dev = (dir.transpose() * dir - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (dev > kFileOrthonormalTolerance) {
        std::ostringstream os;
        os << where << ": direction is not orthonormal (max |D^T D - I| = " << dev
           << "); sheared or inconsistent affines are unsupported";
        throw IoError(os.str());
    }
    // Snap to the nearest orthogonal matrix, keeping handedness.
    Eigen::JacobiSVD<Mat3> svd(dir, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

LabelVolume read_nifti(const std::string& bytes, const fs::path& path) {
    const std::string where = path.string();
    if (bytes.size() < static_cast<std::size_t>(kNiftiHeaderSize)) throw IoError(where + ": truncated NIfTI header");
    const char* h = bytes.data();
    bool swap = false;
    if (load<std::int32_t>(h, false) != kNiftiHeaderSize) {
        if (load<std::int32_t>(h, true) != kNiftiHeaderSize) throw IoError(where + ": not a NIfTI-1 file");
        swap = true;
    }
    if (std::memcmp(h + 344, "n+1", 4) != 0) {
        throw IoError(where + ": only single-file NIfTI-1 (magic \"n+1\") is supported");
    }

    std::array<std::int16_t, 8> dim{};
    for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(h + 40 + 2 * i, swap);
    if (dim[0] != 3) {
        throw IoError(where + ": dimension count != 3 (file has " + std::to_string(dim[0]) + " dimensions)");
    }

    const auto datatype = load<std::int16_t>(h + 70, swap);
    if (datatype == kDtFloat32 || datatype == kDtFloat64) {
        throw IoError(where + ": floating-point voxel datatype is not a label volume");
    }
    if (datatype_size(datatype) == 0) {
        throw IoError(where + ": unsupported voxel datatype code " + std::to_string(datatype));
    }

    std::array<float, 8> pixdim{};
    for (int i = 0; i < 8; ++i) pixdim[i] = load<float>(h + 76 + 4 * i, swap);
    const float vox_offset = load<float>(h + 108, swap);
    const float scl_slope = load<float>(h + 112, swap);
    const float scl_inter = load<float>(h + 116, swap);
    if ((scl_slope != 0.0f && scl_slope != 1.0f) || scl_inter != 0.0f) {
        throw IoError(where + ": intensity scaling (scl_slope/scl_inter) is not valid for label volumes");
    }
    const auto qform_code = load<std::int16_t>(h + 252, swap);
    const auto sform_code = load<std::int16_t>(h + 254, swap);

    VolumeGeometry g;
    for (int a = 0; a < 3; ++a) {
        if (dim[a + 1] <= 0) throw IoError(where + ": non-positive dimension");
        g.dims[a] = dim[a + 1];
        if (!(pixdim[a + 1] > 0.0f)) throw IoError(where + ": non-positive pixdim");
        g.spacing[a] = pixdim[a + 1];
    }

    if (sform_code > 0) {
        Mat3 linear;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) linear(r, c) = load<float>(h + 280 + 16 * r + 4 * c, swap);
            g.origin[r] = load<float>(h + 280 + 16 * r + 12, swap);
        }
        g.direction = direction_from_columns(linear, g.spacing, where);
    } else if (qform_code > 0) {
        const double b = load<float>(h + 256, swap);
        const double c = load<float>(h + 260, swap);
        const double d = load<float>(h + 264, swap);
        const double a = std::sqrt(std::max(0.0, 1.0 - (b * b + c * c + d * d)));
        Mat3 R = Eigen::Quaterniond(a, b, c, d).normalized().toRotationMatrix();
        if (pixdim[0] < 0.0f) R.col(2) *= -1.0;
        g.origin = Vec3(load<float>(h + 268, swap), load<float>(h + 272, swap), load<float>(h + 276, swap));
        g.direction = direction_from_columns(R * g.spacing.asDiagonal(), g.spacing, where);
    }
    // Neither form present: identity direction, zero origin (NIfTI "method 1").

    const std::size_t offset = static_cast<std::size_t>(std::max(vox_offset, float(kNiftiVoxOffset)));
    const std::size_t count = g.voxel_count();
    const std::size_t need = offset + count * datatype_size(datatype);
    if (bytes.size() < need) throw IoError(where + ": voxel payload is truncated");

    try {
        return LabelVolume(g, decode_voxels(bytes.data() + offset, count, datatype, swap, where));
    } catch (const PreconditionError& e) {
        throw IoError(where + ": " + e.what());
    }
}

LabelVolume::Label max_label(const LabelVolume& vol) {
    const auto& v = vol.voxels();
    return v.empty() ? 0 : *std::max_element(v.begin(), v.end());
}

void write_nifti(const LabelVolume& vol, const fs::path& path) {
    const auto& g = vol.geometry();
    const std::int16_t dt = max_label(vol) <= 255 ? kDtUint8 : kDtUint16;
    const int sz = datatype_size(dt);

    std::string out(kNiftiVoxOffset + vol.voxels().size() * sz, '\0');
    char* h = out.data();
    store<std::int32_t>(h, kNiftiHeaderSize);
    store<std::int16_t>(h + 40, 3);
    for (int a = 0; a < 3; ++a) {
        if (g.dims[a] > std::numeric_limits<std::int16_t>::max()) throw IoError("volume too large for NIfTI-1");
        store<std::int16_t>(h + 42 + 2 * a, static_cast<std::int16_t>(g.dims[a]));
    }
    for (int a = 3; a < 7; ++a) store<std::int16_t>(h + 42 + 2 * a, 1);
    store<std::int16_t>(h + 70, dt);
    store<std::int16_t>(h + 72, static_cast<std::int16_t>(8 * sz));

    const bool left_handed = g.direction.determinant() < 0.0;
    store<float>(h + 76, left_handed ? -1.0f : 1.0f);
    for (int a = 0; a < 3; ++a) store<float>(h + 80 + 4 * a, static_cast<float>(g.spacing[a]));
    store<float>(h + 108, float(kNiftiVoxOffset));
    store<float>(h + 112, 1.0f);
    store<std::uint8_t>(h + 123, 2);  // xyz units: mm
    std::strncpy(h + 148, "spinereg label volume", 79);

    // q-form: proper rotation part plus qfac.
    Mat3 R = g.direction;
    if (left_handed) R.col(2) *= -1.0;
    Eigen::Quaterniond q(R);
    if (q.w() < 0.0) q.coeffs() *= -1.0;
    store<std::int16_t>(h + 252, 1);
    store<std::int16_t>(h + 254, 1);
    store<float>(h + 256, static_cast<float>(q.x()));
    store<float>(h + 260, static_cast<float>(q.y()));
    store<float>(h + 264, static_cast<float>(q.z()));
    for (int r = 0; r < 3; ++r) store<float>(h + 268 + 4 * r, static_cast<float>(g.origin[r]));

    const Mat3 linear = g.direction * g.spacing.asDiagonal();
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) store<float>(h + 280 + 16 * r + 4 * c, static_cast<float>(linear(r, c)));
        store<float>(h + 280 + 16 * r + 12, static_cast<float>(g.origin[r]));
    }
    std::memcpy(h + 344, "n+1", 4);

    char* data = h + kNiftiVoxOffset;
    for (std::size_t i = 0; i < vol.voxels().size(); ++i) {
        if (dt == kDtUint8) {
            data[i] = static_cast<char>(vol.voxels()[i]);
        } else {
            store<std::uint16_t>(data + 2 * i, vol.voxels()[i]);
        }
    }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw IoError("error while writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Sidecar text header + raw little-endian payload.

LabelVolume read_sidecar(const std::string& text, const fs::path& path) {
    const std::string where = path.string();
    std::map<std::string, std::vector<std::string>> fields;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        std::vector<std::string> values;
        for (std::string v; ls >> v;) values.push_back(v);
        fields[key] = std::move(values);
    }

    auto numbers = [&](const std::string& key, std::size_t n) {
        auto it = fields.find(key);
        if (it == fields.end()) throw IoError(where + ": sidecar header is missing '" + key + "'");
        if (it->second.size() != n) {
            throw IoError(where + ": sidecar field '" + key + "' expects " + std::to_string(n) + " values");
        }
        std::vector<double> out;
        for (const auto& s : it->second) {
            try {
                std::size_t used = 0;
                out.push_back(std::stod(s, &used));
                if (used != s.size()) throw std::invalid_argument(s);
            } catch (const std::exception&) {
                throw IoError(where + ": bad number '" + s + "' in field '" + key + "'");
            }
        }
        return out;
    };

    const auto dims_field = fields.find("dims");
    if (dims_field != fields.end() && dims_field->second.size() != 3) {
        throw IoError(where + ": dimension count != 3 (file has " + std::to_string(dims_field->second.size()) +
                      " dimensions)");
    }
    const auto dims = numbers("dims", 3);
    const auto spacing = numbers("spacing", 3);
    const auto origin = numbers("origin", 3);
    const auto direction = numbers("direction", 9);
    if (!fields.count("datatype") || fields["datatype"].size() != 1) {
        throw IoError(where + ": sidecar header is missing 'datatype'");
    }
    const std::string dt_name = fields["datatype"][0];
    if (dt_name.starts_with("float")) throw IoError(where + ": floating-point voxel datatype is not a label volume");
    const std::int16_t dt = datatype_from_name(dt_name);
    if (!fields.count("raw_path") || fields["raw_path"].size() != 1) {
        throw IoError(where + ": sidecar header is missing 'raw_path'");
    }

    VolumeGeometry g;
    Mat3 linear;
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1 || dims[a] != std::floor(dims[a])) throw IoError(where + ": dims must be positive integers");
        g.dims[a] = static_cast<std::int64_t>(dims[a]);
        if (!(spacing[a] > 0.0)) throw IoError(where + ": spacing must be positive");
        g.spacing[a] = spacing[a];
        g.origin[a] = origin[a];
    }
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) linear(r, c) = direction[3 * r + c];
    }
    if (std::abs(linear.determinant()) < 1e-12) throw IoError(where + ": direction matrix is not invertible");
    const double dev = (linear.transpose() * linear - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (dev > kFileOrthonormalTolerance) throw IoError(where + ": direction matrix is not orthonormal");
    g.direction = linear;

    fs::path raw = fields["raw_path"][0];
    if (raw.is_relative()) raw = path.parent_path() / raw;
    const std::string payload = read_file(raw);
    const std::size_t count = g.voxel_count();
    if (payload.size() != count * datatype_size(dt)) {
        throw IoError(raw.string() + ": raw payload size does not match dims and datatype");
    }
    try {
        return LabelVolume(g, decode_voxels(payload.data(), count, dt, std::endian::native != std::endian::little,
                                            raw.string()));
    } catch (const PreconditionError& e) {
        throw IoError(where + ": " + e.what());
    }
}

void write_sidecar(const LabelVolume& vol, const fs::path& path) {
    const auto& g = vol.geometry();
    const std::int16_t dt = max_label(vol) <= 255 ? kDtUint8 : kDtUint16;
    fs::path raw = path;
    raw.replace_extension(".raw");

    std::ostringstream hdr;
    hdr << std::setprecision(17);
    hdr << "dims " << g.dims[0] << ' ' << g.dims[1] << ' ' << g.dims[2] << '\n';
    hdr << "spacing " << g.spacing[0] << ' ' << g.spacing[1] << ' ' << g.spacing[2] << '\n';
    hdr << "origin " << g.origin[0] << ' ' << g.origin[1] << ' ' << g.origin[2] << '\n';
    hdr << "direction";
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) hdr << ' ' << g.direction(r, c);
    }
    hdr << '\n' << "datatype " << datatype_name(dt) << '\n' << "raw_path " << raw.filename().string() << '\n';

    std::string payload(vol.voxels().size() * datatype_size(dt), '\0');
    for (std::size_t i = 0; i < vol.voxels().size(); ++i) {
        if (dt == kDtUint8) {
            payload[i] = static_cast<char>(vol.voxels()[i]);
        } else {
            store<std::uint16_t>(payload.data() + 2 * i, vol.voxels()[i]);
        }
    }

    for (const auto& [file, content] : {std::pair{path, hdr.str()}, std::pair{raw, payload}}) {
        std::ofstream os(file, std::ios::binary);
        if (!os) throw IoError("cannot open '" + file.string() + "' for writing");
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!os) throw IoError("error while writing '" + file.string() + "'");
    }
}

}  // namespace

LabelVolume read_volume(const fs::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() >= 4) {
        const std::int32_t le = load<std::int32_t>(bytes.data(), false);
        const std::int32_t be = load<std::int32_t>(bytes.data(), true);
        if (le == kNiftiHeaderSize || be == kNiftiHeaderSize) return read_nifti(bytes, path);
    }
    return read_sidecar(bytes, path);
}

void write_volume(const LabelVolume& vol, const fs::path& path) {
    if (path.extension() == ".nii") {
        write_nifti(vol, path);
    } else {
        write_sidecar(vol, path);
    }
}

}  // namespace spinereg
