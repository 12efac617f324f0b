#include "fiberlearn/protocol.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace fiberlearn {
namespace {

std::vector<double> parse_numbers(const std::string& line, const std::string& what) {
    std::vector<double> out;
    std::istringstream is(line);
    std::string token;
    while (is >> token) {
        char* end = nullptr;
        errno = 0;
        const double v = std::strtod(token.c_str(), &end);
        if (end == token.c_str() || *end != '\0') {
            throw FormatError(what + ": cannot parse '" + token + "' as a number");
        }
        if (!std::isfinite(v) || errno == ERANGE) {
            throw FormatError(what + ": non-finite value '" + token + "'");
        }
        out.push_back(v);
    }
    return out;
}

std::vector<std::string> non_empty_lines(std::istream& in) {
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r\n") != std::string::npos) lines.push_back(line);
    }
    return lines;
}

}  // namespace

void AcquisitionProtocol::validate() const {
    if (bvalues.empty()) throw FormatError("protocol has no acquisitions");
    if (gradients.size() != bvalues.size()) {
        throw FormatError("protocol has " + std::to_string(gradients.size()) + " gradients but " +
                          std::to_string(bvalues.size()) + " b-values");
    }
    for (std::size_t i = 0; i < bvalues.size(); ++i) {
        if (!std::isfinite(bvalues[i]) || bvalues[i] < 0.0) {
            throw FormatError("b-value " + std::to_string(i) + " is negative or non-finite");
        }
        if (!gradients[i].allFinite()) {
            throw FormatError("gradient " + std::to_string(i) + " is non-finite");
        }
        if (bvalues[i] > 0.0 && std::abs(gradients[i].norm() - 1.0) > 1e-6) {
            throw FormatError("gradient " + std::to_string(i) + " with b > 0 is not unit norm");
        }
    }
}

std::vector<std::size_t> AcquisitionProtocol::b0_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < bvalues.size(); ++i) {
        if (bvalues[i] == 0.0) idx.push_back(i);
    }
    return idx;
}

std::vector<std::size_t> AcquisitionProtocol::dwi_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < bvalues.size(); ++i) {
        if (bvalues[i] > 0.0) idx.push_back(i);
    }
    return idx;
}

AcquisitionProtocol AcquisitionProtocol::diffusion_weighted() const {
    AcquisitionProtocol out;
    for (auto i : dwi_indices()) {
        out.gradients.push_back(gradients[i]);
        out.bvalues.push_back(bvalues[i]);
    }
    return out;
}

std::string AcquisitionProtocol::hash() const {
    std::uint64_t h = fnv1a64(bvalues.data(), bvalues.size() * sizeof(double));
    for (const auto& g : gradients) h = fnv1a64(g.data(), 3 * sizeof(double), h);
    return to_hex(h);
}

AcquisitionProtocol parse_protocol(std::istream& bvals, std::istream& bvecs) {
    std::vector<double> b;
    for (const auto& line : non_empty_lines(bvals)) {
        auto row = parse_numbers(line, "bvals");
        b.insert(b.end(), row.begin(), row.end());
    }
    if (b.empty()) throw FormatError("bvals: no values");

    const auto lines = non_empty_lines(bvecs);
    if (lines.size() != 3) {
        throw FormatError("bvecs: expected 3 rows, found " + std::to_string(lines.size()));
    }
    std::array<std::vector<double>, 3> rows;
    for (int r = 0; r < 3; ++r) {
        rows[r] = parse_numbers(lines[r], "bvecs row " + std::to_string(r));
        if (rows[r].size() != b.size()) {
            throw FormatError("bvecs row " + std::to_string(r) + " has " +
                              std::to_string(rows[r].size()) + " values but bvals has " +
                              std::to_string(b.size()));
        }
    }

    AcquisitionProtocol proto;
    proto.bvalues = b;
    proto.gradients.resize(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
        Vec3 g(rows[0][i], rows[1][i], rows[2][i]);
        if (b[i] < 0.0) throw FormatError("bvals: negative b-value at index " + std::to_string(i));
        if (b[i] > 0.0) {
            const double norm = g.norm();
            if (norm < 1e-6) {
                throw FormatError("bvecs: zero-norm gradient at index " + std::to_string(i) +
                                  " with b=" + std::to_string(b[i]));
            }
            g /= norm;
        }
        proto.gradients[i] = g;
    }
    proto.validate();
    return proto;
}

AcquisitionProtocol load_protocol(const std::filesystem::path& bvals_path,
                                  const std::filesystem::path& bvecs_path) {
    std::ifstream bvals(bvals_path);
    if (!bvals) throw FormatError("cannot open bvals file " + bvals_path.string());
    std::ifstream bvecs(bvecs_path);
    if (!bvecs) throw FormatError("cannot open bvecs file " + bvecs_path.string());
    return parse_protocol(bvals, bvecs);
}

void save_protocol(const AcquisitionProtocol& proto, const std::filesystem::path& bvals_path,
                   const std::filesystem::path& bvecs_path) {
    proto.validate();
    std::ofstream bvals(bvals_path);
    std::ofstream bvecs(bvecs_path);
    if (!bvals || !bvecs) throw Error("cannot write protocol files");
    bvals << std::setprecision(17);
    bvecs << std::setprecision(17);
    for (std::size_t i = 0; i < proto.size(); ++i) bvals << (i ? " " : "") << proto.bvalues[i];
    bvals << '\n';
    for (int r = 0; r < 3; ++r) {
        for (std::size_t i = 0; i < proto.size(); ++i) bvecs << (i ? " " : "") << proto.gradients[i][r];
        bvecs << '\n';
    }
}

AcquisitionProtocol make_shell_protocol(std::size_t n_b0, std::size_t n_dirs, double bvalue) {
    if (n_b0 + n_dirs == 0) throw ConfigError("shell protocol needs at least one acquisition");
    if (n_dirs > 0 && !(bvalue > 0.0)) throw ConfigError("shell b-value must be positive");
    AcquisitionProtocol proto;
    for (std::size_t i = 0; i < n_b0; ++i) {
        proto.gradients.emplace_back(0.0, 0.0, 0.0);
        proto.bvalues.push_back(0.0);
    }
    // Spherical Fibonacci points on the upper hemisphere.
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    for (std::size_t i = 0; i < n_dirs; ++i) {
        const double z = 1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(n_dirs);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * static_cast<double>(i);
        proto.gradients.push_back(Vec3(r * std::cos(phi), r * std::sin(phi), z).normalized());
        proto.bvalues.push_back(bvalue);
    }
    return proto;
}

NormalizedSignals normalize_signals(const Volume4D& vol, const AcquisitionProtocol& proto,
                                    double epsilon_s0) {
    if (proto.size() != vol.channels()) {
        throw FormatError("volume has " + std::to_string(vol.channels()) +
                          " channels but protocol has " + std::to_string(proto.size()) + " entries");
    }
    const auto b0 = proto.b0_indices();
    if (b0.empty()) throw FormatError("protocol has no b=0 channel; cannot normalize");
    const auto dwi = proto.dwi_indices();

    NormalizedSignals out;
    out.signals = Volume4D(vol.nx(), vol.ny(), vol.nz(), dwi.size());
    out.signals.voxel_size = vol.voxel_size;
    out.s0 = Volume4D(vol.nx(), vol.ny(), vol.nz(), 1);
    out.s0.voxel_size = vol.voxel_size;
    out.excluded.assign(vol.voxel_count(), 0);

    for (std::size_t v = 0; v < vol.voxel_count(); ++v) {
        const float* in = vol.voxel(v);
        double s0 = 0.0;
        for (auto i : b0) s0 += in[i];
        s0 /= static_cast<double>(b0.size());
        out.s0.voxel(v)[0] = static_cast<float>(s0);
        float* dst = out.signals.voxel(v);
        if (!(s0 > epsilon_s0)) {
            out.excluded[v] = 1;
            continue;
        }
        for (std::size_t k = 0; k < dwi.size(); ++k) {
            const double s = in[dwi[k]] / s0;
            dst[k] = static_cast<float>(s > 0.0 ? s : 0.0);
        }
    }
    return out;
}

}  // namespace fiberlearn
