#include "fiberlearn/sphere.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "fiberlearn/parallel.hpp"

namespace fiberlearn {
namespace {

Vec3 canonical_axis(Vec3 d) {
    constexpr double tie = 1e-12;
    bool flip = false;
    if (std::abs(d.z()) > tie) {
        flip = d.z() < 0.0;
    } else if (std::abs(d.x()) > tie) {
        flip = d.x() < 0.0;
    } else {
        flip = d.y() < 0.0;
    }
    return flip ? Vec3(-d) : d;
}

// Coulomb energy of the 2m-point antipodal configuration (each pair counted once).
double pair_energy(const std::vector<Vec3>& p) {
    double e = 0.0;
    const std::size_t m = p.size();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            e += 1.0 / (p[i] - p[j]).norm() + 1.0 / (p[i] + p[j]).norm();
        }
    }
    return e;
}

std::vector<Vec3> tangential_forces(const std::vector<Vec3>& p) {
    const std::size_t m = p.size();
    std::vector<Vec3> f(m, Vec3::Zero());
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const Vec3 dm = p[i] - p[j];
            const Vec3 dp = p[i] + p[j];
            const double rm = dm.norm();
            const double rp = dp.norm();
            const Vec3 fm = dm / (rm * rm * rm);
            const Vec3 fp = dp / (rp * rp * rp);
            f[i] += fm + fp;
            f[j] += -fm + fp;
        }
    }
    for (std::size_t i = 0; i < m; ++i) f[i] -= f[i].dot(p[i]) * p[i];
    return f;
}

}  // namespace

std::string SphereDictionary::hash() const {
    std::uint64_t h = fnv1a64(&seed, sizeof(seed));
    for (const auto& d : directions) h = fnv1a64(d.data(), 3 * sizeof(double), h);
    return to_hex(h);
}

SphereDictionary dictionary_from_directions(std::vector<Vec3> directions, std::uint64_t seed) {
    const std::size_t m = directions.size();
    if (m < 2) throw ConfigError("a dictionary needs at least two directions");
    SphereDictionary dict;
    dict.seed = seed;
    dict.directions.reserve(m);
    for (auto& d : directions) {
        const double n = d.norm();
        if (!(n > 1e-12) || !d.allFinite()) throw ConfigError("dictionary direction has zero norm");
        const bool unit = std::abs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon();
        dict.directions.push_back(canonical_axis(unit ? d : Vec3(d / n)));
    }

    dict.angles = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            const double a = axial_angle(dict.directions[i], dict.directions[j]);
            dict.angles(i, j) = a;
            dict.angles(j, i) = a;
        }
    }

    double max_nn = 0.0;
    double min_pair = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
        double nn = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j) {
            if (j != i) nn = std::min(nn, dict.angles(i, j));
        }
        max_nn = std::max(max_nn, nn);
        min_pair = std::min(min_pair, nn);
    }
    if (min_pair < 1e-6) throw ConfigError("dictionary contains coincident axes");
    dict.max_nearest_angle = max_nn;
    dict.min_pair_angle = min_pair;
    dict.adjacency_radius = 1.5 * max_nn;
    dict.adjacency.assign(m, {});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            if (j != i && dict.angles(i, j) <= dict.adjacency_radius) {
                dict.adjacency[i].push_back(static_cast<int>(j));
            }
        }
    }
    return dict;
}

SphereDictionary build_dictionary(std::size_t m, std::uint64_t seed, const DictionaryOptions& options) {
    if (m < 3) throw ConfigError("dictionary size must be at least 3");

    // Fibonacci start on the upper hemisphere, lightly jittered by the seed.
    Rng rng = child_rng(seed, 0);
    std::normal_distribution<double> jitter(0.0, 1e-3);
    const double golden = kPi * (3.0 - std::sqrt(5.0));
    std::vector<Vec3> p(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double z = 1.0 - (static_cast<double>(i) + 0.5) / static_cast<double>(m);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * static_cast<double>(i);
        Vec3 v(r * std::cos(phi), r * std::sin(phi), z);
        v += draw_vec3(jitter, rng);
        p[i] = v.normalized();
    }

    double energy = pair_energy(p);
    double step = 1e-3 / static_cast<double>(m);
    bool converged = false;
    for (int it = 0; it < options.max_iterations; ++it) {
        const auto f = tangential_forces(p);
        std::vector<Vec3> trial(m);
        for (std::size_t i = 0; i < m; ++i) trial[i] = (p[i] + step * f[i]).normalized();
        const double e = pair_energy(trial);
        if (e < energy) {
            const double rel = (energy - e) / energy;
            p.swap(trial);
            energy = e;
            step *= 1.2;
            if (rel < options.tolerance) {
                converged = true;
                break;
            }
        } else {
            step *= 0.5;
            if (step < 1e-18) {
                converged = true;
                break;
            }
        }
    }

    SphereDictionary dict = dictionary_from_directions(std::move(p), seed);
    dict.converged = converged;
    return dict;
}

void save_dictionary(const std::filesystem::path& path, const SphereDictionary& dict) {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["m"] = dict.size();
    j["seed"] = dict.seed;
    j["hash"] = dict.hash();
    j["converged"] = dict.converged;
    auto dirs = nlohmann::json::array();
    for (const auto& d : dict.directions) dirs.push_back({d.x(), d.y(), d.z()});
    j["directions"] = std::move(dirs);
    std::ofstream out(path);
    if (!out) throw Error("cannot write dictionary file " + path.string());
    out << j.dump(1) << '\n';
}

SphereDictionary load_dictionary(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open dictionary file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        std::vector<Vec3> dirs;
        for (const auto& d : j.at("directions")) {
            dirs.emplace_back(d.at(0).get<double>(), d.at(1).get<double>(), d.at(2).get<double>());
        }
        if (dirs.size() != j.at("m").get<std::size_t>()) {
            throw FormatError(path.string() + ": direction count disagrees with m");
        }
        auto dict = dictionary_from_directions(std::move(dirs), j.at("seed").get<std::uint64_t>());
        dict.converged = j.value("converged", true);
        return dict;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::size_t nearest_atom(const SphereDictionary& dict, const Vec3& d) {
    std::size_t best = 0;
    double best_dot = -1.0;
    for (std::size_t k = 0; k < dict.size(); ++k) {
        const double a = std::abs(dict.directions[k].dot(d));
        if (a > best_dot) {
            best_dot = a;
            best = k;
        }
    }
    return best;
}

GaussianWeights gaussian_weight_matrix(const SphereDictionary& dict, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("Gaussian label sigma must be positive");
    GaussianWeights w;
    w.sigma = sigma;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const Eigen::Index m = dict.angles.rows();
    w.matrix.resize(m, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i <= j; ++i) {
            const double a = dict.angles(i, j);
            w.matrix(i, j) = w.matrix(j, i) = std::exp(-a * a * inv);
        }
    }
    return w;
}

std::vector<double> encode_labels(const SphereDictionary& dict, const GaussianWeights& weights,
                                  const FiberConfig& config) {
    config.validate();
    const auto m = static_cast<Eigen::Index>(dict.size());
    Eigen::VectorXd sparse = Eigen::VectorXd::Zero(m);
    for (std::size_t j = 0; j < config.count(); ++j) {
        sparse[static_cast<Eigen::Index>(nearest_atom(dict, config.pdds[j]))] += config.alphas[j];
    }
    Eigen::VectorXd blurred = Eigen::VectorXd::Zero(m);
    for (Eigen::Index k = 0; k < m; ++k) {
        if (sparse[k] != 0.0) blurred += sparse[k] * weights.matrix.col(k);
    }
    double sum = 0.0;
    for (Eigen::Index k = 0; k < m; ++k) {
        if (blurred[k] < kLabelClip) blurred[k] = 0.0;
        sum += blurred[k];
    }
    if (!(sum > 0.0)) throw Error("label vector vanished after clipping");
    std::vector<double> out(dict.size());
    for (Eigen::Index k = 0; k < m; ++k) out[static_cast<std::size_t>(k)] = blurred[k] / sum;
    return out;
}

namespace {

template <typename T>
PeakSet extract_peaks_impl(const SphereDictionary& dict, std::span<const T> coeffs, const PeakOptions& opt) {
    if (coeffs.size() != dict.size()) throw ConfigError("coefficient vector length does not match dictionary");
    PeakSet out;
    double max_c = 0.0;
    for (auto c : coeffs) max_c = std::max(max_c, static_cast<double>(c));
    if (!(max_c > 0.0)) return out;

    const double threshold = opt.rel_threshold * max_c;
    std::vector<std::size_t> candidates;
    for (std::size_t k = 0; k < dict.size(); ++k) {
        const double c = coeffs[k];
        if (c < threshold) continue;
        bool is_max = true;
        for (int nb : dict.adjacency[k]) {
            if (static_cast<double>(coeffs[static_cast<std::size_t>(nb)]) > c) {
                is_max = false;
                break;
            }
        }
        if (is_max) candidates.push_back(k);
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](std::size_t a, std::size_t b) { return coeffs[a] > coeffs[b]; });

    std::vector<std::size_t> kept;
    for (auto k : candidates) {
        bool suppressed = false;
        for (auto s : kept) {
            if (dict.angles(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s)) < opt.min_separation) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(k);
    }
    if (kept.size() > opt.max_peaks) {
        const double last = coeffs[kept[opt.max_peaks - 1]];
        const double next = coeffs[kept[opt.max_peaks]];
        out.degenerate = next >= last;
        kept.resize(opt.max_peaks);
    }

    double total = 0.0;
    for (auto k : kept) total += coeffs[k];
    for (auto k : kept) out.peaks.push_back(Peak{k, dict.directions[k], static_cast<double>(coeffs[k]) / total});
    return out;
}

}  // namespace

PeakSet extract_peaks(const SphereDictionary& dict, std::span<const double> coeffs, const PeakOptions& options) {
    return extract_peaks_impl(dict, coeffs, options);
}

PeakSet extract_peaks(const SphereDictionary& dict, std::span<const float> coeffs, const PeakOptions& options) {
    return extract_peaks_impl(dict, coeffs, options);
}

}  // namespace fiberlearn
