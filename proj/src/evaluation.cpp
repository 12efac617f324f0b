#include "fiberlearn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "fiberlearn/emd.hpp"
#include "fiberlearn/parallel.hpp"
#include "fiberlearn/training.hpp"

namespace fiberlearn {

AngularErrorResult angular_error(const std::vector<Vec3>& truth, const std::vector<Vec3>& peaks) {
    AngularErrorResult res;
    const bool truth_small = truth.size() <= peaks.size();
    const auto& small = truth_small ? truth : peaks;
    const auto& large = truth_small ? peaks : truth;
    const std::size_t k = small.size();
    if (k == 0) {
        res.missed = truth.size();
        res.spurious = peaks.size();
        return res;
    }
    // Every injection of `small` into `large` appears as the first k entries
    // of some permutation of `large`.
    std::vector<std::size_t> perm(large.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> best_angles;
    do {
        double total = 0.0;
        std::vector<double> angles(k);
        for (std::size_t i = 0; i < k; ++i) {
            angles[i] = rad2deg(axial_angle(small[i], large[perm[i]]));
            total += angles[i];
        }
        if (total < best) {
            best = total;
            best_angles = std::move(angles);
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    res.matched_deg = std::move(best_angles);
    res.missed = truth.size() - k;
    res.spurious = peaks.size() - k;
    return res;
}

AngularErrorResult angular_error(const FiberConfig& truth, const PeakSet& peaks) {
    std::vector<Vec3> dirs;
    for (const auto& p : peaks.peaks) dirs.push_back(p.direction);
    return angular_error(truth.pdds, dirs);
}

HeatmapConfig HeatmapConfig::default_grid() {
    HeatmapConfig cfg;
    for (int d = 0; d <= 90; d += 5) {
        cfg.theta1_deg.push_back(d);
        cfg.theta_plane_deg.push_back(d);
    }
    return cfg;
}

void HeatmapConfig::validate() const {
    if (theta1_deg.empty() || theta_plane_deg.empty()) throw ConfigError("heatmap grid needs at least one step per axis");
    for (double a : theta1_deg) {
        if (!std::isfinite(a)) throw ConfigError("heatmap angles must be finite");
    }
    for (double a : theta_plane_deg) {
        if (!std::isfinite(a)) throw ConfigError("heatmap angles must be finite");
    }
    if (!(snr > 0.0)) throw ConfigError("heatmap snr must be positive");
    if (k_noise < 1) throw ConfigError("heatmap k_noise must be at least 1");
    if (alphas.size() != 3) throw ConfigError("heatmap alphas must have three entries");
    FiberConfig probe{alphas, heatmap_pdds(60.0, 30.0)};
    probe.validate();
    if (threads < 1) throw ConfigError("heatmap threads must be at least 1");
}

nlohmann::json to_json(const HeatmapConfig& cfg) {
    return {{"theta1_deg", cfg.theta1_deg},
            {"theta_plane_deg", cfg.theta_plane_deg},
            {"snr", std::isinf(cfg.snr) ? nlohmann::json("inf") : nlohmann::json(cfg.snr)},
            {"k_noise", cfg.k_noise},
            {"alphas", cfg.alphas},
            {"lambdas", cfg.lambdas},
            {"seed", cfg.seed}};
}

HeatmapConfig heatmap_config_from_json(const nlohmann::json& j, HeatmapConfig base) {
    try {
        if (j.contains("theta1_deg")) base.theta1_deg = j.at("theta1_deg").get<std::vector<double>>();
        if (j.contains("theta_plane_deg")) base.theta_plane_deg = j.at("theta_plane_deg").get<std::vector<double>>();
        if (j.contains("snr")) {
            const auto& s = j.at("snr");
            base.snr = s.is_string() && s.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                                       : s.get<double>();
        }
        base.k_noise = json_count(j, "k_noise", base.k_noise);
        if (j.contains("alphas")) base.alphas = j.at("alphas").get<std::vector<double>>();
        if (j.contains("lambdas")) base.lambdas = j.at("lambdas").get<Eigenvalues>();
        if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("heatmap config: ") + e.what());
    }
    base.validate();
    return base;
}

std::vector<Vec3> heatmap_pdds(double theta1_deg, double theta_plane_deg) {
    const double t1 = deg2rad(theta1_deg);
    const double phi = deg2rad(theta_plane_deg);
    const double psi = t1 / 2.0 + kPi / 2.0;
    return {Vec3(1.0, 0.0, 0.0), Vec3(std::cos(t1), std::sin(t1), 0.0),
            Vec3(std::cos(phi) * std::cos(psi), std::cos(phi) * std::sin(psi), std::sin(phi))};
}

HeatmapGrid heatmap(const BatchPredictor& predictor, const AcquisitionProtocol& proto, const SphereDictionary& dict,
                    const GaussianWeights& weights, const HeatmapConfig& cfg) {
    cfg.validate();
    if (!predictor) throw ConfigError("heatmap needs a predictor");
    const AcquisitionProtocol dwi = proto.diffusion_weighted();
    const std::size_t n = dwi.size();
    HeatmapGrid grid;
    grid.axis1 = cfg.theta1_deg;
    grid.axis2 = cfg.theta_plane_deg;
    const std::size_t cells = grid.axis1.size() * grid.axis2.size();
    grid.mean.assign(cells, 0.0);
    grid.stddev.assign(cells, 0.0);

    parallel_for(cells, cfg.threads, [&](std::size_t begin, std::size_t end) {
        std::vector<double> clean(n);
        for (std::size_t c = begin; c < end; ++c) {
            const std::size_t i = c / grid.axis2.size();
            const std::size_t j = c % grid.axis2.size();
            FiberConfig truth{cfg.alphas, heatmap_pdds(grid.axis1[i], grid.axis2[j])};
            const std::vector<double> label = encode_labels(dict, weights, truth);
            multi_tensor_signal_into(dwi, truth, cfg.lambdas, 1.0, clean);
            Rng rng = child_rng(cfg.seed, c);
            Eigen::MatrixXf x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.k_noise));
            std::vector<double> noisy(n);
            for (std::size_t r = 0; r < cfg.k_noise; ++r) {
                noisy = clean;
                add_rician_noise(std::span<double>(noisy), cfg.snr, rng);
                for (std::size_t k = 0; k < n; ++k) x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) = static_cast<float>(noisy[k]);
            }
            const Eigen::MatrixXf y = predictor(x);
            if (y.rows() != static_cast<Eigen::Index>(dict.size()) || y.cols() != x.cols()) {
                throw ConfigError("predictor returned a " + std::to_string(y.rows()) + "x" + std::to_string(y.cols()) +
                                  " matrix, expected " + std::to_string(dict.size()) + "x" + std::to_string(x.cols()));
            }
            std::vector<double> d(cfg.k_noise);
            std::vector<double> col(dict.size());
            for (std::size_t r = 0; r < cfg.k_noise; ++r) {
                for (std::size_t k = 0; k < dict.size(); ++k) col[k] = y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r));
                d[r] = emd(dict, std::span<const double>(col), std::span<const double>(label));
            }
            const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
            double var = 0.0;
            for (double v : d) var += (v - mean) * (v - mean);
            grid.mean[c] = mean;
            grid.stddev[c] = d.size() > 1 ? std::sqrt(var / static_cast<double>(d.size() - 1)) : 0.0;
        }
    });
    return grid;
}

void write_heatmap_csv(std::ostream& out, const HeatmapGrid& grid, const HeatmapConfig& cfg) {
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << std::setprecision(17);
    out << "# alphas=" << cfg.alphas[0] << ',' << cfg.alphas[1] << ',' << cfg.alphas[2];
    out << " snr=" << (std::isinf(cfg.snr) ? std::string("inf") : std::to_string(cfg.snr)) << " k_noise=" << cfg.k_noise
        << " seed=" << cfg.seed << " geometry=first_x,second_in_xy_plane,third_elevated_perpendicular_to_bisector"
        << " (alphas, snr and geometry are reconstruction choices)\n";
    out << "theta1_deg,theta_plane_deg,mean_emd_deg,std_emd_deg\n";
    for (std::size_t i = 0; i < grid.axis1.size(); ++i) {
        for (std::size_t j = 0; j < grid.axis2.size(); ++j) {
            const std::size_t c = i * grid.axis2.size() + j;
            out << grid.axis1[i] << ',' << grid.axis2[j] << ',' << grid.mean[c] << ',' << grid.stddev[c] << '\n';
        }
    }
    out.flags(flags);
    out.precision(prec);
}

void write_heatmap_svg(std::ostream& out, const HeatmapGrid& grid) {
    const int cell = 24;
    const int margin = 60;
    const int w = margin + cell * static_cast<int>(grid.axis2.size()) + 20;
    const int h = margin + cell * static_cast<int>(grid.axis1.size()) + 20;
    double hi = 0.0;
    for (double v : grid.mean) hi = std::max(hi, v);
    if (hi <= 0.0) hi = 1.0;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    out << "<text x=\"4\" y=\"14\" font-size=\"11\">mean EMD (deg), max " << hi << "</text>\n";
    for (std::size_t i = 0; i < grid.axis1.size(); ++i) {
        const int y = margin + cell * static_cast<int>(grid.axis1.size() - 1 - i);
        out << "<text x=\"4\" y=\"" << y + cell / 2 + 4 << "\" font-size=\"9\">" << grid.axis1[i] << "</text>\n";
        for (std::size_t j = 0; j < grid.axis2.size(); ++j) {
            const double t = std::clamp(grid.at(i, j) / hi, 0.0, 1.0);
            const int r = static_cast<int>(std::lround(255 * t));
            const int b = static_cast<int>(std::lround(255 * (1.0 - t)));
            out << "<rect x=\"" << margin + cell * static_cast<int>(j) << "\" y=\"" << y << "\" width=\"" << cell
                << "\" height=\"" << cell << "\" fill=\"rgb(" << r << ",64," << b << ")\"/>\n";
        }
    }
    for (std::size_t j = 0; j < grid.axis2.size(); ++j) {
        out << "<text x=\"" << margin + cell * static_cast<int>(j) + 2 << "\" y=\"" << margin - 6
            << "\" font-size=\"9\">" << grid.axis2[j] << "</text>\n";
    }
    out << "</svg>\n";
}

bool matched_within(const AngularErrorResult& r, double threshold_deg) {
    if (r.missed > 0) return false;
    return std::all_of(r.matched_deg.begin(), r.matched_deg.end(), [&](double a) { return a <= threshold_deg; });
}

namespace {

double quantile(std::vector<double> v, double q) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<MethodSummary> summarize(const std::vector<MetricRecord>& records,
                                     const std::map<std::string, double>& seconds) {
    if (records.empty()) throw ConfigError("summarize needs at least one record");
    std::vector<std::string> methods;
    for (const auto& r : records) {
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    }
    std::vector<MethodSummary> rows;
    for (const auto& name : methods) {
        MethodSummary s;
        s.method = name;
        std::vector<double> emds, angles;
        std::size_t ok10 = 0, ok15 = 0, ok20 = 0, missed = 0, spurious = 0;
        for (const auto& r : records) {
            if (r.method != name) continue;
            emds.push_back(r.emd);
            angles.insert(angles.end(), r.angular.matched_deg.begin(), r.angular.matched_deg.end());
            ok10 += matched_within(r.angular, 10.0);
            ok15 += matched_within(r.angular, 15.0);
            ok20 += matched_within(r.angular, 20.0);
            missed += r.angular.missed;
            spurious += r.angular.spurious;
        }
        const double cnt = static_cast<double>(emds.size());
        s.count = emds.size();
        s.mean_emd = std::accumulate(emds.begin(), emds.end(), 0.0) / cnt;
        s.median_emd = quantile(emds, 0.5);
        s.angle_p25 = quantile(angles, 0.25);
        s.angle_p50 = quantile(angles, 0.5);
        s.angle_p75 = quantile(angles, 0.75);
        s.angle_p95 = quantile(angles, 0.95);
        s.success_10 = static_cast<double>(ok10) / cnt;
        s.success_15 = static_cast<double>(ok15) / cnt;
        s.success_20 = static_cast<double>(ok20) / cnt;
        s.mean_missed = static_cast<double>(missed) / cnt;
        s.mean_spurious = static_cast<double>(spurious) / cnt;
        if (auto it = seconds.find(name); it != seconds.end()) s.seconds = it->second;
        rows.push_back(s);
    }
    return rows;
}

void TestSetConfig::validate() const {
    if (count < 1) throw ConfigError("test set count must be at least 1");
    if (alphas.empty() || alphas.size() > 3) throw ConfigError("test set needs 1 to 3 fractions");
    if (!(min_crossing_deg >= 0.0 && min_crossing_deg <= max_crossing_deg && max_crossing_deg <= 90.0)) {
        throw ConfigError("test set crossing range must satisfy 0 <= min <= max <= 90");
    }
    if (alphas.size() == 3 && min_crossing_deg > 60.0) throw ConfigError("three-fiber test sets need min_crossing_deg <= 60");
    if (!(snr > 0.0)) throw ConfigError("test set snr must be positive");
    FiberConfig probe{alphas, std::vector<Vec3>(alphas.size(), Vec3::UnitX())};
    probe.validate();
}

nlohmann::json to_json(const TestSetConfig& cfg) {
    return {{"count", cfg.count},
            {"alphas", cfg.alphas},
            {"min_crossing_deg", cfg.min_crossing_deg},
            {"max_crossing_deg", cfg.max_crossing_deg},
            {"snr", std::isinf(cfg.snr) ? nlohmann::json("inf") : nlohmann::json(cfg.snr)},
            {"lambdas", cfg.lambdas},
            {"seed", cfg.seed}};
}

TestSetConfig test_set_config_from_json(const nlohmann::json& j, TestSetConfig base) {
    try {
        base.count = json_count(j, "count", base.count);
        if (j.contains("alphas")) base.alphas = j.at("alphas").get<std::vector<double>>();
        if (j.contains("min_crossing_deg")) base.min_crossing_deg = j.at("min_crossing_deg").get<double>();
        if (j.contains("max_crossing_deg")) base.max_crossing_deg = j.at("max_crossing_deg").get<double>();
        if (j.contains("snr")) {
            const auto& s = j.at("snr");
            base.snr = s.is_string() && s.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                                       : s.get<double>();
        }
        if (j.contains("lambdas")) base.lambdas = j.at("lambdas").get<Eigenvalues>();
        if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("test set config: ") + e.what());
    }
    base.validate();
    return base;
}

namespace {

Vec3 random_axis(Rng& rng) {
    std::normal_distribution<double> g;
    Vec3 v;
    do {
        v = draw_vec3(g, rng);
    } while (v.norm() < 1e-12);
    return v.normalized();
}

std::vector<Vec3> crossing_axes(std::size_t t, double lo, double hi, Rng& rng) {
    const Vec3 a = random_axis(rng);
    if (t == 1) return {a};
    std::uniform_real_distribution<double> angle(deg2rad(lo), deg2rad(hi));
    while (true) {
        Vec3 perp = random_axis(rng);
        perp -= perp.dot(a) * a;
        if (perp.norm() < 1e-6) continue;
        perp.normalize();
        const double th = angle(rng);
        const Vec3 b = std::cos(th) * a + std::sin(th) * perp;
        if (t == 2) return {a, b};
        const Vec3 c = random_axis(rng);
        const double ac = rad2deg(axial_angle(a, c));
        const double bc = rad2deg(axial_angle(b, c));
        if (ac >= lo && ac <= hi && bc >= lo && bc <= hi) return {a, b, c};
    }
}

}  // namespace

TestSet make_test_set(const AcquisitionProtocol& proto, const TestSetConfig& cfg, int threads) {
    cfg.validate();
    const AcquisitionProtocol dwi = proto.diffusion_weighted();
    const std::size_t n = dwi.size();
    TestSet ts;
    ts.signals.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cfg.count));
    ts.truth.resize(cfg.count);
    parallel_for(cfg.count, threads, [&](std::size_t begin, std::size_t end) {
        std::vector<double> s(n);
        for (std::size_t k = begin; k < end; ++k) {
            Rng rng = child_rng(cfg.seed, k);
            FiberConfig fc{cfg.alphas, crossing_axes(cfg.alphas.size(), cfg.min_crossing_deg, cfg.max_crossing_deg, rng)};
            multi_tensor_signal_into(dwi, fc, cfg.lambdas, 1.0, s);
            add_rician_noise(std::span<double>(s), cfg.snr, rng);
            for (std::size_t i = 0; i < n; ++i) {
                ts.signals(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = static_cast<float>(s[i]);
            }
            ts.truth[k] = std::move(fc);
        }
    });
    return ts;
}

std::vector<MetricRecord> evaluate_predictions(const std::string& method, const Eigen::MatrixXf& coeffs,
                                               const std::vector<FiberConfig>& truth, const SphereDictionary& dict,
                                               const GaussianWeights& weights, const PeakOptions& peak_options,
                                               int threads) {
    if (coeffs.rows() != static_cast<Eigen::Index>(dict.size())) {
        throw ConfigError("coefficients have " + std::to_string(coeffs.rows()) + " rows but the dictionary has " +
                          std::to_string(dict.size()) + " atoms");
    }
    if (static_cast<std::size_t>(coeffs.cols()) != truth.size()) throw ConfigError("one truth per voxel is required");
    std::vector<MetricRecord> records(truth.size());
    parallel_for(truth.size(), threads, [&](std::size_t begin, std::size_t end) {
        std::vector<float> col(dict.size());
        for (std::size_t k = begin; k < end; ++k) {
            for (std::size_t a = 0; a < dict.size(); ++a) col[a] = coeffs(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(k));
            const std::vector<double> label = encode_labels(dict, weights, truth[k]);
            MetricRecord& r = records[k];
            r.method = method;
            const bool empty = std::all_of(col.begin(), col.end(), [](float v) { return v <= 0.0f; });
            if (empty) {
                // No mass predicted: charge the worst possible transport cost.
                r.emd = 90.0;
                r.angular = angular_error(truth[k].pdds, {});
                continue;
            }
            std::vector<double> p(col.begin(), col.end());
            for (double& v : p) v = std::max(0.0, v);
            r.emd = emd(dict, std::span<const double>(p), std::span<const double>(label));
            r.angular = angular_error(truth[k], extract_peaks(dict, std::span<const float>(col), peak_options));
        }
    });
    return records;
}

void write_summary_csv(std::ostream& out, const std::vector<MethodSummary>& rows) {
    const auto prec = out.precision();
    out << std::setprecision(10);
    out << "method,count,mean_emd,median_emd,angle_p25,angle_p50,angle_p75,angle_p95,success_10,success_15,success_20,"
           "mean_missed,mean_spurious,seconds\n";
    for (const auto& s : rows) {
        out << s.method << ',' << s.count << ',' << s.mean_emd << ',' << s.median_emd << ',' << s.angle_p25 << ','
            << s.angle_p50 << ',' << s.angle_p75 << ',' << s.angle_p95 << ',' << s.success_10 << ',' << s.success_15
            << ',' << s.success_20 << ',' << s.mean_missed << ',' << s.mean_spurious << ',' << s.seconds << '\n';
    }
    out.precision(prec);
}

nlohmann::json to_json(const std::vector<MethodSummary>& rows) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : rows) {
        arr.push_back({{"method", s.method},
                       {"count", s.count},
                       {"mean_emd", num(s.mean_emd)},
                       {"median_emd", num(s.median_emd)},
                       {"angle_p25", num(s.angle_p25)},
                       {"angle_p50", num(s.angle_p50)},
                       {"angle_p75", num(s.angle_p75)},
                       {"angle_p95", num(s.angle_p95)},
                       {"success_10", s.success_10},
                       {"success_15", s.success_15},
                       {"success_20", s.success_20},
                       {"mean_missed", s.mean_missed},
                       {"mean_spurious", s.mean_spurious},
                       {"seconds", s.seconds}});
    }
    return arr;
}

}  // namespace fiberlearn
