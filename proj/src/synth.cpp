#include "fiberlearn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <Eigen/Geometry>

namespace fiberlearn {

void SynthConfig::validate() const {
    if (!(snr_range[0] > 0.0) || !(snr_range[0] <= snr_range[1])) {
        throw ConfigError("snr_range must satisfy 0 < lo <= hi");
    }
    if (!(sigma_r >= 0.0) || !std::isfinite(sigma_r)) throw ConfigError("sigma_r must be non-negative");
    if (count < 1) throw ConfigError("sample count must be at least 1");
    TensorSpec{lambdas, Vec3::UnitX()}.validate();
}

nlohmann::json to_json(const SynthConfig& cfg) {
    return {{"lambdas", cfg.lambdas},
            {"snr_range", cfg.snr_range},
            {"sigma_r", cfg.sigma_r},
            {"t_policy", cfg.t_policy == FiberCountPolicy::fixed3 ? "fixed3" : "uniform123"},
            {"master_seed", cfg.master_seed},
            {"count", cfg.count},
            {"layout", cfg.layout == DatasetLayout::voxel ? "voxel" : "patch"}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j, SynthConfig cfg) {
    try {
        if (j.contains("lambdas")) cfg.lambdas = j.at("lambdas").get<Eigenvalues>();
        if (j.contains("snr_range")) cfg.snr_range = j.at("snr_range").get<std::array<double, 2>>();
        cfg.sigma_r = j.value("sigma_r", cfg.sigma_r);
        if (j.contains("t_policy")) {
            const auto p = j.at("t_policy").get<std::string>();
            if (p == "fixed3") {
                cfg.t_policy = FiberCountPolicy::fixed3;
            } else if (p == "uniform123") {
                cfg.t_policy = FiberCountPolicy::uniform123;
            } else {
                throw ConfigError("unknown t_policy '" + p + "'");
            }
        }
        cfg.master_seed = j.value("master_seed", cfg.master_seed);
        cfg.count = json_count(j, "count", cfg.count);
        if (j.contains("layout")) {
            const auto l = j.at("layout").get<std::string>();
            if (l == "voxel") {
                cfg.layout = DatasetLayout::voxel;
            } else if (l == "patch") {
                cfg.layout = DatasetLayout::patch;
            } else {
                throw ConfigError("unknown dataset layout '" + l + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

std::vector<double> sample_alphas(std::size_t t, Rng& rng, std::size_t* attempts) {
    if (t < 1 || t > 3) throw ConfigError("fiber count must be 1, 2 or 3");
    if (attempts) *attempts = 1;
    if (t == 1) return {1.0};
    std::exponential_distribution<double> expo(1.0);
    std::vector<double> a(t);
    for (std::size_t n = 1;; ++n) {
        double sum = 0.0;
        for (auto& v : a) {
            v = expo(rng);
            sum += v;
        }
        bool ok = true;
        for (auto& v : a) {
            v /= sum;
            ok = ok && v > 0.1;
        }
        if (ok) {
            if (attempts) *attempts = n;
            break;
        }
    }
    std::sort(a.begin(), a.end());
    return a;
}

Mat3 random_rotation(Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::Quaterniond q;
    do {
        const double w = normal(rng);
        const Vec3 v = draw_vec3(normal, rng);
        q = Eigen::Quaterniond(w, v.x(), v.y(), v.z());
    } while (q.norm() < 1e-12);
    q.normalize();
    return q.toRotationMatrix();
}

std::vector<Vec3> relative_pdds(std::size_t t, double theta2, double theta3) {
    if (t < 1 || t > 3) throw ConfigError("fiber count must be 1, 2 or 3");
    std::vector<Vec3> d{Vec3(1.0, 0.0, 0.0), Vec3(1.0, std::cos(theta2), 0.0), Vec3(1.0, 0.0, std::cos(theta3))};
    d.resize(t);
    return d;
}

std::vector<Vec3> sample_pdds(std::size_t t, Rng& rng) {
    std::uniform_real_distribution<double> angle(0.0, kPi);
    const double theta2 = angle(rng);
    const double theta3 = angle(rng);
    const Mat3 r = random_rotation(rng);
    auto d = relative_pdds(t, theta2, theta3);
    for (auto& v : d) v = (r * v).normalized();
    return d;
}

std::array<std::vector<Vec3>, kPatchVoxels> build_patch_pdds(const std::vector<Vec3>& base, double sigma_r,
                                                             Rng& rng) {
    if (!(sigma_r >= 0.0)) throw ConfigError("sigma_r must be non-negative");
    for (const auto& d : base) {
        if (std::abs(d.norm() - 1.0) > 1e-9) throw ConfigError("base pdds must be unit norm");
    }
    constexpr double min_norm = 1e-6;
    constexpr int max_attempts = 1000;
    std::normal_distribution<double> noise(0.0, 1.0);
    std::array<std::vector<Vec3>, kPatchVoxels> out;
    for (auto& v : out) v.resize(base.size());

    for (std::size_t f = 0; f < base.size(); ++f) {
        // corners[cx][cy][cz], cx, cy, cz in {0, 1} standing for offsets 0 and 2.
        std::array<Vec3, 8> corners;
        std::array<Vec3, kPatchVoxels> raw;
        int attempt = 0;
        for (;; ++attempt) {
            if (attempt >= max_attempts) throw Error("could not build non-degenerate patch directions");
            for (auto& c : corners) {
                do {
                    c = base[f] + sigma_r * draw_vec3(noise, rng);
                } while (c.norm() < min_norm);
            }
            bool ok = true;
            for (std::size_t x = 0; x < 3; ++x) {
                for (std::size_t y = 0; y < 3; ++y) {
                    for (std::size_t z = 0; z < 3; ++z) {
                        const double tx = 0.5 * static_cast<double>(x);
                        const double ty = 0.5 * static_cast<double>(y);
                        const double tz = 0.5 * static_cast<double>(z);
                        Vec3 v = Vec3::Zero();
                        for (int c = 0; c < 8; ++c) {
                            const int cx = (c >> 2) & 1, cy = (c >> 1) & 1, cz = c & 1;
                            const double w = (cx ? tx : 1.0 - tx) * (cy ? ty : 1.0 - ty) * (cz ? tz : 1.0 - tz);
                            if (w != 0.0) v += w * corners[static_cast<std::size_t>(c)];
                        }
                        raw[patch_index(x, y, z)] = v;
                        ok = ok && v.norm() >= min_norm;
                    }
                }
            }
            if (ok) break;
        }
        for (std::size_t p = 0; p < kPatchVoxels; ++p) out[p][f] = raw[p].normalized();
    }
    return out;
}

PatchSample generate_patch(const AcquisitionProtocol& proto, const SphereDictionary& dict,
                           const GaussianWeights& weights, const SynthConfig& cfg, Rng& rng) {
    const AcquisitionProtocol dwi = proto.diffusion_weighted();
    const std::size_t n = dwi.size();
    if (n == 0) throw ConfigError("protocol has no diffusion-weighted entries");

    std::uniform_real_distribution<double> snr_dist(cfg.snr_range[0], cfg.snr_range[1]);
    PatchSample sample;
    sample.snr = cfg.snr_range[0] == cfg.snr_range[1] ? cfg.snr_range[0] : snr_dist(rng);

    std::size_t t = 3;
    if (cfg.t_policy == FiberCountPolicy::uniform123) {
        t = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    }
    const auto alphas = sample_alphas(t, rng);
    const auto base = sample_pdds(t, rng);
    const auto patch = build_patch_pdds(base, cfg.sigma_r, rng);

    sample.signals.resize(kPatchVoxels * n);
    std::vector<double> signal(n);
    for (std::size_t p = 0; p < kPatchVoxels; ++p) {
        FiberConfig voxel{alphas, patch[p]};
        multi_tensor_signal_into(dwi, voxel, cfg.lambdas, 1.0, signal);
        add_rician_noise(std::span<double>(signal), sample.snr, rng, 1.0);
        std::transform(signal.begin(), signal.end(), sample.signals.begin() + static_cast<std::ptrdiff_t>(p * n),
                       [](double v) { return static_cast<float>(v); });
    }
    sample.center_truth = FiberConfig{alphas, patch[kPatchCenter]};
    sample.center_label = encode_labels(dict, weights, sample.center_truth);
    return sample;
}

Dataset generate_dataset(const AcquisitionProtocol& proto, const SphereDictionary& dict,
                         const GaussianWeights& weights, const SynthConfig& cfg, int threads) {
    cfg.validate();
    const std::size_t n = proto.diffusion_weighted().size();
    const std::size_t m = dict.size();
    Dataset ds;
    ds.config = cfg;
    ds.layout = cfg.layout;
    ds.protocol_hash = proto.hash();
    ds.dictionary_hash = dict.hash();
    ds.label_sigma = weights.sigma;
    ds.data.count = cfg.count;
    ds.data.input_dim = cfg.layout == DatasetLayout::voxel ? n : kPatchVoxels * n;
    ds.data.output_dim = m;
    ds.data.inputs.resize(cfg.count * ds.data.input_dim);
    ds.data.targets.resize(cfg.count * m);
    ds.truth.resize(cfg.count);

    parallel_for(cfg.count, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            Rng rng = child_rng(cfg.master_seed, k);
            PatchSample s = generate_patch(proto, dict, weights, cfg, rng);
            float* dst = ds.data.inputs.data() + k * ds.data.input_dim;
            if (cfg.layout == DatasetLayout::voxel) {
                std::copy_n(s.signals.begin() + static_cast<std::ptrdiff_t>(kPatchCenter * n), n, dst);
            } else {
                std::copy(s.signals.begin(), s.signals.end(), dst);
            }
            std::transform(s.center_label.begin(), s.center_label.end(), ds.data.targets.begin() +
                                                                              static_cast<std::ptrdiff_t>(k * m),
                           [](double v) { return static_cast<float>(v); });
            ds.truth[k] = SampleTruth{std::move(s.center_truth), s.snr};
        }
    });
    return ds;
}

TrainingData voxel_training_data(const Dataset& dataset) {
    if (dataset.layout == DatasetLayout::voxel) return dataset.data;
    const std::size_t n = dataset.signal_length();
    TrainingData out;
    out.count = dataset.data.count;
    out.input_dim = n;
    out.output_dim = dataset.data.output_dim;
    out.targets = dataset.data.targets;
    out.inputs.resize(out.count * n);
    for (std::size_t k = 0; k < out.count; ++k) {
        std::copy_n(dataset.data.inputs.data() + k * dataset.data.input_dim + kPatchCenter * n, n,
                    out.inputs.data() + k * n);
    }
    return out;
}

namespace {

std::vector<float> read_float_file(const std::filesystem::path& path, std::size_t expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != 4 * expected) {
        throw FormatError(path.string() + ": expected " + std::to_string(4 * expected) + " bytes, found " +
                          std::to_string(bytes.size()));
    }
    std::vector<float> v(expected);
    decode_floats_le(bytes.data(), v.data(), expected);
    return v;
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& ds, const nlohmann::json& extra) {
    ds.data.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = {{"format_version", kFormatVersion},
                               {"count", ds.data.count},
                               {"signal_length", ds.signal_length()},
                               {"input_dim", ds.data.input_dim},
                               {"label_length", ds.data.output_dim},
                               {"layout", ds.layout == DatasetLayout::voxel ? "voxel" : "patch"},
                               {"patch_order", "xyzc"},
                               {"dtype", "float32-le"},
                               {"protocol_hash", ds.protocol_hash},
                               {"dictionary_hash", ds.dictionary_hash},
                               {"label_sigma", ds.label_sigma},
                               {"synth", to_json(ds.config)},
                               {"extra", extra}};
    {
        std::ofstream out(dir / "manifest.json");
        if (!out) throw Error("cannot write dataset manifest in " + dir.string());
        out << manifest.dump(2) << '\n';
    }
    {
        std::ofstream out(dir / "signals.bin", std::ios::binary);
        write_floats_le(out, ds.data.inputs.data(), ds.data.inputs.size());
        if (!out) throw Error("short write to signals.bin");
    }
    {
        std::ofstream out(dir / "labels.bin", std::ios::binary);
        write_floats_le(out, ds.data.targets.data(), ds.data.targets.size());
        if (!out) throw Error("short write to labels.bin");
    }
    nlohmann::json truth = nlohmann::json::array();
    for (const auto& t : ds.truth) {
        nlohmann::json pdds = nlohmann::json::array();
        for (const auto& d : t.config.pdds) pdds.push_back({d.x(), d.y(), d.z()});
        truth.push_back({{"alphas", t.config.alphas}, {"pdds", pdds}, {"snr", t.snr}});
    }
    std::ofstream out(dir / "truth.json");
    out << truth.dump() << '\n';
    if (!out) throw Error("short write to truth.json");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw FormatError("cannot open dataset manifest in " + dir.string());
    Dataset ds;
    try {
        nlohmann::json manifest;
        mf >> manifest;
        ds.config = synth_config_from_json(manifest.at("synth"));
        ds.layout = manifest.at("layout").get<std::string>() == "patch" ? DatasetLayout::patch : DatasetLayout::voxel;
        ds.data.count = manifest.at("count").get<std::size_t>();
        ds.data.input_dim = manifest.at("input_dim").get<std::size_t>();
        ds.data.output_dim = manifest.at("label_length").get<std::size_t>();
        ds.protocol_hash = manifest.value("protocol_hash", std::string());
        ds.dictionary_hash = manifest.value("dictionary_hash", std::string());
        ds.label_sigma = manifest.value("label_sigma", kDefaultLabelSigma);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset manifest: ") + e.what());
    }
    ds.data.inputs = read_float_file(dir / "signals.bin", ds.data.count * ds.data.input_dim);
    ds.data.targets = read_float_file(dir / "labels.bin", ds.data.count * ds.data.output_dim);

    std::ifstream tf(dir / "truth.json");
    if (tf) {
        try {
            nlohmann::json truth;
            tf >> truth;
            for (const auto& t : truth) {
                SampleTruth st;
                st.config.alphas = t.at("alphas").get<std::vector<double>>();
                for (const auto& d : t.at("pdds")) {
                    st.config.pdds.emplace_back(d.at(0).get<double>(), d.at(1).get<double>(), d.at(2).get<double>());
                }
                st.snr = t.at("snr").get<double>();
                ds.truth.push_back(std::move(st));
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("truth.json: ") + e.what());
        }
    }
    return ds;
}

}  // namespace fiberlearn
