#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fiberlearn/emd.hpp"
#include "fiberlearn/evaluation.hpp"
#include "fiberlearn/inference.hpp"
#include "fiberlearn/model_io.hpp"
#include "fiberlearn/nifti.hpp"
#include "fiberlearn/nnls.hpp"
#include "fiberlearn/protocol.hpp"
#include "fiberlearn/sphere.hpp"
#include "fiberlearn/sweep.hpp"
#include "fiberlearn/synth.hpp"
#include "fiberlearn/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace fiberlearn;

namespace {

enum class FlagType { text, path, integer, real };

struct Flag {
    std::string name;  // without leading dashes
    std::string key;   // JSON pointer into the config
    FlagType type;
    std::string help;
    std::string value;
};

struct Command {
    std::string name;
    std::string config_path;
    std::vector<Flag> flags;
};

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw Error("short write to " + path.string());
}

json resolved_config(const Command& cmd) {
    json cfg = cmd.config_path.empty() ? json::object() : read_json_file(cmd.config_path);
    if (!cfg.is_object()) throw ConfigError("config root must be a JSON object");
    for (const auto& f : cmd.flags) {
        if (f.value.empty()) continue;
        const json::json_pointer ptr(f.key);
        try {
            switch (f.type) {
                case FlagType::text: cfg[ptr] = f.value; break;
                case FlagType::path: cfg[ptr] = fs::absolute(f.value).lexically_normal().string(); break;
                case FlagType::integer: cfg[ptr] = std::stoll(f.value); break;
                case FlagType::real: cfg[ptr] = std::stod(f.value); break;
            }
        } catch (const std::logic_error&) {
            throw ConfigError("--" + f.name + ": cannot parse '" + f.value + "'");
        }
    }
    return cfg;
}

template <typename T>
T get_or(const json& cfg, const std::string& pointer, T fallback) {
    const json::json_pointer ptr(pointer);
    if (!cfg.contains(ptr)) return fallback;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (cfg.at(ptr).is_number_integer() && cfg.at(ptr).get<std::int64_t>() < 0) {
            throw ConfigError(pointer + ": must be non-negative");
        }
    }
    try {
        return cfg.at(ptr).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(pointer + ": " + e.what());
    }
}

std::string require_string(const json& cfg, const std::string& pointer) {
    const auto v = get_or<std::string>(cfg, pointer, "");
    if (v.empty()) throw ConfigError(pointer + ": required");
    return v;
}

fs::path require_path(const json& cfg, const std::string& pointer) {
    return fs::absolute(require_string(cfg, pointer)).lexically_normal();
}

fs::path output_dir(json& cfg) {
    const fs::path out = require_path(cfg, "/out");
    cfg["out"] = out.string();
    fs::create_directories(out);
    return out;
}

int threads_of(const json& cfg) {
    const int t = get_or<int>(cfg, "/threads", 1);
    if (t < 1) throw ConfigError("/threads: must be at least 1");
    return t;
}

void write_run_config(const fs::path& dir, const std::string& subcommand, const json& cfg) {
    json j = cfg;
    j["subcommand"] = subcommand;
    j["tool_version"] = kVersion;
    j["format_version"] = kFormatVersion;
    write_json_file(dir / "config.json", j);
}

AcquisitionProtocol resolve_protocol(const json& cfg, const std::string& pointer) {
    const json::json_pointer ptr(pointer);
    if (cfg.contains(ptr)) {
        const json& p = cfg.at(ptr);
        if (p.contains("bvals") || p.contains("bvecs")) {
            return load_protocol(require_path(cfg, pointer + "/bvals"), require_path(cfg, pointer + "/bvecs"));
        }
    }
    const auto n_b0 = get_or<std::size_t>(cfg, pointer + "/shell/n_b0", 10);
    const auto n_dirs = get_or<std::size_t>(cfg, pointer + "/shell/n_dirs", 150);
    const auto b = get_or<double>(cfg, pointer + "/shell/b", 2000.0);
    return make_shell_protocol(n_b0, n_dirs, b);
}

SphereDictionary resolve_dictionary(const json& cfg, const std::string& pointer) {
    const json::json_pointer ptr(pointer);
    if (cfg.contains(ptr) && cfg.at(ptr).is_string()) return load_dictionary(require_path(cfg, pointer));
    const auto m = get_or<std::size_t>(cfg, pointer + "/m", kDefaultDictionarySize);
    const auto seed = get_or<std::uint64_t>(cfg, pointer + "/seed", 0);
    return build_dictionary(m, seed);
}

void save_protocol_pair(const AcquisitionProtocol& proto, const fs::path& dir) {
    save_protocol(proto, dir / "protocol.bval", dir / "protocol.bvec");
}

AcquisitionProtocol load_protocol_pair(const fs::path& dir) {
    return load_protocol(dir / "protocol.bval", dir / "protocol.bvec");
}

struct LoadedModel {
    MlpModel model;
    ModelManifest manifest;
    SphereDictionary dict;
    AcquisitionProtocol protocol;
};

LoadedModel load_model_dir(const fs::path& dir) {
    LoadedModel lm;
    std::tie(lm.model, lm.manifest) = load_model(dir);
    lm.dict = load_dictionary(dir / "dictionary.json");
    if (lm.dict.hash() != lm.manifest.dictionary_hash) {
        throw FormatError("dictionary.json in " + dir.string() + " does not match the model manifest");
    }
    lm.protocol = load_protocol_pair(dir);
    return lm;
}

ModelMode resolve_mode(const json& cfg, ModelMode fallback) {
    const auto s = get_or<std::string>(cfg, "/mode", "");
    if (s.empty()) return fallback;
    try {
        return parse_mode(s);
    } catch (const Error& e) {
        throw ConfigError(std::string("/mode: ") + e.what());
    }
}

MathMode resolve_math(const json& cfg, int threads) {
    const auto s = get_or<std::string>(cfg, "/math", threads == 1 ? "batch_invariant" : "fast");
    if (s == "batch_invariant") return MathMode::batch_invariant;
    if (s == "fast") return MathMode::fast;
    throw ConfigError("/math: expected 'fast' or 'batch_invariant', got '" + s + "'");
}

struct MaskedInput {
    Volume4D signals;
    VoxelMask mask;
};

MaskedInput load_input(const json& cfg) {
    const AcquisitionProtocol proto = load_protocol(require_path(cfg, "/bvals"), require_path(cfg, "/bvecs"));
    const Volume4D raw = load_nifti(require_path(cfg, "/in"));
    NormalizedSignals ns = normalize_signals(raw, proto);
    MaskedInput mi;
    mi.signals = std::move(ns.signals);
    mi.mask.assign(mi.signals.voxel_count(), 1);
    for (std::size_t v = 0; v < mi.mask.size(); ++v) mi.mask[v] = ns.excluded[v] ? 0 : 1;
    const auto mask_path = get_or<std::string>(cfg, "/mask", "");
    if (!mask_path.empty()) {
        const Volume4D m = load_nifti(fs::absolute(mask_path));
        if (m.nx() != raw.nx() || m.ny() != raw.ny() || m.nz() != raw.nz() || m.channels() != 1) {
            throw ConfigError("/mask: must be a 3D volume with the input's grid");
        }
        for (std::size_t v = 0; v < mi.mask.size(); ++v) {
            if (m.data[v] == 0.0f) mi.mask[v] = 0;
        }
    }
    return mi;
}

void write_peaks_file(const fs::path& path, const Volume4D& coeffs, const SphereDictionary& dict,
                      const VoxelMask& mask) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    write_peaks(out, coeffs, dict, &mask);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- subcommands

int run_dict(json cfg) {
    const fs::path out = output_dir(cfg);
    const auto m = get_or<std::size_t>(cfg, "/m", kDefaultDictionarySize);
    const auto seed = get_or<std::uint64_t>(cfg, "/seed", 0);
    cfg["m"] = m;
    cfg["seed"] = seed;
    const SphereDictionary dict = build_dictionary(m, seed);
    save_dictionary(out / "dictionary.json", dict);
    write_run_config(out, "dict", cfg);
    std::cerr << "dictionary: m=" << m << " max nearest angle " << rad2deg(dict.max_nearest_angle)
              << " deg, min pair angle " << rad2deg(dict.min_pair_angle) << " deg"
              << (dict.converged ? "" : " (repulsion hit its iteration cap)") << '\n';
    return 0;
}

int run_simulate(json cfg) {
    const fs::path out = output_dir(cfg);
    const AcquisitionProtocol proto = resolve_protocol(cfg, "/protocol");
    const SphereDictionary dict = resolve_dictionary(cfg, "/dictionary");
    const double sigma = get_or<double>(cfg, "/label_sigma", kDefaultLabelSigma);
    const GaussianWeights w = gaussian_weight_matrix(dict, sigma);
    SynthConfig sc;
    try {
        sc = synth_config_from_json(cfg.value("synth", json::object()));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("/synth: ") + e.what());
    }
    if (cfg.contains("seed")) sc.master_seed = get_or<std::uint64_t>(cfg, "/seed", 0);
    sc.validate();
    cfg["synth"] = to_json(sc);
    cfg["label_sigma"] = sigma;
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset ds = generate_dataset(proto, dict, w, sc, threads_of(cfg));
    save_dataset(out, ds, {{"tool_version", kVersion}});
    save_dictionary(out / "dictionary.json", dict);
    save_protocol_pair(proto, out);
    write_run_config(out, "simulate", cfg);
    std::cerr << "simulated " << ds.data.count << " samples in " << seconds_since(t0) << " s\n";
    return 0;
}

int run_train(json cfg) {
    const fs::path out = output_dir(cfg);
    const fs::path data_dir = require_path(cfg, "/dataset");
    const Dataset ds = load_dataset(data_dir);
    const SphereDictionary dict = load_dictionary(data_dir / "dictionary.json");
    const AcquisitionProtocol proto = load_protocol_pair(data_dir);
    if (dict.hash() != ds.dictionary_hash) throw FormatError("dataset dictionary.json does not match its manifest");

    const ModelMode mode = resolve_mode(cfg, ModelMode::voxel);
    if (mode == ModelMode::neighborhood && ds.layout != DatasetLayout::patch) {
        throw ConfigError("/mode: neighborhood training needs a patch-layout dataset");
    }
    const std::size_t n = ds.signal_length();
    const std::size_t m = dict.size();
    TrainConfig tc = mode == ModelMode::voxel ? voxel_train_config() : neighborhood_train_config();
    try {
        tc = train_config_from_json(cfg.value("train", json::object()), tc);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("/train: ") + e.what());
    }
    if (cfg.contains("seed")) tc.seed = get_or<std::uint64_t>(cfg, "/seed", 0);
    if (cfg.contains("epochs")) tc.epochs = get_or<std::size_t>(cfg, "/epochs", tc.epochs);
    tc.validate();

    std::vector<std::size_t> dims = mode == ModelMode::voxel ? voxel_preset_dims(n, m) : neighborhood_preset_dims(n, m);
    if (cfg.contains("hidden")) {
        const auto hidden = get_or<std::vector<std::size_t>>(cfg, "/hidden", {});
        dims.assign(1, dims.front());
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(m);
    }
    const Activation hidden_act = parse_activation(get_or<std::string>(cfg, "/hidden_activation", "relu"));
    const Activation output_act = parse_activation(get_or<std::string>(cfg, "/output_activation", "sigmoid"));
    const double dropout = get_or<double>(cfg, "/dropout", 0.2);
    cfg["mode"] = to_string(mode);
    cfg["train"] = to_json(tc);
    cfg["layer_dims"] = dims;

    MlpModel model = init_model<float>(dims, hidden_act, output_act, dropout, tc.seed);
    const double prior = get_or<double>(cfg, "/output_prior", 1.0 / static_cast<double>(m));
    if (prior > 0.0) set_output_prior(model, prior);
    cfg["output_prior"] = prior;
    const TrainingData data = mode == ModelMode::voxel ? voxel_training_data(ds) : ds.data;
    const auto t0 = std::chrono::steady_clock::now();
    const TrainHistory hist = train(model, data, tc, [&](std::size_t epoch, const TrainHistory& h) {
        std::cerr << "epoch " << epoch + 1 << "/" << tc.epochs << " train " << h.train_loss.back() << " val "
                  << h.val_loss.back() << " (" << h.seconds.back() << " s)\n";
    });

    ModelManifest mf = manifest_for(model, mode, n);
    mf.protocol_hash = proto.diffusion_weighted().hash();
    mf.dictionary_m = m;
    mf.dictionary_hash = dict.hash();
    mf.label_sigma = ds.label_sigma;
    mf.lambdas = ds.config.lambdas;
    mf.extra = {{"train", to_json(tc)}, {"tool_version", kVersion}, {"dataset", data_dir.string()}};
    const fs::path model_dir = out / "model";
    save_model(model, mf, model_dir);
    save_dictionary(model_dir / "dictionary.json", dict);
    save_protocol_pair(proto, model_dir);
    {
        std::ofstream h(out / "history.csv");
        write_history_csv(h, hist);
    }
    write_run_config(out, "train", cfg);
    write_run_config(model_dir, "train", cfg);
    std::cerr << "trained in " << seconds_since(t0) << " s; model written to " << model_dir << '\n';
    return 0;
}

int run_predict(json cfg) {
    const fs::path out = output_dir(cfg);
    const LoadedModel lm = load_model_dir(require_path(cfg, "/model"));
    const ModelMode mode = resolve_mode(cfg, lm.manifest.mode);
    cfg["mode"] = to_string(mode);
    const int threads = threads_of(cfg);
    const MaskedInput in = load_input(cfg);
    const AcquisitionProtocol proto = load_protocol(require_path(cfg, "/bvals"), require_path(cfg, "/bvecs"));
    if (proto.diffusion_weighted().hash() != lm.manifest.protocol_hash) {
        std::cerr << "warning: input gradient table differs from the training protocol\n";
    }
    InferenceOptions opts;
    opts.threads = threads;
    opts.math = resolve_math(cfg, threads);
    cfg["math"] = opts.math == MathMode::fast ? "fast" : "batch_invariant";
    PredictionRequest req{&lm.model, &lm.manifest, &in.signals, &in.mask, mode};
    const auto t0 = std::chrono::steady_clock::now();
    const Volume4D coeffs = predict(req, opts);
    const double secs = seconds_since(t0);
    save_nifti(out / "coefficients.nii", coeffs);
    if (get_or<bool>(cfg, "/peaks", true)) write_peaks_file(out / "peaks.txt", coeffs, lm.dict, in.mask);
    write_json_file(out / "report.json", {{"seconds", secs}, {"mode", to_string(mode)}});
    write_run_config(out, "predict", cfg);
    std::cerr << "predicted " << coeffs.voxel_count() << " voxels in " << secs << " s\n";
    return 0;
}

int run_baseline_nnls(json cfg) {
    const fs::path out = output_dir(cfg);
    SphereDictionary dict;
    Eigenvalues lambdas = get_or<Eigenvalues>(cfg, "/lambdas", kReferenceEigenvalues);
    if (cfg.contains("dictionary")) {
        dict = resolve_dictionary(cfg, "/dictionary");
    } else if (cfg.contains("model")) {
        const LoadedModel lm = load_model_dir(require_path(cfg, "/model"));
        dict = lm.dict;
        if (!cfg.contains("lambdas")) lambdas = lm.manifest.lambdas;
    } else {
        dict = build_dictionary();
    }
    cfg["lambdas"] = lambdas;
    const bool iso = get_or<bool>(cfg, "/isotropic", false);
    const AcquisitionProtocol proto = load_protocol(require_path(cfg, "/bvals"), require_path(cfg, "/bvecs"));
    const MaskedInput in = load_input(cfg);
    const SignalDictionary sd = build_signal_dictionary(proto, dict, lambdas, iso);
    const NnlsVolumeReport rep = predict_nnls(in.signals, sd, &in.mask, threads_of(cfg));
    save_nifti(out / "coefficients.nii", rep.coefficients);
    save_dictionary(out / "dictionary.json", dict);
    if (get_or<bool>(cfg, "/peaks", true)) write_peaks_file(out / "peaks.txt", rep.coefficients, dict, in.mask);
    write_json_file(out / "report.json", {{"seconds", rep.seconds},
                                          {"solved_voxels", rep.solved_voxels},
                                          {"cap_hits", rep.cap_hits}});
    write_run_config(out, "baseline-nnls", cfg);
    std::cerr << "NNLS on " << rep.solved_voxels << " voxels in " << rep.seconds << " s, " << rep.cap_hits
              << " hit the iteration cap\n";
    return 0;
}

int run_eval(json cfg) {
    const fs::path out = output_dir(cfg);
    const LoadedModel lm = load_model_dir(require_path(cfg, "/model"));
    const int threads = threads_of(cfg);
    TestSetConfig tsc;
    tsc.lambdas = lm.manifest.lambdas;
    tsc = test_set_config_from_json(cfg.value("test_set", json::object()), tsc);
    if (cfg.contains("seed")) tsc.seed = get_or<std::uint64_t>(cfg, "/seed", tsc.seed);
    if (cfg.contains("count")) tsc.count = get_or<std::size_t>(cfg, "/count", tsc.count);
    tsc.validate();
    cfg["test_set"] = to_json(tsc);
    const bool with_nnls = get_or<bool>(cfg, "/nnls", true);
    const ModelMode mode = resolve_mode(cfg, lm.manifest.mode);

    const TestSet ts = make_test_set(lm.protocol, tsc, threads);
    const GaussianWeights w = gaussian_weight_matrix(lm.dict, lm.manifest.label_sigma);
    InferenceOptions opts;
    opts.threads = threads;
    opts.math = resolve_math(cfg, threads);

    std::vector<MetricRecord> records;
    std::map<std::string, double> timing;
    auto t0 = std::chrono::steady_clock::now();
    const Eigen::MatrixXf model_out = predict_signals(lm.model, mode, ts.signals, opts);
    timing["model"] = seconds_since(t0);
    auto rec = evaluate_predictions("model", model_out, ts.truth, lm.dict, w, {}, threads);
    records.insert(records.end(), rec.begin(), rec.end());
    if (with_nnls) {
        const SignalDictionary sd =
            build_signal_dictionary(lm.protocol, lm.dict, lm.manifest.lambdas, get_or<bool>(cfg, "/isotropic", false));
        t0 = std::chrono::steady_clock::now();
        const Eigen::MatrixXf nnls_out = nnls_predict_signals(sd, ts.signals, threads);
        timing["nnls"] = seconds_since(t0);
        rec = evaluate_predictions("nnls", nnls_out, ts.truth, lm.dict, w, {}, threads);
        records.insert(records.end(), rec.begin(), rec.end());
    }
    const auto rows = summarize(records, timing);
    {
        std::ofstream f(out / "records.csv");
        f << "method,index,emd_deg,matched_deg,missed,spurious\n";
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            f << r.method << ',' << i % tsc.count << ',' << r.emd << ',';
            for (std::size_t k = 0; k < r.angular.matched_deg.size(); ++k) f << (k ? ";" : "") << r.angular.matched_deg[k];
            f << ',' << r.angular.missed << ',' << r.angular.spurious << '\n';
        }
    }
    {
        std::ofstream f(out / "summary.csv");
        write_summary_csv(f, rows);
    }
    json summary = {{"methods", to_json(rows)}};
    if (timing.count("nnls") && timing["model"] > 0.0) summary["nnls_to_model_time_ratio"] = timing["nnls"] / timing["model"];
    write_json_file(out / "summary.json", summary);
    write_run_config(out, "eval", cfg);
    for (const auto& r : rows) {
        std::cerr << r.method << ": mean EMD " << r.mean_emd << " deg, success@15 " << r.success_15 << ", "
                  << r.seconds << " s\n";
    }
    return 0;
}

int run_heatmap(json cfg, bool grid_default_flag) {
    const fs::path out = output_dir(cfg);
    const LoadedModel lm = load_model_dir(require_path(cfg, "/model"));
    const int threads = threads_of(cfg);
    HeatmapConfig hc = HeatmapConfig::default_grid();
    hc.lambdas = lm.manifest.lambdas;
    const json::json_pointer gp("/grid");
    if (!grid_default_flag && cfg.contains(gp)) {
        const json& g = cfg.at(gp);
        if (g.is_string() && g.get<std::string>() != "default") {
            hc = heatmap_config_from_json(read_json_file(fs::absolute(g.get<std::string>())), hc);
        } else if (g.is_object()) {
            hc = heatmap_config_from_json(g, hc);
        }
    }
    if (cfg.contains("snr")) hc.snr = get_or<double>(cfg, "/snr", hc.snr);
    if (cfg.contains("k_noise")) hc.k_noise = get_or<std::size_t>(cfg, "/k_noise", hc.k_noise);
    if (cfg.contains("seed")) hc.seed = get_or<std::uint64_t>(cfg, "/seed", hc.seed);
    hc.threads = threads;
    hc.validate();
    cfg["grid"] = to_json(hc);

    const std::string method = get_or<std::string>(cfg, "/method", "model");
    const ModelMode mode = resolve_mode(cfg, lm.manifest.mode);
    InferenceOptions opts;
    opts.math = resolve_math(cfg, threads);
    BatchPredictor predictor;
    SignalDictionary sd;
    if (method == "model") {
        predictor = [&](const Eigen::MatrixXf& s) { return predict_signals(lm.model, mode, s, opts); };
    } else if (method == "nnls") {
        sd = build_signal_dictionary(lm.protocol, lm.dict, lm.manifest.lambdas);
        predictor = [&](const Eigen::MatrixXf& s) { return nnls_predict_signals(sd, s); };
    } else {
        throw ConfigError("/method: expected 'model' or 'nnls', got '" + method + "'");
    }
    const GaussianWeights w = gaussian_weight_matrix(lm.dict, lm.manifest.label_sigma);
    const auto t0 = std::chrono::steady_clock::now();
    const HeatmapGrid grid = heatmap(predictor, lm.protocol, lm.dict, w, hc);
    {
        std::ofstream f(out / "heatmap.csv");
        write_heatmap_csv(f, grid, hc);
    }
    {
        std::ofstream f(out / "heatmap.svg");
        write_heatmap_svg(f, grid);
    }
    write_run_config(out, "heatmap", cfg);
    std::cerr << "heatmap " << grid.axis1.size() << "x" << grid.axis2.size() << " in " << seconds_since(t0) << " s\n";
    return 0;
}

int run_sweep(json cfg) {
    const fs::path out = output_dir(cfg);
    const fs::path data_dir = require_path(cfg, "/dataset");
    const Dataset ds = load_dataset(data_dir);
    TrainingData data = voxel_training_data(ds);
    const auto count = get_or<std::size_t>(cfg, "/count", data.count);
    if (count < 2 || count > data.count) throw ConfigError("/count: must be in [2, " + std::to_string(data.count) + "]");
    data.count = count;
    data.inputs.resize(count * data.input_dim);
    data.targets.resize(count * data.output_dim);

    TrainConfig base = voxel_train_config();
    try {
        base = train_config_from_json(cfg.value("train", json::object()), base);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("/train: ") + e.what());
    }
    if (cfg.contains("epochs")) base.epochs = get_or<std::size_t>(cfg, "/epochs", base.epochs);
    if (cfg.contains("seed")) base.seed = get_or<std::uint64_t>(cfg, "/seed", base.seed);
    base.validate();

    std::vector<std::size_t> dims = voxel_preset_dims(data.input_dim, data.output_dim);
    if (cfg.contains("hidden")) {
        const auto hidden = get_or<std::vector<std::size_t>>(cfg, "/hidden", {});
        dims.assign(1, data.input_dim);
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(data.output_dim);
    }
    SweepOptions so;
    so.repeats = get_or<std::size_t>(cfg, "/repeats", so.repeats);
    so.dropout = get_or<double>(cfg, "/dropout", so.dropout);
    so.plateau_window = get_or<std::size_t>(cfg, "/plateau_window", so.plateau_window);
    so.plateau_tolerance = get_or<double>(cfg, "/plateau_tolerance", so.plateau_tolerance);
    so.output_prior = get_or<double>(cfg, "/output_prior", 1.0 / static_cast<double>(data.output_dim));
    auto variants = hyperparameter_grid(base);
    const bool control = get_or<bool>(cfg, "/zero_lr_control", true);
    if (control) variants.push_back(zero_lr_control(base));
    cfg["count"] = count;
    cfg["train"] = to_json(base);
    cfg["layer_dims"] = dims;
    cfg["repeats"] = so.repeats;
    cfg["zero_lr_control"] = control;
    cfg["output_prior"] = so.output_prior;

    const auto t0 = std::chrono::steady_clock::now();
    const SweepResult res = sweep(variants, dims, data, so, [&](const SweepRun& r) {
        std::cerr << r.variant << " repeat " << r.repeat << ": final val " << r.history.val_loss.back()
                  << (r.plateau ? " (plateau)" : "") << '\n';
    });
    {
        std::ofstream f(out / "sweep.csv");
        res.write_csv(f);
    }
    json runs = json::array();
    for (const auto& r : res.runs) {
        runs.push_back({{"variant", r.variant},
                        {"repeat", r.repeat},
                        {"seed", r.seed},
                        {"plateau", r.plateau},
                        {"final_train_loss", r.history.train_loss.back()},
                        {"final_val_loss", r.history.val_loss.back()}});
    }
    write_json_file(out / "runs.json", runs);
    write_run_config(out, "sweep", cfg);
    std::cerr << "sweep of " << res.runs.size() << " runs in " << seconds_since(t0) << " s\n";
    return 0;
}

// ---------------------------------------------------------------- wiring

Command& add_command(CLI::App& app, std::vector<std::unique_ptr<Command>>& store, const std::string& name,
                     const std::string& description, std::vector<Flag> extra, CLI::App** sub_out) {
    auto cmd = std::make_unique<Command>();
    cmd->name = name;
    cmd->flags = {{"seed", "/seed", FlagType::integer, "master seed", ""},
                  {"out", "/out", FlagType::path, "output directory", ""},
                  {"threads", "/threads", FlagType::integer, "worker threads", ""},
                  {"mode", "/mode", FlagType::text, "voxel or neighborhood", ""}};
    for (auto& f : extra) cmd->flags.push_back(std::move(f));
    CLI::App* sub = app.add_subcommand(name, description);
    sub->add_option("--config", cmd->config_path, "JSON config file")->check(CLI::ExistingFile);
    for (auto& f : cmd->flags) sub->add_option("--" + f.name, f.value, f.help);
    *sub_out = sub;
    store.push_back(std::move(cmd));
    return *store.back();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-supervised fiber orientation estimation toolkit"};
    app.set_version_flag("--version", std::string("fiberlearn ") + kVersion + " (format " +
                                          std::to_string(kFormatVersion) + ")");
    app.require_subcommand(1);
    std::vector<std::unique_ptr<Command>> commands;
    std::map<std::string, CLI::App*> subs;
    CLI::App* sub = nullptr;

    add_command(app, commands, "dict", "build the sphere dictionary", {{"m", "/m", FlagType::integer, "atoms", ""}},
                &sub);
    subs["dict"] = sub;
    add_command(app, commands, "simulate", "generate a synthetic training set",
                {{"count", "/synth/count", FlagType::integer, "samples", ""},
                 {"layout", "/synth/layout", FlagType::text, "voxel or patch", ""},
                 {"dictionary", "/dictionary", FlagType::path, "dictionary.json", ""},
                 {"bvals", "/protocol/bvals", FlagType::path, "FSL bvals", ""},
                 {"bvecs", "/protocol/bvecs", FlagType::path, "FSL bvecs", ""}},
                &sub);
    subs["simulate"] = sub;
    add_command(app, commands, "train", "train a model on a dataset",
                {{"dataset", "/dataset", FlagType::path, "dataset directory", ""},
                 {"epochs", "/epochs", FlagType::integer, "epochs", ""}},
                &sub);
    subs["train"] = sub;
    const std::vector<Flag> volume_flags = {{"in", "/in", FlagType::path, "DW NIfTI volume", ""},
                                            {"bvals", "/bvals", FlagType::path, "FSL bvals", ""},
                                            {"bvecs", "/bvecs", FlagType::path, "FSL bvecs", ""},
                                            {"mask", "/mask", FlagType::path, "mask NIfTI", ""}};
    auto with = [](std::vector<Flag> a, const std::vector<Flag>& b) {
        a.insert(a.end(), b.begin(), b.end());
        return a;
    };
    add_command(app, commands, "predict", "predict coefficients for a volume",
                with({{"model", "/model", FlagType::path, "model directory", ""},
                      {"math", "/math", FlagType::text, "fast or batch_invariant", ""}},
                     volume_flags),
                &sub);
    subs["predict"] = sub;
    add_command(app, commands, "baseline-nnls", "NNLS baseline on a volume",
                with({{"model", "/model", FlagType::path, "model directory (for its dictionary)", ""},
                      {"dictionary", "/dictionary", FlagType::path, "dictionary.json", ""}},
                     volume_flags),
                &sub);
    subs["baseline-nnls"] = sub;
    add_command(app, commands, "eval", "compare the model and NNLS on synthetic crossings",
                {{"model", "/model", FlagType::path, "model directory", ""},
                 {"count", "/count", FlagType::integer, "test voxels", ""}},
                &sub);
    subs["eval"] = sub;
    add_command(app, commands, "heatmap", "crossing-angle EMD heatmap",
                                {{"model", "/model", FlagType::path, "model directory", ""},
                                 {"method", "/method", FlagType::text, "model or nnls", ""},
                                 {"snr", "/snr", FlagType::real, "noise level", ""},
                                 {"k-noise", "/k_noise", FlagType::integer, "realizations per cell", ""}},
                                &sub);
    std::string grid_arg;
    sub->add_option("--grid", grid_arg, "'default' or a grid JSON file");
    subs["heatmap"] = sub;
    add_command(app, commands, "sweep", "hyperparameter sweep",
                {{"dataset", "/dataset", FlagType::path, "dataset directory", ""},
                 {"epochs", "/epochs", FlagType::integer, "epochs", ""},
                 {"repeats", "/repeats", FlagType::integer, "repeats per variant", ""},
                 {"count", "/count", FlagType::integer, "samples used", ""}},
                &sub);
    subs["sweep"] = sub;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    for (const auto& cmd : commands) {
        if (!subs[cmd->name]->parsed()) continue;
        try {
            json cfg = resolved_config(*cmd);
            if (cmd->name == "dict") return run_dict(std::move(cfg));
            if (cmd->name == "simulate") return run_simulate(std::move(cfg));
            if (cmd->name == "train") return run_train(std::move(cfg));
            if (cmd->name == "predict") return run_predict(std::move(cfg));
            if (cmd->name == "baseline-nnls") return run_baseline_nnls(std::move(cfg));
            if (cmd->name == "eval") return run_eval(std::move(cfg));
            if (cmd->name == "heatmap") {
                bool grid_default = false;
                if (!grid_arg.empty()) {
                    if (grid_arg == "default") {
                        grid_default = true;
                    } else {
                        cfg["grid"] = fs::absolute(grid_arg).string();
                    }
                }
                return run_heatmap(std::move(cfg), grid_default);
            }
            if (cmd->name == "sweep") return run_sweep(std::move(cfg));
        } catch (const ConfigError& e) {
            std::cerr << "config error: " << e.what() << '\n';
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << '\n';
            return 1;
        }
    }
    return 2;
}
