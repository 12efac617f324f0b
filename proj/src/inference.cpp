#include "fiberlearn/inference.hpp"

#include <algorithm>
#include <ostream>

#include "fiberlearn/parallel.hpp"

namespace fiberlearn {

void PredictionRequest::validate() const {
    if (!model || !input) throw ConfigError("prediction request needs a model and an input volume");
    model->validate();
    const std::size_t c = input->channels();
    const std::size_t in = model->input_dim();
    const std::size_t expected = mode == ModelMode::voxel ? c : kPatchVoxels * c;
    if (in != expected) {
        throw ConfigError("input volume has " + std::to_string(c) + " channels but the " +
                          std::string(to_string(mode)) + " model expects " + std::to_string(in) + " inputs");
    }
    if (manifest) {
        if (manifest->layer_dims != model->layer_dims()) throw ConfigError("manifest does not describe this model");
        if (manifest->signal_length != c) {
            throw ConfigError("volume has " + std::to_string(c) + " channels but the model was trained on " +
                              std::to_string(manifest->signal_length));
        }
    }
    if (mask && mask->size() != input->voxel_count()) throw ConfigError("mask size does not match the volume");
}

namespace {

void finish_outputs(const MlpModel& model, MatrixT<float>& out) {
    if (model.layers.back().activation == Activation::tanh) out = out.cwiseMax(0.0f);
}

struct Job {
    std::size_t partition;
    std::size_t begin;
    std::size_t end;
};

}  // namespace

Volume4D predict_voxelwise(const PredictionRequest& req, const InferenceOptions& options) {
    if (req.mode != ModelMode::voxel) throw ConfigError("predict_voxelwise needs a voxel-mode request");
    req.validate();
    const Volume4D& vol = *req.input;
    const MlpModel& model = *req.model;
    const std::size_t n = vol.channels();
    const std::size_t m = model.output_dim();
    Volume4D out(vol.nx(), vol.ny(), vol.nz(), m);
    out.voxel_size = vol.voxel_size;

    std::vector<std::size_t> voxels;
    voxels.reserve(vol.voxel_count());
    for (std::size_t v = 0; v < vol.voxel_count(); ++v) {
        if (!req.mask || (*req.mask)[v]) voxels.push_back(v);
    }
    const std::size_t cap = std::max<std::size_t>(1, options.max_batch_voxels);
    const std::size_t n_jobs = (voxels.size() + cap - 1) / cap;
    parallel_for(n_jobs, options.threads, [&](std::size_t jb, std::size_t je) {
        for (std::size_t job = jb; job < je; ++job) {
            const std::size_t b = job * cap;
            const std::size_t e = std::min(voxels.size(), b + cap);
            MatrixT<float> x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(e - b));
            for (std::size_t i = b; i < e; ++i) {
                std::copy_n(vol.voxel(voxels[i]), n, x.col(static_cast<Eigen::Index>(i - b)).data());
            }
            MatrixT<float> y = forward(model, x, false, nullptr, nullptr, options.math);
            finish_outputs(model, y);
            for (std::size_t i = b; i < e; ++i) {
                std::copy_n(y.col(static_cast<Eigen::Index>(i - b)).data(), m, out.voxel(voxels[i]));
            }
        }
    });
    return out;
}

Eigen::MatrixXf predict_signals(const MlpModel& model, ModelMode mode, const Eigen::MatrixXf& signals,
                                const InferenceOptions& options) {
    const std::size_t n = static_cast<std::size_t>(signals.rows());
    const std::size_t in = mode == ModelMode::voxel ? n : kPatchVoxels * n;
    if (model.input_dim() != in) {
        throw ConfigError("signals have " + std::to_string(n) + " channels but the " + std::string(to_string(mode)) +
                          " model expects " + std::to_string(model.input_dim()) + " inputs");
    }
    const std::size_t count = static_cast<std::size_t>(signals.cols());
    Eigen::MatrixXf out(static_cast<Eigen::Index>(model.output_dim()), signals.cols());
    const std::size_t cap = std::max<std::size_t>(1, options.max_batch_voxels);
    const std::size_t n_jobs = (count + cap - 1) / cap;
    parallel_for(n_jobs, options.threads, [&](std::size_t jb, std::size_t je) {
        for (std::size_t job = jb; job < je; ++job) {
            const auto b = static_cast<Eigen::Index>(job * cap);
            const auto w = static_cast<Eigen::Index>(std::min(count, job * cap + cap)) - b;
            MatrixT<float> x;
            if (mode == ModelMode::voxel) {
                x = signals.middleCols(b, w);
            } else {
                x.resize(static_cast<Eigen::Index>(in), w);
                for (std::size_t p = 0; p < kPatchVoxels; ++p) {
                    x.middleRows(static_cast<Eigen::Index>(p * n), static_cast<Eigen::Index>(n)) = signals.middleCols(b, w);
                }
            }
            MatrixT<float> y = forward(model, x, false, nullptr, nullptr, options.math);
            finish_outputs(model, y);
            out.middleCols(b, w) = y;
        }
    });
    return out;
}

std::vector<std::vector<Index3>> strided_partitions(const Index3& dims) {
    std::vector<std::vector<Index3>> parts(27);
    for (std::size_t i = 0; i < dims[0]; ++i)
        for (std::size_t j = 0; j < dims[1]; ++j)
            for (std::size_t k = 0; k < dims[2]; ++k) parts[(i % 3) * 9 + (j % 3) * 3 + (k % 3)].push_back({i, j, k});
    return parts;
}

Volume4D zero_pad(const Volume4D& vol) {
    const std::size_t c = vol.channels();
    Volume4D padded(vol.nx() + 2, vol.ny() + 2, vol.nz() + 2, c);
    padded.voxel_size = vol.voxel_size;
    for (std::size_t x = 0; x < vol.nx(); ++x)
        for (std::size_t y = 0; y < vol.ny(); ++y)
            std::copy_n(vol.voxel(x, y, 0), vol.nz() * c, padded.voxel(x + 1, y + 1, 1));
    return padded;
}

void gather_patch(const Volume4D& padded, std::size_t x, std::size_t y, std::size_t z, float* dst) {
    const std::size_t c = padded.channels();
    // Centre (x, y, z) of the unpadded grid sits at (x+1, y+1, z+1); its patch
    // spans padded offsets x..x+2 etc. The three z voxels are contiguous.
    for (std::size_t dx = 0; dx < 3; ++dx) {
        for (std::size_t dy = 0; dy < 3; ++dy) {
            std::copy_n(padded.voxel(x + dx, y + dy, z), 3 * c, dst);
            dst += 3 * c;
        }
    }
}

Volume4D predict_neighborhood(const PredictionRequest& req, const InferenceOptions& options) {
    if (req.mode != ModelMode::neighborhood) throw ConfigError("predict_neighborhood needs a neighborhood request");
    req.validate();
    const Volume4D& vol = *req.input;
    const MlpModel& model = *req.model;
    const std::size_t n = vol.channels();
    const std::size_t in = kPatchVoxels * n;
    const std::size_t m = model.output_dim();
    const Volume4D padded = zero_pad(vol);
    Volume4D out(vol.nx(), vol.ny(), vol.nz(), m);
    out.voxel_size = vol.voxel_size;

    auto parts = strided_partitions({vol.nx(), vol.ny(), vol.nz()});
    if (req.mask) {
        for (auto& p : parts) {
            std::erase_if(p, [&](const Index3& v) { return !(*req.mask)[vol.voxel_index(v[0], v[1], v[2])]; });
        }
    }
    const std::size_t cap = std::max<std::size_t>(1, options.max_batch_voxels);
    std::vector<Job> jobs;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        for (std::size_t b = 0; b < parts[p].size(); b += cap) jobs.push_back({p, b, std::min(parts[p].size(), b + cap)});
    }
    parallel_for(jobs.size(), options.threads, [&](std::size_t jb, std::size_t je) {
        for (std::size_t j = jb; j < je; ++j) {
            const Job& job = jobs[j];
            const auto& centers = parts[job.partition];
            MatrixT<float> x(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(job.end - job.begin));
            for (std::size_t i = job.begin; i < job.end; ++i) {
                const auto& c = centers[i];
                gather_patch(padded, c[0], c[1], c[2], x.col(static_cast<Eigen::Index>(i - job.begin)).data());
            }
            MatrixT<float> y = forward(model, x, false, nullptr, nullptr, options.math);
            finish_outputs(model, y);
            for (std::size_t i = job.begin; i < job.end; ++i) {
                const auto& c = centers[i];
                std::copy_n(y.col(static_cast<Eigen::Index>(i - job.begin)).data(), m, out.voxel(c[0], c[1], c[2]));
            }
        }
    });
    return out;
}

Volume4D predict(const PredictionRequest& req, const InferenceOptions& options) {
    return req.mode == ModelMode::voxel ? predict_voxelwise(req, options) : predict_neighborhood(req, options);
}

void write_peaks(std::ostream& out, const Volume4D& coeffs, const SphereDictionary& dict, const VoxelMask* mask,
                 const PeakOptions& options) {
    if (coeffs.channels() != dict.size()) throw ConfigError("coefficient volume does not match the dictionary");
    out << "# x y z count (dx dy dz weight)*\n";
    const auto flags = out.flags();
    for (std::size_t x = 0; x < coeffs.nx(); ++x) {
        for (std::size_t y = 0; y < coeffs.ny(); ++y) {
            for (std::size_t z = 0; z < coeffs.nz(); ++z) {
                const std::size_t v = coeffs.voxel_index(x, y, z);
                if (mask && !(*mask)[v]) continue;
                const auto peaks = extract_peaks(dict, std::span<const float>(coeffs.voxel(v), dict.size()), options);
                if (peaks.peaks.empty()) continue;
                out << x << ' ' << y << ' ' << z << ' ' << peaks.peaks.size();
                for (const auto& p : peaks.peaks) {
                    out << ' ' << p.direction.x() << ' ' << p.direction.y() << ' ' << p.direction.z() << ' '
                        << p.weight;
                }
                out << '\n';
            }
        }
    }
    out.flags(flags);
}

}  // namespace fiberlearn
