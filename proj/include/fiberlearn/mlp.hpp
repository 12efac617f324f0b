#pragma once

// Dense multilayer perceptron: forward pass, reverse-mode gradients, dropout,
// MSE/MAE losses, Adam and RMSprop. Templated on the scalar type so the float
// training path and the double gradient-check path share one implementation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

#include "fiberlearn/common.hpp"
#include "fiberlearn/parallel.hpp"

namespace fiberlearn {

enum class Activation { relu, sigmoid, tanh, linear };
enum class LossKind { mse, mae };
enum class OptimizerKind { adam, rmsprop };

/// How affine maps are evaluated. batch_invariant computes every output
/// column with the same instruction sequence regardless of batch size, so a
/// sample's result does not depend on which batch it travels in.
enum class MathMode { fast, batch_invariant };

const char* to_string(Activation a);
const char* to_string(LossKind l);
const char* to_string(OptimizerKind o);
Activation parse_activation(const std::string& s);
LossKind parse_loss(const std::string& s);
OptimizerKind parse_optimizer(const std::string& s);

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct DenseLayer {
    MatrixT<Scalar> weights;  // out x in
    VectorT<Scalar> bias;     // out
    Activation activation = Activation::relu;

    std::size_t inputs() const { return static_cast<std::size_t>(weights.cols()); }
    std::size_t outputs() const { return static_cast<std::size_t>(weights.rows()); }
};

/// Layers in order; dropout (inverted, train mode only) is applied to the
/// input of the final layer.
template <typename Scalar>
struct BasicMlp {
    std::vector<DenseLayer<Scalar>> layers;
    double dropout_rate = 0.0;

    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().inputs(); }
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().outputs(); }

    std::vector<std::size_t> layer_dims() const {
        std::vector<std::size_t> dims;
        if (layers.empty()) return dims;
        dims.push_back(input_dim());
        for (const auto& l : layers) dims.push_back(l.outputs());
        return dims;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
        return n;
    }

    void validate() const {
        if (layers.empty()) throw ConfigError("model has no layers");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.bias.size() != l.weights.rows()) throw ConfigError("bias length does not match layer width");
            if (i > 0 && l.inputs() != layers[i - 1].outputs()) {
                throw ConfigError("layer " + std::to_string(i) + " input does not chain with previous output");
            }
            if (!l.weights.allFinite() || !l.bias.allFinite()) {
                throw ConfigError("layer " + std::to_string(i) + " has non-finite parameters");
            }
        }
    }

    template <typename Other>
    BasicMlp<Other> cast() const {
        BasicMlp<Other> out;
        out.dropout_rate = dropout_rate;
        for (const auto& l : layers) {
            out.layers.push_back({l.weights.template cast<Other>(), l.bias.template cast<Other>(), l.activation});
        }
        return out;
    }
};

using MlpModel = BasicMlp<float>;

/// Uniform(-sqrt(6/fan_in), sqrt(6/fan_in)) weights, zero biases.
template <typename Scalar = float>
BasicMlp<Scalar> init_model(const std::vector<std::size_t>& layer_dims, Activation hidden = Activation::relu,
                            Activation output = Activation::sigmoid, double dropout = 0.2,
                            std::uint64_t seed = 0) {
    if (layer_dims.size() < 2) throw ConfigError("a model needs at least two layer dimensions");
    for (auto d : layer_dims) {
        if (d == 0) throw ConfigError("layer dimensions must be positive");
    }
    BasicMlp<Scalar> model;
    model.dropout_rate = dropout;
    Rng rng = child_rng(seed, 0x6d6c70);
    for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
        const auto in = static_cast<Eigen::Index>(layer_dims[i]);
        const auto out = static_cast<Eigen::Index>(layer_dims[i + 1]);
        const double limit = std::sqrt(6.0 / static_cast<double>(in));
        std::uniform_real_distribution<double> u(-limit, limit);
        DenseLayer<Scalar> layer;
        layer.weights.resize(out, in);
        for (Eigen::Index c = 0; c < in; ++c)
            for (Eigen::Index r = 0; r < out; ++r) layer.weights(r, c) = static_cast<Scalar>(u(rng));
        layer.bias = VectorT<Scalar>::Zero(out);
        layer.activation = (i + 2 == layer_dims.size()) ? output : hidden;
        model.layers.push_back(std::move(layer));
    }
    model.validate();
    return model;
}

/// Sets the final bias so that, with zero incoming signal, every output starts
/// at `value` (e.g. 1/m for labels summing to one).
template <typename Scalar>
void set_output_prior(BasicMlp<Scalar>& model, double value) {
    if (model.layers.empty()) throw ConfigError("model has no layers");
    auto& last = model.layers.back();
    double b = value;
    switch (last.activation) {
        case Activation::sigmoid:
            if (!(value > 0.0 && value < 1.0)) throw ConfigError("sigmoid output prior must lie in (0, 1)");
            b = std::log(value / (1.0 - value));
            break;
        case Activation::tanh:
            if (!(value > -1.0 && value < 1.0)) throw ConfigError("tanh output prior must lie in (-1, 1)");
            b = std::atanh(value);
            break;
        case Activation::relu:
            if (value < 0.0) throw ConfigError("relu output prior must be non-negative");
            break;
        case Activation::linear:
            break;
    }
    last.bias.setConstant(static_cast<Scalar>(b));
}

namespace detail {

template <typename Scalar>
void apply_activation(Activation act, Eigen::Ref<MatrixT<Scalar>> z) {
    // Column by column so each sample sees the same vectorization boundaries.
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        auto col = z.col(j).array();
        switch (act) {
            case Activation::relu: col = col.max(Scalar(0)); break;
            case Activation::sigmoid: col = Scalar(1) / (Scalar(1) + (-col).exp()); break;
            case Activation::tanh: col = col.tanh(); break;
            case Activation::linear: break;
        }
    }
}

// d(act)/dz expressed through the activation output a.
template <typename Scalar>
void multiply_activation_derivative(Activation act, const MatrixT<Scalar>& a, MatrixT<Scalar>& grad) {
    switch (act) {
        case Activation::relu: grad.array() *= (a.array() > Scalar(0)).template cast<Scalar>(); break;
        case Activation::sigmoid: grad.array() *= a.array() * (Scalar(1) - a.array()); break;
        case Activation::tanh: grad.array() *= Scalar(1) - a.array().square(); break;
        case Activation::linear: break;
    }
}

// y = W x + b with a fixed per-element accumulation order over the input index.
template <typename Scalar>
void batch_invariant_affine(const MatrixT<Scalar>& w, const VectorT<Scalar>& b,
                            const Eigen::Ref<const MatrixT<std::type_identity_t<Scalar>>>& x, MatrixT<Scalar>& y) {
    const Eigen::Index out = w.rows();
    const Eigen::Index in = w.cols();
    const Eigen::Index batch = x.cols();
    y.resize(out, batch);
    const Scalar* bias = b.data();
    Eigen::Index j = 0;
    for (; j + 4 <= batch; j += 4) {
        Scalar* y0 = y.col(j).data();
        Scalar* y1 = y.col(j + 1).data();
        Scalar* y2 = y.col(j + 2).data();
        Scalar* y3 = y.col(j + 3).data();
        for (Eigen::Index i = 0; i < out; ++i) y0[i] = y1[i] = y2[i] = y3[i] = bias[i];
        for (Eigen::Index k = 0; k < in; ++k) {
            const Scalar* wk = w.col(k).data();
            const Scalar x0 = x(k, j), x1 = x(k, j + 1), x2 = x(k, j + 2), x3 = x(k, j + 3);
            for (Eigen::Index i = 0; i < out; ++i) {
                const Scalar wi = wk[i];
                y0[i] = std::fma(wi, x0, y0[i]);
                y1[i] = std::fma(wi, x1, y1[i]);
                y2[i] = std::fma(wi, x2, y2[i]);
                y3[i] = std::fma(wi, x3, y3[i]);
            }
        }
    }
    for (; j < batch; ++j) {
        Scalar* y0 = y.col(j).data();
        for (Eigen::Index i = 0; i < out; ++i) y0[i] = bias[i];
        for (Eigen::Index k = 0; k < in; ++k) {
            const Scalar* wk = w.col(k).data();
            const Scalar x0 = x(k, j);
            for (Eigen::Index i = 0; i < out; ++i) y0[i] = std::fma(wk[i], x0, y0[i]);
        }
    }
}

}  // namespace detail

/// Activations kept by a training-mode forward pass for backpropagation.
template <typename Scalar>
struct ForwardCache {
    MatrixT<Scalar> input;
    std::vector<MatrixT<Scalar>> outputs;  // post-activation output of each layer
    MatrixT<Scalar> dropout_scale;         // 0 or 1/(1-p) per element of the final layer's input
    MatrixT<Scalar> dropped;               // final layer input after dropout
};

/// Columns of `input` are samples (in x B). Returns out x B. Dropout is only
/// active when `train_mode` is set, which also requires `rng`.
template <typename Scalar>
MatrixT<Scalar> forward(const BasicMlp<Scalar>& model, const Eigen::Ref<const MatrixT<std::type_identity_t<Scalar>>>& input,
                        bool train_mode = false, Rng* rng = nullptr, ForwardCache<std::type_identity_t<Scalar>>* cache = nullptr,
                        MathMode mode = MathMode::fast) {
    if (static_cast<std::size_t>(input.rows()) != model.input_dim()) {
        throw ConfigError("input width " + std::to_string(input.rows()) + " does not match model input " +
                          std::to_string(model.input_dim()));
    }
    const bool use_dropout = train_mode && model.dropout_rate > 0.0;
    if (use_dropout && rng == nullptr) throw ConfigError("train-mode dropout needs a random generator");
    if (cache) {
        cache->input = input;
        cache->outputs.clear();
        cache->dropout_scale.resize(0, 0);
        cache->dropped.resize(0, 0);
    }
    MatrixT<Scalar> current;
    const std::size_t n_layers = model.layers.size();
    for (std::size_t li = 0; li < n_layers; ++li) {
        const auto& layer = model.layers[li];
        const bool last = li + 1 == n_layers;
        const MatrixT<Scalar>* source_ptr = nullptr;
        MatrixT<Scalar> dropped;
        if (last && use_dropout) {
            const Eigen::Ref<const MatrixT<Scalar>> prev =
                li == 0 ? input : Eigen::Ref<const MatrixT<Scalar>>(current);
            const Scalar keep_scale = Scalar(1.0 / (1.0 - model.dropout_rate));
            std::bernoulli_distribution drop(model.dropout_rate);
            MatrixT<Scalar> scale(prev.rows(), prev.cols());
            for (Eigen::Index c = 0; c < scale.cols(); ++c)
                for (Eigen::Index r = 0; r < scale.rows(); ++r) scale(r, c) = drop(*rng) ? Scalar(0) : keep_scale;
            dropped = prev.cwiseProduct(scale);
            if (cache) {
                cache->dropout_scale = scale;
                cache->dropped = dropped;
            }
            source_ptr = &dropped;
        }
        MatrixT<Scalar> z;
        if (source_ptr) {
            if (mode == MathMode::batch_invariant) {
                detail::batch_invariant_affine<Scalar>(layer.weights, layer.bias, *source_ptr, z);
            } else {
                z.noalias() = layer.weights * *source_ptr;
                z.colwise() += layer.bias;
            }
        } else if (li == 0) {
            if (mode == MathMode::batch_invariant) {
                detail::batch_invariant_affine<Scalar>(layer.weights, layer.bias, input, z);
            } else {
                z.noalias() = layer.weights * input;
                z.colwise() += layer.bias;
            }
        } else {
            if (mode == MathMode::batch_invariant) {
                detail::batch_invariant_affine<Scalar>(layer.weights, layer.bias, current, z);
            } else {
                z.noalias() = layer.weights * current;
                z.colwise() += layer.bias;
            }
        }
        detail::apply_activation<Scalar>(layer.activation, z);
        current = std::move(z);
        if (cache) cache->outputs.push_back(current);
    }
    return current;
}

template <typename Scalar>
struct Gradients {
    std::vector<MatrixT<Scalar>> weights;
    std::vector<VectorT<Scalar>> biases;
};

/// Mean over batch and output entries of squared (mse) or absolute (mae) error.
template <typename Scalar>
double loss_value(LossKind kind, const MatrixT<Scalar>& output, const Eigen::Ref<const MatrixT<std::type_identity_t<Scalar>>>& targets) {
    const auto diff = (output - targets).array().template cast<double>();
    const double count = static_cast<double>(output.size());
    return kind == LossKind::mse ? diff.square().sum() / count : diff.abs().sum() / count;
}

/// Backpropagates through the pass recorded in `cache`.
template <typename Scalar>
Gradients<Scalar> backward(const BasicMlp<Scalar>& model, const ForwardCache<Scalar>& cache,
                           const Eigen::Ref<const MatrixT<std::type_identity_t<Scalar>>>& targets, LossKind kind) {
    const std::size_t n_layers = model.layers.size();
    const MatrixT<Scalar>& out = cache.outputs.back();
    const Scalar inv_count = Scalar(1.0 / static_cast<double>(out.size()));
    MatrixT<Scalar> delta;
    if (kind == LossKind::mse) {
        delta = (Scalar(2) * inv_count) * (out - targets);
    } else {
        delta = ((out - targets).array().sign() * inv_count).matrix();
    }

    Gradients<Scalar> g;
    g.weights.resize(n_layers);
    g.biases.resize(n_layers);
    for (std::size_t li = n_layers; li-- > 0;) {
        const auto& layer = model.layers[li];
        detail::multiply_activation_derivative<Scalar>(layer.activation, cache.outputs[li], delta);
        const bool last = li + 1 == n_layers;
        const bool dropped = last && cache.dropout_scale.size() > 0;
        const MatrixT<Scalar>& layer_input =
            dropped ? cache.dropped : (li == 0 ? cache.input : cache.outputs[li - 1]);
        g.weights[li].noalias() = delta * layer_input.transpose();
        g.biases[li] = delta.rowwise().sum();
        if (li == 0) break;
        MatrixT<Scalar> upstream;
        upstream.noalias() = layer.weights.transpose() * delta;
        if (dropped) upstream.array() *= cache.dropout_scale.array();
        delta = std::move(upstream);
    }
    return g;
}

/// Training-mode forward pass plus gradients. Returns the loss.
template <typename Scalar>
double loss_and_grad(const BasicMlp<Scalar>& model, const Eigen::Ref<const MatrixT<std::type_identity_t<Scalar>>>& batch,
                     const Eigen::Ref<const MatrixT<std::type_identity_t<Scalar>>>& targets, LossKind kind, Rng& rng,
                     Gradients<Scalar>& grads) {
    if (targets.rows() != static_cast<Eigen::Index>(model.output_dim()) || targets.cols() != batch.cols()) {
        throw ConfigError("target shape does not match model output and batch");
    }
    ForwardCache<Scalar> cache;
    const MatrixT<Scalar> out = forward(model, batch, true, &rng, &cache);
    grads = backward(model, cache, targets, kind);
    return loss_value<Scalar>(kind, out, targets);
}

struct GradientCheckResult {
    double max_relative_error = 0.0;
    std::size_t parameters = 0;
};

/// Compares backpropagated gradients against central differences for every
/// parameter. The dropout mask is frozen by replaying the same generator.
/// Relative error is |g - fd| / max(|g|, |fd|, floor).
inline GradientCheckResult gradient_check(const BasicMlp<double>& model, const MatrixT<double>& batch,
                                          const MatrixT<double>& targets, LossKind kind, std::uint64_t seed,
                                          double h = 1e-4, double floor = 1e-7) {
    const Rng base(seed);
    Rng rng = base;
    Gradients<double> grads;
    loss_and_grad(model, batch, targets, kind, rng, grads);
    BasicMlp<double> probe = model;
    auto eval = [&]() {
        Rng r = base;
        ForwardCache<double> cache;
        const MatrixT<double> out = forward(probe, batch, true, &r, &cache);
        return loss_value<double>(kind, out, targets);
    };
    GradientCheckResult res;
    auto check = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + h;
        const double up = eval();
        param = saved - h;
        const double down = eval();
        param = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
        res.max_relative_error = std::max(res.max_relative_error, std::abs(analytic - numeric) / scale);
        ++res.parameters;
    };
    for (std::size_t li = 0; li < probe.layers.size(); ++li) {
        auto& layer = probe.layers[li];
        for (Eigen::Index i = 0; i < layer.weights.size(); ++i) check(layer.weights.data()[i], grads.weights[li].data()[i]);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) check(layer.bias[i], grads.biases[li][i]);
    }
    return res;
}

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

template <typename Scalar>
struct AdamState {
    std::vector<Scalar> m;
    std::vector<Scalar> v;
    std::int64_t step = 0;
};

/// One bias-corrected Adam update. lr_t already includes any decay schedule.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, std::span<Scalar> params, std::span<const Scalar> grads, double lr_t,
               const AdamHyper& h = {}) {
    if (params.size() != grads.size()) throw ConfigError("parameter and gradient sizes differ");
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), Scalar(0));
        state.v.assign(params.size(), Scalar(0));
    }
    ++state.step;
    const auto b1 = static_cast<Scalar>(h.beta1);
    const auto b2 = static_cast<Scalar>(h.beta2);
    const auto c1 = static_cast<Scalar>(1.0 / (1.0 - std::pow(h.beta1, static_cast<double>(state.step))));
    const auto c2 = static_cast<Scalar>(1.0 / (1.0 - std::pow(h.beta2, static_cast<double>(state.step))));
    const auto lr = static_cast<Scalar>(lr_t);
    const auto eps = static_cast<Scalar>(h.epsilon);
    Scalar* m = state.m.data();
    Scalar* v = state.v.data();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Scalar g = grads[i];
        m[i] = b1 * m[i] + (Scalar(1) - b1) * g;
        v[i] = b2 * v[i] + (Scalar(1) - b2) * g * g;
        params[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
}

struct RmspropHyper {
    double rho = 0.9;
    double epsilon = 1e-8;
};

template <typename Scalar>
struct RmspropState {
    std::vector<Scalar> v;
};

/// v <- rho v + (1 - rho) g^2;  w <- w - lr g / (sqrt(v) + eps).
template <typename Scalar>
void rmsprop_step(RmspropState<Scalar>& state, std::span<Scalar> params, std::span<const Scalar> grads,
                  double lr, const RmspropHyper& h = {}) {
    if (params.size() != grads.size()) throw ConfigError("parameter and gradient sizes differ");
    if (state.v.size() != params.size()) state.v.assign(params.size(), Scalar(0));
    const auto rho = static_cast<Scalar>(h.rho);
    const auto lr_s = static_cast<Scalar>(lr);
    const auto eps = static_cast<Scalar>(h.epsilon);
    Scalar* v = state.v.data();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Scalar g = grads[i];
        v[i] = rho * v[i] + (Scalar(1) - rho) * g * g;
        params[i] -= lr_s * g / (std::sqrt(v[i]) + eps);
    }
}

/// Applies one optimizer step to every weight and bias tensor of a model.
/// Learning rate follows lr / (1 + decay * iteration), iteration counted from 0.
template <typename Scalar>
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate, double decay)
        : kind_(kind), learning_rate_(learning_rate), decay_(decay) {
        if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be non-negative");
        if (!(decay >= 0.0)) throw ConfigError("learning-rate decay must be non-negative");
    }

    double current_rate() const { return learning_rate_ / (1.0 + decay_ * static_cast<double>(iteration_)); }
    std::int64_t iteration() const { return iteration_; }

    void step(BasicMlp<Scalar>& model, const Gradients<Scalar>& grads) {
        const std::size_t tensors = 2 * model.layers.size();
        if (adam_.size() != tensors) {
            adam_.assign(tensors, {});
            rms_.assign(tensors, {});
        }
        const double lr_t = current_rate();
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            auto& layer = model.layers[li];
            update(2 * li, std::span<Scalar>(layer.weights.data(), static_cast<std::size_t>(layer.weights.size())),
                   std::span<const Scalar>(grads.weights[li].data(), static_cast<std::size_t>(grads.weights[li].size())),
                   lr_t);
            update(2 * li + 1, std::span<Scalar>(layer.bias.data(), static_cast<std::size_t>(layer.bias.size())),
                   std::span<const Scalar>(grads.biases[li].data(), static_cast<std::size_t>(grads.biases[li].size())),
                   lr_t);
        }
        ++iteration_;
    }

private:
    void update(std::size_t slot, std::span<Scalar> p, std::span<const Scalar> g, double lr_t) {
        if (kind_ == OptimizerKind::adam) {
            adam_step(adam_[slot], p, g, lr_t);
        } else {
            rmsprop_step(rms_[slot], p, g, lr_t);
        }
    }

    OptimizerKind kind_;
    double learning_rate_;
    double decay_;
    std::int64_t iteration_ = 0;
    std::vector<AdamState<Scalar>> adam_;
    std::vector<RmspropState<Scalar>> rms_;
};

}  // namespace fiberlearn
