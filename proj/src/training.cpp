#include "fiberlearn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

namespace fiberlearn {

const char* to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::sigmoid: return "sigmoid";
        case Activation::tanh: return "tanh";
        case Activation::linear: return "linear";
    }
    return "?";
}

const char* to_string(LossKind l) { return l == LossKind::mse ? "mse" : "mae"; }
const char* to_string(OptimizerKind o) { return o == OptimizerKind::adam ? "adam" : "rmsprop"; }

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "tanh") return Activation::tanh;
    if (s == "linear") return Activation::linear;
    throw ConfigError("unknown activation tag '" + s + "'");
}

LossKind parse_loss(const std::string& s) {
    if (s == "mse") return LossKind::mse;
    if (s == "mae") return LossKind::mae;
    throw ConfigError("unknown loss '" + s + "'");
}

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerKind::adam;
    if (s == "rmsprop") return OptimizerKind::rmsprop;
    throw ConfigError("unknown optimizer '" + s + "'");
}

void TrainingData::validate() const {
    if (count == 0 || input_dim == 0 || output_dim == 0) throw ConfigError("training data is empty");
    if (inputs.size() != count * input_dim || targets.size() != count * output_dim) {
        throw ConfigError("training data buffers do not match count and dimensions");
    }
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be finite and non-negative");
    }
    if (!(lr_decay >= 0.0)) throw ConfigError("lr_decay must be non-negative");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw ConfigError("validation_fraction must be in [0, 1)");
    }
}

std::vector<std::size_t> voxel_preset_dims(std::size_t n, std::size_t m) {
    return {n, 512, 512, 512, 256, 256, m};
}

std::vector<std::size_t> neighborhood_preset_dims(std::size_t n, std::size_t m) {
    return {27 * n, 2048, 1024, 1024, 512, 512, m};
}

TrainConfig voxel_train_config() {
    TrainConfig cfg;
    cfg.learning_rate = 1e-4;
    cfg.lr_decay = 1e-6;
    return cfg;
}

TrainConfig neighborhood_train_config() {
    TrainConfig cfg;
    cfg.learning_rate = 1e-5;
    cfg.lr_decay = 1e-6;
    return cfg;
}

double evaluate_loss(const MlpModel& model, const TrainingData& data, std::size_t begin, std::size_t end,
                     LossKind kind) {
    if (end <= begin) return std::numeric_limits<double>::quiet_NaN();
    constexpr std::size_t chunk = 4096;
    double total = 0.0;
    for (std::size_t s = begin; s < end; s += chunk) {
        const std::size_t e = std::min(end, s + chunk);
        const auto cols = static_cast<Eigen::Index>(e - s);
        Eigen::Map<const MatrixT<float>> x(data.inputs.data() + s * data.input_dim,
                                           static_cast<Eigen::Index>(data.input_dim), cols);
        Eigen::Map<const MatrixT<float>> y(data.targets.data() + s * data.output_dim,
                                           static_cast<Eigen::Index>(data.output_dim), cols);
        const MatrixT<float> out = forward(model, x);
        total += loss_value<float>(kind, out, y) * static_cast<double>(e - s);
    }
    return total / static_cast<double>(end - begin);
}

TrainHistory train(MlpModel& model, const TrainingData& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
    cfg.validate();
    data.validate();
    model.validate();
    if (data.input_dim != model.input_dim() || data.output_dim != model.output_dim()) {
        throw ConfigError("dataset dimensions (" + std::to_string(data.input_dim) + " -> " +
                          std::to_string(data.output_dim) + ") do not match the model (" +
                          std::to_string(model.input_dim()) + " -> " + std::to_string(model.output_dim()) + ")");
    }
    const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(data.count)));
    const std::size_t n_train = data.count - n_val;
    if (n_train == 0) throw ConfigError("validation split leaves no training samples");

    Optimizer<float> optimizer(cfg.optimizer, cfg.learning_rate, cfg.lr_decay);
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    Rng dropout_rng = child_rng(cfg.seed, 0xd50);
    const auto in_dim = static_cast<Eigen::Index>(data.input_dim);
    const auto out_dim = static_cast<Eigen::Index>(data.output_dim);
    MatrixT<float> xb(in_dim, static_cast<Eigen::Index>(cfg.batch_size));
    MatrixT<float> yb(out_dim, static_cast<Eigen::Index>(cfg.batch_size));
    Gradients<float> grads;

    TrainHistory history;
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = child_rng(cfg.seed, 0x5f0000 + epoch);
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t s = 0; s < n_train; s += cfg.batch_size, ++batch_index) {
            const std::size_t e = std::min(n_train, s + cfg.batch_size);
            const auto cols = static_cast<Eigen::Index>(e - s);
            if (xb.cols() != cols) {
                xb.resize(in_dim, cols);
                yb.resize(out_dim, cols);
            }
            for (std::size_t k = s; k < e; ++k) {
                const auto col = static_cast<Eigen::Index>(k - s);
                std::copy_n(data.inputs.data() + order[k] * data.input_dim, data.input_dim, xb.col(col).data());
                std::copy_n(data.targets.data() + order[k] * data.output_dim, data.output_dim, yb.col(col).data());
            }
            const double loss = loss_and_grad<float>(model, xb, yb, cfg.loss, dropout_rng, grads);
            if (!std::isfinite(loss)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                    std::to_string(batch_index));
            }
            epoch_loss += loss * static_cast<double>(e - s);
            optimizer.step(model, grads);
        }
        history.train_loss.push_back(epoch_loss / static_cast<double>(n_train));
        history.val_loss.push_back(evaluate_loss(model, data, n_train, data.count, cfg.loss));
        history.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
        if (n_val > 0 && !std::isfinite(history.val_loss.back())) {
            throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch + 1));
        }
        if (on_epoch) on_epoch(epoch, history);
    }
    return history;
}

void write_history_csv(std::ostream& out, const TrainHistory& history) {
    out << "epoch,train_loss,val_loss,seconds\n";
    for (std::size_t e = 0; e < history.epochs(); ++e) {
        out << (e + 1) << ',' << history.train_loss[e] << ',' << history.val_loss[e] << ',' << history.seconds[e]
            << '\n';
    }
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {{"loss", to_string(cfg.loss)},
            {"optimizer", to_string(cfg.optimizer)},
            {"learning_rate", cfg.learning_rate},
            {"lr_decay", cfg.lr_decay},
            {"batch_size", cfg.batch_size},
            {"epochs", cfg.epochs},
            {"seed", cfg.seed},
            {"validation_fraction", cfg.validation_fraction}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg) {
    try {
        if (j.contains("loss")) cfg.loss = parse_loss(j.at("loss").get<std::string>());
        if (j.contains("optimizer")) cfg.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
        cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
        cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
        cfg.batch_size = json_count(j, "batch_size", cfg.batch_size);
        cfg.epochs = json_count(j, "epochs", cfg.epochs);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.validation_fraction = j.value("validation_fraction", cfg.validation_fraction);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

}  // namespace fiberlearn
