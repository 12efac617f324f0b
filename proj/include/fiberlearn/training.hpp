#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include <json.hpp>

#include "fiberlearn/mlp.hpp"

namespace fiberlearn {

/// Samples stored sample-major: sample k occupies inputs[k*input_dim ...].
/// Viewed as Eigen column-major matrices this is (dim x count).
struct TrainingData {
    std::size_t count = 0;
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::vector<float> inputs;
    std::vector<float> targets;

    void validate() const;
};

struct TrainConfig {
    LossKind loss = LossKind::mse;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 1e-4;
    double lr_decay = 1e-6;
    std::size_t batch_size = 256;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;

    void validate() const;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> seconds;  // cumulative wall time at epoch end

    std::size_t epochs() const { return train_loss.size(); }
};

/// Raised when the loss becomes NaN or infinite.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Hidden widths of the two presets; input and output sizes are filled in.
std::vector<std::size_t> voxel_preset_dims(std::size_t n, std::size_t m);
std::vector<std::size_t> neighborhood_preset_dims(std::size_t n, std::size_t m);
TrainConfig voxel_train_config();
TrainConfig neighborhood_train_config();

using EpochCallback = std::function<void(std::size_t epoch, const TrainHistory&)>;

/// Mini-batch training with per-epoch shuffling seeded from cfg.seed. The
/// final validation_fraction of the samples is held out.
TrainHistory train(MlpModel& model, const TrainingData& data, const TrainConfig& cfg,
                   const EpochCallback& on_epoch = {});

/// Mean loss of the model over samples [begin, end) in inference mode.
double evaluate_loss(const MlpModel& model, const TrainingData& data, std::size_t begin, std::size_t end,
                     LossKind kind);

void write_history_csv(std::ostream& out, const TrainHistory& history);

nlohmann::json to_json(const TrainConfig& cfg);

/// Non-negative integer field; negative values throw ConfigError instead of wrapping.
inline std::size_t json_count(const nlohmann::json& j, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto v = j.at(key).get<std::int64_t>();
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
}
/// Missing keys keep their defaults; unknown enum strings throw ConfigError.
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

}  // namespace fiberlearn
