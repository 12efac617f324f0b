#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "fiberlearn/training.hpp"

namespace fiberlearn {

struct SweepVariant {
    std::string name;
    TrainConfig train;
    Activation output_activation = Activation::sigmoid;
};

struct SweepRun {
    std::string variant;
    std::size_t repeat = 0;
    std::uint64_t seed = 0;
    TrainHistory history;
    bool plateau = false;
};

struct SweepResult {
    std::vector<SweepVariant> variants;
    std::vector<SweepRun> runs;

    /// One row per (run, epoch).
    void write_csv(std::ostream& out) const;
};

/// {mse, mae} x {sigmoid, tanh} x {adam, rmsprop} over a base config.
std::vector<SweepVariant> hyperparameter_grid(const TrainConfig& base);

/// Base config with learning_rate = 0, named "control-zero-lr". Its losses
/// cannot move, so the plateau detector must flag it.
SweepVariant zero_lr_control(const TrainConfig& base, Activation output_activation = Activation::sigmoid);

/// True if some window of `window` epochs changes the loss by less than `tolerance`.
bool detect_plateau(const std::vector<double>& losses, std::size_t window = 10, double tolerance = 1e-6);

struct SweepOptions {
    std::size_t repeats = 5;
    Activation hidden_activation = Activation::relu;
    double dropout = 0.2;
    std::size_t plateau_window = 10;
    double plateau_tolerance = 1e-6;
    double output_prior = 0.0;  // > 0: initial output value, see set_output_prior
};

using SweepProgress = std::function<void(const SweepRun&)>;

/// Trains every variant `repeats` times; repeat r uses seed variant.train.seed + r
/// for both initialization and shuffling.
SweepResult sweep(const std::vector<SweepVariant>& variants, const std::vector<std::size_t>& layer_dims,
                  const TrainingData& data, const SweepOptions& options = {}, const SweepProgress& progress = {});

}  // namespace fiberlearn
