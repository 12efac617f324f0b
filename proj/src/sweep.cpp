#include "fiberlearn/sweep.hpp"

#include <cmath>
#include <ostream>

namespace fiberlearn {

std::vector<SweepVariant> hyperparameter_grid(const TrainConfig& base) {
    std::vector<SweepVariant> grid;
    for (auto loss : {LossKind::mse, LossKind::mae}) {
        for (auto act : {Activation::sigmoid, Activation::tanh}) {
            for (auto opt : {OptimizerKind::adam, OptimizerKind::rmsprop}) {
                SweepVariant v;
                v.train = base;
                v.train.loss = loss;
                v.train.optimizer = opt;
                v.output_activation = act;
                v.name = std::string(to_string(loss)) + "-" + to_string(act) + "-" + to_string(opt);
                grid.push_back(std::move(v));
            }
        }
    }
    return grid;
}

SweepVariant zero_lr_control(const TrainConfig& base, Activation output_activation) {
    SweepVariant v;
    v.train = base;
    v.train.learning_rate = 0.0;
    v.output_activation = output_activation;
    v.name = "control-zero-lr";
    return v;
}

bool detect_plateau(const std::vector<double>& losses, std::size_t window, double tolerance) {
    if (window == 0 || losses.size() <= window) return false;
    for (std::size_t e = window; e < losses.size(); ++e) {
        if (std::abs(losses[e] - losses[e - window]) < tolerance) return true;
    }
    return false;
}

SweepResult sweep(const std::vector<SweepVariant>& variants, const std::vector<std::size_t>& layer_dims,
                  const TrainingData& data, const SweepOptions& options, const SweepProgress& progress) {
    if (variants.empty()) throw ConfigError("sweep needs at least one variant");
    if (options.repeats < 1) throw ConfigError("sweep repeats must be at least 1");
    SweepResult result;
    result.variants = variants;
    for (const auto& variant : variants) {
        for (std::size_t r = 0; r < options.repeats; ++r) {
            TrainConfig cfg = variant.train;
            cfg.seed = variant.train.seed + r;
            MlpModel model = init_model<float>(layer_dims, options.hidden_activation, variant.output_activation,
                                               options.dropout, cfg.seed);
            if (options.output_prior > 0.0) set_output_prior(model, options.output_prior);
            SweepRun run;
            run.variant = variant.name;
            run.repeat = r;
            run.seed = cfg.seed;
            run.history = train(model, data, cfg);
            const bool has_val = !run.history.val_loss.empty() && std::isfinite(run.history.val_loss.front());
            run.plateau = detect_plateau(has_val ? run.history.val_loss : run.history.train_loss,
                                         options.plateau_window, options.plateau_tolerance);
            if (progress) progress(run);
            result.runs.push_back(std::move(run));
        }
    }
    return result;
}

void SweepResult::write_csv(std::ostream& out) const {
    out << "variant,loss,optimizer,output_activation,learning_rate,repeat,seed,epoch,train_loss,val_loss,seconds,"
           "plateau\n";
    for (const auto& run : runs) {
        const SweepVariant* v = nullptr;
        for (const auto& cand : variants) {
            if (cand.name == run.variant) v = &cand;
        }
        for (std::size_t e = 0; e < run.history.epochs(); ++e) {
            out << run.variant << ',' << (v ? to_string(v->train.loss) : "") << ','
                << (v ? to_string(v->train.optimizer) : "") << ',' << (v ? to_string(v->output_activation) : "")
                << ',' << (v ? v->train.learning_rate : 0.0) << ',' << run.repeat << ',' << run.seed << ','
                << (e + 1) << ',' << run.history.train_loss[e] << ',' << run.history.val_loss[e] << ','
                << run.history.seconds[e] << ',' << (run.plateau ? 1 : 0) << '\n';
        }
    }
}

}  // namespace fiberlearn
