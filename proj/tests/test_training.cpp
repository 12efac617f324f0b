#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "fiberlearn/synth.hpp"
#include "fiberlearn/training.hpp"

using namespace fiberlearn;

namespace {

TrainingData single_fiber_noiseless(std::size_t count) {
    const auto dwi = make_shell_protocol(1, 30, 2000).diffusion_weighted();
    const auto dict = build_dictionary(100, 0);
    const auto w = gaussian_weight_matrix(dict);
    TrainingData data;
    data.count = count;
    data.input_dim = dwi.size();
    data.output_dim = dict.size();
    data.inputs.resize(count * data.input_dim);
    data.targets.resize(count * data.output_dim);
    Rng rng(5);
    for (std::size_t k = 0; k < count; ++k) {
        const FiberConfig fc{{1.0}, {sample_pdds(1, rng)[0]}};
        const auto s = multi_tensor_signal(dwi, fc, kReferenceEigenvalues, 1.0);
        const auto y = encode_labels(dict, w, fc);
        std::copy(s.begin(), s.end(), data.inputs.begin() + static_cast<std::ptrdiff_t>(k * data.input_dim));
        std::copy(y.begin(), y.end(), data.targets.begin() + static_cast<std::ptrdiff_t>(k * data.output_dim));
    }
    return data;
}

TrainingData tiny_data(std::size_t count, std::size_t in, std::size_t out, std::uint64_t seed) {
    TrainingData d;
    d.count = count;
    d.input_dim = in;
    d.output_dim = out;
    Rng rng(seed);
    std::uniform_real_distribution<float> u(0, 1);
    d.inputs.resize(count * in);
    d.targets.resize(count * out);
    for (auto& v : d.inputs) v = u(rng);
    for (auto& v : d.targets) v = u(rng);
    return d;
}

}  // namespace

TEST(Training, PresetsFollowDesign) {
    EXPECT_EQ(voxel_preset_dims(150, 362), (std::vector<std::size_t>{150, 512, 512, 512, 256, 256, 362}));
    EXPECT_EQ(neighborhood_preset_dims(150, 362),
              (std::vector<std::size_t>{27 * 150, 2048, 1024, 1024, 512, 512, 362}));
    const auto v = voxel_train_config();
    EXPECT_EQ(v.loss, LossKind::mse);
    EXPECT_EQ(v.optimizer, OptimizerKind::adam);
    EXPECT_DOUBLE_EQ(v.learning_rate, 1e-4);
    EXPECT_DOUBLE_EQ(v.lr_decay, 1e-6);
    EXPECT_DOUBLE_EQ(neighborhood_train_config().learning_rate, 1e-5);
}

TEST(Training, SmokeRunReducesLossTenfold) {
    const auto data = single_fiber_noiseless(10000);
    auto model = init_model<float>(voxel_preset_dims(data.input_dim, data.output_dim));
    auto cfg = voxel_train_config();
    cfg.epochs = 100;
    cfg.validation_fraction = 0.0;
    const double initial = evaluate_loss(model, data, 0, data.count, LossKind::mse);
    const auto h = train(model, data, cfg);
    ASSERT_EQ(h.epochs(), 100u);
    const double final_loss = evaluate_loss(model, data, 0, data.count, LossKind::mse);
    EXPECT_LT(final_loss, initial / 10.0);
    const double tail = std::accumulate(h.train_loss.end() - 10, h.train_loss.end(), 0.0) / 10.0;
    EXPECT_LT(tail, h.train_loss.front());
}

TEST(Training, DeterministicForFixedSeed) {
    const auto data = tiny_data(300, 5, 4, 1);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 32;
    cfg.learning_rate = 1e-3;
    auto a = init_model<float>({5, 8, 4}, Activation::relu, Activation::sigmoid, 0.2, 1);
    auto b = a;
    const auto ha = train(a, data, cfg);
    const auto hb = train(b, data, cfg);
    EXPECT_EQ(ha.train_loss, hb.train_loss);
    EXPECT_EQ(ha.val_loss, hb.val_loss);
    EXPECT_EQ(a.layers[0].weights, b.layers[0].weights);
    EXPECT_EQ(ha.seconds.size(), 3u);
}

TEST(Training, CallbackAndValidationSplit) {
    const auto data = tiny_data(100, 3, 2, 2);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.validation_fraction = 0.2;
    auto m = init_model<float>({3, 4, 2});
    std::vector<std::size_t> seen;
    const auto h = train(m, data, cfg, [&](std::size_t e, const TrainHistory& hist) {
        seen.push_back(e);
        EXPECT_EQ(hist.epochs(), e + 1);
    });
    EXPECT_EQ(seen, (std::vector<std::size_t>{0, 1, 2, 3}));
    EXPECT_NEAR(h.val_loss.back(), evaluate_loss(m, data, 80, 100, LossKind::mse), 1e-9);
}

TEST(Training, ZeroLearningRateLeavesModelUnchanged) {
    const auto data = tiny_data(64, 3, 2, 3);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.learning_rate = 0.0;
    auto m = init_model<float>({3, 4, 2});
    const auto before = m;
    const auto h = train(m, data, cfg);
    EXPECT_EQ(m.layers[0].weights, before.layers[0].weights);
    EXPECT_EQ(h.val_loss[0], h.val_loss[1]);
}

TEST(Training, DivergenceRaises) {
    const auto data = tiny_data(64, 3, 2, 4);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.learning_rate = 1e30;
    cfg.optimizer = OptimizerKind::rmsprop;
    auto m = init_model<float>({3, 4, 2}, Activation::linear, Activation::linear, 0.0);
    try {
        train(m, data, cfg);
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    }
}

TEST(Training, RejectsBadInputs) {
    const auto data = tiny_data(10, 3, 2, 5);
    auto m = init_model<float>({4, 2});
    EXPECT_THROW(train(m, data, TrainConfig{}), ConfigError);
    TrainConfig bad;
    bad.epochs = 0;
    auto ok = init_model<float>({3, 2});
    EXPECT_THROW(train(ok, data, bad), ConfigError);
    bad = {};
    bad.validation_fraction = 1.0;
    EXPECT_THROW(bad.validate(), ConfigError);
    auto broken = data;
    broken.inputs.pop_back();
    EXPECT_THROW(broken.validate(), ConfigError);
}

TEST(Training, HistoryCsv) {
    TrainHistory h;
    h.train_loss = {0.5, 0.25};
    h.val_loss = {0.4, 0.2};
    h.seconds = {1.0, 2.0};
    std::ostringstream os;
    write_history_csv(os, h);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "epoch,train_loss,val_loss,seconds");
    std::getline(in, line);
    EXPECT_EQ(line.substr(0, 6), "1,0.5,");
    int rows = 1;
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 2);
}

TEST(Training, ConfigJson) {
    TrainConfig c;
    c.loss = LossKind::mae;
    c.optimizer = OptimizerKind::rmsprop;
    c.learning_rate = 3e-4;
    c.batch_size = 17;
    const auto back = train_config_from_json(to_json(c));
    EXPECT_EQ(back.loss, LossKind::mae);
    EXPECT_EQ(back.optimizer, OptimizerKind::rmsprop);
    EXPECT_DOUBLE_EQ(back.learning_rate, 3e-4);
    EXPECT_EQ(back.batch_size, 17u);
    EXPECT_EQ(train_config_from_json(nlohmann::json::object()).epochs, TrainConfig{}.epochs);
    EXPECT_THROW(train_config_from_json({{"optimizer", "sgd"}}), ConfigError);
    EXPECT_THROW(train_config_from_json({{"epochs", 0}}), ConfigError);
}
