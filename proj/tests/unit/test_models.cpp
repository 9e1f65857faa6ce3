#include <gtest/gtest.h>

#include <cmath>

#include "percep_tl/autodiff/ops.hpp"
#include "percep_tl/error.hpp"
#include "percep_tl/losses/losses.hpp"
#include "percep_tl/models/model.hpp"
#include "percep_tl/pipeline/optimizer.hpp"
#include "support.hpp"

using namespace percep;
using namespace percep::models;
using testing_support::max_rel_error;
using testing_support::random_tensor;
using testing_support::TempDir;

namespace {

ModelSpec spec_for(Family f) {
    ModelSpec s;
    s.family = f;
    s.class_count = 3;
    switch (f) {
        case Family::mlp:
            s.input_shape = {6};
            s.hidden = {5};
            break;
        case Family::cnn:
            s.input_shape = {1, 4, 4};
            s.hidden = {2};
            break;
        case Family::attention:
            s.input_shape = {1, 4, 4};
            s.embed_dim = 4;
            break;
        case Family::predcoder:
            s.input_shape = {3, 1, 4, 4};
            s.hidden = {2};
            break;
    }
    return s;
}

ad::Shape batch_shape(const ModelSpec& s, std::size_t n) {
    ad::Shape shape{n};
    shape.insert(shape.end(), s.input_shape.begin(), s.input_shape.end());
    return shape;
}

const std::vector<Family> kFamilies{Family::mlp, Family::cnn, Family::attention, Family::predcoder};

}  // namespace

TEST(Models, MlpParameterCount) {
    ModelSpec s;
    s.input_shape = {4};
    s.hidden = {8};
    s.class_count = 3;
    EXPECT_EQ(build_model(s, 1).parameter_count(), 67u);
}

TEST(Models, BuildIsDeterministic) {
    for (auto f : kFamilies) {
        const auto s = spec_for(f);
        EXPECT_EQ(build_model(s, 4), build_model(s, 4));
        EXPECT_NE(checksum(build_model(s, 4)), checksum(build_model(s, 5)));
        EXPECT_FALSE(build_model(s, 4).meta.stage.has_value());
    }
}

TEST(Models, InitIsFanInScaled) {
    ModelSpec s;
    s.input_shape = {100};
    s.hidden = {50};
    const auto m = build_model(s, 2);
    for (double v : m.params.at("fc0.weight").values) EXPECT_LE(std::fabs(v), 0.1);
}

TEST(Models, InvalidSpecs) {
    auto s = spec_for(Family::attention);
    s.patch_size = 3;
    EXPECT_THROW(build_model(s, 1), ConfigError);
    s = spec_for(Family::attention);
    s.blocks = 3;
    EXPECT_THROW(build_model(s, 1), ConfigError);
    s = spec_for(Family::cnn);
    s.hidden = {1, 1, 1, 1};
    EXPECT_THROW(build_model(s, 1), ConfigError);
    s = spec_for(Family::predcoder);
    s.input_shape = {1, 1, 4, 4};
    EXPECT_THROW(build_model(s, 1), ConfigError);
    s = spec_for(Family::mlp);
    s.class_count = 1;
    EXPECT_THROW(build_model(s, 1), ConfigError);
}

TEST(Models, ForwardShapesAndDeterminism) {
    for (auto f : kFamilies) {
        const auto s = spec_for(f);
        const auto m = build_model(s, 3);
        const auto x = random_tensor(batch_shape(s, 5), 8, false);
        const auto a = predict_logits(m, x);
        EXPECT_EQ(a.shape(), (ad::Shape{5, 3})) << to_string(f);
        const auto b = predict_logits(m, x);
        EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
        const auto bound = bind(m, false);
        ForwardOptions train;
        train.mode = loss::Mode::train;
        train.dropout_seed = 77;
        const auto t = forward(m, bound, x, train).logits;
        EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), t.values().begin())) << to_string(f);
    }
}

TEST(Models, DropoutOnlyInTrainMode) {
    auto s = spec_for(Family::mlp);
    s.dropout_p = 0.5;
    const auto m = build_model(s, 3);
    const auto x = random_tensor(batch_shape(s, 4), 8, false);
    const auto bound = bind(m, false);
    ForwardOptions train;
    train.mode = loss::Mode::train;
    train.dropout_seed = 1;
    const auto a = forward(m, bound, x, train).logits;
    const auto e = forward(m, bound, x).logits;
    EXPECT_FALSE(std::equal(a.values().begin(), a.values().end(), e.values().begin()));
    const auto again = forward(m, bound, x, train).logits;
    EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), again.values().begin()));
}

TEST(Models, ShapeMismatch) {
    for (auto f : kFamilies) {
        const auto m = build_model(spec_for(f), 3);
        EXPECT_THROW(predict_logits(m, ad::Tensor::zeros({2, 7})), ShapeError) << to_string(f);
    }
}

TEST(Models, AttentionRowsAreDistributions) {
    auto s = spec_for(Family::attention);
    s.blocks = 2;
    const auto m = build_model(s, 6);
    const auto x = random_tensor(batch_shape(s, 3), 2, false);
    const std::size_t P = 4;
    for (const char* name : {"block0.attn", "block1.attn"}) {
        const auto a = extract_activations(m, x, name);
        ASSERT_EQ(a.shape(), (ad::Shape{3, P * P}));
        const auto v = a.values();
        for (std::size_t row = 0; row < 3 * P; ++row) {
            double sum = 0.0;
            for (std::size_t k = 0; k < P; ++k) {
                EXPECT_GE(v[row * P + k], 0.0);
                sum += v[row * P + k];
            }
            EXPECT_NEAR(sum, 1.0, 1e-9);
        }
    }
}

TEST(Models, ParameterGradientsMatchFiniteDifferences) {
    for (auto f : kFamilies) {
        const auto s = spec_for(f);
        auto m = build_model(s, 12);
        const auto x = random_tensor(batch_shape(s, 2), 13, false);
        const std::vector<std::size_t> y{0, 2};
        auto bound = bind(m, true);
        backpropagate(loss::cross_entropy(forward(m, bound, x).logits, y));
        for (const auto& [name, tensor] : bound) {
            const auto analytic = tensor.grad();
            std::vector<double> numeric(analytic.size());
            for (std::size_t i = 0; i < analytic.size(); ++i) {
                auto probe = m;
                const double keep = probe.params[name].values[i];
                probe.params[name].values[i] = keep + 1e-5;
                const double up = loss::cross_entropy(predict_logits(probe, x), y).item();
                probe.params[name].values[i] = keep - 1e-5;
                const double down = loss::cross_entropy(predict_logits(probe, x), y).item();
                numeric[i] = (up - down) / 2e-5;
            }
            EXPECT_LT(max_rel_error(analytic, numeric), 1e-4) << to_string(f) << " " << name;
        }
    }
}

TEST(Models, ReplaceHead) {
    for (auto f : kFamilies) {
        const auto m = build_model(spec_for(f), 3);
        const auto r = replace_head(m, 7, 99);
        EXPECT_EQ(r.spec.class_count, 7u);
        for (const auto& [name, p] : m.params) {
            if (!is_head_parameter(name)) EXPECT_EQ(r.params.at(name), p) << name;
        }
        EXPECT_EQ(r.params.at("head.weight").shape.back(), 7u);
        EXPECT_EQ(replace_head(m, 7, 99), r);
        EXPECT_NE(checksum(replace_head(m, 7, 98), {"head.weight"}), checksum(r, {"head.weight"}));
        const auto back = replace_head(r, 3, 5);
        EXPECT_EQ(back.params.at("head.weight").shape, m.params.at("head.weight").shape);
        EXPECT_NO_THROW(r.validate());
        const auto x = random_tensor(batch_shape(r.spec, 2), 1, false);
        EXPECT_EQ(predict_logits(r, x).shape(), (ad::Shape{2, 7}));
    }
}

TEST(Models, TrainablePoliciesGateGradientsAndSteps) {
    for (auto policy : {TrainablePolicy::all, TrainablePolicy::head_only, TrainablePolicy::backbone_only}) {
        for (auto f : kFamilies) {
            auto m = set_trainable(build_model(spec_for(f), 3), policy);
            const auto before = m;
            const auto x = random_tensor(batch_shape(m.spec, 4), 5, false);
            const std::vector<std::size_t> y{0, 1, 2, 0};
            pipeline::OptimizerState state;
            pipeline::OptimizerSettings opt;
            opt.learning_rate = 0.1;
            for (int step = 0; step < 10; ++step) {
                auto bound = bind(m, true);
                backpropagate(loss::cross_entropy(forward(m, bound, x).logits, y));
                pipeline::GradMap grads;
                for (const auto& [name, t] : bound) {
                    const bool expect = policy == TrainablePolicy::all ||
                                        (policy == TrainablePolicy::head_only) == is_head_parameter(name);
                    EXPECT_EQ(t.requires_grad(), expect) << name;
                    if (t.requires_grad()) grads[name] = t.grad();
                    else grads[name] = std::vector<double>(t.numel(), 1.0);
                }
                pipeline::optimizer_step(m.params, grads, state, opt);
            }
            for (const auto& [name, p] : m.params) {
                if (!p.trainable) EXPECT_EQ(p.values, before.params.at(name).values) << name;
                if (p.trainable && name == "head.bias") EXPECT_NE(p.values, before.params.at(name).values);
            }
        }
    }
}

TEST(Models, ExtractActivations) {
    for (auto f : kFamilies) {
        const auto s = spec_for(f);
        const auto m = build_model(s, 3);
        const auto x = random_tensor(batch_shape(s, 5), 4, false);
        const auto logits = extract_activations(m, x, "logits");
        const auto direct = predict_logits(m, x);
        EXPECT_TRUE(std::equal(logits.values().begin(), logits.values().end(), direct.values().begin()));
        for (const auto& name : activation_names(s)) {
            const auto a = extract_activations(m, x, name);
            EXPECT_EQ(a.dim(), 2u);
            EXPECT_EQ(a.extent(0), 5u) << name;
        }
        try {
            extract_activations(m, x, "nope");
            FAIL();
        } catch (const ConfigError& e) {
            EXPECT_NE(std::string(e.what()).find("logits"), std::string::npos);
        }
    }
}

TEST(Models, PredcoderStructure) {
    auto s = spec_for(Family::predcoder);
    s.hidden = {2, 3};
    const auto m = build_model(s, 8);
    const auto x = random_tensor(batch_shape(s, 2), 9, false, 0.0, 1.0);
    const auto out = predcoder_forward(m, bind(m, false), x);
    EXPECT_EQ(out.errors.size(), 3u);
    EXPECT_EQ(out.predictions.size(), 2u);
    EXPECT_EQ(out.targets.size(), 2u);
    for (const auto& step : out.errors) {
        ASSERT_EQ(step.size(), 2u);
        for (const auto& e : step)
            for (double v : e.values()) EXPECT_GE(v, 0.0);
    }
    EXPECT_EQ(out.first_layer.shape(), (ad::Shape{2, 2}));
    s.input_shape = {1, 1, 4, 4};
    EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Models, StageOrder) {
    TrainingMeta meta;
    advance_stage(meta, Stage::pretrained);
    advance_stage(meta, Stage::psi_finetuned);
    EXPECT_THROW(advance_stage(meta, Stage::source_trained), Error);
    EXPECT_THROW(advance_stage(meta, Stage::psi_finetuned), Error);
    advance_stage(meta, Stage::transferred);
    EXPECT_EQ(meta.stage, Stage::transferred);
}

TEST(Models, CheckpointRoundTripIsBitExact) {
    TempDir dir("ckpt");
    for (auto f : kFamilies) {
        auto m = set_trainable(build_model(spec_for(f), 21), TrainablePolicy::head_only);
        m.meta.dataset = "src";
        m.meta.epoch = 4;
        advance_stage(m.meta, Stage::source_trained);
        const auto path = dir.path() / (std::string(to_string(f)) + ".json");
        save_checkpoint(path, m);
        const auto back = load_checkpoint(path);
        EXPECT_EQ(back, m);
        const auto x = random_tensor(batch_shape(m.spec, 3), 2, false);
        const auto a = predict_logits(m, x), b = predict_logits(back, x);
        EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    }
}

TEST(Models, CheckpointRejectsWrongShapes) {
    auto m = build_model(spec_for(Family::mlp), 1);
    m.params["fc0.weight"].shape = {5, 6};
    EXPECT_THROW(m.validate(), Error);
    m = build_model(spec_for(Family::mlp), 1);
    m.params.erase("head.bias");
    EXPECT_THROW(m.validate(), Error);
}

TEST(Models, CnnPoolGridAveragesBlocks) {
    auto s = spec_for(Family::cnn);
    s.pool_grid = 2;
    const auto m = build_model(s, 21);
    const auto x = random_tensor(batch_shape(s, 3), 22, false);
    const auto conv = extract_activations(m, x, "conv0");
    const auto pooled = extract_activations(m, x, "pooled");
    const std::size_t C = 2, H = 4, W = 4, g = 2;
    ASSERT_EQ(pooled.extent(1), C * g * g);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t gi = 0; gi < g; ++gi) {
                for (std::size_t gj = 0; gj < g; ++gj) {
                    double sum = 0;
                    for (std::size_t h = gi * 2; h < gi * 2 + 2; ++h) {
                        for (std::size_t w = gj * 2; w < gj * 2 + 2; ++w) {
                            sum += conv.values()[i * C * H * W + c * H * W + h * W + w];
                        }
                    }
                    EXPECT_NEAR(pooled.values()[i * C * g * g + c * g * g + gi * g + gj], sum / 4, 1e-12);
                }
            }
        }
    }
    EXPECT_EQ(m.params.at("head.weight").shape, (ad::Shape{C * g * g, 3}));

    s.pool_grid = 3;
    EXPECT_THROW(build_model(s, 1), ConfigError);
}

TEST(Models, CnnPoolGridGradients) {
    auto s = spec_for(Family::cnn);
    s.pool_grid = 2;
    auto m = build_model(s, 31);
    const auto x = random_tensor(batch_shape(s, 2), 32, false);
    const std::vector<std::size_t> y{1, 0};
    auto bound = bind(m, true);
    backpropagate(loss::cross_entropy(forward(m, bound, x).logits, y));
    for (const auto& [name, tensor] : bound) {
        const auto analytic = tensor.grad();
        std::vector<double> numeric(analytic.size());
        for (std::size_t i = 0; i < analytic.size(); ++i) {
            auto probe = m;
            const double keep = probe.params[name].values[i];
            probe.params[name].values[i] = keep + 1e-5;
            const double up = loss::cross_entropy(predict_logits(probe, x), y).item();
            probe.params[name].values[i] = keep - 1e-5;
            const double down = loss::cross_entropy(predict_logits(probe, x), y).item();
            numeric[i] = (up - down) / 2e-5;
        }
        EXPECT_LT(max_rel_error(analytic, numeric), 1e-4) << name;
    }
}
