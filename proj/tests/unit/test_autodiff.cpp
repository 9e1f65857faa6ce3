#include <gtest/gtest.h>

#include <cmath>

#include "percep_tl/autodiff/gradcheck.hpp"
#include "percep_tl/autodiff/ops.hpp"
#include "percep_tl/error.hpp"
#include "support.hpp"

using namespace percep;
using namespace percep::ad;
using testing_support::max_rel_error;
using testing_support::numeric_gradient;
using testing_support::random_tensor;

namespace {

// Reverse-mode gradient of f at x against the test-side central differences.
double check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
    Tensor leaf = Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()), true);
    backpropagate(f(leaf));
    const auto analytic = leaf.grad();
    const auto numeric = numeric_gradient(
        [&](const std::vector<double>& v) { return f(Tensor::from(x.shape(), v)).item(); },
        std::vector<double>(x.values().begin(), x.values().end()));
    return max_rel_error(analytic, numeric);
}

// Weighted sum so every output component contributes a distinct gradient.
Tensor weighted_sum(const Tensor& y, std::uint32_t seed = 99) {
    return sum(mul(y, random_tensor(y.shape(), seed, false)));
}

}  // namespace

TEST(Tensor, ShapeMustMatchValueCount) {
    EXPECT_THROW(Tensor::from({2, 3}, std::vector<double>(5, 0.0)), ShapeError);
    EXPECT_THROW(Tensor::from({0, 3}, {}), ShapeError);
    EXPECT_EQ(Tensor::from({2, 3}, std::vector<double>(6, 1.0)).numel(), 6u);
}

TEST(Ops, MatmulIdentityReturnsOperand) {
    const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensor a = random_tensor({3, 3}, 1, false);
    const Tensor y = matmul(eye, a);
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y.values()[i], a.values()[i]);
}

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
    const Tensor y = softmax(Tensor::from({4}, {0, 0, 0, 0}));
    for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Ops, ReluClampsNegatives) {
    const Tensor y = relu(Tensor::from({2}, {-1, 2}));
    EXPECT_EQ(y.values()[0], 0.0);
    EXPECT_EQ(y.values()[1], 2.0);
}

TEST(Ops, SoftmaxIsStableForLargeLogits) {
    const Tensor y = softmax(Tensor::from({3}, {1000, 1000, -1000}));
    EXPECT_NEAR(y.values()[0], 0.5, 1e-15);
    EXPECT_NEAR(y.values()[2], 0.0, 1e-15);
    for (double v : log_softmax(Tensor::from({2}, {800, -800})).values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Ops, ShapeErrorsNameOpAndShapes) {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
        FAIL() << "expected ShapeError";
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("matmul"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[4, 2]"), std::string::npos) << msg;
    }
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
    EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), Tensor(), 0), ShapeError);
    EXPECT_THROW(softmax(Tensor::scalar(1.0)), ShapeError);
}

TEST(Ops, ForwardOpDispatchesAndRejectsStride) {
    const Tensor a = random_tensor({2, 3}, 2, false);
    const Tensor b = random_tensor({3, 2}, 3, false);
    const Tensor parts[] = {a, b};
    const Tensor y = forward_op(OpKind::matmul, parts);
    const Tensor z = matmul(a, b);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y.values()[i], z.values()[i]);

    OpAttrs attrs;
    attrs.stride = 2;
    const Tensor conv_in[] = {Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3})};
    EXPECT_THROW(forward_op(OpKind::conv2d, conv_in, attrs), Error);

    OpAttrs r;
    r.shape = {3, 2};
    const Tensor one[] = {a};
    EXPECT_EQ(forward_op(OpKind::reshape, one, r).shape(), (Shape{3, 2}));
}

TEST(Backprop, SquareAtThreeHasGradientSix) {
    Tensor x = Tensor::scalar(3.0, true);
    backpropagate(square(x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backprop, SumOfReluGradient) {
    Tensor x = Tensor::from({2}, {-1, 2}, true);
    backpropagate(sum(relu(x)));
    EXPECT_EQ(x.grad(), (std::vector<double>{0, 1}));
}

TEST(Backprop, FanOutSumsBranches) {
    Tensor x = Tensor::scalar(1.5, true);
    backpropagate(add(x, x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Backprop, RejectsNonScalarAndSecondCall) {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    EXPECT_THROW(backpropagate(relu(x)), ShapeError);
    Tensor loss = sum(square(x));
    backpropagate(loss);
    EXPECT_THROW(backpropagate(loss), Error);
}

TEST(Backprop, LeafGradsAccumulateUntilZeroed) {
    Tensor x = Tensor::scalar(2.0, true);
    backpropagate(square(x));
    backpropagate(square(x));
    EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
    x.zero_grad();
    backpropagate(scale(x, 3.0));
    EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
}

TEST(Backprop, OffTapeLossIsRejected) {
    Tensor x = Tensor::scalar(2.0, false);
    EXPECT_THROW(backpropagate(square(x)), Error);
}

TEST(Tape, RecordIsTopologicalAndVisitsOnce) {
    Tensor x = random_tensor({2, 2}, 4);
    Tensor w = random_tensor({2, 2}, 5);
    Tensor h = relu(matmul(x, w));
    Tensor loss = sum(add(h, mul(h, x)));
    const Tape tape = Tape::record(loss);
    const auto nodes = tape.nodes();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (const auto& in : nodes[i]->inputs) EXPECT_LT(tape.index_of(in.get()), i);
        for (std::size_t j = i + 1; j < nodes.size(); ++j) EXPECT_NE(nodes[i], nodes[j]);
    }
    EXPECT_EQ(tape.size(), 7u);
    EXPECT_EQ(nodes.back(), loss.node());
}

TEST(Forward, DeterministicForIdenticalInputs) {
    const Tensor x = random_tensor({2, 1, 5, 5}, 6, false);
    const Tensor w = random_tensor({3, 1, 3, 3}, 7, false);
    const auto a = conv2d(x, w, Tensor(), 1);
    const auto b = conv2d(x, w, Tensor(), 1);
    EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
}

TEST(Conv2d, MatchesDirectLoopOracle) {
    const Tensor x = random_tensor({2, 2, 4, 5}, 8, false);
    const Tensor w = random_tensor({3, 2, 3, 3}, 9, false);
    const Tensor b = random_tensor({3}, 10, false);
    const Tensor y = conv2d(x, w, b, 1);
    ASSERT_EQ(y.shape(), (Shape{2, 3, 4, 5}));
    const auto X = x.values(), W = w.values(), B = b.values();
    for (int n = 0; n < 2; ++n)
        for (int o = 0; o < 3; ++o)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 5; ++j) {
                    double s = B[o];
                    for (int c = 0; c < 2; ++c)
                        for (int ki = 0; ki < 3; ++ki)
                            for (int kj = 0; kj < 3; ++kj) {
                                const int ii = i + ki - 1, jj = j + kj - 1;
                                if (ii < 0 || jj < 0 || ii >= 4 || jj >= 5) continue;
                                s += W[((o * 2 + c) * 3 + ki) * 3 + kj] * X[((n * 2 + c) * 4 + ii) * 5 + jj];
                            }
                    EXPECT_NEAR(y.values()[((n * 3 + o) * 4 + i) * 5 + j], s, 1e-12);
                }
}

// Every op's vector-Jacobian product against central differences on inputs in [-2,2].
TEST(GradientCheck, EveryOpMatchesCentralDifferences) {
    const Tensor other23 = random_tensor({2, 3}, 20, false);
    const Tensor row3 = random_tensor({3}, 21, false);
    const Tensor mat34 = random_tensor({3, 4}, 22, false);
    const Tensor batched = random_tensor({2, 3, 2}, 23, false);
    const Tensor kernel = random_tensor({2, 2, 3, 3}, 24, false);
    const Tensor kbias = random_tensor({2}, 25, false);
    const std::size_t order[] = {1, 0};
    const std::size_t picks[] = {2, 0};

    struct Case {
        const char* name;
        Shape shape;
        std::function<Tensor(const Tensor&)> f;
        double lo = -2.0;
    };
    const std::vector<Case> cases{
        {"add", {2, 3}, [&](const Tensor& x) { return weighted_sum(add(x, other23)); }},
        {"add_broadcast", {2, 3}, [&](const Tensor& x) { return weighted_sum(add(x, row3)); }},
        {"add_broadcast_rhs", {3}, [&](const Tensor& x) { return weighted_sum(add(other23, x)); }},
        {"sub", {2, 3}, [&](const Tensor& x) { return weighted_sum(sub(other23, x)); }},
        {"mul", {2, 3}, [&](const Tensor& x) { return weighted_sum(mul(x, x)); }},
        {"mul_broadcast_rhs", {3}, [&](const Tensor& x) { return weighted_sum(mul(other23, x)); }},
        {"scale", {2, 3}, [&](const Tensor& x) { return weighted_sum(scale(x, -1.7)); }},
        {"add_scalar", {2, 3}, [&](const Tensor& x) { return weighted_sum(add_scalar(x, 0.3)); }},
        {"matmul_left", {2, 3}, [&](const Tensor& x) { return weighted_sum(matmul(x, mat34)); }},
        {"matmul_right", {3, 4}, [&](const Tensor& x) { return weighted_sum(matmul(other23, x)); }},
        {"matmul_batched", {2, 2, 3}, [&](const Tensor& x) { return weighted_sum(matmul(x, batched)); }},
        {"conv2d_input", {1, 2, 4, 4}, [&](const Tensor& x) { return weighted_sum(conv2d(x, kernel, kbias, 1)); }},
        {"conv2d_weight", {2, 2, 3, 3},
         [&](const Tensor& w) { return weighted_sum(conv2d(random_tensor({2, 2, 4, 4}, 26, false), w, kbias, 1)); }},
        {"conv2d_bias", {2},
         [&](const Tensor& b) { return weighted_sum(conv2d(random_tensor({1, 2, 3, 3}, 27, false), kernel, b, 0)); }},
        {"relu", {2, 3}, [&](const Tensor& x) { return weighted_sum(relu(x)); }},
        {"sigmoid", {2, 3}, [&](const Tensor& x) { return weighted_sum(sigmoid(x)); }},
        {"tanh", {2, 3}, [&](const Tensor& x) { return weighted_sum(ad::tanh(x)); }},
        {"log", {2, 3}, [&](const Tensor& x) { return weighted_sum(ad::log(x)); }, 0.5},
        {"abs", {2, 3}, [&](const Tensor& x) { return weighted_sum(ad::abs(x)); }},
        {"square", {2, 3}, [&](const Tensor& x) { return weighted_sum(square(x)); }},
        {"sqrt", {2, 3}, [&](const Tensor& x) { return weighted_sum(ad::sqrt(x)); }, 0.5},
        {"softmax", {2, 3}, [&](const Tensor& x) { return weighted_sum(softmax(x)); }},
        {"log_softmax", {2, 3}, [&](const Tensor& x) { return weighted_sum(log_softmax(x)); }},
        {"sum_all", {2, 3}, [&](const Tensor& x) { return square(sum(x)); }},
        {"sum_axis", {2, 3}, [&](const Tensor& x) { return weighted_sum(sum(x, 0)); }},
        {"mean_all", {2, 3}, [&](const Tensor& x) { return square(mean(x)); }},
        {"mean_axis", {2, 3}, [&](const Tensor& x) { return weighted_sum(mean(x, 1)); }},
        {"concat", {2, 3},
         [&](const Tensor& x) {
             const Tensor parts[] = {x, other23, x};
             return weighted_sum(concat(parts, 1));
         }},
        {"reshape", {2, 3}, [&](const Tensor& x) { return weighted_sum(reshape(x, {3, 2})); }},
        {"permute", {2, 3}, [&](const Tensor& x) { return weighted_sum(permute(x, order)); }},
        {"slice", {2, 3}, [&](const Tensor& x) { return weighted_sum(slice(x, 1, 1, 3)); }},
        {"pick", {2, 3}, [&](const Tensor& x) { return weighted_sum(pick(x, picks)); }},
    };
    for (const auto& c : cases) {
        for (std::uint32_t s = 0; s < 3; ++s) {
            const Tensor x = random_tensor(c.shape, 100 + s, false, c.lo, 2.0);
            EXPECT_LT(check(c.f, x), 1e-6) << c.name << " instance " << s;
        }
    }
}

TEST(GradientCheck, TwoLayerMlpWithCrossEntropy) {
    const Tensor x = random_tensor({4, 3}, 30, false);
    const Tensor w2 = random_tensor({5, 3}, 31, false);
    const std::size_t labels[] = {0, 2, 1, 2};
    auto f = [&](const Tensor& w1) {
        const Tensor h = ad::tanh(matmul(x, w1));
        const Tensor logits = matmul(h, w2);
        return scale(mean(pick(log_softmax(logits), labels)), -1.0);
    };
    for (std::uint32_t s = 0; s < 5; ++s) {
        EXPECT_LT(check(f, random_tensor({3, 5}, 40 + s, false)), 1e-4);
    }
}

TEST(GradientCheckFn, ConstantGradientIsExact) {
    auto f = [](const Tensor& x) { return sum(x); };
    EXPECT_LT(gradient_check(f, random_tensor({5}, 50, false), 1e-5), 1e-10);
}

TEST(GradientCheckFn, L2NormAtThreeFour) {
    auto f = [](const Tensor& x) { return ad::sqrt(sum(square(x))); };
    EXPECT_LT(gradient_check(f, Tensor::from({2}, {3, 4}), 1e-5), 1e-6);
}

TEST(GradientCheckFn, AgreesWithIndependentOracle) {
    auto f = [](const Tensor& x) { return sum(mul(sigmoid(x), ad::tanh(x))); };
    const Tensor p = random_tensor({6}, 51, false);
    const auto detailed = gradient_check_detailed(f, p, 1e-5);
    const auto oracle = numeric_gradient(
        [&](const std::vector<double>& v) { return f(Tensor::from({6}, v)).item(); },
        std::vector<double>(p.values().begin(), p.values().end()));
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(detailed.numeric[i], oracle[i], 1e-12);
    EXPECT_LT(detailed.max_relative_error, 1e-6);
}

TEST(GradientCheckFn, RejectsBadInputs) {
    auto f = [](const Tensor& x) { return sum(ad::log(x)); };
    EXPECT_THROW(gradient_check(f, Tensor::from({1}, {-1.0}), 1e-5), Error);
    EXPECT_THROW(gradient_check(f, Tensor::from({1}, {1.0}), 0.0), Error);
    EXPECT_THROW(gradient_check(f, Tensor::from({1}, {std::nan("")}), 1e-5), Error);
}
