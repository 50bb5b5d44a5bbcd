#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "seqground/checkpoint.hpp"
#include "seqground/grad_check.hpp"
#include "seqground/nn.hpp"
#include "seqground/ops.hpp"

using namespace seqground;

namespace {

Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = u(rng);
    return Tensor({rows, cols}, std::move(v), true);
}

// Keeps values away from kinks (0 for relu/max) so finite differences are smooth.
Tensor away_from_zero(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.2, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
    return Tensor({rows, cols}, std::move(v), true);
}

}  // namespace

TEST(Primitives, ReluDefinition) {
    auto y = relu(Tensor::row(std::vector<double>{-1, 0, 2}));
    EXPECT_EQ(y.to_vector(), (std::vector<double>{0, 0, 2}));
}

TEST(Primitives, SigmoidAtZero) { EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5); }

TEST(Primitives, MatmulIdentity) {
    auto eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    auto x = Tensor::matrix(2, 1, {3, 4});
    auto y = matmul(eye, x);
    EXPECT_EQ(y.shape(), (Shape{2, 1}));
    EXPECT_EQ(y.to_vector(), (std::vector<double>{3, 4}));
}

TEST(Primitives, ShapeMismatchIsDimensionError) {
    EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
    EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
    EXPECT_THROW(concat_cols({Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}), DimensionError);
}

TEST(Primitives, NonFiniteDataIsNumericError) {
    EXPECT_THROW(Tensor({1, 2}, {1.0, std::nan("")}), NumericError);
    Tensor t({1, 2}, {1.0, 2.0});
    t.mutable_data()[1] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(relu(t), NumericError);
}

TEST(Primitives, ShapeInvariants) {
    EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
    EXPECT_THROW(Tensor({0, 2}, {}), DimensionError);
}

TEST(Primitives, L2NormalizeZeroRowPassesThrough) {
    auto y = l2_normalize_rows(Tensor::matrix(2, 2, {0, 0, 3, 4}));
    EXPECT_EQ(y.to_vector(), (std::vector<double>{0, 0, 0.6, 0.8}));
}

TEST(Primitives, DropoutIsInvertedAndIdentityAtEval) {
    std::mt19937_64 rng(3);
    auto x = Tensor::zeros({1, 1000});
    for (auto& v : x.mutable_data()) v = 1.0;
    EXPECT_TRUE(dropout(x, 0.4, false, &rng).same_storage(x));
    auto y = dropout(x, 0.4, true, &rng);
    std::size_t zeros = 0;
    for (double v : y.data()) {
        if (v == 0.0) ++zeros;
        else EXPECT_DOUBLE_EQ(v, 1.0 / 0.6);
    }
    EXPECT_NEAR(static_cast<double>(zeros) / 1000.0, 0.4, 0.06);
}

TEST(Backward, SumOfSquares) {
    Tensor x({1, 3}, {1, 2, 3}, true);
    Tape tape;
    tape.backward(sum(square(x)));
    EXPECT_EQ(x.grad(), (std::vector<double>{2, 4, 6}));
}

TEST(Backward, ConstantLossGivesZeroGrads) {
    Tensor w({1, 2}, {0.3, -0.1}, true);
    Tape tape;
    auto loss = sum(Tensor::scalar(5.0));
    tape.backward(loss);
    EXPECT_EQ(w.grad(), (std::vector<double>{0, 0}));
    EXPECT_FALSE(w.has_grad());
}

TEST(Backward, SigmoidDerivativeAtZero) {
    Tensor w({1, 1}, {0.0}, true);
    Tensor x = Tensor::scalar(1.0);
    Tape tape;
    tape.backward(sigmoid(mul(w, x)));
    EXPECT_DOUBLE_EQ(w.grad()[0], 0.25);
}

TEST(Backward, DetachedTensorIsUsageError) {
    Tensor x({1, 1}, {2.0}, true);
    auto off_tape = square(x);  // computed with no active tape
    Tape tape;
    EXPECT_THROW(tape.backward(off_tape), UsageError);
    EXPECT_THROW(backward(Tensor::scalar(1.0)), UsageError);
}

TEST(Backward, NonScalarLossIsUsageError) {
    Tensor x({1, 2}, {2.0, 1.0}, true);
    Tape tape;
    EXPECT_THROW(tape.backward(square(x)), UsageError);
}

TEST(Backward, TapeVisitsEachNodeOnce) {
    // x is used three times; the accumulated gradient must be exactly 3.
    Tensor x({1, 1}, {1.5}, true);
    Tape tape;
    auto y = add(add(x, x), x);
    tape.backward(sum(y));
    EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
    EXPECT_THROW(tape.backward(sum(y)), UsageError);
}

TEST(GradCheck, SumOfSquaresPasses) {
    Tensor x({1, 3}, {1, 2, 3}, true);
    auto report = grad_check([&] { return sum(square(x)); }, {x}, 1e-5, 1e-8);
    EXPECT_TRUE(report.passed);
    EXPECT_LT(report.max_rel_error, 1e-8);
}

TEST(GradCheck, CorruptedGradientFails) {
    std::mt19937_64 rng(5);
    auto w = random_tensor(3, 2, rng);
    auto x = random_tensor(1, 3, rng).detach();
    auto f = [&] { return sum(tanh(matmul(x, w))); };
    auto grads = tape_gradients(f, {w});
    EXPECT_TRUE(compare_gradients(f, {w}, grads, 1e-5, 1e-4).passed);
    for (auto& g : grads[0]) g *= 1.01;
    auto report = compare_gradients(f, {w}, grads, 1e-5, 1e-4);
    EXPECT_FALSE(report.passed);
    EXPECT_GT(report.max_rel_error, 5e-3);
}

TEST(GradCheck, NonDeterministicFunctionIsInvalid) {
    std::mt19937_64 rng(9);
    Tensor x({1, 4}, {1, 2, 3, 4}, true);
    auto report = grad_check([&] { return sum(dropout(x, 0.5, true, &rng)); }, {x});
    EXPECT_FALSE(report.valid);
    EXPECT_FALSE(report.passed);
}

// Every primitive against central differences, 1e-6 relative error, on
// random small inputs.
TEST(GradCheck, EveryPrimitiveMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    struct Case {
        const char* name;
        std::function<Tensor(const Tensor&, const Tensor&)> op;
        std::pair<std::size_t, std::size_t> a, b;
        bool positive = false;
    };
    std::vector<Case> cases = {
        {"matmul", [](auto& a, auto& b) { return matmul(a, b); }, {3, 4}, {4, 2}},
        {"add", [](auto& a, auto& b) { return add(a, b); }, {3, 4}, {3, 4}},
        {"add_row_broadcast", [](auto& a, auto& b) { return add(a, b); }, {3, 4}, {1, 4}},
        {"add_col_broadcast", [](auto& a, auto& b) { return add(a, b); }, {3, 4}, {3, 1}},
        {"sub", [](auto& a, auto& b) { return sub(a, b); }, {2, 3}, {1, 3}},
        {"mul", [](auto& a, auto& b) { return mul(a, b); }, {2, 3}, {2, 3}},
        {"maximum", [](auto& a, auto& b) { return maximum(a, b); }, {3, 3}, {3, 3}},
        {"relu", [](auto& a, auto&) { return relu(a); }, {3, 3}, {1, 1}},
        {"sigmoid", [](auto& a, auto&) { return sigmoid(a); }, {3, 3}, {1, 1}},
        {"tanh", [](auto& a, auto&) { return tanh(a); }, {3, 3}, {1, 1}},
        {"square", [](auto& a, auto&) { return square(a); }, {2, 3}, {1, 1}},
        {"log", [](auto& a, auto&) { return log(a); }, {2, 3}, {1, 1}, true},
        {"scale", [](auto& a, auto&) { return scale(a, -1.7); }, {2, 3}, {1, 1}},
        {"concat_cols", [](auto& a, auto& b) { return concat_cols({a, b}); }, {2, 3}, {2, 2}},
        {"concat_rows", [](auto& a, auto& b) { return concat_rows({a, b}); }, {2, 3}, {1, 3}},
        {"slice_cols", [](auto& a, auto&) { return slice_cols(a, 1, 2); }, {2, 4}, {1, 1}},
        {"gather_rows", [](auto& a, auto&) { return gather_rows(a, {2, 0, 2}); }, {3, 2}, {1, 1}},
        {"mean_rows", [](auto& a, auto&) { return mean_rows(a); }, {4, 3}, {1, 1}},
        {"row_sum", [](auto& a, auto&) { return row_sum(a); }, {4, 3}, {1, 1}},
        {"squared_l2", [](auto& a, auto&) { return squared_l2(a); }, {2, 3}, {1, 1}},
        {"l2_normalize_rows", [](auto& a, auto&) { return l2_normalize_rows(a); }, {3, 4}, {1, 1}},
        {"transpose", [](auto& a, auto&) { return transpose(a); }, {2, 3}, {1, 1}},
        {"diag", [](auto& a, auto&) { return diag(a); }, {3, 3}, {1, 1}},
        {"order_violation", [](auto& a, auto& b) { return order_violation(a, b); }, {3, 4}, {2, 4}},
        {"dropout_mask", [](auto& a, auto&) {
             return apply_mask(a, Tensor::matrix(2, 2, {0.0, 2.0, 2.0, 0.0}));
         }, {2, 2}, {1, 1}},
    };
    for (const auto& c : cases) {
        auto a = c.positive ? random_tensor(c.a.first, c.a.second, rng, 0.5, 2.0)
                            : away_from_zero(c.a.first, c.a.second, rng);
        auto b = away_from_zero(c.b.first, c.b.second, rng);
        auto probe = c.op(a, b).detach();
        auto w = random_tensor(probe.rows(), probe.cols(), rng).detach();
        auto f = [&] { return sum(mul(c.op(a, b), w)); };
        auto report = grad_check(f, {a, b}, 1e-5, 1e-6);
        EXPECT_TRUE(report.passed) << c.name << " max rel error " << report.max_rel_error;
    }
}

TEST(GradCheck, BinaryCrossEntropyMatchesFiniteDifferences) {
    std::mt19937_64 rng(12);
    auto p = random_tensor(5, 1, rng, 0.1, 0.9);
    std::vector<double> labels{1, 0, 1, 0, 1}, weights{1, 1, 0, 2, 0.5};
    auto report = grad_check([&] { return binary_cross_entropy(p, labels, weights); }, {p}, 1e-6, 1e-6);
    EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(GradCheck, LstmStepMatchesFiniteDifferences) {
    std::mt19937_64 rng(13);
    LstmCell cell(3, 4, rng);
    for (auto& v : cell.bias.mutable_data()) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    auto x = random_tensor(1, 3, rng);
    auto f = [&] {
        auto s = cell.step(x, LstmState::zeros(1, 4));
        s = cell.step(x, s);
        return sum(mul(s.h, s.c));
    };
    auto report = grad_check(f, {cell.weight, cell.bias, x}, 1e-5, 1e-6);
    EXPECT_TRUE(report.passed) << report.max_rel_error;
}

// backward is linear: grad(a f + b g) = a grad(f) + b grad(g).
TEST(Properties, BackwardIsLinear) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        auto w = random_tensor(3, 3, rng);
        auto x = random_tensor(2, 3, rng).detach();
        auto f = [&] { return sum(tanh(matmul(x, w))); };
        auto g = [&] { return sum(square(sigmoid(matmul(x, w)))); };
        double alpha = std::uniform_real_distribution<double>(-2, 2)(rng);
        double beta = std::uniform_real_distribution<double>(-2, 2)(rng);
        auto gf = tape_gradients(f, {w})[0];
        auto gg = tape_gradients(g, {w})[0];
        auto gc = tape_gradients([&] { return add(scale(f(), alpha), scale(g(), beta)); }, {w})[0];
        for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], alpha * gf[i] + beta * gg[i], 1e-10);
    }
}

TEST(Properties, DeterministicWithoutDropout) {
    std::mt19937_64 rng(19);
    Mlp mlp(4, {5, 3}, false, rng);
    auto x = random_tensor(2, 4, rng);
    EXPECT_EQ(mlp.forward(x).to_vector(), mlp.forward(x).to_vector());
}

TEST(Checkpoint, BitExactRoundTrip) {
    std::mt19937_64 rng(23);
    Mlp mlp(3, {4, 2}, false, rng);
    auto params = mlp.parameters();
    Tensor bias = *params.find("1.bias");
    bias.mutable_data()[0] = 0.1 + 0.2;  // not exactly representable as a short decimal
    bias.mutable_data()[1] = -std::numeric_limits<double>::denorm_min();
    auto path = (std::filesystem::temp_directory_path() / "seqground_ckpt_test.bin").string();
    save_checkpoint(path, params, {{"note", "unit"}});
    auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.metadata["note"], "unit");
    ASSERT_EQ(ck.tensors.size(), params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, t] = params.entries()[i];
        EXPECT_EQ(ck.tensors[i].first, name);
        EXPECT_EQ(ck.tensors[i].second.shape(), t.shape());
        auto a = ck.tensors[i].second.data();
        auto b = t.data();
        ASSERT_EQ(a.size(), b.size());
        EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0) << name;
    }
    Mlp other(3, {4, 2}, false, rng);
    auto other_params = other.parameters();
    restore_parameters(other_params, ck);
    EXPECT_EQ(other.forward(Tensor::row(std::vector<double>{1, 2, 3})).to_vector(),
              mlp.forward(Tensor::row(std::vector<double>{1, 2, 3})).to_vector());
    std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedPayloadIsParseError) {
    std::mt19937_64 rng(29);
    Dense d(2, 2, rng);
    auto path = (std::filesystem::temp_directory_path() / "seqground_ckpt_trunc.bin").string();
    save_checkpoint(path, d.parameters());
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
    EXPECT_THROW(load_checkpoint(path), ParseError);
    std::filesystem::remove(path);
    EXPECT_THROW(load_checkpoint(path), IoError);
}
