#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "hfz/autodiff.hpp"

using hfz::Tape;
using hfz::Tensor;
using hfz::Var;

namespace {

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Central finite differences against the tape's analytic gradients.
// Relative tolerance: |a - fd| <= tol * max(1, |a|, |fd|).
void check_grads(const Builder& build, std::vector<Tensor> inputs, double tol = 1e-6,
                 double eps = 1e-6) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    Var root = build(tape, leaves);
    ASSERT_EQ(tape.value(root).size(), 1);
    tape.backward(root);

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Tensor analytic = tape.grad(leaves[i]);
        for (std::int64_t j = 0; j < inputs[i].size(); ++j) {
            auto eval = [&](double delta) {
                std::vector<Tensor> shifted = inputs;
                shifted[i][j] += delta;
                Tape t2;
                std::vector<Var> l2;
                for (const auto& t : shifted) l2.push_back(t2.leaf(t));
                return t2.value(build(t2, l2)).item();
            };
            const double fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            const double a = analytic[j];
            const double scale = std::max({1.0, std::fabs(a), std::fabs(fd)});
            EXPECT_LE(std::fabs(a - fd), tol * scale)
                << "input " << i << " element " << j << ": analytic " << a << " vs fd " << fd;
        }
    }
}

Tensor arange(hfz::Shape shape, double start, double step) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = start + step * static_cast<double>(i);
    return t;
}

} // namespace

TEST(Autodiff, AddSubMulDivValues) {
    Tape t;
    Var a = t.leaf(Tensor({2}, {3.0, 4.0}));
    Var b = t.leaf(Tensor({2}, {1.0, 2.0}));
    EXPECT_EQ(t.value(t.add(a, b))[1], 6.0);
    EXPECT_EQ(t.value(t.sub(a, b))[0], 2.0);
    EXPECT_EQ(t.value(t.mul(a, b))[1], 8.0);
    EXPECT_EQ(t.value(t.div(a, b))[1], 2.0);
    EXPECT_EQ(t.value(t.neg(a))[0], -3.0);
}

TEST(Autodiff, ScalarBroadcast) {
    Tape t;
    Var a = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    Var s = t.leaf(Tensor::scalar(10.0));
    EXPECT_EQ(t.value(t.add(a, s))[3], 14.0);
    EXPECT_EQ(t.value(t.add(s, a))[0], 11.0);
    EXPECT_EQ(t.value(t.mul(s, a))[2], 30.0);
    EXPECT_EQ(t.value(t.div(a, s))[1], 0.2);
}

TEST(Autodiff, ShapeMismatchThrows) {
    Tape t;
    Var a = t.leaf(Tensor({2, 2}));
    Var b = t.leaf(Tensor({3}));
    EXPECT_THROW(t.add(a, b), hfz::ShapeError);
    EXPECT_THROW(t.matmul(a, b), hfz::ShapeError);
}

TEST(Autodiff, BackwardNeedsScalarRoot) {
    Tape t;
    Var a = t.leaf(Tensor({2, 2}));
    EXPECT_THROW(t.backward(a), hfz::ContractError);
}

TEST(Autodiff, NonFiniteOutputThrows) {
    Tape t;
    Var a = t.leaf(Tensor({1}, {1.0}));
    Var z = t.leaf(Tensor({1}, {0.0}));
    EXPECT_THROW(t.div(a, z), hfz::NumericError);
}

TEST(Autodiff, BackwardCounterAdvances) {
    const std::uint64_t before = Tape::backward_count();
    Tape t;
    Var a = t.leaf(Tensor::scalar(2.0));
    Var r = t.mul(a, a);
    t.backward(r);
    EXPECT_EQ(Tape::backward_count(), before + 1);
}

TEST(Autodiff, RepeatedBackwardDoesNotAccumulate) {
    Tape t;
    Var a = t.leaf(Tensor::scalar(3.0));
    Var r = t.mul(a, a);
    t.backward(r);
    const double g1 = t.grad(a).item();
    t.backward(r);
    EXPECT_EQ(t.grad(a).item(), g1);
    EXPECT_EQ(g1, 6.0);
}

TEST(Autodiff, GradOfUnusedLeafIsZero) {
    Tape t;
    Var a = t.leaf(Tensor::scalar(1.0));
    Var b = t.leaf(Tensor({2}, {1.0, 2.0}));
    t.backward(t.mul(a, a));
    EXPECT_EQ(t.grad(b)[0], 0.0);
    EXPECT_EQ(t.grad(b)[1], 0.0);
}

TEST(Autodiff, MatmulValue) {
    Tape t;
    Var a = t.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    Var b = t.leaf(Tensor({3, 2}, {7, 8, 9, 10, 11, 12}));
    const Tensor& c = t.value(t.matmul(a, b));
    EXPECT_EQ(c.at(0, 0), 58.0);
    EXPECT_EQ(c.at(0, 1), 64.0);
    EXPECT_EQ(c.at(1, 0), 139.0);
    EXPECT_EQ(c.at(1, 1), 154.0);
}

TEST(Autodiff, CrossEntropyMatchesManual) {
    Tape t;
    Tensor logits({2, 3}, {1.0, 2.0, 0.5, -1.0, 0.0, 3.0});
    Var lv = t.leaf(logits);
    const double got = t.value(t.cross_entropy(lv, {1, 2})).item();
    double want = 0.0;
    for (int i = 0; i < 2; ++i) {
        const int y = i == 0 ? 1 : 2;
        double lse = 0.0;
        for (int j = 0; j < 3; ++j) lse += std::exp(logits.at(i, j));
        want += std::log(lse) - logits.at(i, y);
    }
    want /= 2.0;
    EXPECT_NEAR(got, want, 1e-12);
    EXPECT_THROW(t.cross_entropy(lv, {0}), hfz::ShapeError);
    EXPECT_THROW(t.cross_entropy(lv, {0, 3}), hfz::IndexError);
}

TEST(Autodiff, XlogxConvention) {
    Tape t;
    Var a = t.leaf(Tensor({3}, {0.0, 0.5, 1.0}));
    const Tensor& v = t.value(t.xlogx(a));
    EXPECT_EQ(v[0], 0.0);
    EXPECT_NEAR(v[1], 0.5 * std::log(0.5), 1e-15);
    EXPECT_EQ(v[2], 0.0);
    t.backward(t.sum_all(t.xlogx(a)));
    EXPECT_EQ(t.grad(a)[0], 0.0);  // subgradient convention at x = 0
    Var neg = t.leaf(Tensor({1}, {-0.1}));
    EXPECT_THROW(t.xlogx(neg), hfz::NumericError);
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
    Tape t;
    Var a = t.leaf(arange({3, 4}, -2.0, 0.37));
    const Tensor& s = t.value(t.softmax_rows(a));
    for (std::int64_t i = 0; i < 3; ++i) {
        double sum = 0;
        for (std::int64_t j = 0; j < 4; ++j) {
            EXPECT_GT(s.at(i, j), 0.0);
            sum += s.at(i, j);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Autodiff, SoftmaxStability) {
    Tape t;
    Var a = t.leaf(Tensor({1, 2}, {1000.0, 1001.0}));
    const Tensor& s = t.value(t.softmax_rows(a));
    EXPECT_NEAR(s.at(0, 1), 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Autodiff, StructuralValues) {
    Tape t;
    Var a = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
    Var b = t.leaf(Tensor({2, 1}, {9, 8}));
    const Tensor& cat = t.value(t.concat_cols(a, b));
    EXPECT_EQ(cat.cols(), 3);
    EXPECT_EQ(cat.at(1, 2), 8.0);
    const Tensor& sc = t.value(t.slice_cols(a, 1, 1));
    EXPECT_EQ(sc.at(0, 0), 2.0);
    const Tensor& sr = t.value(t.slice_rows(a, 1, 1));
    EXPECT_EQ(sr.at(0, 1), 4.0);
    const Tensor& rep = t.value(t.repeat_rows(t.slice_rows(a, 0, 1), 3));
    EXPECT_EQ(rep.rows(), 3);
    EXPECT_EQ(rep.at(2, 1), 2.0);
    const Tensor& rs = t.value(t.reshape(a, {4}));
    EXPECT_EQ(rs.ndim(), 1);
    EXPECT_EQ(rs[3], 4.0);
    EXPECT_THROW(t.reshape(a, {3}), hfz::ShapeError);
    EXPECT_THROW(t.slice_cols(a, 1, 2), hfz::ShapeError);
    EXPECT_THROW(t.stack_rows({}), hfz::ContractError);
}

TEST(Autodiff, AddRowvecValue) {
    Tape t;
    Var m = t.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    Var v = t.leaf(Tensor({3}, {10, 20, 30}));
    const Tensor& r = t.value(t.add_rowvec(m, v));
    EXPECT_EQ(r.at(0, 0), 11.0);
    EXPECT_EQ(r.at(1, 2), 36.0);
}

TEST(AutodiffGrad, Elementwise) {
    const Tensor a = arange({2, 3}, 0.4, 0.31);
    const Tensor b = arange({2, 3}, 1.1, -0.13);
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.add(l[0], l[1])); },
                {a, b});
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.sub(l[0], l[1])); },
                {a, b});
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.mul(l[0], l[1])); },
                {a, b});
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.div(l[0], l[1])); },
                {a, b});
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.neg(l[0])); }, {a});
}

TEST(AutodiffGrad, ScalarBroadcast) {
    const Tensor a = arange({2, 2}, 0.5, 0.25);
    const Tensor s({}, {1.7});
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.mul(l[0], l[1])); },
                {a, s});
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.div(l[0], l[1])); },
                {a, s});
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.div(l[1], l[0])); },
                {a, s});
}

TEST(AutodiffGrad, MatmulAndBias) {
    const Tensor a = arange({2, 3}, -0.3, 0.21);
    const Tensor b = arange({3, 2}, 0.7, -0.17);
    const Tensor v = arange({2}, 0.2, 0.5);
    check_grads(
        [](Tape& t, const std::vector<Var>& l) {
            return t.sum_all(t.mul(t.add_rowvec(t.matmul(l[0], l[1]), l[2]),
                                   t.add_rowvec(t.matmul(l[0], l[1]), l[2])));
        },
        {a, b, v});
}

TEST(AutodiffGrad, Activations) {
    // Keep relu inputs away from its kink.
    const Tensor a({2, 3}, {0.5, -0.7, 1.2, -0.4, 0.9, -1.5});
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.relu(l[0])); }, {a});
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.softplus(l[0])); },
                {a});
    const Tensor pos({4}, {0.1, 0.4, 0.9, 2.0});
    check_grads([](Tape& t, const std::vector<Var>& l) { return t.sum_all(t.xlogx(l[0])); },
                {pos}, 1e-5);
}

TEST(AutodiffGrad, SoftmaxAndReductions) {
    const Tensor a = arange({3, 4}, -0.9, 0.23);
    const Tensor w = arange({3, 4}, 0.3, 0.11);
    check_grads(
        [&](Tape& t, const std::vector<Var>& l) {
            return t.sum_all(t.mul(t.softmax_rows(l[0]), l[1]));
        },
        {a, w});
    check_grads(
        [](Tape& t, const std::vector<Var>& l) {
            Var s = t.sum_axis0(l[0]);
            return t.sum_all(t.mul(s, s));
        },
        {a});
}

TEST(AutodiffGrad, CrossEntropy) {
    const Tensor logits = arange({3, 4}, -0.6, 0.19);
    check_grads(
        [](Tape& t, const std::vector<Var>& l) { return t.cross_entropy(l[0], {2, 0, 3}); },
        {logits});
}

TEST(AutodiffGrad, Structural) {
    const Tensor a = arange({2, 3}, 0.1, 0.2);
    const Tensor b = arange({2, 2}, -0.5, 0.3);
    check_grads(
        [](Tape& t, const std::vector<Var>& l) {
            Var c = t.concat_cols(l[0], l[1]);
            return t.sum_all(t.mul(c, c));
        },
        {a, b});
    check_grads(
        [](Tape& t, const std::vector<Var>& l) {
            Var s = t.slice_cols(l[0], 1, 2);
            return t.sum_all(t.mul(s, s));
        },
        {a});
    check_grads(
        [](Tape& t, const std::vector<Var>& l) {
            Var s = t.slice_rows(l[0], 0, 1);
            Var r = t.repeat_rows(s, 4);
            return t.sum_all(t.mul(r, r));
        },
        {a});
    check_grads(
        [](Tape& t, const std::vector<Var>& l) {
            Var r0 = t.slice_rows(l[0], 0, 1);
            Var r1 = t.slice_rows(l[0], 1, 1);
            Var st = t.stack_rows({r1, r0, r1});
            return t.sum_all(t.mul(st, st));
        },
        {a});
    check_grads(
        [](Tape& t, const std::vector<Var>& l) {
            Var r = t.reshape(l[0], {3, 2});
            return t.sum_all(t.mul(r, r));
        },
        {a});
}

TEST(AutodiffGrad, SharedSubexpression) {
    // One leaf feeding two consumers must accumulate both contributions.
    const Tensor a = arange({2, 2}, 0.6, 0.2);
    check_grads(
        [](Tape& t, const std::vector<Var>& l) {
            Var sq = t.mul(l[0], l[0]);
            return t.add(t.sum_all(sq), t.sum_all(t.mul(l[0], sq)));
        },
        {a});
}
