// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "avdf/errors.hpp"
#include "avdf/nn.hpp"
#include "avdf/random.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace avdf;
using namespace avdf::nn;

namespace {

using Builder = std::function<Var(Graph&, std::vector<Var>&)>;

// Checks every coordinate of every input against central differences of
// sum(weights .* f(inputs)).
void check_gradients(std::vector<Mat> inputs, const Builder& f, std::uint64_t seed = 11, double tol = 1e-6) {
    std::mt19937_64 rng(seed);
    ParamSet p;
    for (std::size_t i = 0; i < inputs.size(); ++i) p.add("x" + std::to_string(i), inputs[i]);
    Mat weights;
    auto loss = [&](ParamSet* grads) {
        Graph g;
        std::vector<Var> vars;
        for (int i = 0; i < p.size(); ++i) vars.push_back(g.param(p, i, grads));
        const Var y = f(g, vars);
        if (weights.size() == 0) weights = testing::random_mat(int(g.value(y).rows()), int(g.value(y).cols()), rng);
        const Var s = sum(g, mul_const(g, y, weights));
        if (grads) g.backward(s);
        return g.value(s)(0, 0);
    };
    auto grads = p.zeros_like();
    loss(&grads);
    for (int i = 0; i < p.size(); ++i)
        for (Eigen::Index k = 0; k < p[i].size(); ++k) {
            const double fd = testing::central_difference(p[i], k, [&] { return loss(nullptr); });
            INFO("input " << i << " coordinate " << k);
            CHECK(std::abs(grads[i].data()[k] - fd) <= tol * std::max(1.0, std::abs(fd)));
        }
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("param set bookkeeping") {
    ParamSet p;
    p.add("a", Mat::Ones(2, 3));
    p.add("b", Mat::Zero(1, 4));
    CHECK(p.size() == 2);
    CHECK(p.scalar_count() == 10);
    CHECK(p.index("b") == 1);
    CHECK(p.contains("a"));
    CHECK_FALSE(p.contains("c"));
    CHECK_THROWS(p.index("c"));
    CHECK_THROWS(p.add("a", Mat::Zero(1, 1)));
    auto z = p.zeros_like();
    CHECK(z.same_layout(p));
    CHECK(z.squared_norm() == 0.0);
    z.accumulate(p, 2.0);
    CHECK(z.squared_norm() == 24.0);
    z.set_zero();
    CHECK(z.squared_norm() == 0.0);
}

TEST_CASE("matmul and linear gradients") {
    std::mt19937_64 rng(1);
    check_gradients({testing::random_mat(3, 4, rng), testing::random_mat(4, 2, rng)},
                    [](Graph& g, std::vector<Var>& v) { return matmul(g, v[0], v[1]); });
    check_gradients({testing::random_mat(3, 4, rng), testing::random_mat(2, 4, rng)},
                    [](Graph& g, std::vector<Var>& v) { return matmul_nt(g, v[0], v[1]); });
    check_gradients({testing::random_mat(3, 4, rng), testing::random_mat(4, 2, rng), testing::random_mat(1, 2, rng)},
                    [](Graph& g, std::vector<Var>& v) { return linear(g, v[0], v[1], v[2]); });
}

TEST_CASE("elementwise gradients") {
    std::mt19937_64 rng(2);
    check_gradients({testing::random_mat(3, 4, rng), testing::random_mat(3, 4, rng)},
                    [](Graph& g, std::vector<Var>& v) { return add(g, v[0], v[1]); });
    check_gradients({testing::random_mat(3, 4, rng), testing::random_mat(1, 4, rng)},
                    [](Graph& g, std::vector<Var>& v) { return add_row(g, v[0], v[1]); });
    check_gradients({testing::random_mat(3, 4, rng)},
                    [](Graph& g, std::vector<Var>& v) { return scale(g, v[0], -1.7); });
    check_gradients({testing::random_mat(3, 4, rng, 2.0)}, [](Graph& g, std::vector<Var>& v) { return gelu(g, v[0]); });
}

TEST_CASE("normalization gradients") {
    std::mt19937_64 rng(3);
    check_gradients({testing::random_mat(3, 5, rng), testing::random_mat(1, 5, rng), testing::random_mat(1, 5, rng)},
                    [](Graph& g, std::vector<Var>& v) { return layer_norm(g, v[0], v[1], v[2]); });
    check_gradients({testing::random_mat(3, 5, rng)},
                    [](Graph& g, std::vector<Var>& v) { return softmax_rows(g, v[0]); });
    check_gradients({testing::random_mat(3, 5, rng)},
                    [](Graph& g, std::vector<Var>& v) { return l2_normalize_rows(g, v[0]); });
}

TEST_CASE("slicing and concatenation gradients") {
    std::mt19937_64 rng(4);
    check_gradients({testing::random_mat(5, 4, rng)},
                    [](Graph& g, std::vector<Var>& v) { return slice_rows(g, v[0], 1, 3); });
    check_gradients({testing::random_mat(5, 4, rng)},
                    [](Graph& g, std::vector<Var>& v) { return slice_cols(g, v[0], 2, 2); });
    check_gradients({testing::random_mat(1, 4, rng), testing::random_mat(3, 4, rng)},
                    [](Graph& g, std::vector<Var>& v) { return concat_rows(g, v); });
    check_gradients({testing::random_mat(3, 2, rng), testing::random_mat(3, 3, rng)},
                    [](Graph& g, std::vector<Var>& v) { return concat_cols(g, v); });
}

TEST_CASE("shared inputs accumulate gradients") {
    std::mt19937_64 rng(5);
    check_gradients({testing::random_mat(3, 3, rng)}, [](Graph& g, std::vector<Var>& v) {
        return matmul(g, gelu(g, v[0]), softmax_rows(g, v[0]));
    });
}

TEST_CASE("layer norm output statistics") {
    std::mt19937_64 rng(6);
    Graph g;
    const Var y = layer_norm(g, g.constant(testing::random_mat(4, 16, rng, 3.0)), g.constant(Mat::Ones(1, 16)),
                             g.constant(Mat::Zero(1, 16)));
    for (int r = 0; r < 4; ++r) {
        CHECK(std::abs(g.value(y).row(r).mean()) <= 1e-12);
        CHECK(g.value(y).row(r).squaredNorm() / 16 == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("l2 normalization guards the zero vector") {
    Graph g;
    ParamSet p;
    p.add("x", Mat::Zero(1, 3));
    auto grads = p.zeros_like();
    const Var y = l2_normalize_rows(g, g.param(p, 0, &grads));
    CHECK(g.value(y).isZero(0.0));
    g.backward(sum(g, y));
    CHECK(grads[0].allFinite());

    Graph h;
    Mat x(1, 2);
    x << 3, 4;
    const Var n = l2_normalize_rows(h, h.constant(x));
    CHECK(h.value(n)(0, 0) == doctest::Approx(0.6));
    CHECK(h.value(n)(0, 1) == doctest::Approx(0.8));
}

TEST_CASE("softmax rows sum to one and survive large logits") {
    Graph g;
    Mat x(2, 3);
    x << 1000, 0, -1000, 1, 2, 3;
    const Var y = softmax_rows(g, g.constant(x));
    CHECK(g.value(y).allFinite());
    for (int r = 0; r < 2; ++r) CHECK(g.value(y).row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dropout is inverted and identity at rate zero") {
    Rng rng(1);
    Graph g;
    const Mat x = Mat::Ones(200, 50);
    const Var same = dropout(g, g.constant(x), 0.0, rng);
    CHECK(g.value(same) == x);
    const Var d = dropout(g, g.constant(x), 0.25, rng);
    const auto& v = g.value(d);
    long zeros = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        CHECK((v.data()[i] == 0.0 || v.data()[i] == doctest::Approx(1.0 / 0.75)));
        zeros += v.data()[i] == 0.0;
    }
    CHECK(double(zeros) / double(v.size()) == doctest::Approx(0.25).epsilon(0.1));
}

TEST_CASE("sinusoidal positions") {
    const Mat pe = sinusoidal_positions(5, 8);
    CHECK(pe.rows() == 5);
    CHECK(pe.cols() == 8);
    CHECK(pe(0, 0) == 0.0);
    CHECK(pe(0, 1) == 1.0);
    CHECK(pe(3, 0) == doctest::Approx(std::sin(3.0)));
    CHECK(pe(3, 1) == doctest::Approx(std::cos(3.0)));
    CHECK(pe(2, 2) == doctest::Approx(std::sin(2.0 / std::pow(10000.0, 2.0 / 8))));
}

TEST_CASE("constants receive no gradient and shape errors are reported") {
    std::mt19937_64 rng(7);
    Graph g;
    const Var a = g.constant(testing::random_mat(2, 3, rng));
    CHECK_FALSE(g.requires_grad(a));
    CHECK_THROWS(matmul(g, a, a));
    CHECK_THROWS(add(g, a, g.constant(Mat::Zero(3, 2))));
    CHECK_THROWS(slice_rows(g, a, 1, 5));
}

}  // TEST_SUITE
