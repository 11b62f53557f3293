#include <doctest.h>

#include <cmath>

#include "banforge/finite_diff.hpp"
#include "banforge/graph.hpp"
#include "banforge/ops.hpp"
#include "banforge/rng.hpp"
#include "banforge/tensor.hpp"
#include "test_util.hpp"

using namespace banforge;

TEST_SUITE_BEGIN("tensor_autodiff");

TEST_CASE("softmax analytic rows") {
    Tensor logits({1, 2}, {static_cast<real>(std::log(3.0)), 0.0});
    Tensor q = softmax(logits, 1.0);
    CHECK(q[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(q[1] == doctest::Approx(0.25).epsilon(1e-12));

    Tensor constant_row({1, 4}, {2.5, 2.5, 2.5, 2.5});
    Tensor u = softmax(constant_row, 0.7);
    for (std::size_t i = 0; i < 4; ++i) CHECK(u[i] == doctest::Approx(0.25).epsilon(1e-12));

    // Temperature divides the logits: softmax([2,0], T=2) == softmax([1,0], T=1).
    Tensor warm = softmax(Tensor({1, 2}, {2.0, 0.0}), 2.0);
    CHECK(warm[0] == doctest::Approx(0.73106).epsilon(1e-5));
    CHECK(warm[1] == doctest::Approx(0.26894).epsilon(1e-5));
}

TEST_CASE("softmax row sums and shift invariance") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor z = test::random_tensor({4, 7}, rng, -30.0, 30.0);
        Tensor q = softmax(z, 1.0);
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0;
            for (std::size_t c = 0; c < 7; ++c) sum += static_cast<double>(q[r * 7 + c]);
            CHECK(std::abs(sum - 1.0) < 1e-12);
        }
        Tensor shifted = z;
        for (std::size_t c = 0; c < 7; ++c) shifted[2 * 7 + c] += real(123.5);
        Tensor q2 = softmax(shifted, 1.0);
        for (std::size_t c = 0; c < 7; ++c) {
            CHECK(std::abs(static_cast<double>(q2[2 * 7 + c] - q[2 * 7 + c])) < 1e-12);
        }
    }
}

TEST_CASE("softmax domain errors") {
    CHECK_THROWS_AS(softmax(Tensor({1, 2}), 0.0), ArgumentError);
    CHECK_THROWS_AS(softmax(Tensor({1, 2}), -1.0), ArgumentError);
    Tensor bad({1, 2}, {real(1), std::numeric_limits<real>::infinity()});
    CHECK_THROWS_AS(softmax(bad, 1.0), NumericError);
}

TEST_CASE("backward of sum is all ones; backward of half squared norm is theta") {
    Rng rng(3);
    Tensor theta = test::random_tensor({3, 4}, rng);

    Graph g1;
    Var p1 = g1.param("theta", theta);
    ParameterSet grads1 = g1.backward(ops::sum_all(p1));
    for (std::size_t i = 0; i < theta.numel(); ++i) CHECK(grads1.at("theta")[i] == real(1));

    Graph g2;
    Var p2 = g2.param("theta", theta);
    Var loss = ops::scale(ops::sum_all(ops::mul(p2, p2)), 0.5);
    ParameterSet grads2 = g2.backward(loss);
    for (std::size_t i = 0; i < theta.numel(); ++i) {
        CHECK(grads2.at("theta")[i] == doctest::Approx(static_cast<double>(theta[i])).epsilon(1e-15));
    }
}

TEST_CASE("backward rejects non-scalar roots") {
    Graph g;
    Var p = g.param("theta", Tensor({2, 2}));
    Var doubled = ops::scale(p, 2.0);
    CHECK_THROWS_AS(g.backward(doubled), ArgumentError);
}

TEST_CASE("backward is bit-deterministic for a fixed graph") {
    Rng rng(17);
    Tensor w = test::random_tensor({5, 3}, rng);
    Tensor x = test::random_tensor({4, 5}, rng);
    std::uint64_t checksum = 0;
    for (int run = 0; run < 3; ++run) {
        Graph g;
        Var wp = g.param("w", w);
        Var logits = ops::matmul(g.constant(x), wp);
        Var loss = ops::sum_all(ops::relu(logits));
        ParameterSet grads = g.backward(loss);
        const std::uint64_t c = grads.checksum();
        if (run == 0) {
            checksum = c;
        } else {
            CHECK(c == checksum);
        }
    }
}

TEST_CASE("finite_diff_check epsilon domain") {
    ParameterSet params;
    params.add("theta", Tensor({2}));
    auto loss = [](Graph& g, const ParameterSet& p) { return ops::sum_all(g.param("theta", p.at("theta"))); };
    CHECK_THROWS_AS(finite_diff_check(loss, params, 1e-8), ArgumentError);
    CHECK_THROWS_AS(finite_diff_check(loss, params, 1e-2), ArgumentError);
}

TEST_CASE("finite_diff_check on a quadratic is exact to roundoff") {
    Rng rng(5);
    ParameterSet params;
    params.add("theta", test::random_tensor({6}, rng));
    auto loss = [](Graph& g, const ParameterSet& p) {
        Var t = g.param("theta", p.at("theta"));
        return ops::scale(ops::sum_all(ops::mul(t, t)), 0.5);
    };
    CHECK(finite_diff_check(loss, params, 1e-5) < 1e-9);
}

TEST_CASE("finite_diff_check on softmax cross-entropy") {
    Rng rng(7);
    ParameterSet params;
    params.add("logits", test::random_tensor({4, 6}, rng, -2.0, 2.0));
    Tensor probs = test::random_prob_rows(4, 6, rng);
    auto loss = [probs](Graph& g, const ParameterSet& p) {
        Var z = g.param("logits", p.at("logits"));
        Var logq = ops::log_softmax_rows(z, 1.0);
        return ops::scale(ops::sum_all(ops::mul_const(logq, probs)), -0.25);
    };
    CHECK(finite_diff_check(loss, params, 1e-5) < 1e-6);
}

TEST_CASE("relu kink coordinate is excluded from sampling") {
    // theta[1] sits exactly at the kink: analytic subgradient is 0 there but
    // the central difference would report 0.5. The second-difference screen
    // must drop that coordinate, leaving only smooth ones.
    ParameterSet params;
    params.add("theta", Tensor({3}, {real(0.4), real(0), real(-0.3)}));
    auto loss = [](Graph& g, const ParameterSet& p) {
        return ops::sum_all(ops::relu(g.param("theta", p.at("theta"))));
    };
    CHECK(finite_diff_check(loss, params, 1e-5) < 1e-9);
}

namespace {

// Shared harness: finite-difference a scalar composed from one primitive.
double primitive_fd(const LossFn& loss, const ParameterSet& params, std::uint64_t seed) {
    FiniteDiffOptions opts;
    opts.seed = seed;
    return finite_diff_check(loss, params, opts);
}

} // namespace

TEST_CASE("primitive gradients match central differences") {
    Rng rng(23);
    double worst = 0;

    SUBCASE("matmul and add_bias") {
        for (int trial = 0; trial < 20; ++trial) {
            ParameterSet params;
            params.add("a", test::random_tensor({3, 4}, rng));
            params.add("b", test::random_tensor({4, 5}, rng));
            params.add("bias", test::random_tensor({5}, rng));
            auto loss = [](Graph& g, const ParameterSet& p) {
                Var out = ops::add_bias(ops::matmul(g.param("a", p.at("a")), g.param("b", p.at("b"))),
                                        g.param("bias", p.at("bias")));
                return ops::sum_all(ops::mul(out, out));
            };
            worst = std::max(worst, primitive_fd(loss, params, 100 + trial));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("conv2d 3x3 with padding and channel bias") {
        for (int trial = 0; trial < 8; ++trial) {
            ParameterSet params;
            params.add("x", test::random_tensor({2, 3, 6, 6}, rng));
            params.add("w", test::random_tensor({4, 3, 3, 3}, rng));
            params.add("b", test::random_tensor({4}, rng));
            auto loss = [](Graph& g, const ParameterSet& p) {
                Var y = ops::add_channel_bias(ops::conv2d(g.param("x", p.at("x")), g.param("w", p.at("w")), 1, 1),
                                              g.param("b", p.at("b")));
                return ops::sum_all(ops::mul(y, y));
            };
            worst = std::max(worst, primitive_fd(loss, params, 200 + trial));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("relu away from kinks") {
        for (int trial = 0; trial < 20; ++trial) {
            ParameterSet params;
            Tensor x = test::random_tensor({4, 4}, rng);
            for (std::size_t i = 0; i < x.numel(); ++i) {
                if (std::abs(static_cast<double>(x[i])) < 0.05) x[i] = real(0.1);
            }
            params.add("x", x);
            auto loss = [](Graph& g, const ParameterSet& p) {
                Var y = ops::relu(g.param("x", p.at("x")));
                return ops::sum_all(ops::mul(y, y));
            };
            worst = std::max(worst, primitive_fd(loss, params, 300 + trial));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("avgpool2d and global_avgpool") {
        for (int trial = 0; trial < 10; ++trial) {
            ParameterSet params;
            params.add("x", test::random_tensor({2, 3, 4, 4}, rng));
            auto loss = [](Graph& g, const ParameterSet& p) {
                Var pooled = ops::avgpool2d(g.param("x", p.at("x")), 2, 2);
                Var features = ops::global_avgpool(pooled);
                return ops::sum_all(ops::mul(features, features));
            };
            worst = std::max(worst, primitive_fd(loss, params, 400 + trial));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("channel concat") {
        for (int trial = 0; trial < 10; ++trial) {
            ParameterSet params;
            params.add("a", test::random_tensor({2, 2, 3, 3}, rng));
            params.add("b", test::random_tensor({2, 3, 3, 3}, rng));
            auto loss = [](Graph& g, const ParameterSet& p) {
                Var cat = ops::concat_channels(g.param("a", p.at("a")), g.param("b", p.at("b")));
                return ops::sum_all(ops::mul(cat, cat));
            };
            worst = std::max(worst, primitive_fd(loss, params, 500 + trial));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("lstm_step") {
        for (int trial = 0; trial < 8; ++trial) {
            const std::size_t hidden = 3, embed = 2, batch = 2;
            ParameterSet params;
            params.add("x", test::random_tensor({batch, embed}, rng));
            params.add("h", test::random_tensor({batch, hidden}, rng));
            params.add("c", test::random_tensor({batch, hidden}, rng));
            params.add("w_ih", test::random_tensor({embed, 4 * hidden}, rng));
            params.add("w_hh", test::random_tensor({hidden, 4 * hidden}, rng));
            params.add("b", test::random_tensor({4 * hidden}, rng));
            auto loss = [](Graph& g, const ParameterSet& p) {
                ops::LstmState state{g.param("h", p.at("h")), g.param("c", p.at("c"))};
                auto next = ops::lstm_step(g.param("x", p.at("x")), state, g.param("w_ih", p.at("w_ih")),
                                           g.param("w_hh", p.at("w_hh")), g.param("b", p.at("b")));
                return ops::sum_all(ops::mul(ops::add(next.h, next.c), ops::add(next.h, next.c)));
            };
            worst = std::max(worst, primitive_fd(loss, params, 600 + trial));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("embedding lookup with repeated ids") {
        for (int trial = 0; trial < 10; ++trial) {
            ParameterSet params;
            params.add("table", test::random_tensor({5, 3}, rng));
            std::vector<int> ids = {0, 2, 2, 4, 1};
            auto loss = [ids](Graph& g, const ParameterSet& p) {
                Var rows = ops::embedding_lookup(g.param("table", p.at("table")), ids);
                return ops::sum_all(ops::mul(rows, rows));
            };
            worst = std::max(worst, primitive_fd(loss, params, 700 + trial));
        }
        CHECK(worst < 1e-4);
    }

    SUBCASE("slice, concat rows, sigmoid, tanh") {
        for (int trial = 0; trial < 10; ++trial) {
            ParameterSet params;
            params.add("x", test::random_tensor({3, 6}, rng));
            auto loss = [](Graph& g, const ParameterSet& p) {
                Var x = g.param("x", p.at("x"));
                Var left = ops::sigmoid(ops::slice_cols(x, 0, 3));
                Var right = ops::tanh(ops::slice_cols(x, 3, 3));
                Var stacked = ops::concat_rows({left, right});
                return ops::sum_all(ops::mul(stacked, stacked));
            };
            worst = std::max(worst, primitive_fd(loss, params, 800 + trial));
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("random 3-layer MLP loss matches finite differences") {
    Rng rng(31);
    for (int trial = 0; trial < 3; ++trial) {
        ParameterSet params;
        params.add("w1", test::random_tensor({5, 8}, rng));
        params.add("b1", test::random_tensor({8}, rng));
        params.add("w2", test::random_tensor({8, 8}, rng));
        params.add("b2", test::random_tensor({8}, rng));
        params.add("w3", test::random_tensor({8, 4}, rng));
        params.add("b3", test::random_tensor({4}, rng));
        Tensor x = test::random_tensor({6, 5}, rng);
        Tensor probs = test::random_prob_rows(6, 4, rng);
        auto loss = [x, probs](Graph& g, const ParameterSet& p) {
            Var h = ops::relu(ops::add_bias(ops::matmul(g.constant(x), g.param("w1", p.at("w1"))),
                                            g.param("b1", p.at("b1"))));
            h = ops::relu(ops::add_bias(ops::matmul(h, g.param("w2", p.at("w2"))), g.param("b2", p.at("b2"))));
            Var logits = ops::add_bias(ops::matmul(h, g.param("w3", p.at("w3"))), g.param("b3", p.at("b3")));
            Var logq = ops::log_softmax_rows(logits, 1.0);
            return ops::scale(ops::sum_all(ops::mul_const(logq, probs)), -1.0 / 6.0);
        };
        FiniteDiffOptions opts;
        opts.seed = 900 + static_cast<std::uint64_t>(trial);
        CHECK(finite_diff_check(loss, params, opts) < 1e-4);
    }
}

TEST_CASE("op shape errors") {
    Graph g;
    Var a = g.constant(Tensor({2, 3}));
    Var b = g.constant(Tensor({2, 3}));
    CHECK_THROWS_AS(ops::matmul(a, b), ArgumentError);
    CHECK_THROWS_AS(ops::add(a, g.constant(Tensor({3, 2}))), ArgumentError);
    CHECK_THROWS_AS(ops::slice_cols(a, 2, 2), ArgumentError);
    CHECK_THROWS_AS(ops::conv2d(g.constant(Tensor({1, 2, 4, 4})), g.constant(Tensor({3, 5, 3, 3})), 1, 1),
                    ArgumentError);
    CHECK_THROWS_AS(ops::embedding_lookup(g.constant(Tensor({4, 2})), {0, 4}), ArgumentError);
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor({2, 0}), ArgumentError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ArgumentError);
    Tensor s = Tensor::scalar(3.5);
    CHECK(s.numel() == 1);
    CHECK(s.rank() == 0);
}

TEST_SUITE_END();
