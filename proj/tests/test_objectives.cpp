#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "banforge/objectives.hpp"
#include "banforge/ops.hpp"
#include "test_util.hpp"

using namespace banforge;

TEST_SUITE_BEGIN("objectives");

namespace {

double entropy(const Tensor& probs) {
    double h = 0;
    for (std::size_t i = 0; i < probs.numel(); ++i) {
        const double p = static_cast<double>(probs[i]);
        if (p > 0) h -= p * std::log(p);
    }
    return h / static_cast<double>(probs.dim(0));
}

Tensor onehot(const std::vector<int>& labels, std::size_t n) {
    Tensor m({labels.size(), n});
    for (std::size_t s = 0; s < labels.size(); ++s) m[s * n + static_cast<std::size_t>(labels[s])] = real(1);
    return m;
}

} // namespace

TEST_CASE("targets validate probability rows and label ranges") {
    CHECK_THROWS_AS(DistillTargets(Tensor({2, 2}, {0.5, 0.4, 0.5, 0.5}), {0, 1}), ArgumentError);
    CHECK_THROWS_AS(DistillTargets(Tensor({1, 2}, {0.5, 0.5}), {2}), ArgumentError);
    CHECK_THROWS_AS(DistillTargets(Tensor({1, 2}, {0.5, 0.5}), {0, 1}), ArgumentError);
}

TEST_CASE("kd_loss analytic cases") {
    // b=1, n=2, z=[0,0], p=[0.75,0.25]: loss = -0.75 ln 0.5 - 0.25 ln 0.5 = ln 2.
    DistillTargets t(Tensor({1, 2}, {0.75, 0.25}), {0});
    CHECK(kd_loss(Tensor({1, 2}, {0.0, 0.0}), t, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // p equal to the student's own softmax: loss is the entropy of p and the
    // gradient vanishes.
    Rng rng(2);
    Tensor z = test::random_tensor({3, 5}, rng, -2.0, 2.0);
    DistillTargets fixed(softmax(z, 1.0), test::random_labels(3, 5, rng));
    CHECK(kd_loss(z, fixed, 1.0) == doctest::Approx(entropy(fixed.probs)).epsilon(1e-12));
    Tensor grad = kd_gradient(z, fixed, 1.0);
    for (std::size_t i = 0; i < grad.numel(); ++i) CHECK(std::abs(static_cast<double>(grad[i])) < 1e-12);

    // One-hot teacher degenerates to plain label cross-entropy.
    std::vector<int> labels = {1, 0, 3};
    Tensor z2 = test::random_tensor({3, 4}, rng, -2.0, 2.0);
    DistillTargets hot(onehot(labels, 4), labels);
    CHECK(kd_loss(z2, hot, 1.0) == doctest::Approx(ce_loss(z2, labels)).epsilon(1e-12));
}

TEST_CASE("kd_gradient analytic cases and row sums") {
    DistillTargets t(Tensor({1, 2}, {0.75, 0.25}), {0});
    Tensor g = kd_gradient(Tensor({1, 2}, {0.0, 0.0}), t, 1.0);
    CHECK(g[0] == doctest::Approx(-0.25).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(0.25).epsilon(1e-12));

    Rng rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t b = 1 + rng.below(6), n = 2 + rng.below(7);
        Tensor z = test::random_tensor({b, n}, rng, -3.0, 3.0);
        DistillTargets targets(test::random_prob_rows(b, n, rng), test::random_labels(b, n, rng));
        Tensor rows = kd_gradient(z, targets, 1.0);
        for (std::size_t s = 0; s < b; ++s) {
            double sum = 0;
            for (std::size_t i = 0; i < n; ++i) sum += static_cast<double>(rows[s * n + i]);
            CHECK(std::abs(sum) < 1e-12);
        }
    }
}

TEST_CASE("ce_gradient analytic cases and kd equivalence") {
    Tensor g = ce_gradient(Tensor({1, 2}, {0.0, 0.0}), {0});
    CHECK(g[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(0.5).epsilon(1e-12));

    // A saturated softmax at the true class gives a vanishing gradient.
    Tensor sat = ce_gradient(Tensor({1, 2}, {50.0, -50.0}), {0});
    CHECK(std::abs(static_cast<double>(sat[0])) < 1e-12);
    CHECK(std::abs(static_cast<double>(sat[1])) < 1e-12);

    CHECK_THROWS_AS(ce_gradient(Tensor({1, 3}), {3}), ArgumentError);

    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t b = 1 + rng.below(5), n = 2 + rng.below(6);
        Tensor z = test::random_tensor({b, n}, rng, -3.0, 3.0);
        std::vector<int> labels = test::random_labels(b, n, rng);
        Tensor ce = ce_gradient(z, labels);
        Tensor kd = kd_gradient(z, DistillTargets(onehot(labels, n), labels), 1.0);
        for (std::size_t i = 0; i < ce.numel(); ++i) {
            CHECK(std::abs(static_cast<double>(ce[i] - kd[i])) < 1e-15);
        }
    }
}

TEST_CASE("decomposition analytic example") {
    // b=1, n=3, y=0, p=[0.6,0.3,0.1], q uniform.
    const double third = 1.0 / 3.0;
    Tensor z({1, 3}, {0.0, 0.0, 0.0});
    DistillTargets t(Tensor({1, 3}, {0.6, 0.3, 0.1}), {0});
    GradientDecomposition d = decompose_batch_gradient(z, t);
    CHECK(d.ground_truth_term[0] == doctest::Approx(third - 0.6).epsilon(1e-10));
    CHECK(d.dark_knowledge_term[0] == doctest::Approx(0.0));
    CHECK(d.dark_knowledge_term[1] == doctest::Approx(third - 0.3).epsilon(1e-9));
    CHECK(d.dark_knowledge_term[2] == doctest::Approx(third - 0.1).epsilon(1e-9));
    CHECK(d.implied_weights[0] == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("decomposition reassembles kd_gradient exactly") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t b = 1 + rng.below(10), n = 2 + rng.below(10);
        Tensor z = test::random_tensor({b, n}, rng, -4.0, 4.0);
        DistillTargets targets(test::random_prob_rows(b, n, rng), test::random_labels(b, n, rng));
        GradientDecomposition d = decompose_batch_gradient(z, targets);
        const Tensor oracle = kd_gradient(z, targets, 1.0);
        for (std::size_t s = 0; s < b; ++s) {
            for (std::size_t i = 0; i < n; ++i) {
                const double reassembled =
                    static_cast<double>(d.dark_knowledge_term[s * n + i]) +
                    (i == static_cast<std::size_t>(targets.labels[s]) ? static_cast<double>(d.ground_truth_term[s])
                                                                      : 0.0);
                CHECK(std::abs(reassembled - static_cast<double>(oracle[s * n + i])) < 1e-12);
                CHECK(std::abs(static_cast<double>(d.total[s * n + i] - oracle[s * n + i])) == 0.0);
            }
        }
    }
}

TEST_CASE("confident correct teacher reduces kd to the label gradient") {
    Rng rng(10);
    const std::size_t b = 4, n = 6;
    Tensor z = test::random_tensor({b, n}, rng, -2.0, 2.0);
    std::vector<int> labels = test::random_labels(b, n, rng);
    // p concentrated on the true class beyond 1 - 1e-9.
    Tensor p({b, n});
    for (std::size_t s = 0; s < b; ++s) {
        const double rest = 1e-10 / static_cast<double>(n - 1);
        for (std::size_t i = 0; i < n; ++i) p[s * n + i] = static_cast<real>(rest);
        p[s * n + static_cast<std::size_t>(labels[s])] = static_cast<real>(1.0 - 1e-10);
    }
    DistillTargets targets(p, labels);
    const Tensor kd = kd_gradient(z, targets, 1.0);
    const Tensor ce = ce_gradient(z, labels);
    for (std::size_t i = 0; i < kd.numel(); ++i) {
        CHECK(std::abs(static_cast<double>(kd[i] - ce[i])) < 1e-6);
    }
    GradientDecomposition d = decompose_batch_gradient(z, targets);
    double dark_l1 = 0;
    for (std::size_t i = 0; i < d.dark_knowledge_term.numel(); ++i) {
        dark_l1 += std::abs(static_cast<double>(d.dark_knowledge_term[i]));
    }
    const Tensor q = softmax(z, 1.0);
    double q_off_true = 0;
    for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t i = 0; i < n; ++i) {
            if (i != static_cast<std::size_t>(labels[s])) q_off_true += static_cast<double>(q[s * n + i]);
        }
    }
    CHECK(dark_l1 == doctest::Approx(q_off_true).epsilon(1e-6));
}

TEST_CASE("cwtm_weights analytic and invariance") {
    Tensor uniform({4, 3},
                   {0.9, 0.05, 0.05, 0.05, 0.9, 0.05, 0.05, 0.05, 0.9, 0.9, 0.05, 0.05});
    Tensor w = cwtm_weights(uniform);
    for (std::size_t s = 0; s < 4; ++s) CHECK(w[s] == doctest::Approx(0.25).epsilon(1e-12));

    Tensor two({2, 5}, {0.8, 0.05, 0.05, 0.05, 0.05, 0.2, 0.2, 0.2, 0.2, 0.2});
    Tensor w2 = cwtm_weights(two);
    CHECK(w2[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(w2[1] == doctest::Approx(0.2).epsilon(1e-12));

    // Permuting within a row leaves the weights unchanged.
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor p = test::random_prob_rows(3, 5, rng);
        Tensor permuted = p;
        auto perm = rng.permutation(5);
        for (std::size_t i = 0; i < 5; ++i) permuted[1 * 5 + i] = p[1 * 5 + perm[i]];
        Tensor wa = cwtm_weights(p);
        Tensor wb = cwtm_weights(permuted);
        for (std::size_t s = 0; s < 3; ++s) {
            CHECK(std::abs(static_cast<double>(wa[s] - wb[s])) < 1e-15);
        }
        double sum = 0;
        for (std::size_t s = 0; s < 3; ++s) sum += static_cast<double>(wa[s]);
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }

    CHECK_THROWS_AS(cwtm_weights(Tensor({2, 2})), ArgumentError); // all-zero rows
}

TEST_CASE("cwtm_gradient degeneracy and scaling") {
    Rng rng(14);
    const std::size_t b = 6, n = 4;
    Tensor z = test::random_tensor({b, n}, rng, -2.0, 2.0);
    std::vector<int> labels = test::random_labels(b, n, rng);

    // Equal teacher maxima: reduces to the plain CE gradient rows.
    Tensor equal_max({b, n});
    for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t i = 0; i < n; ++i) equal_max[s * n + i] = real(0.1);
        equal_max[s * n + (s % n)] = real(0.7);
    }
    Tensor cw = cwtm_gradient(z, labels, equal_max);
    Tensor ce = ce_gradient(z, labels);
    for (std::size_t i = 0; i < cw.numel(); ++i) {
        CHECK(std::abs(static_cast<double>(cw[i] - ce[i])) < 1e-12);
    }

    // b=2 with maxes 0.8 / 0.2: per-sample contributions scale 4:1, and each
    // row is b*w_s times its CE row.
    Tensor z2 = test::random_tensor({2, 3}, rng, -1.0, 1.0);
    std::vector<int> labels2 = {2, 0};
    Tensor probs2({2, 3}, {0.8, 0.1, 0.1, 0.2, 0.4, 0.4});
    CHECK(cwtm_weights(probs2)[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    Tensor cw2 = cwtm_gradient(z2, labels2, probs2);
    Tensor ce2 = ce_gradient(z2, labels2);
    // w = [0.8, 0.4] / 1.2 -> b*w = [4/3, 2/3]; ratio of scalings is 4:1... via 0.8/0.2
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(static_cast<double>(cw2[i]) ==
              doctest::Approx(2.0 * 0.8 / 1.2 * static_cast<double>(ce2[i])).epsilon(1e-12));
        CHECK(static_cast<double>(cw2[3 + i]) ==
              doctest::Approx(2.0 * 0.4 / 1.2 * static_cast<double>(ce2[3 + i])).epsilon(1e-12));
    }
}

TEST_CASE("dkpp target construction") {
    SUBCASE("n=3 enumeration: both permutations appear with equal frequency") {
        Tensor p({1, 3}, {0.7, 0.2, 0.1});
        std::map<std::string, int> counts;
        Rng rng(100);
        const int trials = 4000;
        for (int i = 0; i < trials; ++i) {
            Tensor t = dkpp_targets(p, {0}, rng);
            std::ostringstream key;
            key << t[0] << '|' << t[1] << '|' << t[2];
            counts[key.str()] += 1;
            CHECK(t[0] == doctest::Approx(0.7));
            CHECK(std::abs(static_cast<double>(t[0] + t[1] + t[2]) - 1.0) < 1e-12);
        }
        REQUIRE(counts.size() == 2);
        for (const auto& [key, count] : counts) {
            CHECK(count > trials / 2 - 200);
            CHECK(count < trials / 2 + 200);
        }
    }

    SUBCASE("n=2 degenerates to [max at y, other value]") {
        Tensor p({1, 2}, {0.3, 0.7});
        Rng rng(5);
        Tensor t = dkpp_targets(p, {0}, rng);
        CHECK(t[0] == doctest::Approx(0.7));
        CHECK(t[1] == doctest::Approx(0.3));
    }

    SUBCASE("teacher argmax disagrees with the label") {
        Tensor p({1, 3}, {0.2, 0.7, 0.1});
        Rng rng(6);
        for (int i = 0; i < 20; ++i) {
            Tensor t = dkpp_targets(p, {0}, rng);
            CHECK(t[0] == doctest::Approx(0.7));
            const bool order_a = t[1] == real(0.2) && t[2] == real(0.1);
            const bool order_b = t[1] == real(0.1) && t[2] == real(0.2);
            CHECK((order_a || order_b));
        }
    }

    SUBCASE("multiset preserved bit-exactly, max at ground truth") {
        Rng data_rng(16);
        Rng perm_rng(17);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t b = 1 + data_rng.below(4), n = 2 + data_rng.below(8);
            Tensor p = test::random_prob_rows(b, n, data_rng);
            std::vector<int> labels = test::random_labels(b, n, data_rng);
            Tensor t = dkpp_targets(p, labels, perm_rng);
            for (std::size_t s = 0; s < b; ++s) {
                std::vector<real> src(p.data() + s * n, p.data() + (s + 1) * n);
                std::vector<real> dst(t.data() + s * n, t.data() + (s + 1) * n);
                std::sort(src.begin(), src.end());
                std::sort(dst.begin(), dst.end());
                CHECK(src == dst); // bit-equal values, rearranged
                CHECK(t[s * n + static_cast<std::size_t>(labels[s])] == src.back());
            }
        }
    }
}

TEST_CASE("combined_loss kind semantics") {
    Rng rng(18);
    const std::size_t b = 4, n = 5;
    Tensor z = test::random_tensor({b, n}, rng, -2.0, 2.0);
    std::vector<int> labels = test::random_labels(b, n, rng);
    DistillTargets targets(test::random_prob_rows(b, n, rng), labels);

    DistillObjective kd{ObjectiveKind::kKd, 1.0, 1.0, 0};
    DistillObjective kdl0{ObjectiveKind::kKdPlusLabel, 1.0, 0.0, 0};
    CHECK(combined_loss(kdl0, z, targets) == doctest::Approx(combined_loss(kd, z, targets)).epsilon(1e-15));

    DistillTargets hot(onehot(labels, n), labels);
    DistillObjective ce{ObjectiveKind::kCe, 1.0, 1.0, 0};
    CHECK(combined_loss(kd, z, hot) == doctest::Approx(combined_loss(ce, z, hot)).epsilon(1e-15));

    DistillObjective dkpp{ObjectiveKind::kDkpp, 1.0, 1.0, 0};
    CHECK_THROWS_AS(combined_loss(dkpp, z, targets), ArgumentError); // rng required
}

TEST_CASE("closed-form gradients match autodiff for every objective kind") {
    Rng rng(20);
    const double tol = 1e-10;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t b = 2 + rng.below(5), n = 2 + rng.below(6);
        Tensor z = test::random_tensor({b, n}, rng, -2.5, 2.5);
        std::vector<int> labels = test::random_labels(b, n, rng);
        Tensor probs = test::random_prob_rows(b, n, rng);

        auto check_kind = [&](DistillObjective objective, const DistillTargets& targets) {
            Rng grad_rng(777);
            Rng loss_rng(777);
            const Tensor rows = objective_gradient(objective, z, targets, &grad_rng);

            Graph g;
            Var zv = g.param("z", z);
            Var loss = objective_loss(g, objective, zv, targets, &loss_rng);
            ParameterSet grads = g.backward(loss);
            const Tensor& auto_grad = grads.at("z");
            for (std::size_t i = 0; i < rows.numel(); ++i) {
                const double expected = static_cast<double>(rows[i]) / static_cast<double>(b);
                CHECK(std::abs(expected - static_cast<double>(auto_grad[i])) < tol);
            }

            // combined_loss agrees with the tape value.
            Rng value_rng(777);
            CHECK(combined_loss(objective, z, targets, &value_rng) ==
                  doctest::Approx(static_cast<double>(loss.value()[0])).epsilon(1e-12));
        };

        check_kind({ObjectiveKind::kCe, 1.0, 1.0, 0}, DistillTargets(probs, labels));
        check_kind({ObjectiveKind::kKd, 1.0, 1.0, 0}, DistillTargets(probs, labels));
        check_kind({ObjectiveKind::kKd, 2.5, 1.0, 0}, DistillTargets(probs, labels));
        check_kind({ObjectiveKind::kKdPlusLabel, 1.0, 0.7, 0}, DistillTargets(probs, labels));
        check_kind({ObjectiveKind::kCwtm, 1.0, 1.0, 0}, DistillTargets(probs, labels));
        check_kind({ObjectiveKind::kDkpp, 1.0, 1.0, 0}, DistillTargets(probs, labels));
    }
}

TEST_CASE("decomposition csv layout and aggregates") {
    Rng rng(22);
    const std::size_t b = 5, n = 4;
    Tensor z = test::random_tensor({b, n}, rng, -2.0, 2.0);
    DistillTargets targets(test::random_prob_rows(b, n, rng), test::random_labels(b, n, rng));
    GradientDecomposition d = decompose_batch_gradient(z, targets);

    std::ostringstream os;
    write_decomposition_csv(os, d, targets);
    std::istringstream in(os.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "sample_index,true_class,teacher_max,teacher_prob_true,gt_term,dark_term_l1,row_sum_check");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        rows += 1;
        const auto last_comma = line.rfind(',');
        CHECK(std::stod(line.substr(last_comma + 1)) < 1e-12); // row_sum_check
    }
    CHECK(rows == b);

    DecompositionAggregate agg = aggregate_decomposition(d, targets);
    CHECK(agg.mean_teacher_prob_true > 0.0);
    CHECK(agg.mean_teacher_prob_true < 1.0);
    CHECK(agg.dark_l1_share > 0.0);
    CHECK(agg.dark_l1_share <= 1.0);
}

TEST_SUITE_END();
