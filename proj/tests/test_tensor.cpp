#include <doctest.h>

#include <cmath>
#include <vector>

#include "dasc/grad_check.hpp"
#include "dasc/rng.hpp"
#include "dasc/tensor.hpp"

using namespace dasc;

namespace {

// Independent reference product (j-outer order, never shares code with the
// library kernel).
std::vector<double> ref_matmul(const std::vector<double>& a,
                               const std::vector<double>& b, std::size_t m,
                               std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
            c[i * n + j] = s;
        }
    }
    return c;
}

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = false) {
    return Tensor::randn(std::move(shape), rng, 1.0, requires_grad);
}

} // namespace

TEST_CASE("matmul basics") {
    Tape t;
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor c = matmul(t, eye, a);
    CHECK(c.data() == a.data());

    Tensor one = matmul(t, Tensor::from_data({1, 1}, {2.0}),
                        Tensor::from_data({1, 1}, {3.0}));
    CHECK(one.item() == doctest::Approx(6.0));

    // A*I == A exactly
    Tensor ai = matmul(t, a, eye);
    CHECK(ai.data() == a.data());
}

TEST_CASE("matmul matches triple-loop reference") {
    Rng rng(11);
    Tape t;
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    Tensor c = matmul(t, a, b);
    auto ref = ref_matmul(a.data(), b.data(), 3, 4, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        CHECK(std::fabs(c.data()[i] - ref[i]) < 1e-12);
    }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape t;
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 2});
    CHECK_THROWS_WITH_AS(matmul(t, a, b),
                         doctest::Contains("[2x3]"), ShapeError);
    try {
        matmul(t, a, b);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("elementwise forward values") {
    Tape t;
    Tensor z = Tensor::scalar(0.0);
    CHECK(sigmoid(t, z).item() == doctest::Approx(0.5));
    CHECK(sigmoid(t, Tensor::scalar(2.0)).item() ==
          doctest::Approx(0.8807970779778823).epsilon(1e-12));

    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_data({3}, {10, 20, 30});
    Tensor s = add(t, x, b);
    CHECK(s.at(1, 2) == doctest::Approx(36.0));

    CHECK_THROWS_AS(add(t, x, Tensor::zeros({2})), ShapeError);
}

TEST_CASE("layer_norm of a constant vector stays near zero") {
    Tape t;
    Tensor x = Tensor::full({4}, 3.5);
    Tensor g = Tensor::full({4}, 1.0);
    Tensor b = Tensor::zeros({4});
    Tensor y = layer_norm(t, x, g, b);
    for (double v : y.data()) CHECK(std::fabs(v) < 1e-2);
}

TEST_CASE("embedding lookup bounds") {
    Tape t;
    Tensor table = Tensor::from_data({3, 2}, {0, 1, 2, 3, 4, 5});
    std::vector<int> ids{2, 0};
    Tensor out = embedding_lookup(t, table, ids);
    CHECK(out.at(0, 0) == doctest::Approx(4.0));
    CHECK(out.at(1, 1) == doctest::Approx(1.0));
    std::vector<int> bad{3};
    CHECK_THROWS_AS(embedding_lookup(t, table, bad), IndexError);
}

TEST_CASE("softmax_xent values") {
    Tape t;
    SUBCASE("uniform logits") {
        Tensor logits = Tensor::zeros({2, 4});
        std::vector<int> targets{1, 3};
        CHECK(softmax_xent(t, logits, targets).item() ==
              doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SUBCASE("dominant logit") {
        Tensor logits = Tensor::zeros({1, 4});
        logits.data()[2] = 1000.0;
        std::vector<int> targets{2};
        CHECK(softmax_xent(t, logits, targets).item() ==
              doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("hand-evaluated case") {
        Tensor logits = Tensor::from_data({1, 3}, {1, 2, 3});
        std::vector<int> targets{2};
        CHECK(softmax_xent(t, logits, targets).item() ==
              doctest::Approx(0.40760596444438064).epsilon(1e-12));
    }
    SUBCASE("target out of range") {
        Tensor logits = Tensor::zeros({1, 3});
        std::vector<int> targets{3};
        CHECK_THROWS_AS(softmax_xent(t, logits, targets), IndexError);
    }
}

TEST_CASE("bce_with_logits values") {
    Tape t;
    CHECK(bce_with_logits(t, Tensor::scalar(0.0), 1).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_with_logits(t, Tensor::scalar(20.0), 1).item() ==
          doctest::Approx(0.0).epsilon(1e-8));
    CHECK(bce_with_logits(t, Tensor::scalar(-1.0), 0).item() ==
          doctest::Approx(0.31326168751822286).epsilon(1e-12));
    CHECK_THROWS_AS(bce_with_logits(t, Tensor::scalar(0.0), 0.5), Error);
}

TEST_CASE("backward basics") {
    SUBCASE("sum gives ones") {
        Tape t;
        Tensor x = Tensor::from_data({2, 2}, {1, -2, 3, 0.5}, true);
        Tensor loss = sum(t, x);
        t.backward(loss);
        for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
    }
    SUBCASE("x squared at 3") {
        Tape t;
        Tensor x = Tensor::scalar(3.0, true);
        Tensor loss = mul(t, x, x);
        t.backward(loss);
        CHECK(x.grad()[0] == doctest::Approx(6.0));
    }
    SUBCASE("double backward rejected; reset replays identically") {
        Tape t;
        Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
        Tensor loss = sum(t, mul(t, x, x));
        t.backward(loss);
        auto g1 = x.grad();
        CHECK_THROWS_AS(t.backward(loss), StateError);
        t.reset();
        t.backward(loss);
        CHECK(x.grad() == g1);
    }
    SUBCASE("non-scalar loss rejected") {
        Tape t;
        Tensor x = Tensor::from_data({2}, {1, 2}, true);
        Tensor y = mul(t, x, x);
        CHECK_THROWS_AS(t.backward(y), Error);
    }
    SUBCASE("foreign loss rejected") {
        Tape t;
        Tensor x = Tensor::scalar(1.0, true);
        CHECK_THROWS_AS(t.backward(x), StateError);
    }
}

TEST_CASE("grad accumulates when a tensor is used twice") {
    Tape t;
    Tensor x = Tensor::scalar(2.0, true);
    // loss = x*x + 3x -> d/dx = 2x + 3 = 7
    Tensor loss = add(t, mul(t, x, x), scale(t, x, 3.0));
    t.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("softmax_rows properties") {
    Rng rng(5);
    Tape t;
    Tensor x = random_tensor({6, 9}, rng);
    Tensor y = softmax_rows(t, x);
    for (std::size_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < 9; ++j) {
            const double p = y.at(r, j);
            CHECK(p > 0.0);
            s += p;
        }
        CHECK(std::fabs(s - 1.0) <= 1e-12);
    }

    Tensor sq = random_tensor({4, 4}, rng);
    Tensor yc = softmax_rows(t, sq, true);
    CHECK(yc.at(0, 1) == 0.0);
    CHECK(yc.at(0, 0) == doctest::Approx(1.0));
    CHECK(yc.at(2, 3) == 0.0);
}

TEST_CASE("grad_check on primitives") {
    Rng rng(42);

    SUBCASE("dot(x, x)") {
        Tensor x = Tensor::from_data({2}, {1, 2}, true);
        double err = grad_check(
            [](Tape& t, const Tensor& v) { return sum(t, mul(t, v, v)); }, x);
        CHECK(err < 1e-8);
        // analytic gradient is [2, 4]
        Tape t;
        Tensor loss = sum(t, mul(t, x, x));
        x.zero_grad();
        t.backward(loss);
        CHECK(x.grad()[0] == doctest::Approx(2.0));
        CHECK(x.grad()[1] == doctest::Approx(4.0));
    }

    SUBCASE("bce_with_logits") {
        Tensor z = Tensor::scalar(0.37, true);
        double err = grad_check(
            [](Tape& t, const Tensor& v) { return bce_with_logits(t, v, 1); }, z);
        CHECK(err < 1e-6);
    }

    SUBCASE("matmul both sides") {
        Tensor a = random_tensor({3, 4}, rng, true);
        Tensor b = random_tensor({4, 2}, rng, true);
        double ea = grad_check(
            [&b](Tape& t, const Tensor& v) { return sum(t, matmul(t, v, b)); }, a);
        double eb = grad_check(
            [&a](Tape& t, const Tensor& v) { return sum(t, matmul(t, a, v)); }, b);
        CHECK(ea < 1e-6);
        CHECK(eb < 1e-6);
    }

    SUBCASE("sigmoid / tanh / scale / add_scalar") {
        Tensor x = random_tensor({5}, rng, true);
        auto build = [](Tape& t, const Tensor& v) {
            Tensor a = sigmoid(t, v);
            Tensor b = dasc::tanh(t, scale(t, v, 1.7));
            return sum(t, mul(t, a, add_scalar(t, b, 0.3)));
        };
        CHECK(grad_check(build, x) < 1e-6);
    }

    SUBCASE("broadcast add/sub/mul") {
        Tensor x = random_tensor({4, 3}, rng, true);
        Tensor b = random_tensor({3}, rng, true);
        auto wrt_x = [&b](Tape& t, const Tensor& v) {
            return sum(t, mul(t, add(t, v, b), sub(t, v, b)));
        };
        CHECK(grad_check(wrt_x, x) < 1e-6);
        auto wrt_b = [&x](Tape& t, const Tensor& v) {
            return sum(t, mul(t, add(t, x, v), sub(t, x, v)));
        };
        CHECK(grad_check(wrt_b, b) < 1e-6);
    }

    SUBCASE("layer_norm wrt input, gain, bias") {
        Tensor x = random_tensor({3, 6}, rng, true);
        Tensor g = random_tensor({6}, rng, true);
        Tensor b = random_tensor({6}, rng, true);
        auto wsum = [](Tape& t, const Tensor& y) {
            // weighted sum so the gradient is not uniform
            std::vector<double> w(y.size());
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.1 * (i + 1);
            Tensor flat = y;
            return weighted_sum(t, flat, w);
        };
        CHECK(grad_check([&](Tape& t, const Tensor& v) {
                  return wsum(t, layer_norm(t, v, g, b));
              }, x) < 2e-6);
        CHECK(grad_check([&](Tape& t, const Tensor& v) {
                  return wsum(t, layer_norm(t, x, v, b));
              }, g) < 1e-6);
        CHECK(grad_check([&](Tape& t, const Tensor& v) {
                  return wsum(t, layer_norm(t, x, g, v));
              }, b) < 1e-6);
    }

    SUBCASE("embedding + concat + slices + transpose") {
        Tensor table = random_tensor({7, 4}, rng, true);
        std::vector<int> ids{1, 3, 3, 6};
        auto build = [&ids](Tape& t, const Tensor& tab) {
            Tensor e = embedding_lookup(t, tab, ids);
            Tensor top = slice_rows(t, e, 0, 2);
            Tensor bottom = slice_rows(t, e, 2, 2);
            Tensor cat = concat_cols(t, {top, bottom});
            Tensor back = concat_rows(t, {slice_cols(t, cat, 0, 4),
                                          slice_cols(t, cat, 4, 4)});
            return sum(t, mul(t, transpose(t, back), transpose(t, back)));
        };
        CHECK(grad_check(build, table) < 1e-6);
    }

    SUBCASE("softmax_rows causal and full") {
        Tensor x = random_tensor({4, 4}, rng, true);
        auto weighted = [](Tape& t, const Tensor& y) {
            std::vector<double> w(y.size());
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(0.7 * i + 1);
            return weighted_sum(t, y, w);
        };
        CHECK(grad_check([&](Tape& t, const Tensor& v) {
                  return weighted(t, softmax_rows(t, v, false));
              }, x) < 1e-6);
        CHECK(grad_check([&](Tape& t, const Tensor& v) {
                  return weighted(t, softmax_rows(t, v, true));
              }, x) < 1e-6);
    }

    SUBCASE("softmax_xent") {
        Tensor logits = random_tensor({3, 5}, rng, true);
        std::vector<int> targets{0, 4, 2};
        CHECK(grad_check([&targets](Tape& t, const Tensor& v) {
                  return softmax_xent(t, v, targets);
              }, logits) < 1e-6);
    }

    SUBCASE("select_positions / row_dot / row_sum / matvec") {
        Tensor m = random_tensor({3, 4}, rng, true);
        std::vector<int> idx{2, 0, 3};
        CHECK(grad_check([&idx](Tape& t, const Tensor& v) {
                  return sum(t, select_positions(t, v, idx));
              }, m) < 1e-6);
        Tensor b2 = random_tensor({3, 4}, rng, true);
        CHECK(grad_check([&b2](Tape& t, const Tensor& v) {
                  return sum(t, row_dot(t, v, b2));
              }, m) < 1e-6);
        CHECK(grad_check([](Tape& t, const Tensor& v) {
                  return mean(t, row_sum(t, v));
              }, m) < 1e-6);
        Tensor vx = random_tensor({4}, rng, true);
        CHECK(grad_check([&vx](Tape& t, const Tensor& v) {
                  return sum(t, matvec(t, v, vx));
              }, m) < 1e-6);
        CHECK(grad_check([&m](Tape& t, const Tensor& v) {
                  return sum(t, matvec(t, m, v));
              }, vx) < 1e-6);
    }

    SUBCASE("bce weighted sum") {
        Tensor z = random_tensor({6}, rng, true);
        std::vector<double> labels{1, 0, 1, 1, 0, 0};
        std::vector<double> weights{1, 1, 0, 2, 1, 0};
        CHECK(grad_check([&](Tape& t, const Tensor& v) {
                  return bce_with_logits_weighted_sum(t, v, labels, weights);
              }, z) < 1e-6);
    }
}

TEST_CASE("composite mlp loss passes grad_check") {
    Rng rng(7);
    Tensor x = random_tensor({2, 6}, rng, true);
    Tensor w1 = random_tensor({6, 5}, rng);
    Tensor b1 = random_tensor({5}, rng);
    Tensor w2 = random_tensor({5, 3}, rng);
    std::vector<int> targets{1, 2};
    auto build = [&](Tape& t, const Tensor& v) {
        Tensor h = dasc::tanh(t, add(t, matmul(t, v, w1), b1));
        Tensor logits = matmul(t, h, w2);
        return softmax_xent(t, logits, targets);
    };
    CHECK(grad_check(build, x) < 1e-4);
}

TEST_CASE("no-grad tape records nothing") {
    Tape t(false);
    Tensor x = Tensor::from_data({2}, {1, 2}, true);
    Tensor y = sum(t, mul(t, x, x));
    CHECK(y.item() == doctest::Approx(5.0));
    CHECK(t.num_ops() == 0);
    CHECK_FALSE(y.tracked());
    CHECK_THROWS_AS(t.backward(y), StateError);
}

TEST_CASE("rng determinism and derivation") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(Rng::derive(1, 2) == Rng::derive(1, 2));
    CHECK(Rng::derive(1, 2) != Rng::derive(1, 3));
    CHECK(Rng::derive(1, 2) != Rng::derive(2, 2));

    Rng c(9);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.uniform_real();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        const auto k = c.uniform_int(-3, 3);
        CHECK(k >= -3);
        CHECK(k <= 3);
    }
}
