#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "cign/tensor.hpp"

using namespace cign;

TEST_CASE("matmul identity and basis selection", "[tensor]") {
    Tape t;
    Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
    Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
    Tensor out = matmul(t, eye, m);
    CHECK(out.at(0, 0) == 1.0);
    CHECK(out.at(0, 1) == 2.0);
    CHECK(out.at(1, 0) == 3.0);
    CHECK(out.at(1, 1) == 4.0);

    Tensor sel = matmul(t, Tensor::from_rows({{1, 0}}), Tensor::from_rows({{0}, {5}}));
    CHECK(sel.at(0) == 0.0);
}

TEST_CASE("matmul shape error names both shapes", "[tensor]") {
    Tape t;
    Tensor a(Shape{2, 3}, 1.0);
    Tensor b(Shape{2, 3}, 1.0);
    try {
        matmul(t, a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("softmax forced values", "[tensor]") {
    Tape t;
    Tensor even = softmax(t, Tensor(Shape{2}, std::vector<double>{0.0, 0.0}), 0);
    CHECK(even.at(0) == Catch::Approx(0.5).margin(1e-12));
    CHECK(even.at(1) == Catch::Approx(0.5).margin(1e-12));

    Tensor forced = softmax(t, Tensor(Shape{2}, std::vector<double>{std::log(2.0), 0.0}), 0);
    CHECK(forced.at(0) == Catch::Approx(2.0 / 3.0).margin(1e-12));
    CHECK(forced.at(1) == Catch::Approx(1.0 / 3.0).margin(1e-12));

    CHECK_THROWS_AS(softmax(t, even, 3), ShapeError);
}

TEST_CASE("softmax slices sum to one and shift invariance", "[tensor]") {
    std::mt19937_64 rng(7);
    Tape t;
    for (int rep = 0; rep < 20; ++rep) {
        Tensor x = Tensor::randn({4, 6}, rng, 3.0);
        Tensor s = softmax(t, x, 1);
        for (std::size_t r = 0; r < 4; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < 6; ++c) {
                total += s.at(r, c);
                CHECK(s.at(r, c) >= 0.0);
            }
            CHECK(std::abs(total - 1.0) <= 1e-9);
        }
        Tensor sc = softmax(t, x, 0);
        for (std::size_t c = 0; c < 6; ++c) {
            double total = 0.0;
            for (std::size_t r = 0; r < 4; ++r) total += sc.at(r, c);
            CHECK(std::abs(total - 1.0) <= 1e-9);
        }
    }

    // Integer inputs and shift keep the stabilized arithmetic exact, so the
    // shift invariance holds bitwise.
    Tensor xi(Shape{5}, std::vector<double>{3, -2, 0, 7, 1});
    Tensor shifted(Shape{5}, std::vector<double>{3 + 64, -2 + 64, 0 + 64, 7 + 64, 1 + 64});
    Tensor a = softmax(t, xi, 0);
    Tensor b = softmax(t, shifted, 0);
    for (std::size_t i = 0; i < 5; ++i) CHECK(a.at(i) == b.at(i));
}

TEST_CASE("elementwise basics", "[tensor]") {
    Tape t;
    CHECK(sigmoid(t, Tensor::scalar(0.0)).item() == 0.5);
    CHECK(mean(t, Tensor(Shape{2}, std::vector<double>{2.0, 4.0})).item() == 3.0);

    Tensor c = concat(t, {Tensor(Shape{1, 3}, 1.0), Tensor(Shape{2, 3}, 2.0)}, 0);
    CHECK(c.shape() == Shape{3, 3});
    CHECK(c.at(0, 0) == 1.0);
    CHECK(c.at(2, 2) == 2.0);

    CHECK_THROWS_AS(concat(t, {Tensor(Shape{1, 3}, 1.0), Tensor(Shape{2, 4}, 2.0)}, 0),
                    ShapeError);
    CHECK_THROWS_AS(log(t, Tensor::scalar(-1.0)), DomainError);
    CHECK_THROWS_AS(log(t, Tensor::scalar(0.0)), DomainError);
    CHECK_THROWS_AS(add(t, Tensor(Shape{2, 3}, 1.0), Tensor(Shape{2}, 1.0)), ShapeError);
}

TEST_CASE("broadcast over leading extent", "[tensor]") {
    Tape t;
    Tensor a = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
    Tensor bias(Shape{3}, std::vector<double>{10, 20, 30});
    Tensor out = add(t, a, bias);
    CHECK(out.at(0, 0) == 11.0);
    CHECK(out.at(1, 2) == 36.0);

    Tensor s = mul(t, a, Tensor::scalar(2.0));
    CHECK(s.at(1, 1) == 10.0);
}

TEST_CASE("cosine similarity forced values", "[tensor]") {
    Tape t;
    std::mt19937_64 rng(3);
    Tensor v = Tensor::randn({5}, rng);
    CHECK(cosine_sim(t, v, v).item() == Catch::Approx(1.0).margin(1e-12));
    CHECK(cosine_sim(t, Tensor(Shape{2}, std::vector<double>{1, 0}),
                     Tensor(Shape{2}, std::vector<double>{0, 1}))
              .item() == 0.0);
    CHECK(cosine_sim(t, Tensor(Shape{2}, std::vector<double>{1, 1}),
                     Tensor(Shape{2}, std::vector<double>{1, 0}))
              .item() == Catch::Approx(1.0 / std::sqrt(2.0)).margin(1e-12));
    CHECK_THROWS_AS(cosine_sim(t, Tensor(Shape{5}, 0.0), v), DomainError);
}

TEST_CASE("backward analytic cases", "[tensor]") {
    {
        Tape t;
        Tensor x = Tensor::scalar(3.0, true);
        Tensor loss = mul(t, x, x);
        x.zero_grad();
        t.backward(loss);
        CHECK(x.grad_at(0) == Catch::Approx(6.0).margin(1e-12));
    }
    {
        // softmax always sums to 1, so the gradient of its sum vanishes.
        Tape t;
        std::mt19937_64 rng(11);
        Tensor x = Tensor::randn({6}, rng, 2.0, true);
        Tensor loss = sum(t, softmax(t, x, 0));
        x.zero_grad();
        t.backward(loss);
        for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(x.grad_at(i)) <= 1e-12);
    }
    {
        Tape t;
        Tensor x(Shape{2, 2}, 1.0, true);
        CHECK_THROWS_AS(t.backward(x), ShapeError);
    }
}

TEST_CASE("gradient accumulation over shared use", "[tensor]") {
    Tape t;
    Tensor x = Tensor::scalar(2.0, true);
    Tensor y = add(t, x, x);
    x.zero_grad();
    t.backward(y);
    CHECK(x.grad_at(0) == 2.0);
}

TEST_CASE("rows transpose reshape div", "[tensor]") {
    Tape t;
    Tensor m = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
    Tensor block = rows(t, m, 1, 2);
    CHECK(block.shape() == Shape{2, 2});
    CHECK(block.at(0, 0) == 3.0);
    CHECK_THROWS_AS(rows(t, m, 2, 2), ShapeError);

    Tensor mt = transpose(t, m);
    CHECK(mt.shape() == Shape{2, 3});
    CHECK(mt.at(0, 2) == 5.0);

    Tensor flat = reshape(t, m, {6});
    CHECK(flat.at(5) == 6.0);
    CHECK_THROWS_AS(reshape(t, m, {4}), ShapeError);

    Tensor q = div(t, Tensor(Shape{2}, std::vector<double>{6.0, 9.0}),
                   Tensor(Shape{2}, std::vector<double>{2.0, 3.0}));
    CHECK(q.at(0) == 3.0);
    CHECK(q.at(1) == 3.0);

    Tensor dr = div_rows(t, Tensor::from_rows({{2, 4}, {9, 12}}),
                         Tensor(Shape{2}, std::vector<double>{2.0, 3.0}));
    CHECK(dr.at(0, 1) == 2.0);
    CHECK(dr.at(1, 0) == 3.0);
}

TEST_CASE("normalize columns sums to one and skips empty columns", "[tensor]") {
    Tape t;
    Tensor a = Tensor::from_rows({{1, 0, 3}, {3, 0, 9}});
    Tensor n = normalize_columns(t, a);
    CHECK(n.at(0, 0) == 0.25);
    CHECK(n.at(1, 0) == 0.75);
    CHECK(n.at(0, 1) == 0.0);
    CHECK(n.at(1, 1) == 0.0);
    CHECK(n.at(0, 2) == 0.25);
    CHECK(n.at(1, 2) == 0.75);

    // A single row normalizes to exactly one whatever its magnitude.
    Tensor single(Shape{1, 3}, std::vector<double>{1e-18, 5.0, 3e14});
    Tensor sn = normalize_columns(t, single);
    for (std::size_t j = 0; j < 3; ++j) CHECK(sn.at(0, j) == 1.0);

    // Gradient flows only through occupied columns.
    Tensor b(Shape{2, 2}, std::vector<double>{1.0, 0.0, 3.0, 0.0}, true);
    Tensor mask = Tensor::from_rows({{5, 7}, {11, 13}});
    Tensor loss = sum(t, mul(t, normalize_columns(t, b), mask));
    b.zero_grad();
    t.backward(loss);
    // Quotient rule for (5 a0 + 11 a1) / (a0 + a1) at (1, 3):
    // (up_l - sum(up * out)) / mass with sum(up * out) = 5/4 + 33/4 = 9.5.
    CHECK(b.grad_at(0) == Catch::Approx((5.0 - 9.5) / 4.0).margin(1e-12));
    CHECK(b.grad_at(2) == Catch::Approx((11.0 - 9.5) / 4.0).margin(1e-12));
    CHECK(b.grad_at(1) == 0.0);
    CHECK(b.grad_at(3) == 0.0);

    CHECK_THROWS_AS(normalize_columns(t, Tensor(Shape{4}, 1.0)), ShapeError);
}

TEST_CASE("hard one hot straight through", "[tensor]") {
    Tape t;
    Tensor soft(Shape{2, 3}, std::vector<double>{0.2, 0.5, 0.3, 0.6, 0.1, 0.3}, true);
    Tensor hard = hard_one_hot(t, soft);
    CHECK(hard.at(0, 1) == 1.0);
    CHECK(hard.at(0, 0) == 0.0);
    CHECK(hard.at(1, 0) == 1.0);

    Tensor mask = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
    Tensor loss = sum(t, mul(t, hard, mask));
    soft.zero_grad();
    t.backward(loss);
    // straight-through: gradient lands on the soft distribution unchanged
    CHECK(soft.grad_at(0) == 1.0);
    CHECK(soft.grad_at(5) == 6.0);
}

TEST_CASE("clamp behavior", "[tensor]") {
    Tape t;
    Tensor x(Shape{3}, std::vector<double>{-2.0, 0.5, 9.0}, true);
    Tensor y = clamp(t, x, 0.0, 1.0);
    CHECK(y.at(0) == 0.0);
    CHECK(y.at(1) == 0.5);
    CHECK(y.at(2) == 1.0);
    Tensor loss = sum(t, y);
    x.zero_grad();
    t.backward(loss);
    CHECK(x.grad_at(0) == 0.0);
    CHECK(x.grad_at(1) == 1.0);
    CHECK(x.grad_at(2) == 0.0);
}

TEST_CASE("seeded pipeline is bit deterministic", "[tensor]") {
    auto run = [] {
        std::mt19937_64 rng(99);
        Tape t;
        Tensor x = Tensor::randn({4, 4}, rng, 1.7, true);
        Tensor w = Tensor::randn({4, 4}, rng, 0.3, true);
        Tensor y = softmax(t, matmul(t, x, w), 1);
        Tensor loss = sum(t, mul(t, y, x));
        x.zero_grad();
        w.zero_grad();
        t.backward(loss);
        std::vector<double> out(y.raw());
        out.insert(out.end(), x.grad().begin(), x.grad().end());
        out.push_back(loss.item());
        return out;
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("finite forward on finite inputs", "[tensor]") {
    std::mt19937_64 rng(5);
    Tape t;
    Tensor x = Tensor::randn({3, 5}, rng, 10.0);
    CHECK(all_finite(softmax(t, x, 1)));
    CHECK(all_finite(sigmoid(t, x)));
    CHECK(all_finite(exp(t, scale(t, x, 0.1))));
}
