#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "nsva/checkpoint.hpp"
#include "nsva/optim.hpp"
#include "nsva/tensor.hpp"
#include "support/finite_diff.hpp"

using namespace nsva;
using nsva::testing::finite_diff_check;

TEST_CASE("matmul identity and hand arithmetic") {
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(7);
    Tensor b = Tensor::randn({3, 5}, rng);
    Tensor c = matmul(eye, b);
    for (std::size_t i = 0; i < b.numel(); ++i) CHECK(c.data()[i] == b.data()[i]);

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor v({2, 1}, {1, 1});
    Tensor r = matmul(a, v);
    CHECK(r.at(0, 0) == 3.0);
    CHECK(r.at(1, 0) == 7.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a({2, 3});
    Tensor b({4, 2});
    try {
        matmul(a, b);
        FAIL("expected dimension error");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches central finite differences") {
    Rng rng(11);
    Tensor a = Tensor::randn({5, 4}, rng);
    Tensor b = Tensor::randn({4, 6}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    // weight the output so the gradient is not uniform
    Tensor w = Tensor::randn({5, 6}, rng);

    auto loss_fn = [&]() { return sum(mul(matmul(a, b), w)).value(); };
    Tensor loss = sum(mul(matmul(a, b), w));
    backward(loss);

    std::vector<Tensor> params{a, b};
    auto res = finite_diff_check(params, loss_fn);
    CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("softmax basics") {
    Tensor x({4}, {1.5, 1.5, 1.5, 1.5});
    Tensor y = softmax(x, 0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(y.at(i) == Catch::Approx(0.25).margin(1e-12));

    SECTION("shift invariance") {
        Rng rng(3);
        Tensor a = Tensor::randn({2, 5}, rng);
        Tensor shifted = a.detach();
        for (double& v : shifted.data()) v += 13.25;
        Tensor ya = softmax(a, 1);
        Tensor yb = softmax(shifted, 1);
        for (std::size_t i = 0; i < ya.numel(); ++i)
            CHECK(ya.data()[i] == Catch::Approx(yb.data()[i]).margin(1e-12));
    }

    SECTION("rows sum to one") {
        Rng rng(4);
        Tensor a = Tensor::randn({6, 9}, rng, 3.0);
        Tensor y = softmax(a, 1);
        for (std::size_t i = 0; i < 6; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < 9; ++j) s += y.at(i, j);
            CHECK(std::abs(s - 1.0) < 1e-9);
        }
    }

    SECTION("axis 0 matches transposed axis 1") {
        Rng rng(5);
        Tensor a = Tensor::randn({3, 4}, rng);
        Tensor y0 = softmax(a, 0);
        for (std::size_t j = 0; j < 4; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < 3; ++i) s += y0.at(i, j);
            CHECK(s == Catch::Approx(1.0).margin(1e-12));
        }
    }

    SECTION("non-finite input raises") {
        Tensor bad({2}, {1.0, std::nan("")});
        CHECK_THROWS_AS(softmax(bad, 0), std::domain_error);
    }

    SECTION("minus-infinity entries get exactly zero weight") {
        double ninf = -std::numeric_limits<double>::infinity();
        Tensor a({1, 3}, {0.3, ninf, 0.9});
        Tensor y = softmax(a, 1);
        CHECK(y.at(0, 1) == 0.0);
        CHECK(y.at(0, 0) + y.at(0, 2) == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("softmax gradient vs finite differences") {
    Rng rng(21);
    Tensor x = Tensor::randn({8}, rng);
    x.set_requires_grad(true);
    Tensor w = Tensor::randn({8}, rng);
    auto loss_fn = [&]() { return sum(mul(softmax(x, 0), w)).value(); };
    backward(sum(mul(softmax(x, 0), w)));
    std::vector<Tensor> params{x};
    CHECK(finite_diff_check(params, loss_fn).max_rel_err < 1e-6);
}

TEST_CASE("layer_norm basics") {
    Tensor gain = Tensor::ones({6});
    Tensor bias = Tensor::zeros({6});

    SECTION("constant row maps to zeros") {
        Tensor x = Tensor::full({2, 6}, 3.7);
        Tensor y = layer_norm(x, gain, bias);
        for (double v : y.data()) CHECK(std::abs(v) < 1e-9);
    }

    SECTION("output row mean is approximately the bias mean") {
        Rng rng(9);
        Tensor x = Tensor::randn({4, 6}, rng, 2.5);
        Tensor y = layer_norm(x, gain, bias);
        for (std::size_t i = 0; i < 4; ++i) {
            double m = 0;
            for (std::size_t j = 0; j < 6; ++j) m += y.at(i, j);
            m /= 6.0;
            CHECK(std::abs(m) < 1e-6);
        }
    }
}

TEST_CASE("layer_norm gradient vs finite differences") {
    Rng rng(13);
    Tensor x = Tensor::randn({3, 7}, rng);
    Tensor gain = Tensor::randn({7}, rng, 0.5);
    Tensor bias = Tensor::randn({7}, rng, 0.5);
    x.set_requires_grad(true);
    gain.set_requires_grad(true);
    bias.set_requires_grad(true);
    Tensor w = Tensor::randn({3, 7}, rng);
    auto loss_fn = [&]() { return sum(mul(layer_norm(x, gain, bias), w)).value(); };
    backward(sum(mul(layer_norm(x, gain, bias), w)));
    std::vector<Tensor> params{x, gain, bias};
    CHECK(finite_diff_check(params, loss_fn).max_rel_err < 1e-5);
}

TEST_CASE("cross_entropy analytic cases") {
    SECTION("uniform logits give T*ln(V)") {
        Tensor logits = Tensor::full({5, 11}, 0.42);
        std::vector<int> targets{0, 3, 7, 10, 5};
        Tensor loss = cross_entropy(logits, targets);
        CHECK(loss.value() == Catch::Approx(5.0 * std::log(11.0)).margin(1e-10));
    }

    SECTION("confident logits approach zero loss") {
        Tensor logits = Tensor::zeros({3, 4});
        std::vector<int> targets{1, 2, 0};
        for (std::size_t t = 0; t < 3; ++t) logits.at(t, targets[t]) = 60.0;
        Tensor loss = cross_entropy(logits, targets);
        CHECK(loss.value() < 1e-10);
    }

    SECTION("matches an independent log-sum-exp evaluation") {
        Rng rng(17);
        Tensor logits = Tensor::randn({5, 11}, rng, 2.0);
        std::vector<int> targets{4, 0, 9, 2, 6};
        Tensor loss = cross_entropy(logits, targets);
        // independent route: direct log-sum-exp per row
        double expect = 0.0;
        for (std::size_t t = 0; t < 5; ++t) {
            double mx = -1e300;
            for (std::size_t j = 0; j < 11; ++j) mx = std::max(mx, logits.at(t, j));
            double s = 0.0;
            for (std::size_t j = 0; j < 11; ++j) s += std::exp(logits.at(t, j) - mx);
            expect += mx + std::log(s) - logits.at(t, static_cast<std::size_t>(targets[t]));
        }
        CHECK(loss.value() == Catch::Approx(expect).margin(1e-10));
    }

    SECTION("out-of-range index raises") {
        Tensor logits = Tensor::zeros({2, 3});
        CHECK_THROWS_AS(cross_entropy(logits, {0, 3}), std::out_of_range);
    }

    SECTION("ignore_index positions contribute nothing") {
        Tensor logits = Tensor::full({3, 5}, 1.0);
        Tensor a = cross_entropy(logits, {2, -1, 4});
        Tensor b = cross_entropy(slice_rows(logits, 0, 1), {2});
        CHECK(a.value() == Catch::Approx(2.0 * std::log(5.0)).margin(1e-10));
        CHECK(b.value() == Catch::Approx(std::log(5.0)).margin(1e-10));
    }
}

TEST_CASE("cross_entropy gradient vs finite differences") {
    Rng rng(31);
    Tensor logits = Tensor::randn({4, 6}, rng);
    logits.set_requires_grad(true);
    std::vector<int> targets{5, 1, -1, 3};
    auto loss_fn = [&]() { return cross_entropy(logits, targets).value(); };
    backward(cross_entropy(logits, targets));
    std::vector<Tensor> params{logits};
    CHECK(finite_diff_check(params, loss_fn).max_rel_err < 1e-6);
}

TEST_CASE("backward basics") {
    SECTION("grad of sum is ones") {
        Tensor x = Tensor::full({2, 3}, 2.0);
        x.set_requires_grad(true);
        backward(sum(x));
        for (double g : x.grad()) CHECK(g == 1.0);
    }

    SECTION("grad of sum of squares is 2x") {
        Rng rng(2);
        Tensor x = Tensor::randn({5}, rng);
        x.set_requires_grad(true);
        backward(sum(mul(x, x)));
        for (std::size_t i = 0; i < 5; ++i)
            CHECK(x.grad()[i] == Catch::Approx(2.0 * x.data()[i]).margin(1e-12));
    }

    SECTION("non-scalar loss is a usage error") {
        Tensor x = Tensor::ones({3});
        x.set_requires_grad(true);
        Tensor y = mul(x, x);
        CHECK_THROWS_AS(backward(y), std::invalid_argument);
    }

    SECTION("backward twice accumulates") {
        Tensor x = Tensor::ones({2});
        x.set_requires_grad(true);
        Tensor loss = sum(mul(x, x));
        backward(loss);
        backward(loss);
        for (double g : x.grad()) CHECK(g == Catch::Approx(4.0));
    }

    SECTION("value reused twice in the graph accumulates both paths") {
        Tensor x({1}, {3.0});
        x.set_requires_grad(true);
        Tensor loss = sum(add(mul(x, x), x));  // x^2 + x -> d/dx = 2x + 1
        backward(loss);
        CHECK(x.grad()[0] == Catch::Approx(7.0));
    }
}

TEST_CASE("structural op gradients") {
    Rng rng(41);
    Tensor a = Tensor::randn({4, 6}, rng);
    Tensor b = Tensor::randn({3, 6}, rng);
    Tensor bias = Tensor::randn({6}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    bias.set_requires_grad(true);
    Tensor w = Tensor::randn({7, 10}, rng);
    Tensor w2 = Tensor::randn({10, 6}, rng);

    auto build = [&]() {
        Tensor cat = concat_rows({a, b});                   // 7x6
        Tensor g = gather_rows(cat, {0, 2, 2, 6, 5, 1});    // 6x6
        Tensor biased = add_rowvec(g, bias);                // 6x6
        Tensor wide = concat_cols({biased, slice_cols(g, 1, 5)});  // 6x10
        Tensor part = slice_rows(wide, 1, 4);               // 3x10
        Tensor act = gelu(part);
        Tensor stacked = concat_rows(
            {act, slice_rows(wide, 0, 3), reshape(mean_rows(wide), {1, 10})});  // 7x10
        return add(sum(mul(stacked, w)), sum(mul(transpose(wide), w2)));
    };
    backward(build());
    auto loss_fn = [&]() { return build().value(); };
    std::vector<Tensor> params{a, b, bias};
    CHECK(finite_diff_check(params, loss_fn).max_rel_err < 1e-5);
}

TEST_CASE("NoGradGuard suppresses graph recording") {
    Tensor x = Tensor::ones({3});
    x.set_requires_grad(true);
    NoGradGuard ng;
    Tensor y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("learning rate schedule shape") {
    LrSchedule s{10, 100, 3e-4};
    CHECK(s.lr(0) == 0.0);
    CHECK(s.lr(10) == Catch::Approx(3e-4));
    CHECK(s.lr(100) == 0.0);
    CHECK(s.lr(200) == 0.0);

    // continuous, nonnegative, piecewise linear with exactly one peak
    std::size_t peaks = 0;
    for (std::size_t t = 1; t + 1 <= 100; ++t) {
        double prev = s.lr(t - 1), cur = s.lr(t), next = s.lr(t + 1);
        CHECK(cur >= 0.0);
        if (cur >= prev && cur > next) ++peaks;
    }
    CHECK(peaks == 1);
    // linearity within segments
    CHECK(s.lr(5) == Catch::Approx(0.5 * 3e-4));
    CHECK(s.lr(55) == Catch::Approx(3e-4 * 45.0 / 90.0));
}

TEST_CASE("adam behaviour") {
    SECTION("zero learning rate leaves parameters unchanged") {
        Tensor p({2}, {1.0, -2.0});
        p.set_requires_grad(true);
        backward(sum(mul(p, p)));
        AdamState opt({p});
        LrSchedule s{10, 100, 1e-2};
        opt.step(s, 0);  // lr(0) == 0 under warmup
        CHECK(p.data()[0] == 1.0);
        CHECK(p.data()[1] == -2.0);
    }

    SECTION("first step with unit gradient moves by about lr") {
        Tensor p({1}, {5.0});
        p.set_requires_grad(true);
        p.grad_mut()[0] = 1.0;
        AdamState opt({p});
        LrSchedule s{0, 100, 1e-2};
        opt.step(s, 0);  // no warmup: lr == 1e-2 at step 0
        CHECK(p.data()[0] == Catch::Approx(5.0 - 1e-2).epsilon(1e-6));
    }

    SECTION("missing gradient is a usage error") {
        Tensor p = Tensor::ones({2});
        p.set_requires_grad(true);
        AdamState opt({p});
        // fresh optimizer params keep grads, so clear them
        Tensor q = Tensor::ones({2});
        AdamState opt2({q});
        LrSchedule s{0, 10, 1e-3};
        CHECK_THROWS_AS(opt2.step(s, 1), std::runtime_error);
    }

    SECTION("100 steps shrink a convex quadratic loss by 100x") {
        Rng rng(77);
        Tensor p = Tensor::randn({6}, rng);
        p.set_requires_grad(true);
        AdamState opt({p});
        LrSchedule s{0, 1000, 0.05};
        auto loss_val = [&]() {
            double v = 0;
            for (double x : p.data()) v += x * x;
            return v;
        };
        double initial = loss_val();
        for (std::size_t step = 0; step < 100; ++step) {
            opt.zero_grad();
            backward(sum(mul(p, p)));
            opt.step(s, step);
        }
        CHECK(loss_val() <= initial / 100.0);
    }
}

TEST_CASE("optimizer determinism: same seed, bitwise-identical parameters") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        Tensor w = Tensor::randn({4, 4}, rng, 0.1);
        Tensor x = Tensor::randn({2, 4}, rng);
        w.set_requires_grad(true);
        AdamState opt({w});
        LrSchedule s{5, 50, 1e-2};
        for (std::size_t step = 0; step < 20; ++step) {
            opt.zero_grad();
            backward(sum(mul(matmul(x, w), matmul(x, w))));
            opt.step(s, step);
        }
        return w.data();
    };
    auto a = run(123);
    auto b = run(123);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    Rng rng(101);
    NamedArrays arrays;
    arrays.emplace_back("encoder.w", Tensor::randn({7, 5}, rng, 3.0));
    arrays.emplace_back("encoder.b", Tensor::randn({5}, rng));
    arrays.emplace_back("odd/value", Tensor({1}, {-0.0}));
    // include values that stress formatting: denormals, huge magnitudes
    arrays.emplace_back("extremes", Tensor({4}, {1e-308, -1e308, 3.141592653589793, 5e-324}));

    auto path = std::filesystem::temp_directory_path() / "nsva_ckpt_test.bin";
    save_arrays(path.string(), arrays);
    NamedArrays loaded = load_arrays(path.string());
    REQUIRE(loaded.size() == arrays.size());
    for (std::size_t i = 0; i < arrays.size(); ++i) {
        CHECK(loaded[i].first == arrays[i].first);
        REQUIRE(loaded[i].second.shape() == arrays[i].second.shape());
        const auto& a = arrays[i].second.data();
        const auto& b = loaded[i].second.data();
        for (std::size_t j = 0; j < a.size(); ++j) {
            // bit-exact comparison, including signed zero
            CHECK(std::memcmp(&a[j], &b[j], sizeof(double)) == 0);
        }
    }
    std::filesystem::remove(path);
}

TEST_CASE("gather_rows rejects out-of-range indices") {
    Tensor a = Tensor::ones({3, 2});
    CHECK_THROWS_AS(gather_rows(a, {0, 3}), std::out_of_range);
}
