#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <numeric>

#include "bsvlab/noise.hpp"
#include "bsvlab/random.hpp"

using namespace bsvlab;

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;
    double se = 0.0;  // standard error of the mean
};

template <class F>
Moments moments(std::size_t n, F&& value)
{
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = value(i);
        s += v;
        s2 += v * v;
    }
    Moments m;
    m.mean = s / n;
    m.var = (s2 - n * m.mean * m.mean) / (n - 1);
    m.se = std::sqrt(m.var / n);
    return m;
}

}  // namespace

TEST_CASE("philox known-answer vectors")
{
    // Random123 kat_vectors, philox4x32 with 10 rounds
    CHECK(philox4x32({0, 0, 0, 0}, {0, 0})
          == std::array<std::uint32_t, 4>{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
    CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff})
          == std::array<std::uint32_t, 4>{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
    CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0})
          == std::array<std::uint32_t, 4>{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("counter streams are pure functions of their key")
{
    CounterStream a({42, 3, 7, 1});
    CounterStream b({42, 3, 7, 1});
    CounterStream c({42, 3, 7, 2});
    int differ = 0;
    for (int i = 0; i < 100; ++i) {
        const double x = a.normal();
        CHECK(x == b.normal());
        differ += (x != c.normal());
    }
    CHECK(differ == 100);

    CounterStream u({1, 0, 0, 0});
    for (int i = 0; i < 10000; ++i) {
        const double v = u.uniform();
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("poisson sampler moments")
{
    for (double mean : {0.02, 0.7, 3.0, 40.0}) {
        CounterStream s({9, 0, 0, 0});
        const auto m = moments(200000, [&](std::size_t) { return double(s.poisson(mean)); });
        CHECK(std::abs(m.mean - mean) <= 4 * std::sqrt(mean / 200000));
        CHECK(m.var == doctest::Approx(mean).epsilon(0.03));
    }
}

TEST_CASE("grid validation")
{
    CHECK_THROWS_WITH(TimeGrid::uniform(1.0, 0), "empty grid");
    CHECK_THROWS_WITH(simulate_paths(TimeGrid::uniform(1.0, 4), FiniteMarkMeasure::unit_atom(), 1, 0, 1),
                      "zero paths");
    CHECK_THROWS(TimeGrid({0.0, 0.5, 0.5}));
    const auto g = TimeGrid::uniform(2.0, 8);
    CHECK(g.steps() == 8);
    CHECK(g.step_size(3) == doctest::Approx(0.25));
    CHECK(g.nearest_node(0.51) == 2);
}

TEST_CASE("compensated increment")
{
    const FiniteMarkMeasure two({Vec::Ones(1)}, {2.0});
    const std::int32_t zero = 0;
    CHECK(compensated_increment(std::span(&zero, 1), 0.1, two)[0] == doctest::Approx(-0.2));
    const std::int32_t three = 3;
    CHECK(compensated_increment(std::span(&three, 1), 1.0, FiniteMarkMeasure::unit_atom())[0] == 2.0);
    const std::int32_t pair[2] = {1, 1};
    CHECK_THROWS(compensated_increment(std::span(pair, 2), 1.0, two));
}

TEST_CASE("jump norm")
{
    const auto one = FiniteMarkMeasure::unit_atom();
    CHECK(jump_norm2(Mat::Zero(2, 1), one) == 0.0);
    Mat u(2, 1);
    u << 3, 4;
    CHECK(jump_norm2(u, one) == 25.0);

    // direct summation oracle
    const FiniteMarkMeasure marks({Vec::Constant(1, 1.0), Vec::Constant(1, -2.0), Vec::Constant(1, 0.5)},
                                  {0.3, 1.7, 2.5});
    CounterStream s({5, 0, 0, 0});
    for (int trial = 0; trial < 50; ++trial) {
        Mat v(3, 3);
        for (int i = 0; i < 9; ++i) {
            v.data()[i] = s.normal();
        }
        double expect = 0.0;
        for (int j = 0; j < 3; ++j) {
            double col = 0.0;
            for (int k = 0; k < 3; ++k) {
                col += v(k, j) * v(k, j);
            }
            expect += col * marks.weight(j);
        }
        CHECK(jump_norm2(v, marks) == expect);
    }
    CHECK_THROWS(jump_norm2(Mat::Zero(2, 2), one));
}

TEST_CASE("jump counts over a fine grid: mean of Poisson(1)")
{
    const auto paths = simulate_paths(TimeGrid::uniform(1.0, 1000), FiniteMarkMeasure::unit_atom(), 1, 100000, 11);
    const auto m = moments(paths.n_paths(), [&](std::size_t p) { return double(paths.N(p, 1000)[0]); });
    CHECK(std::abs(m.mean - 1.0) <= 0.02);
}

TEST_CASE("brownian terminal variance and compensated martingale")
{
    const FiniteMarkMeasure marks({Vec::Constant(1, 1.0), Vec::Constant(1, 2.0)}, {1.0, 0.4});
    const auto grid = TimeGrid::uniform(1.5, 30);
    const auto paths = simulate_paths(grid, marks, 2, 100000, 12);
    const std::size_t n = paths.n_paths();

    for (int c = 0; c < 2; ++c) {
        const auto m = moments(n, [&](std::size_t p) { return paths.W(p, 30)[c]; });
        // the variance of a sample variance of N(0, T) is 2 T^2 / (n - 1)
        CHECK(std::abs(m.var - 1.5) <= 3 * std::sqrt(2.0 * 1.5 * 1.5 / (n - 1)));
    }
    for (std::size_t j = 0; j < 2; ++j) {
        const auto m = moments(n, [&](std::size_t p) {
            double sum = 0.0;
            for (std::size_t i = 0; i < grid.steps(); ++i) {
                sum += compensated_increment(paths.counts(p, i), grid.step_size(i), marks)[j];
            }
            return sum;
        });
        CHECK(std::abs(m.mean) <= 3 * m.se);
    }
}

TEST_CASE("per-step moments and cross-channel independence")
{
    const FiniteMarkMeasure marks({Vec::Constant(1, 1.0), Vec::Constant(1, -1.0)}, {2.0, 0.5});
    const auto grid = TimeGrid::uniform(1.0, 10);
    const auto paths = simulate_paths(grid, marks, 2, 100000, 13);
    const std::size_t n = paths.n_paths();
    for (std::size_t i = 0; i < grid.steps(); ++i) {
        const double h = grid.step_size(i);
        for (int c = 0; c < 2; ++c) {
            const auto m = moments(n, [&](std::size_t p) { return paths.dW(p, i)[c]; });
            CHECK(std::abs(m.mean) <= 4 * m.se);
            CHECK(std::abs(m.var - h) <= 4 * h * std::sqrt(2.0 / (n - 1)));
        }
        for (std::size_t j = 0; j < 2; ++j) {
            const double mean = h * marks.weight(j);
            const auto m = moments(n, [&](std::size_t p) { return double(paths.counts(p, i)[j]); });
            CHECK(std::abs(m.mean - mean) <= 4 * std::sqrt(mean / n));
        }
    }
    // correlation between every Brownian and every jump channel at the horizon
    for (int c = 0; c < 2; ++c) {
        for (std::size_t j = 0; j < 2; ++j) {
            const auto w = moments(n, [&](std::size_t p) { return paths.W(p, 10)[c]; });
            const auto k = moments(n, [&](std::size_t p) { return double(paths.N(p, 10)[j]); });
            const auto cross = moments(n, [&](std::size_t p) {
                return (paths.W(p, 10)[c] - w.mean) * (double(paths.N(p, 10)[j]) - k.mean);
            });
            const double corr = cross.mean / std::sqrt(w.var * k.var);
            CHECK(std::abs(corr) <= 4.0 / std::sqrt(double(n)));
        }
    }
    // the two Brownian coordinates
    const auto cross = moments(n, [&](std::size_t p) { return paths.W(p, 10)[0] * paths.W(p, 10)[1]; });
    CHECK(std::abs(cross.mean) <= 4 * cross.se);
}

TEST_CASE("paths are identical for any worker count")
{
    const auto grid = TimeGrid::uniform(1.0, 20);
    const FiniteMarkMeasure marks({Vec::Constant(1, 1.0), Vec::Constant(1, 3.0)}, {1.0, 0.2});
    setenv("BSVLAB_WORKERS", "1", 1);
    const auto a = simulate_paths(grid, marks, 3, 5000, 77);
    setenv("BSVLAB_WORKERS", "7", 1);
    const auto b = simulate_paths(grid, marks, 3, 5000, 77);
    unsetenv("BSVLAB_WORKERS");
    const auto c = simulate_paths(grid, marks, 3, 5000, 78);
    CHECK(a == b);
    CHECK_FALSE(a == c);

    // cumulative state is the running sum of increments
    for (std::size_t p = 0; p < 5000; p += 997) {
        double w = 0.0;
        std::int32_t k = 0;
        for (std::size_t i = 0; i < 20; ++i) {
            w += a.dW(p, i)[1];
            k += a.counts(p, i)[0];
            CHECK(a.W(p, i + 1)[1] == doctest::Approx(w).epsilon(1e-12));
            CHECK(a.N(p, i + 1)[0] == k);
        }
    }
}
