#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <memory>

#include "bsvlab/regression.hpp"
#include "bsvlab/solver.hpp"
#include "oracles.hpp"

using namespace bsvlab;

namespace {

std::shared_ptr<const DrivingPaths> make_paths(double horizon, std::size_t steps, const FiniteMarkMeasure& marks,
                                               int d, std::size_t n, std::uint64_t seed)
{
    return std::make_shared<DrivingPaths>(simulate_paths(TimeGrid::uniform(horizon, steps), marks, d, n, seed));
}

TerminalCondition brownian_xi()
{
    return {"W_T", 1, [](std::span<const double> w, std::span<const std::int32_t>) { return Vec(Vec::Constant(1, w[0])); }};
}

TerminalCondition count_xi()
{
    return {"N_T", 1, [](std::span<const double>, std::span<const std::int32_t> n) {
                return Vec(Vec::Constant(1, double(n[0])));
            }};
}

TerminalCondition constant_xi(Vec c)
{
    return {"const", static_cast<int>(c.size()),
            [c](std::span<const double>, std::span<const std::int32_t>) { return c; }};
}

double sample_se(const DrivingPaths& paths, const TerminalCondition& xi)
{
    double s = 0.0, s2 = 0.0;
    const auto n = paths.n_paths();
    for (std::size_t p = 0; p < n; ++p) {
        const double v = xi(paths, p)(0);
        s += v;
        s2 += v * v;
    }
    const double mean = s / n;
    return std::sqrt((s2 / n - mean * mean) / n);
}

}  // namespace

TEST_CASE("polynomial basis and regression")
{
    CHECK(monomial_exponents(2, 2).size() == 6);
    CHECK(monomial_exponents(3, 0).size() == 1);
    CHECK(monomial_exponents(1, 4).size() == 5);

    // exact recovery of a quadratic
    CounterStream s({301, 0, 0, 0});
    Mat x(500, 2), y(500, 1);
    for (int i = 0; i < 500; ++i) {
        x(i, 0) = s.normal();
        x(i, 1) = s.normal();
        y(i, 0) = 1.0 + 2.0 * x(i, 0) - x(i, 1) * x(i, 0) + 0.5 * x(i, 1) * x(i, 1);
    }
    Mat fitted;
    const auto diag = regress(x, y, {2, true}, fitted, 0);
    CHECK(diag.basis_size == 6);
    CHECK((fitted - y).cwiseAbs().maxCoeff() <= 1e-9);

    // constant features: pruning keeps the constant, no pruning fails
    const Mat flat = Mat::Zero(100, 2);
    const Mat target = Mat::Ones(100, 1);
    CHECK(regress(flat, target, {2, true}, fitted, 3).basis_size == 1);
    CHECK_THROWS_WITH(regress(flat, target, {2, false}, fitted, 3),
                      doctest::Contains("rank-deficient regression at step 3"));
}

TEST_CASE("zero driver on a Brownian terminal value")
{
    const auto paths = make_paths(1.0, 20, FiniteMarkMeasure::unit_atom(), 1, 20000, 302);
    const auto xi = brownian_xi();
    const auto sol = solve_backward(zero_gen(1, 1, 1), xi, paths);
    CHECK(std::abs(sol.y0(0)) <= 3.0 * sample_se(*paths, xi));

    // martingale representation: Y_i = W_{t_i}, Z = 1, U = 0, in mean square
    double y_err = 0.0, z_err = 0.0, u_err = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < paths->n_paths(); p += 7) {
        for (std::size_t i = 0; i < 20; ++i) {
            y_err += std::pow(sol.y(i, p)(0) - paths->W(p, i)[0], 2);
            z_err += std::pow(sol.z(i, p)(0, 0) - 1.0, 2);
            u_err += std::pow(sol.u(i, p)(0, 0), 2);
            ++count;
        }
    }
    CHECK(std::sqrt(y_err / count) <= 0.01);
    CHECK(std::sqrt(z_err / count) <= 0.05);
    CHECK(std::sqrt(u_err / count) <= 0.1);

    // terminal exactness, bitwise
    for (std::size_t p = 0; p < paths->n_paths(); ++p) {
        REQUIRE(sol.y(20, p)(0) == paths->W(p, 20)[0]);
    }

    // the martingale step: regression of Y_{i+1} on state_i reproduces Y_i
    Mat feat(paths->n_paths(), 2), next(paths->n_paths(), 1), fitted;
    const std::size_t i = 10;
    for (std::size_t p = 0; p < paths->n_paths(); ++p) {
        feat(p, 0) = paths->W(p, i)[0];
        feat(p, 1) = paths->N(p, i)[0];
        next(p, 0) = sol.y(i + 1, p)(0);
    }
    regress(feat, next, {}, fitted, i);
    double resid = 0.0;
    for (std::size_t p = 0; p < paths->n_paths(); ++p) {
        resid = std::max(resid, std::abs(fitted(p, 0) - sol.y(i, p)(0)));
    }
    CHECK(resid <= 1e-9);
}

TEST_CASE("closed forms with jumps")
{
    const auto one = FiniteMarkMeasure::unit_atom();
    const auto paths = make_paths(1.0, 50, one, 1, 100000, 303);
    const auto xi = count_xi();

    // Y_t = N_t + (s - t) / 2 and Y_t = N_t - (s - t)
    const auto a = solve_backward(scaled_jump_gen(0.5, 1), xi, paths);
    CHECK(std::abs(a.y0(0) - 0.5) <= 0.02);
    const auto b = solve_backward(scaled_jump_gen(2.0, 1), xi, paths);
    CHECK(std::abs(b.y0(0) + 1.0) <= 0.02);

    // pathwise at an interior node, Z = 0 and U = 1
    double y_err = 0.0, z_err = 0.0, umean = 0.0;
    const std::size_t node = 25;
    const double n = double(paths->n_paths());
    for (std::size_t p = 0; p < paths->n_paths(); ++p) {
        y_err += std::pow(a.y(node, p)(0) - (paths->N(p, node)[0] + 0.25), 2) / n;
        z_err += std::pow(a.z(node, p)(0, 0), 2) / n;
        umean += a.u(node, p)(0, 0) / n;
    }
    CHECK(std::sqrt(y_err) <= 0.02);
    CHECK(std::sqrt(z_err) <= 0.05);
    CHECK(umean == doctest::Approx(1.0).epsilon(0.1));
    CHECK(a.warnings.empty());
}

TEST_CASE("first order in the step size")
{
    // f = a y with constant terminal value: explicit Euler gives (1 + a h)^N
    const double rate = 0.8;
    AffineCoefficients co;
    co.a = Mat::Constant(1, 1, rate);
    co.b = Mat::Zero(1, 1);
    co.c = {Mat::Zero(1, 1)};
    const auto one = FiniteMarkMeasure::unit_atom();
    const auto gen = affine_gen(co, 1, one);
    double last_bias = 0.0;
    for (std::size_t steps : {10, 20, 40}) {
        const auto paths = make_paths(1.0, steps, one, 1, 2000, 304);
        const auto sol = solve_backward(gen, constant_xi(Vec::Ones(1)), paths);
        CHECK(sol.y0(0) == doctest::Approx(std::pow(1.0 + rate / steps, double(steps))).epsilon(1e-12));
        const double bias = std::exp(rate) - sol.y0(0);
        if (last_bias > 0.0) {
            CHECK(bias / last_bias == doctest::Approx(0.5).epsilon(0.05));
        }
        last_bias = bias;
    }

    // on the jump examples the scheme is unbiased in h up to noise
    const auto coarse = make_paths(1.0, 25, one, 1, 100000, 305);
    const auto fine = make_paths(1.0, 50, one, 1, 100000, 305);
    for (const auto* p : {&coarse, &fine}) {
        const auto sol = solve_backward(scaled_jump_gen(2.0, 1), count_xi(), *p);
        CHECK(std::abs(sol.y0(0) + 1.0) <= 0.02);
    }
}

TEST_CASE("explicit and implicit modes")
{
    const auto one = FiniteMarkMeasure::unit_atom();
    CounterStream s({306, 0, 0, 0});
    AffineCoefficients co;
    co.a = Mat::NullaryExpr(2, 2, [&](Eigen::Index, Eigen::Index) { return 0.8 * s.normal(); });
    co.b = Mat::NullaryExpr(2, 2, [&](Eigen::Index, Eigen::Index) { return 0.5 * s.normal(); });
    co.c = {Mat::NullaryExpr(2, 2, [&](Eigen::Index, Eigen::Index) { return 0.5 * s.normal(); })};
    co.offset = oracle::normal_vec(s, 2);
    const auto gen = affine_gen(co, 1, one);
    const std::size_t steps = 50;
    const double h = 1.0 / steps;
    REQUIRE(h * gen.lipschitz() <= 0.1);
    const auto paths = make_paths(1.0, steps, one, 1, 20000, 307);
    const TerminalCondition xi{"mix", 2, [](std::span<const double> w, std::span<const std::int32_t> n) {
                                   Vec v(2);
                                   v << w[0], double(n[0]) - 0.3 * w[0];
                                   return v;
                               }};
    const auto ex = solve_backward(gen, xi, paths, {{}, SchemeMode::explicit_euler});
    const auto im = solve_backward(gen, xi, paths, {{}, SchemeMode::implicit});
    // per-step differences are O(h^2 L^2 |Y|); they add up over N steps
    const double scale = 1.0 + ex.y0.norm() + co.offset.norm();
    CHECK((ex.y0 - im.y0).norm() <= steps * h * h * gen.lipschitz() * gen.lipschitz() * scale * 2.0);
    for (const auto& d : im.diagnostics) {
        CHECK(d.max_fixed_point_iterations <= 100);
    }

    const auto stiff = scaled_jump_gen(100.0, 1);
    CHECK_THROWS_WITH(solve_backward(stiff, count_xi(), paths, {{}, SchemeMode::implicit}),
                      doctest::Contains("h L < 1"));
}

TEST_CASE("closed-form linear reference")
{
    const auto one = FiniteMarkMeasure::unit_atom();
    const auto paths = make_paths(1.0, 40, one, 1, 20000, 308);

    // A = 0 is the zero-driver solution
    const auto xi = brownian_xi();
    const auto cf0 = closed_form_linear(Mat::Zero(1, 1), xi, paths);
    const auto z0 = solve_backward(zero_gen(1, 1, 1), xi, paths);
    double diff = 0.0;
    for (std::size_t p = 0; p < paths->n_paths(); p += 11) {
        for (std::size_t i = 0; i <= 40; i += 5) {
            diff = std::max(diff, std::abs(cf0.y(i, p)(0) - z0.y(i, p)(0)));
        }
    }
    CHECK(diff <= 1e-12);

    // scalar ODE with constant terminal value
    const auto cfc = closed_form_linear(Mat::Constant(1, 1, -0.7), constant_xi(Vec::Constant(1, 2.5)), paths);
    CHECK(cfc.y0(0) == doctest::Approx(2.5 * std::exp(-0.7)).epsilon(1e-12));

    // random small A against the scheme on the same paths
    CounterStream s({309, 0, 0, 0});
    const TerminalCondition xi2{"pair", 2, [](std::span<const double> w, std::span<const std::int32_t> n) {
                                    Vec v(2);
                                    v << 1.0 + w[0], double(n[0]);
                                    return v;
                                }};
    for (int trial = 0; trial < 5; ++trial) {
        const Mat a = Mat::NullaryExpr(2, 2, [&](Eigen::Index, Eigen::Index) { return 0.5 * s.normal(); });
        AffineCoefficients co;
        co.a = a;
        co.b = Mat::Zero(2, 2);
        co.c = {Mat::Zero(2, 2)};
        const auto sol = solve_backward(affine_gen(co, 1, one), xi2, paths);
        const auto ref = closed_form_linear(a, xi2, paths);
        const double h = 1.0 / 40;
        const double na = a.norm();
        const double bias = h * na * na * std::exp(na) * (1.0 + ref.y0.norm());
        CHECK((sol.y0 - ref.y0).norm() <= bias + 3.0 * (sol.y0_stderr.norm() + ref.y0_stderr.norm()));
    }
}

TEST_CASE("a priori diagnostics")
{
    const auto one = FiniteMarkMeasure::unit_atom();
    const auto paths = make_paths(1.0, 50, one, 1, 50000, 310);

    const auto zero = solve_backward(zero_gen(1, 1, 1), brownian_xi(), paths);
    const auto rz = apriori_diagnostics(zero, brownian_xi());
    CHECK(rz.dev_y.back() == 0.0);
    CHECK(rz.dev_z.back() == 0.0);
    CHECK(rz.dev_u.back() == 0.0);
    CHECK(rz.fitted_m <= 1e-12);

    const auto a = solve_backward(scaled_jump_gen(0.5, 1), count_xi(), paths);
    const auto ra = apriori_diagnostics(a, count_xi());
    CHECK(ra.dev_y.back() == 0.0);
    for (std::size_t i = 0; i < ra.t.size(); ++i) {
        if (ra.t[i] <= 0.8) {
            const double off = 0.5 * (1.0 - ra.t[i]);
            CHECK(ra.dev_y[i] == doctest::Approx(off * off).epsilon(0.1));
        }
    }
    CHECK(ra.fitted_m <= 0.3);
    CHECK(ra.fitted_m >= 0.2);
}

TEST_CASE("warnings, errors and distance statistics")
{
    const FiniteMarkMeasure rare({Vec::Ones(1)}, {0.001});
    const auto paths = make_paths(1.0, 10, rare, 1, 1000, 311);
    const auto sol = solve_backward(scaled_jump_gen(1.0, 1, 0.001), count_xi(), paths);
    CHECK_FALSE(sol.warnings.empty());

    CHECK_THROWS(solve_backward(zero_gen(2, 1, 1), count_xi(), paths));
    CHECK_THROWS(solve_backward(zero_gen(1, 2, 1), count_xi(), paths));

    const auto stats = distance_stats(sol, [](const Vec& y) { return std::abs(y(0)); });
    CHECK(stats.t.size() == 11);
    for (std::size_t i = 0; i <= 10; ++i) {
        CHECK(stats.max[i] >= stats.mean[i] - 1e-12);
        CHECK(stats.mean[i] >= 0.0);
    }
}

TEST_CASE("solutions do not depend on the worker count")
{
    const auto one = FiniteMarkMeasure::unit_atom();
    const auto paths = make_paths(1.0, 20, one, 1, 30000, 312);
    setenv("BSVLAB_WORKERS", "1", 1);
    const auto a = solve_backward(scaled_jump_gen(0.5, 1), count_xi(), paths);
    setenv("BSVLAB_WORKERS", "5", 1);
    const auto b = solve_backward(scaled_jump_gen(0.5, 1), count_xi(), paths);
    unsetenv("BSVLAB_WORKERS");
    CHECK(a.y0(0) == b.y0(0));
    for (std::size_t p = 0; p < paths->n_paths(); p += 101) {
        CHECK(a.y(3, p)(0) == b.y(3, p)(0));
        CHECK(a.u(3, p)(0, 0) == b.u(3, p)(0, 0));
    }
}
