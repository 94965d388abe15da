#include <doctest.h>

#include <cmath>

#include "bsvlab/geometry.hpp"
#include "oracles.hpp"

using namespace bsvlab;

namespace {

Vec v2(double a, double b)
{
    Vec v(2);
    v << a, b;
    return v;
}

double max_abs(const Mat& a)
{
    return a.cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("construction rejects empty or malformed sets")
{
    CHECK_THROWS(ConvexBody::ball(Vec::Zero(2), 0.0));
    CHECK_THROWS(ConvexBody::box(v2(0, 1), v2(1, 0)));
    Mat a(2, 1);
    a << 1, -1;
    Vec b(2);
    b << -1, -1;  // x <= -1 and x >= 1
    CHECK_THROWS_WITH(ConvexBody::halfspaces(a, b), "halfspaces: intersection is empty");
    CHECK_THROWS(ConvexBody::orthant_product(0, 0));
    CHECK_THROWS(ConvexBody::psd_cone(0));
    Mat ns(2, 2);
    ns << 1, 2, 3, 4;
    CHECK_THROWS(SymMatrix(ns));
}

TEST_CASE("projection examples")
{
    const auto ball = ConvexBody::ball(Vec::Zero(2), 1.0);
    CHECK(max_abs(project(ball, v2(2, 0)) - v2(1, 0)) == 0.0);
    const auto orth = ConvexBody::orthant_product(2, 1);
    Vec x(3);
    x << -1, 2, 3;
    Vec want(3);
    want << 0, 2, 3;
    CHECK(max_abs(project(orth, x) - want) == 0.0);

    CHECK(dist2(ball, v2(0.3, -0.4)) == 0.0);
    for (const Vec& p : {v2(2, 0), v2(-3, 4), v2(0.8, 0.9)}) {
        const double r = p.norm();
        CHECK(dist2(ball, p) == doctest::Approx((r - 1) * (r - 1)).epsilon(1e-14));
    }
    CHECK(grad_dist2(ball, v2(0.1, 0.2)).norm() == 0.0);
    CHECK(max_abs(grad_dist2(ball, v2(2, 0)) - v2(2, 0)) == 0.0);
}

TEST_CASE("closed forms against KKT and eigenvalue oracles")
{
    CounterStream s({101, 0, 0, 0});
    double err = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int m = 1 + trial % 4;
        const Vec c = oracle::normal_vec(s, m);
        const double r = 0.1 + 2.0 * s.uniform();
        const auto ball = ConvexBody::ball(c, r);
        const Vec x = oracle::normal_vec(s, m, 3.0);
        const Vec p = oracle::ball_projection(c, r, x);
        err = std::max(err, (project(ball, x) - p).cwiseAbs().maxCoeff());
        err = std::max(err, std::abs(dist2(ball, x) - (x - p).squaredNorm()));

        const Vec lo = oracle::normal_vec(s, m);
        const Vec hi = lo + oracle::uniform_vec(s, m, 1.0).cwiseAbs();
        const auto box = ConvexBody::box(lo, hi);
        Vec pb(m);
        for (int i = 0; i < m; ++i) {
            pb(i) = oracle::interval_argmin(x(i), lo(i), hi(i));
        }
        err = std::max(err, (project(box, x) - pb).cwiseAbs().maxCoeff());
        err = std::max(err, std::abs(dist2(box, x) - (x - pb).squaredNorm()));

        const int pos = 1 + trial % m;
        const auto orth = ConvexBody::orthant_product(pos, m - pos);
        Vec po = x;
        for (int i = 0; i < pos; ++i) {
            po(i) = oracle::interval_argmin(x(i), 0.0, HUGE_VAL);
        }
        err = std::max(err, (project(orth, x) - po).cwiseAbs().maxCoeff());
        err = std::max(err, std::abs(dist2(orth, x) - (x - po).squaredNorm()));

        const Mat y = oracle::random_symmetric(s, 3);
        const auto psd = ConvexBody::psd_cone(3);
        const Vec yv = sym_to_vec(SymMatrix(y));
        const Mat py = vec_to_sym(project(psd, yv), 3).matrix();
        err = std::max(err, max_abs(py - oracle::psd_part(y)));
        err = std::max(err, std::abs(dist2(psd, yv) - oracle::neg_eig_sq(y)));
    }
    CHECK(err <= 1e-9);
}

TEST_CASE("grid argmin oracle in the plane")
{
    const double pitch = 0.01;
    CounterStream s({102, 0, 0, 0});

    const auto ball = ConvexBody::ball(v2(0.2, -0.1), 0.8);
    const auto box = ConvexBody::box(v2(-0.5, -1.0), v2(0.7, 0.3));
    const auto orth = ConvexBody::orthant_product(1, 1);
    Mat a(4, 2);
    a << 1, 1, -1, 2, 0, -1, -2, -1;
    Vec b(4);
    b << 1, 1.5, 0.8, 1.2;
    const auto poly = ConvexBody::halfspaces(a, b);

    for (const auto* k : {&ball, &box, &orth, &poly}) {
        const auto grid = oracle::feasible_grid(-2.0, 2.0, pitch, [&](const Vec& p) {
            if (const auto* h = std::get_if<HalfspaceIntersection>(&k->shape())) {
                return ((h->normals * p - h->offsets).array() <= 0.0).all();
            }
            if (const auto* bb = std::get_if<Ball>(&k->shape())) {
                return (p - bb->center).norm() <= bb->radius;
            }
            if (const auto* bx = std::get_if<Box>(&k->shape())) {
                return (p.array() >= bx->lo.array()).all() && (p.array() <= bx->hi.array()).all();
            }
            return p(0) >= 0.0;
        });
        REQUIRE(grid.size() > 100);
        for (int trial = 0; trial < 200; ++trial) {
            const Vec x = oracle::uniform_vec(s, 2, 1.5);
            const auto [g, dg] = oracle::grid_argmin(grid, x);
            const Vec p = project(*k, x);
            const double d = std::sqrt(dist2(*k, x));
            CHECK(k->contains(p, 1e-9));
            // grid points are feasible, so the exact distance is never larger;
            // the nearest feasible node can sit up to sqrt(2) pitch from the projection
            CHECK(d <= dg + 1e-9);
            CHECK(dg - d <= 2.0 * pitch);
            // variational inequality against every grid point of K
            double worst = -HUGE_VAL;
            for (const auto& q : grid) {
                worst = std::max(worst, (x - p).dot(q - p));
            }
            CHECK(worst <= 1e-9);
        }
    }
}

TEST_CASE("dist2 equals the squared projection residual")
{
    CounterStream s({103, 0, 0, 0});
    for (int trial = 0; trial < 500; ++trial) {
        const auto k = oracle::random_body(s, trial % 5);
        const Vec x = oracle::normal_vec(s, k.dim(), 2.0);
        const double direct = (x - project(k, x)).squaredNorm();
        CHECK(dist2(k, x) == doctest::Approx(direct).epsilon(1e-12).scale(1e-12));
        CHECK((dist2(k, x) == 0.0) == k.contains(x, 0.0));
    }
}

TEST_CASE("gradient against finite differences")
{
    CounterStream s({104, 0, 0, 0});
    int tested = 0;
    for (int trial = 0; trial < 600; ++trial) {
        const auto k = oracle::random_body(s, trial % 5);
        const Vec x = oracle::normal_vec(s, k.dim(), 2.5);
        if (std::sqrt(dist2(k, x)) <= 0.1) {
            CHECK(grad_dist2(k, x).norm() <= 2.0 * 0.1 + 1e-12);
            continue;
        }
        if (k.near_singular(x, 1e-3)) {
            continue;
        }
        const Vec g = grad_dist2(k, x);
        const Vec fd = oracle::fd_gradient([&](const Vec& p) { return dist2(k, p); }, x, 1e-5);
        CHECK((g - fd).norm() <= 1e-5 * g.norm());
        ++tested;
    }
    CHECK(tested > 200);
}

TEST_CASE("hessian examples and finite differences")
{
    const auto orth = ConvexBody::orthant_product(2, 2);
    Vec inside(4);
    inside << 1, 2, -3, 4;
    auto h = hess_dist2(orth, inside);
    REQUIRE(h);
    CHECK(max_abs(*h) == 0.0);

    Vec mixed(4);
    mixed << -1, 2, -3, 4;
    h = hess_dist2(orth, mixed);
    REQUIRE(h);
    Mat want = Mat::Zero(4, 4);
    want(0, 0) = 2.0;
    CHECK(max_abs(*h - want) == 0.0);

    Vec on(4);
    on << 0, 2, 1, 1;
    CHECK_FALSE(hess_dist2(orth, on).has_value());

    const auto ball = ConvexBody::ball(Vec::Zero(2), 1.0);
    h = hess_dist2(ball, v2(2, 0));
    REQUIRE(h);
    const Mat fd = oracle::fd_jacobian([&](const Vec& p) { return grad_dist2(ball, p); }, v2(2, 0), 1e-6);
    CHECK(max_abs(*h - fd) <= 1e-4);
    CHECK_FALSE(hess_dist2(ball, v2(1, 0)).has_value());

    // every variant, away from its singular set
    CounterStream s({105, 0, 0, 0});
    int tested = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const auto k = oracle::random_body(s, trial % 5);
        const Vec x = oracle::normal_vec(s, k.dim(), 2.5);
        if (k.near_singular(x, 1e-3)) {
            continue;
        }
        const auto hk = hess_dist2(k, x);
        REQUIRE(hk);
        const Mat j = oracle::fd_jacobian([&](const Vec& p) { return grad_dist2(k, p); }, x, 1e-6);
        CHECK(max_abs(*hk - j) <= 1e-4);
        ++tested;
    }
    CHECK(tested > 200);
}

TEST_CASE("hessian is symmetric PSD with spectrum in [0, 2]")
{
    CounterStream s({106, 0, 0, 0});
    for (int trial = 0; trial < 2000; ++trial) {
        const auto k = oracle::random_body(s, trial % 5);
        const Vec x = oracle::normal_vec(s, k.dim(), 2.5);
        const auto h = hess_dist2(k, x);
        if (!h) {
            continue;
        }
        CHECK(max_abs(*h - h->transpose()) <= 1e-8);
        const Vec lam = oracle::jacobi_eigen(0.5 * (*h + h->transpose())).first;
        CHECK(lam.minCoeff() >= -1e-8);
        CHECK(lam.maxCoeff() <= 2.0 + 1e-8);
    }
}

TEST_CASE("projection optimality, obtuse angle and idempotence")
{
    CounterStream s({107, 0, 0, 0});
    double worst_opt = -HUGE_VAL, worst_angle = -HUGE_VAL, worst_idem = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        const auto k = oracle::random_body(s, trial % 5);
        const Vec x = oracle::normal_vec(s, k.dim(), 3.0);
        const Vec p = project(k, x);
        // a point of K: projection of another random point
        const Vec q = project(k, oracle::normal_vec(s, k.dim(), 3.0));
        worst_opt = std::max(worst_opt, (x - p).norm() - (x - q).norm());
        worst_angle = std::max(worst_angle, (x - p).dot(q - p));
        worst_idem = std::max(worst_idem, (project(k, p) - p).cwiseAbs().maxCoeff());
    }
    CHECK(worst_opt <= 1e-10);
    CHECK(worst_angle <= 1e-10);
    CHECK(worst_idem <= 1e-10);
}

TEST_CASE("jump defect")
{
    const auto one = FiniteMarkMeasure::unit_atom();
    const auto ball = ConvexBody::ball(Vec::Zero(2), 1.0);
    CHECK(jump_defect(ball, v2(3, 1), Mat::Zero(2, 1), one) == 0.0);

    const FiniteMarkMeasure marks({Vec::Constant(1, 1.0), Vec::Constant(1, 2.0)}, {0.5, 1.5});
    Mat u(2, 2);
    u << 2, -0.2, 0.5, 0.1;
    const Vec y = v2(0.1, 0.2);
    const double expect = dist2(ball, y + u.col(0)) * 0.5 + dist2(ball, y + u.col(1)) * 1.5;
    CHECK(jump_defect(ball, y, u, marks) == doctest::Approx(expect).epsilon(1e-14));

    // direct summation oracle with independently computed pieces
    CounterStream s({108, 0, 0, 0});
    for (int trial = 0; trial < 200; ++trial) {
        const Vec c = oracle::normal_vec(s, 2);
        const double r = 0.5 + s.uniform();
        const auto k = ConvexBody::ball(c, r);
        const Vec yy = oracle::normal_vec(s, 2, 2.0);
        const Mat uu = Mat::NullaryExpr(2, 2, [&](Eigen::Index, Eigen::Index) { return 2.0 * s.normal(); });
        const auto d2 = [&](const Vec& p) { return (p - oracle::ball_projection(c, r, p)).squaredNorm(); };
        const Vec g = 2.0 * (yy - oracle::ball_projection(c, r, yy));
        double direct = 0.0;
        for (int j = 0; j < 2; ++j) {
            direct += (d2(yy + uu.col(j)) - d2(yy) - g.dot(uu.col(j))) * marks.weight(j);
        }
        CHECK(jump_defect(k, yy, uu, marks) == doctest::Approx(direct).epsilon(1e-10).scale(1.0));
    }
    CHECK_THROWS(jump_defect(ball, y, Mat::Zero(2, 1), marks));
}

TEST_CASE("jump defect is nonnegative")
{
    CounterStream s({109, 0, 0, 0});
    double worst = HUGE_VAL;
    for (int trial = 0; trial < 10000; ++trial) {
        const auto k = oracle::random_body(s, trial % 5);
        const std::size_t atoms = 1 + trial % 3;
        std::vector<Vec> at;
        std::vector<double> w;
        for (std::size_t j = 0; j < atoms; ++j) {
            at.push_back(Vec::Constant(1, double(j + 1)));
            w.push_back(0.05 + 3.0 * s.uniform());
        }
        const FiniteMarkMeasure marks(at, w);
        const Vec y = oracle::normal_vec(s, k.dim(), 2.0);
        const Mat u = Mat::NullaryExpr(k.dim(), Eigen::Index(atoms), [&](Eigen::Index, Eigen::Index) {
            return 2.0 * s.normal();
        });
        worst = std::min(worst, jump_defect(k, y, u, marks));
    }
    CHECK(worst >= -1e-12);
}

TEST_CASE("spectral split")
{
    Mat d = Mat::Zero(2, 2);
    d(0, 0) = 1;
    d(1, 1) = -2;
    auto parts = spectral_split(SymMatrix(d));
    Mat plus = Mat::Zero(2, 2), minus = Mat::Zero(2, 2);
    plus(0, 0) = 1;
    minus(1, 1) = 2;
    CHECK(max_abs(parts.plus.matrix() - plus) <= 1e-15);
    CHECK(max_abs(parts.minus.matrix() - minus) <= 1e-15);

    CounterStream s({110, 0, 0, 0});
    const Mat g = oracle::random_symmetric(s, 3);
    const Mat spd = g * g.transpose();
    parts = spectral_split(SymMatrix(spd));
    CHECK(max_abs(parts.minus.matrix()) <= 1e-12);
    const auto cone = ConvexBody::psd_cone(3);
    const Vec sv = sym_to_vec(SymMatrix(spd));
    CHECK((project(cone, sv) - sv).norm() <= 1e-12);

    for (int trial = 0; trial < 200; ++trial) {
        const Mat y = oracle::random_symmetric(s, 4);
        const auto p = spectral_split(SymMatrix(y));
        CHECK(max_abs(p.plus.matrix() - p.minus.matrix() - y) <= 1e-10);
        CHECK(std::abs((p.plus.matrix() * p.minus.matrix()).trace()) <= 1e-10 * y.norm());
        CHECK(p.minus.norm() * p.minus.norm() == doctest::Approx(oracle::neg_eig_sq(y)).epsilon(1e-10));

        const auto k = ConvexBody::psd_cone(4);
        const Vec yv = sym_to_vec(SymMatrix(y));
        CHECK(std::abs(dist2(k, yv) - oracle::neg_eig_sq(y)) <= 1e-10);
        CHECK((vec_to_sym(project(k, yv), 4).matrix() - p.plus.matrix()).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((grad_dist2(k, yv) + 2.0 * sym_to_vec(p.minus)).cwiseAbs().maxCoeff() <= 1e-10);
    }
}

TEST_CASE("symmetric embedding preserves the trace inner product")
{
    CounterStream s({111, 0, 0, 0});
    CHECK(sym_vec_size(3) == 6);
    for (int trial = 0; trial < 50; ++trial) {
        const SymMatrix a(oracle::random_symmetric(s, 3));
        const SymMatrix b(oracle::random_symmetric(s, 3));
        CHECK(sym_to_vec(a).dot(sym_to_vec(b)) == doctest::Approx((a.matrix() * b.matrix()).trace()));
        CHECK(max_abs(vec_to_sym(sym_to_vec(a), 3).matrix() - a.matrix()) <= 1e-15);
        CHECK(inner(a, b) == doctest::Approx((a.matrix() * b.matrix()).trace()));
    }
}

TEST_CASE("mollifier bounds")
{
    CounterStream s({112, 0, 0, 0});
    const double tol = 1e-10;
    for (int trial = 0; trial < 200; ++trial) {
        const bool use_ball = trial % 2 == 0;
        const int m = 1 + trial % 3;
        const auto k = use_ball ? ConvexBody::ball(oracle::normal_vec(s, m, 0.5), 0.5 + s.uniform())
                                : ConvexBody::box(-Vec::Ones(m), Vec::Ones(m) * (0.2 + s.uniform()));
        const Vec x = oracle::normal_vec(s, m, 2.0);
        const double delta = 0.01 + 0.5 * s.uniform();
        const auto phi = mollified_dist2(k, x, delta);
        const double dk = std::sqrt(dist2(k, x));
        CHECK(phi.value >= -tol);
        CHECK(phi.value <= (dk + delta) * (dk + delta) + tol);
        CHECK(phi.gradient.norm() <= 2.0 * (dk + delta) + tol);
        const Vec lam = oracle::jacobi_eigen(phi.hessian).first;
        CHECK(lam.minCoeff() >= -tol);
        CHECK(lam.maxCoeff() <= 2.0 + tol);
        CHECK_FALSE(phi.low_confidence);
    }
}

TEST_CASE("mollifier examples")
{
    const auto ball = ConvexBody::ball(Vec::Zero(2), 1.0);
    const double delta = 0.2;
    const auto deep = mollified_dist2(ball, v2(0.1, 0.2), delta);
    CHECK(deep.value <= delta * delta + 1e-12);

    const Vec x = v2(1.5, 0.3);
    double last = HUGE_VAL;
    for (double d : {0.2, 0.1, 0.05}) {
        const double err = std::abs(mollified_dist2(ball, x, d).value - dist2(ball, x));
        CHECK(err < last);
        last = err;
    }
    CHECK(last <= 1e-3);

    CHECK_THROWS(mollified_dist2(ball, x, 0.0));
    CHECK(mollified_dist2(ball, x, 0.1, {1, 16, 1}).low_confidence);

    // Monte Carlo quadrature beyond three dimensions
    const auto box = ConvexBody::box(-Vec::Ones(4), Vec::Ones(4));
    const Vec y = Vec::Constant(4, 1.5);
    const auto mc = mollified_dist2(box, y, 0.1);
    CHECK_FALSE(mc.low_confidence);
    CHECK(mc.value == doctest::Approx(dist2(box, y)).epsilon(0.05));
}
