#include <doctest.h>

#include <cmath>

#include "bsvlab/generator.hpp"
#include "oracles.hpp"

using namespace bsvlab;

namespace {

double spectral_norm(const Mat& a)
{
    return std::sqrt(std::max(0.0, oracle::jacobi_eigen(a.transpose() * a).first.maxCoeff()));
}

AffineCoefficients random_affine(CounterStream& s, int m, int d, std::size_t atoms)
{
    AffineCoefficients co;
    co.a = Mat::NullaryExpr(m, m, [&](Eigen::Index, Eigen::Index) { return s.normal(); });
    co.b = Mat::NullaryExpr(m, m * d, [&](Eigen::Index, Eigen::Index) { return s.normal(); });
    for (std::size_t j = 0; j < atoms; ++j) {
        co.c.push_back(Mat::NullaryExpr(m, m, [&](Eigen::Index, Eigen::Index) { return s.normal(); }));
    }
    co.offset = oracle::normal_vec(s, m);
    co.offset_slope = oracle::normal_vec(s, m);
    return co;
}

}  // namespace

TEST_CASE("evaluation examples")
{
    const auto zero = zero_gen(2, 3, 2);
    CHECK(zero.evaluate(0.3, Vec::Ones(2), Mat::Ones(2, 3), Mat::Ones(2, 2)).norm() == 0.0);

    const auto half = scaled_jump_gen(0.5, 1);
    CHECK(half.evaluate(0.0, Vec::Zero(1), Mat::Zero(1, 1), Mat::Ones(1, 1))(0) == -0.5);

    const auto drift = projection_drift_gen(ConvexBody::ball(Vec::Zero(2), 1.0), 1, 0);
    Vec y(2);
    y << 2, 0;
    const Vec f = drift.evaluate(0.0, y, Mat::Zero(2, 1), Mat::Zero(2, 0));
    CHECK(f(0) == 1.0);
    CHECK(f(1) == 0.0);

    CHECK_THROWS(half.evaluate(0.0, Vec::Zero(2), Mat::Zero(1, 1), Mat::Ones(1, 1)));
    CHECK_THROWS(half.evaluate(0.0, Vec::Zero(1), Mat::Zero(1, 2), Mat::Ones(1, 1)));
    CHECK_THROWS(half.evaluate(0.0, Vec::Zero(1), Mat::Zero(1, 1), Mat::Ones(1, 2)));
}

TEST_CASE("affine generator matches its formula")
{
    CounterStream s({201, 0, 0, 0});
    const FiniteMarkMeasure marks({Vec::Constant(1, 1.0), Vec::Constant(1, 2.0)}, {0.5, 2.0});
    const auto co = random_affine(s, 3, 2, 2);
    const auto gen = affine_gen(co, 2, marks);
    for (int trial = 0; trial < 20; ++trial) {
        const double t = s.uniform();
        const Vec y = oracle::normal_vec(s, 3);
        const Mat z = Mat::NullaryExpr(3, 2, [&](Eigen::Index, Eigen::Index) { return s.normal(); });
        const Mat u = Mat::NullaryExpr(3, 2, [&](Eigen::Index, Eigen::Index) { return s.normal(); });
        Vec vecz(6);
        for (int l = 0; l < 3; ++l) {
            for (int c = 0; c < 2; ++c) {
                vecz(l * 2 + c) = z(l, c);
            }
        }
        const Vec want = co.a * y + co.b * vecz + co.c[0] * u.col(0) + co.c[1] * u.col(1) + co.offset
                         + t * co.offset_slope;
        CHECK((gen.evaluate(t, y, z, u) - want).norm() <= 1e-12);
        // purity
        CHECK((gen.evaluate(t, y, z, u) - gen.evaluate(t, y, z, u)).norm() == 0.0);
    }
    AffineCoefficients bad = co;
    bad.b = Mat::Zero(3, 3);
    CHECK_THROWS(affine_gen(bad, 2, marks));
}

TEST_CASE("lipschitz probes")
{
    const auto one = FiniteMarkMeasure::unit_atom();
    auto r = verify_lipschitz(zero_gen(1, 1, 1), one, {}, 200);
    CHECK(r.estimate == 0.0);
    CHECK(r.pass);

    r = verify_lipschitz(scaled_jump_gen(2.0, 1), one, {}, 2000);
    CHECK(r.pass);
    CHECK(r.estimate <= 2.0);
    CHECK(r.estimate >= 2.0 * (1.0 - 1e-9));

    // |c du| / ||du|| = c / sqrt(n1): the bound must follow the weight both ways
    for (double w : {0.25, 4.0}) {
        const FiniteMarkMeasure marks({Vec::Ones(1)}, {w});
        const auto gen = scaled_jump_gen(1.5, 1, w);
        r = verify_lipschitz(gen, marks, {}, 2000);
        CHECK(r.pass);
        CHECK(r.estimate == doctest::Approx(1.5 / std::sqrt(w)).epsilon(1e-9));
    }

    const auto drift = projection_drift_gen(ConvexBody::ball(Vec::Zero(3), 1.0), 2, 1);
    r = verify_lipschitz(drift, one, {}, 3000);
    CHECK(r.pass);
    CHECK(r.estimate <= 1.0 + 1e-12);  // y - P(y) is nonexpansive

    CounterStream s({202, 0, 0, 0});
    const FiniteMarkMeasure marks({Vec::Constant(1, 1.0), Vec::Constant(1, 2.0)}, {0.7, 1.9});
    for (int trial = 0; trial < 20; ++trial) {
        const auto co = random_affine(s, 2, 2, 2);
        const auto gen = affine_gen(co, 2, marks);
        const double bound = std::max({spectral_norm(co.a), spectral_norm(co.b),
                                       std::sqrt(std::pow(spectral_norm(co.c[0]), 2) / 0.7
                                                 + std::pow(spectral_norm(co.c[1]), 2) / 1.9)});
        CHECK(gen.lipschitz() == doctest::Approx(bound).epsilon(1e-9));
        r = verify_lipschitz(gen, marks, {static_cast<std::uint64_t>(trial)}, 2000);
        CHECK(r.pass);
        CHECK(r.estimate <= bound * (1.0 + 1e-9));
    }
}

TEST_CASE("dependency probes agree with declared flags")
{
    const auto one = FiniteMarkMeasure::unit_atom();
    const auto zero = zero_gen(2, 2, 1);
    for (int k = 0; k < 2; ++k) {
        CHECK(dependency_probe(zero, k, 20) == DependencyFlags::none(2, 1));
    }

    const auto jump = scaled_jump_gen(0.7, 1);
    const auto fl = dependency_probe(jump, 0, 20);
    CHECK(fl == jump.dependencies()[0]);
    CHECK(fl.u_atoms[0]);
    CHECK_FALSE(fl.y[0]);
    CHECK_FALSE(fl.uses_z());

    // row k of B nonzero only in block k: f_k sees z_k alone
    AffineCoefficients co;
    co.a = Mat::Identity(3, 3);
    co.b = Mat::Zero(3, 6);
    for (int k = 0; k < 3; ++k) {
        co.b(k, 2 * k) = 1.0 + k;
        co.b(k, 2 * k + 1) = -0.5;
    }
    co.c = {Mat::Identity(3, 3)};
    const auto diag = affine_gen(co, 2, one);
    for (int k = 0; k < 3; ++k) {
        const auto f = dependency_probe(diag, k, 20);
        CHECK(f == diag.dependencies()[static_cast<std::size_t>(k)]);
        for (int l = 0; l < 3; ++l) {
            CHECK(f.z_rows[static_cast<std::size_t>(l)] == (l == k));
        }
    }

    std::vector<ConvexBody> bodies = {ConvexBody::ball(Vec::Zero(2), 1.0),
                                      ConvexBody::box(-Vec::Ones(3), Vec::Ones(3)),
                                      ConvexBody::orthant_product(1, 2), ConvexBody::psd_cone(2)};
    for (const auto& k : bodies) {
        const auto drift = projection_drift_gen(k, 1, 1);
        for (int c = 0; c < drift.dim(); ++c) {
            CHECK(dependency_probe(drift, c, 50) == drift.dependencies()[static_cast<std::size_t>(c)]);
        }
    }

    CounterStream s({203, 0, 0, 0});
    const FiniteMarkMeasure marks({Vec::Constant(1, 1.0), Vec::Constant(1, 2.0)}, {0.7, 1.9});
    for (int trial = 0; trial < 10; ++trial) {
        auto rc = random_affine(s, 2, 1, 2);
        rc.a(0, 1) = 0.0;
        rc.c[1](1, 0) = 0.0;
        const auto gen = affine_gen(rc, 1, marks);
        for (int c = 0; c < 2; ++c) {
            CHECK(dependency_probe(gen, c, 10) == gen.dependencies()[static_cast<std::size_t>(c)]);
        }
        CHECK_FALSE(gen.dependencies()[0].y[1]);
    }
}
