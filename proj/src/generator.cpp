#include "bsvlab/generator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bsvlab/random.hpp"

namespace bsvlab {
namespace {

struct RandomPoint {
    double t;
    Vec y;
    Mat z;
    Mat u;
};

double sym_uniform(CounterStream& rs, double range)
{
    return range * (2.0 * rs.uniform() - 1.0);
}

RandomPoint draw_point(CounterStream& rs, int m, int d, std::size_t atoms, double horizon,
                       double yr, double zr, double ur)
{
    RandomPoint p{horizon * rs.uniform(), Vec(m), Mat(m, d), Mat(m, static_cast<Eigen::Index>(atoms))};
    for (int i = 0; i < m; ++i) {
        p.y(i) = sym_uniform(rs, yr);
    }
    for (Eigen::Index i = 0; i < p.z.size(); ++i) {
        p.z.data()[i] = sym_uniform(rs, zr);
    }
    for (Eigen::Index i = 0; i < p.u.size(); ++i) {
        p.u.data()[i] = sym_uniform(rs, ur);
    }
    return p;
}

// Largest singular value.
double op_norm(const Mat& a)
{
    if (a.size() == 0) {
        return 0.0;
    }
    Eigen::JacobiSVD<Mat> svd(a);
    return svd.singularValues()(0);
}

}  // namespace

DependencyFlags DependencyFlags::none(int m, std::size_t atoms)
{
    const auto mm = static_cast<std::size_t>(m);
    return {std::vector<bool>(mm, false), std::vector<bool>(mm, false), std::vector<bool>(mm, false),
            std::vector<bool>(atoms, false)};
}

DependencyFlags DependencyFlags::all(int m, std::size_t atoms)
{
    const auto mm = static_cast<std::size_t>(m);
    return {std::vector<bool>(mm, true), std::vector<bool>(mm, true), std::vector<bool>(mm, true),
            std::vector<bool>(atoms, true)};
}

bool DependencyFlags::uses_z() const
{
    return std::find(z_rows.begin(), z_rows.end(), true) != z_rows.end();
}

bool DependencyFlags::uses_u() const
{
    return std::find(u_rows.begin(), u_rows.end(), true) != u_rows.end();
}

Generator::Generator(std::string name, int m, int d, std::size_t atoms, double lipschitz,
                     std::vector<DependencyFlags> deps, EvalFn fn)
    : name_(std::move(name)), m_(m), d_(d), atoms_(atoms), lipschitz_(lipschitz),
      deps_(std::move(deps)), fn_(std::move(fn))
{
    if (m_ < 1 || d_ < 1) {
        throw std::invalid_argument("generator dimensions must be >= 1");
    }
    if (!(lipschitz_ >= 0.0)) {
        throw std::invalid_argument("generator Lipschitz constant must be >= 0");
    }
    if (deps_.size() != static_cast<std::size_t>(m_)) {
        throw std::invalid_argument("generator needs one dependency record per output");
    }
}

Vec Generator::evaluate(double t, const Vec& y, const Mat& z, const Mat& u) const
{
    if (y.size() != m_ || z.rows() != m_ || z.cols() != d_ || u.rows() != m_
        || static_cast<std::size_t>(u.cols()) != atoms_) {
        throw std::invalid_argument("generator " + name_ + ": input shape mismatch");
    }
    Vec out = fn_(t, y, z, u);
    if (out.size() != m_ || !out.allFinite()) {
        throw std::runtime_error("generator " + name_ + ": non-finite or mis-sized output");
    }
    return out;
}

Generator zero_gen(int m, int d, std::size_t atoms)
{
    return Generator("zero", m, d, atoms, 0.0,
                     std::vector<DependencyFlags>(static_cast<std::size_t>(m), DependencyFlags::none(m, atoms)),
                     [m](double, const Vec&, const Mat&, const Mat&) { return Vec(Vec::Zero(m)); });
}

Generator projection_drift_gen(const ConvexBody& k, int d, std::size_t atoms)
{
    const int m = k.dim();
    std::vector<DependencyFlags> deps(static_cast<std::size_t>(m), DependencyFlags::none(m, atoms));
    const bool separable = std::holds_alternative<Box>(k.shape()) || std::holds_alternative<OrthantProduct>(k.shape());
    for (int i = 0; i < m; ++i) {
        auto& flags = deps[static_cast<std::size_t>(i)];
        if (separable) {
            const auto* o = std::get_if<OrthantProduct>(&k.shape());
            flags.y[static_cast<std::size_t>(i)] = o == nullptr || i < o->positive;
        } else {
            std::fill(flags.y.begin(), flags.y.end(), true);
        }
    }
    // y - proj(y) is firmly nonexpansive (constant 1); 2 is the declared bound.
    return Generator("projection_drift", m, d, atoms, 2.0, std::move(deps),
                     [k](double, const Vec& y, const Mat&, const Mat&) { return Vec(y - project(k, y)); });
}

Generator scaled_jump_gen(double c, int d, double atom_weight)
{
    if (!(atom_weight > 0.0)) {
        throw std::invalid_argument("scaled_jump_gen: atom weight must be positive");
    }
    auto flags = DependencyFlags::none(1, 1);
    if (c != 0.0) {
        flags.u_rows[0] = true;
        flags.u_atoms[0] = true;
    }
    // |c du| = (|c| / sqrt(n1)) ||du||_{L2(n)}, so c max(1, sqrt(n1)) alone
    // undershoots when n1 < 1.
    const double root = std::sqrt(atom_weight);
    const double lip = std::fabs(c) * std::max(root, 1.0 / root);
    return Generator("scaled_jump", 1, d, 1, lip, {flags},
                     [c](double, const Vec&, const Mat&, const Mat& u) {
                         Vec out(1);
                         out(0) = -c * u(0, 0);
                         return out;
                     });
}

Generator affine_gen(AffineCoefficients co, int d, const FiniteMarkMeasure& marks)
{
    const auto m = static_cast<int>(co.a.rows());
    const std::size_t atoms = marks.size();
    if (co.a.cols() != m || co.b.rows() != m || co.b.cols() != m * d || co.c.size() != atoms) {
        throw std::invalid_argument("affine_gen: coefficient shapes do not match (m, d, atoms)");
    }
    for (const auto& cj : co.c) {
        if (cj.rows() != m || cj.cols() != m) {
            throw std::invalid_argument("affine_gen: each jump coefficient must be m x m");
        }
    }
    if (co.offset.size() == 0) {
        co.offset = Vec::Zero(m);
    }
    if (co.offset_slope.size() == 0) {
        co.offset_slope = Vec::Zero(m);
    }
    if (co.offset.size() != m || co.offset_slope.size() != m) {
        throw std::invalid_argument("affine_gen: offset must have length m");
    }

    std::vector<DependencyFlags> deps(static_cast<std::size_t>(m), DependencyFlags::none(m, atoms));
    for (int k = 0; k < m; ++k) {
        auto& f = deps[static_cast<std::size_t>(k)];
        for (int l = 0; l < m; ++l) {
            f.y[static_cast<std::size_t>(l)] = co.a(k, l) != 0.0;
            for (int c = 0; c < d; ++c) {
                if (co.b(k, l * d + c) != 0.0) {
                    f.z_rows[static_cast<std::size_t>(l)] = true;
                }
            }
            for (std::size_t j = 0; j < atoms; ++j) {
                if (co.c[j](k, l) != 0.0) {
                    f.u_rows[static_cast<std::size_t>(l)] = true;
                    f.u_atoms[j] = true;
                }
            }
        }
    }

    // |sum_j C_j du_j| <= sqrt(sum_j |C_j|^2 / n_j) ||du||_{L2(n)}.
    double ju = 0.0;
    for (std::size_t j = 0; j < atoms; ++j) {
        const double nj = op_norm(co.c[j]);
        ju += nj * nj / marks.weight(j);
    }
    const double lip = std::max({op_norm(co.a), op_norm(co.b), std::sqrt(ju)});

    return Generator("affine", m, d, atoms, lip, std::move(deps),
                     [co, m, d](double t, const Vec& y, const Mat& z, const Mat& u) {
                         Vec out = co.a * y + co.offset + t * co.offset_slope;
                         for (int k = 0; k < m; ++k) {
                             double acc = 0.0;
                             for (int l = 0; l < m; ++l) {
                                 for (int c = 0; c < d; ++c) {
                                     acc += co.b(k, l * d + c) * z(l, c);
                                 }
                             }
                             out(k) += acc;
                         }
                         for (std::size_t j = 0; j < co.c.size(); ++j) {
                             out += co.c[j] * u.col(static_cast<Eigen::Index>(j));
                         }
                         return out;
                     });
}

LipschitzReport verify_lipschitz(const Generator& gen, const FiniteMarkMeasure& marks,
                                 const PairSampler& sampler, std::size_t trials)
{
    if (trials == 0) {
        throw std::invalid_argument("verify_lipschitz: trials must be >= 1");
    }
    if (marks.size() != gen.atoms()) {
        throw std::invalid_argument("verify_lipschitz: mark measure does not match generator atoms");
    }
    const int m = gen.dim();
    const int d = gen.brownian_dim();
    LipschitzReport report;
    report.declared = gen.lipschitz();
    for (std::size_t i = 0; i < trials; ++i) {
        CounterStream rs({sampler.seed, static_cast<std::uint32_t>(i), 0, 0x11});
        auto p = draw_point(rs, m, d, gen.atoms(), sampler.horizon, sampler.y_range, sampler.z_range,
                            sampler.u_range);
        auto q = draw_point(rs, m, d, gen.atoms(), sampler.horizon, sampler.y_range, sampler.z_range,
                            sampler.u_range);
        q.t = p.t;
        // Odd trials move one slot only, by a random amount at a random scale.
        if (i % 2 == 1) {
            const double scale = std::pow(10.0, -3.0 * rs.uniform());
            const int slot = static_cast<int>(i / 2) % 3;
            RandomPoint r = p;
            if (slot == 0) {
                r.y = p.y + scale * (q.y - p.y);
            } else if (slot == 1) {
                r.z = p.z + scale * (q.z - p.z);
            } else {
                r.u = p.u + scale * (q.u - p.u);
            }
            q = r;
        }
        const double denom =
            (p.y - q.y).norm() + (p.z - q.z).norm() + std::sqrt(jump_norm2(p.u - q.u, marks));
        if (denom <= 0.0) {
            continue;
        }
        const double num = (gen.evaluate(p.t, p.y, p.z, p.u) - gen.evaluate(q.t, q.y, q.z, q.u)).norm();
        report.estimate = std::max(report.estimate, num / denom);
    }
    report.pass = report.estimate <= report.declared * (1.0 + 1e-9) || report.estimate == 0.0;
    return report;
}

DependencyFlags dependency_probe(const Generator& gen, int k, std::size_t trials, std::uint64_t seed,
                                 double horizon)
{
    if (trials == 0) {
        throw std::invalid_argument("dependency_probe: trials must be >= 1");
    }
    const int m = gen.dim();
    if (k < 0 || k >= m) {
        throw std::invalid_argument("dependency_probe: component out of range");
    }
    const int d = gen.brownian_dim();
    const std::size_t atoms = gen.atoms();
    auto flags = DependencyFlags::none(m, atoms);
    constexpr double kThreshold = 1e-10;
    for (std::size_t i = 0; i < trials; ++i) {
        CounterStream rs({seed, static_cast<std::uint32_t>(i), 0, 0x22});
        const auto p = draw_point(rs, m, d, atoms, horizon, 5.0, 3.0, 3.0);
        const double base = gen.evaluate(p.t, p.y, p.z, p.u)(k);
        auto moved = [&](const Vec& y, const Mat& z, const Mat& u) {
            return std::fabs(gen.evaluate(p.t, y, z, u)(k) - base) > kThreshold;
        };
        for (int l = 0; l < m; ++l) {
            const auto ls = static_cast<std::size_t>(l);
            Vec y = p.y;
            y(l) += sym_uniform(rs, 2.0) + 0.5;
            if (moved(y, p.z, p.u)) {
                flags.y[ls] = true;
            }
            Mat z = p.z;
            for (int c = 0; c < d; ++c) {
                z(l, c) += sym_uniform(rs, 2.0) + 0.5;
            }
            if (moved(p.y, z, p.u)) {
                flags.z_rows[ls] = true;
            }
            Mat u = p.u;
            for (Eigen::Index j = 0; j < u.cols(); ++j) {
                u(l, j) += sym_uniform(rs, 2.0) + 0.5;
            }
            if (moved(p.y, p.z, u)) {
                flags.u_rows[ls] = true;
            }
        }
        for (std::size_t j = 0; j < atoms; ++j) {
            Mat u = p.u;
            for (int l = 0; l < m; ++l) {
                u(l, static_cast<Eigen::Index>(j)) += sym_uniform(rs, 2.0) + 0.5;
            }
            if (moved(p.y, p.z, u)) {
                flags.u_atoms[j] = true;
            }
        }
    }
    return flags;
}

}  // namespace bsvlab
