#include "bsvlab/solver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

#include "bsvlab/parallel.hpp"

namespace bsvlab {
namespace {

constexpr double kFixedPointTol = 1e-12;
constexpr int kFixedPointCap = 100;

void check_shapes(const Generator& gen, const TerminalCondition& xi, const DrivingPaths& paths)
{
    if (gen.dim() != xi.m) {
        throw std::invalid_argument("solver: generator dimension " + std::to_string(gen.dim())
                                    + " does not match terminal dimension " + std::to_string(xi.m));
    }
    if (gen.brownian_dim() != paths.brownian_dim()) {
        throw std::invalid_argument("solver: generator and paths disagree on Brownian dimension");
    }
    if (gen.atoms() != paths.atom_count()) {
        throw std::invalid_argument("solver: generator and paths disagree on atom count");
    }
    if (!xi.fn) {
        throw std::invalid_argument("solver: terminal condition has no function");
    }
}

}  // namespace

Vec TerminalCondition::operator()(const DrivingPaths& paths, std::size_t path) const
{
    const std::size_t n = paths.steps();
    Vec v = fn(paths.W(path, n), paths.N(path, n));
    if (v.size() != m) {
        throw std::invalid_argument("terminal condition " + name + " returned wrong dimension");
    }
    return v;
}

BsdeSolution::BsdeSolution(std::shared_ptr<const DrivingPaths> paths, int m)
    : paths_(std::move(paths)), m_(m), d_(paths_->brownian_dim()), j_(paths_->atom_count())
{
    const std::size_t n = paths_->steps();
    const std::size_t p = paths_->n_paths();
    const auto mm = static_cast<std::size_t>(m_);
    y_.assign((n + 1) * p * mm, 0.0);
    z_.assign(n * p * mm * static_cast<std::size_t>(d_), 0.0);
    u_.assign(n * p * mm * j_, 0.0);
}

std::span<double> BsdeSolution::y_mut(std::size_t node, std::size_t path)
{
    const auto mm = static_cast<std::size_t>(m_);
    return {y_.data() + (node * n_paths() + path) * mm, mm};
}

std::span<double> BsdeSolution::z_mut(std::size_t step, std::size_t path)
{
    const auto w = static_cast<std::size_t>(m_ * d_);
    return {z_.data() + (step * n_paths() + path) * w, w};
}

std::span<double> BsdeSolution::u_mut(std::size_t step, std::size_t path)
{
    const auto w = static_cast<std::size_t>(m_) * j_;
    return {u_.data() + (step * n_paths() + path) * w, w};
}

Vec BsdeSolution::y(std::size_t node, std::size_t path) const
{
    const auto mm = static_cast<std::size_t>(m_);
    return Eigen::Map<const Vec>(y_.data() + (node * n_paths() + path) * mm, m_);
}

double BsdeSolution::y_component(std::size_t node, std::size_t path, int k) const
{
    return y_[(node * n_paths() + path) * static_cast<std::size_t>(m_) + static_cast<std::size_t>(k)];
}

Mat BsdeSolution::z(std::size_t step, std::size_t path) const
{
    const auto w = static_cast<std::size_t>(m_ * d_);
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    return Eigen::Map<const RowMajor>(z_.data() + (step * n_paths() + path) * w, m_, d_);
}

Mat BsdeSolution::u(std::size_t step, std::size_t path) const
{
    const auto w = static_cast<std::size_t>(m_) * j_;
    return Eigen::Map<const Mat>(u_.data() + (step * n_paths() + path) * w, m_, static_cast<Eigen::Index>(j_));
}

Vec BsdeSolution::mean_y(std::size_t node) const
{
    Vec acc = Vec::Zero(m_);
    for (std::size_t p = 0; p < n_paths(); ++p) {
        acc += y(node, p);
    }
    return acc / static_cast<double>(n_paths());
}

Vec BsdeSolution::std_y(std::size_t node) const
{
    const Vec mu = mean_y(node);
    Vec acc = Vec::Zero(m_);
    for (std::size_t p = 0; p < n_paths(); ++p) {
        acc += (y(node, p) - mu).array().square().matrix();
    }
    const double denom = n_paths() > 1 ? static_cast<double>(n_paths() - 1) : 1.0;
    return (acc / denom).array().sqrt().matrix();
}

BsdeSolution solve_backward(const Generator& gen, const TerminalCondition& xi,
                            std::shared_ptr<const DrivingPaths> paths_ptr, const SolverConfig& config)
{
    if (!paths_ptr) {
        throw std::invalid_argument("solver: null paths");
    }
    const DrivingPaths& paths = *paths_ptr;
    check_shapes(gen, xi, paths);
    const int m = gen.dim();
    const int d = paths.brownian_dim();
    const auto jn = static_cast<int>(paths.atom_count());
    const std::size_t np = paths.n_paths();
    const std::size_t nsteps = paths.steps();
    const TimeGrid& grid = paths.grid();
    const FiniteMarkMeasure& marks = paths.marks();

    if (config.basis.degree < 0) {
        throw std::invalid_argument("solver: basis degree must be >= 0");
    }
    if (config.mode == SchemeMode::implicit) {
        for (std::size_t i = 0; i < nsteps; ++i) {
            if (!(grid.step_size(i) * gen.lipschitz() < 1.0)) {
                throw std::invalid_argument("solver: implicit mode needs h L < 1 (step " + std::to_string(i) + ")");
            }
        }
    }

    BsdeSolution sol(paths_ptr, m);
    for (int j = 0; j < jn; ++j) {
        double hmin = grid.step_size(0);
        for (std::size_t i = 1; i < nsteps; ++i) {
            hmin = std::min(hmin, grid.step_size(i));
        }
        const double expected = hmin * marks.weight(static_cast<std::size_t>(j)) * static_cast<double>(np);
        if (expected < 100.0) {
            sol.warnings.push_back("atom " + std::to_string(j) + ": only " + std::to_string(expected)
                                   + " expected jump observations per step; U estimates are noisy");
        }
    }

    parallel_for(np, [&](std::size_t p0, std::size_t p1) {
        for (std::size_t p = p0; p < p1; ++p) {
            const Vec v = xi(paths, p);
            if (!v.allFinite()) {
                throw std::runtime_error("terminal condition " + xi.name + " is not finite on path "
                                         + std::to_string(p));
            }
            auto dst = sol.y_mut(nsteps, p);
            std::copy(v.data(), v.data() + m, dst.begin());
        }
    });

    const int q = d + jn;
    const int nmart = m * (d + jn);
    Mat features(static_cast<Eigen::Index>(np), q);
    Mat next(static_cast<Eigen::Index>(np), m);
    Mat products(static_cast<Eigen::Index>(np), nmart);
    Mat fitted(static_cast<Eigen::Index>(np), m + nmart);
    sol.diagnostics.resize(nsteps);

    for (std::size_t step = nsteps; step-- > 0;) {
        const double h = grid.step_size(step);
        const double t = grid.node(step);
        parallel_for(np, [&](std::size_t p0, std::size_t p1) {
            for (std::size_t p = p0; p < p1; ++p) {
                const auto r = static_cast<Eigen::Index>(p);
                const auto w = paths.W(p, step);
                const auto nc = paths.N(p, step);
                for (int c = 0; c < d; ++c) {
                    features(r, c) = w[static_cast<std::size_t>(c)];
                }
                for (int j = 0; j < jn; ++j) {
                    features(r, d + j) = nc[static_cast<std::size_t>(j)];
                }
                next.row(r) = sol.y(step + 1, p).transpose();
            }
        });

        auto& diag = sol.diagnostics[step];
        diag.t = t;
        const RegressionDesign design(features, config.basis, step);
        diag.regression = design.diagnostics();
        fitted.leftCols(m) = design.fit(next);

        // Z and U from (Y_{i+1} - m_i) times the increments: same conditional
        // expectation, far smaller variance than Y_{i+1} times the increments.
        parallel_for(np, [&](std::size_t p0, std::size_t p1) {
            for (std::size_t p = p0; p < p1; ++p) {
                const auto r = static_cast<Eigen::Index>(p);
                const auto dw = paths.dW(p, step);
                const auto comp = compensated_increment(paths.counts(p, step), h, marks);
                for (int k = 0; k < m; ++k) {
                    const double resid = next(r, k) - fitted(r, k);
                    for (int c = 0; c < d; ++c) {
                        products(r, k * d + c) = resid * dw[static_cast<std::size_t>(c)];
                    }
                    for (int j = 0; j < jn; ++j) {
                        products(r, m * d + j * m + k) = resid * comp[static_cast<std::size_t>(j)];
                    }
                }
            }
        });
        fitted.rightCols(nmart) = design.fit(products);

        std::vector<int> iters(np, 0);
        parallel_for(np, [&](std::size_t p0, std::size_t p1) {
            Mat z(m, d);
            Mat u(m, jn);
            Vec mi(m);
            for (std::size_t p = p0; p < p1; ++p) {
                const auto r = static_cast<Eigen::Index>(p);
                for (int k = 0; k < m; ++k) {
                    mi(k) = fitted(r, k);
                    for (int c = 0; c < d; ++c) {
                        z(k, c) = fitted(r, m + k * d + c) / h;
                    }
                    for (int j = 0; j < jn; ++j) {
                        u(k, j) = fitted(r, m + m * d + j * m + k) / (h * marks.weight(static_cast<std::size_t>(j)));
                    }
                }
                Vec yi;
                if (config.mode == SchemeMode::explicit_euler) {
                    yi = mi + h * gen(t, mi, z, u);
                } else {
                    yi = mi;
                    int it = 0;
                    for (;; ++it) {
                        if (it >= kFixedPointCap) {
                            throw std::runtime_error("fixed-point iteration did not converge at step "
                                                     + std::to_string(step));
                        }
                        Vec next = mi + h * gen(t, yi, z, u);
                        const double delta = (next - yi).norm();
                        yi = std::move(next);
                        if (delta <= kFixedPointTol * (1.0 + yi.norm())) {
                            break;
                        }
                    }
                    iters[p] = it + 1;
                }
                if (!yi.allFinite()) {
                    throw std::runtime_error("non-finite Y at step " + std::to_string(step));
                }
                auto yd = sol.y_mut(step, p);
                std::copy(yi.data(), yi.data() + m, yd.begin());
                auto zd = sol.z_mut(step, p);
                for (int k = 0; k < m; ++k) {
                    for (int c = 0; c < d; ++c) {
                        zd[static_cast<std::size_t>(k * d + c)] = z(k, c);
                    }
                }
                auto ud = sol.u_mut(step, p);
                std::copy(u.data(), u.data() + u.size(), ud.begin());
            }
        });
        diag.max_fixed_point_iterations = *std::max_element(iters.begin(), iters.end());
    }

    sol.y0 = sol.mean_y(0);
    sol.y0_stderr = sol.std_y(std::min<std::size_t>(1, nsteps)) / std::sqrt(static_cast<double>(np));
    return sol;
}

BsdeSolution closed_form_linear(const Mat& a, const TerminalCondition& xi,
                                std::shared_ptr<const DrivingPaths> paths, const SolverConfig& config)
{
    if (a.rows() != xi.m || a.cols() != xi.m) {
        throw std::invalid_argument("closed_form_linear: A must be m x m");
    }
    SolverConfig zero_cfg = config;
    zero_cfg.mode = SchemeMode::explicit_euler;
    const auto& p = *paths;
    BsdeSolution sol = solve_backward(zero_gen(xi.m, p.brownian_dim(), p.atom_count()), xi, paths, zero_cfg);
    const int m = xi.m;
    const double horizon = p.grid().horizon();
    for (std::size_t i = 0; i < p.steps(); ++i) {
        const Mat e = (a * (horizon - p.grid().node(i))).exp();
        for (std::size_t path = 0; path < p.n_paths(); ++path) {
            const Vec y = e * sol.y(i, path);
            auto yd = sol.y_mut(i, path);
            std::copy(y.data(), y.data() + m, yd.begin());
            const Mat z = e * sol.z(i, path);
            auto zd = sol.z_mut(i, path);
            for (int k = 0; k < m; ++k) {
                for (int c = 0; c < z.cols(); ++c) {
                    zd[static_cast<std::size_t>(k * z.cols() + c)] = z(k, c);
                }
            }
            const Mat u = e * sol.u(i, path);
            auto ud = sol.u_mut(i, path);
            std::copy(u.data(), u.data() + u.size(), ud.begin());
        }
    }
    sol.y0 = sol.mean_y(0);
    const Mat e0 = (a * horizon).exp();
    sol.y0_stderr = (e0.cwiseAbs() * sol.y0_stderr);
    return sol;
}

AprioriReport apriori_diagnostics(const BsdeSolution& sol, const TerminalCondition& xi, const SolverConfig& config)
{
    const auto& paths = sol.paths();
    SolverConfig zero_cfg = config;
    zero_cfg.mode = SchemeMode::explicit_euler;
    const BsdeSolution ref =
        solve_backward(zero_gen(sol.dim(), paths.brownian_dim(), paths.atom_count()), xi, sol.paths_ptr(), zero_cfg);
    const std::size_t n = sol.steps();
    const double np = static_cast<double>(sol.n_paths());
    const auto& grid = paths.grid();
    const auto& marks = paths.marks();

    AprioriReport rep;
    rep.t = grid.nodes();
    rep.dev_y.assign(n + 1, 0.0);
    rep.dev_z.assign(n + 1, 0.0);
    rep.dev_u.assign(n + 1, 0.0);
    rep.z_energy.assign(n + 1, 0.0);
    rep.u_energy.assign(n + 1, 0.0);
    for (std::size_t i = n + 1; i-- > 0;) {
        double dy = 0.0;
        double dz = 0.0;
        double du = 0.0;
        double ez = 0.0;
        double eu = 0.0;
        for (std::size_t p = 0; p < sol.n_paths(); ++p) {
            dy += (sol.y(i, p) - ref.y(i, p)).squaredNorm();
            if (i < n) {
                const Mat z = sol.z(i, p);
                const Mat u = sol.u(i, p);
                dz += (z - ref.z(i, p)).squaredNorm();
                du += jump_norm2(u - ref.u(i, p), marks);
                ez += z.squaredNorm();
                eu += jump_norm2(u, marks);
            }
        }
        rep.dev_y[i] = dy / np;
        if (i < n) {
            const double h = grid.step_size(i);
            rep.dev_z[i] = rep.dev_z[i + 1] + h * dz / np;
            rep.dev_u[i] = rep.dev_u[i + 1] + h * du / np;
            rep.z_energy[i] = rep.z_energy[i + 1] + h * ez / np;
            rep.u_energy[i] = rep.u_energy[i + 1] + h * eu / np;
            const double total = rep.dev_y[i] + rep.dev_z[i] + rep.dev_u[i];
            rep.fitted_m = std::max(rep.fitted_m, total / (grid.horizon() - grid.node(i)));
        }
    }
    return rep;
}

DistanceStats distance_stats(const BsdeSolution& sol, const std::function<double(const Vec&)>& dist)
{
    DistanceStats out;
    const std::size_t n = sol.steps();
    const std::size_t np = sol.n_paths();
    out.t = sol.paths().grid().nodes();
    std::vector<double> vals(np);
    for (std::size_t i = 0; i <= n; ++i) {
        parallel_for(np, [&](std::size_t p0, std::size_t p1) {
            for (std::size_t p = p0; p < p1; ++p) {
                vals[p] = dist(sol.y(i, p));
            }
        });
        double s = 0.0;
        double mx = 0.0;
        for (double v : vals) {
            s += v;
            mx = std::max(mx, v);
        }
        const double mu = s / static_cast<double>(np);
        double ss = 0.0;
        for (double v : vals) {
            ss += (v - mu) * (v - mu);
        }
        const double var = np > 1 ? ss / static_cast<double>(np - 1) : 0.0;
        out.mean.push_back(mu);
        out.stderr_mean.push_back(std::sqrt(var / static_cast<double>(np)));
        out.max.push_back(mx);
    }
    return out;
}

}  // namespace bsvlab
