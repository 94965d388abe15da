#include "bsvlab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "bsvlab/random.hpp"

namespace bsvlab {
namespace {

// Points this close to a singular locus are treated as lying on it.
constexpr double kLocusTol = 1e-12;

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_dim(const ConvexBody& k, const Vec& x)
{
    if (x.size() != k.dim()) {
        throw std::invalid_argument("point of dimension " + std::to_string(x.size())
                                    + " given to a set in dimension " + std::to_string(k.dim()));
    }
}

struct HalfspaceProjection {
    Vec point;
    std::vector<bool> active;
    double max_violation = 0.0;
};

// Hildreth's dual coordinate ascent, then an exact solve on the detected
// active set. Tolerance 1e-10 on the dual step, capped sweeps.
HalfspaceProjection project_halfspaces(const HalfspaceIntersection& h, const Vec& x,
                                       int max_sweeps = 20000)
{
    const Eigen::Index q = h.normals.rows();
    HalfspaceProjection out;
    out.active.assign(static_cast<std::size_t>(q), false);
    const Vec slack0 = h.normals * x - h.offsets;
    if (slack0.maxCoeff() <= 0.0) {
        out.point = x;
        return out;
    }
    Vec lambda = Vec::Zero(q);
    Vec norms2 = h.normals.rowwise().squaredNorm();
    Vec p = x;
    const double scale = 1.0 + x.norm();
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index i = 0; i < q; ++i) {
            const double viol = (h.normals.row(i).dot(p) - h.offsets(i)) / norms2(i);
            const double next = std::max(0.0, lambda(i) + viol);
            const double delta = next - lambda(i);
            if (delta != 0.0) {
                p.noalias() -= delta * h.normals.row(i).transpose();
                lambda(i) = next;
                max_change = std::max(max_change, std::fabs(delta) * std::sqrt(norms2(i)));
            }
        }
        if (max_change < 1e-10 * 1e-3 * scale) {
            break;
        }
    }

    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < q; ++i) {
        if (lambda(i) > 0.0) {
            act.push_back(i);
        }
    }
    if (!act.empty()) {
        Mat a(static_cast<Eigen::Index>(act.size()), x.size());
        Vec b(static_cast<Eigen::Index>(act.size()));
        for (std::size_t r = 0; r < act.size(); ++r) {
            a.row(static_cast<Eigen::Index>(r)) = h.normals.row(act[r]);
            b(static_cast<Eigen::Index>(r)) = h.offsets(act[r]);
        }
        const Mat gram = a * a.transpose();
        const Vec mu = gram.completeOrthogonalDecomposition().solve(a * x - b);
        const Vec polished = x - a.transpose() * mu;
        const Vec slack = h.normals * polished - h.offsets;
        if (mu.minCoeff() >= -1e-9 && slack.maxCoeff() <= 1e-12 * scale) {
            p = polished;
        }
    }
    const Vec slack = h.normals * p - h.offsets;
    out.max_violation = std::max(0.0, slack.maxCoeff());
    for (Eigen::Index i = 0; i < q; ++i) {
        out.active[static_cast<std::size_t>(i)] = slack(i) >= -1e-9 * std::sqrt(norms2(i)) * scale;
    }
    out.point = p;
    return out;
}

Vec project_orthant(const OrthantProduct& o, const Vec& x)
{
    Vec p = x;
    for (int i = 0; i < o.positive; ++i) {
        p(i) = std::max(0.0, x(i));
    }
    return p;
}

struct Eigen3 {
    Vec values;
    Mat vectors;
};

Eigen3 sym_eigen(const Mat& a)
{
    Eigen::SelfAdjointEigenSolver<Mat> es(a);
    if (es.info() != Eigen::Success) {
        throw std::runtime_error("symmetric eigendecomposition failed");
    }
    return {es.eigenvalues(), es.eigenvectors()};
}

Mat psd_hessian(int order, const Vec& x)
{
    const SymMatrix y = vec_to_sym(x, order);
    const auto [lambda, q] = sym_eigen(y.matrix());
    const int n = order;
    Mat gamma(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double li = lambda(i);
            const double lj = lambda(j);
            if (std::fabs(li - lj) > 1e-14 * (1.0 + std::fabs(li) + std::fabs(lj))) {
                gamma(i, j) = (std::max(li, 0.0) - std::max(lj, 0.0)) / (li - lj);
            } else {
                gamma(i, j) = li > 0.0 ? 1.0 : 0.0;
            }
        }
    }
    const int dim = sym_vec_size(order);
    Mat dproj(dim, dim);
    for (int c = 0; c < dim; ++c) {
        Vec e = Vec::Zero(dim);
        e(c) = 1.0;
        const Mat h = vec_to_sym(e, order).matrix();
        const Mat rotated = q.transpose() * h * q;
        const Mat image = q * gamma.cwiseProduct(rotated) * q.transpose();
        dproj.col(c) = sym_to_vec(SymMatrix(0.5 * (image + image.transpose())));
    }
    return 2.0 * (Mat::Identity(dim, dim) - dproj);
}

bool psd_singular(int order, const Vec& x, double margin)
{
    const SymMatrix y = vec_to_sym(x, order);
    const auto ev = sym_eigen(y.matrix()).values;
    return ev.cwiseAbs().minCoeff() <= margin;
}

std::vector<std::pair<double, double>> gauss_legendre(int n)
{
    Mat jacobi = Mat::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        const double beta = k / std::sqrt(4.0 * k * k - 1.0);
        jacobi(k, k - 1) = beta;
        jacobi(k - 1, k) = beta;
    }
    const auto [nodes, vecs] = sym_eigen(jacobi);
    std::vector<std::pair<double, double>> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        out[static_cast<std::size_t>(i)] = {nodes(i), 2.0 * vecs(0, i) * vecs(0, i)};
    }
    return out;
}

double bump(double r2)
{
    return r2 < 1.0 ? std::exp(-1.0 / (1.0 - r2)) : 0.0;
}

}  // namespace

ConvexBody ConvexBody::ball(Vec center, double radius)
{
    if (!(radius > 0.0) || !std::isfinite(radius)) {
        throw std::invalid_argument("ball radius must be positive");
    }
    if (center.size() < 1 || !center.allFinite()) {
        throw std::invalid_argument("ball center must be a finite vector");
    }
    const int dim = static_cast<int>(center.size());
    return ConvexBody(Ball{std::move(center), radius}, dim);
}

ConvexBody ConvexBody::box(Vec lo, Vec hi)
{
    if (lo.size() != hi.size() || lo.size() < 1) {
        throw std::invalid_argument("box bounds must have equal nonzero length");
    }
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
        if (!(lo(i) <= hi(i))) {
            throw std::invalid_argument("box requires lo <= hi componentwise");
        }
    }
    const int dim = static_cast<int>(lo.size());
    return ConvexBody(Box{std::move(lo), std::move(hi)}, dim);
}

ConvexBody ConvexBody::halfspaces(Mat normals, Vec offsets)
{
    if (normals.rows() != offsets.size() || normals.rows() < 1 || normals.cols() < 1) {
        throw std::invalid_argument("halfspaces: need one offset per normal row");
    }
    for (Eigen::Index i = 0; i < normals.rows(); ++i) {
        if (normals.row(i).squaredNorm() == 0.0) {
            throw std::invalid_argument("halfspaces: zero normal");
        }
    }
    HalfspaceIntersection h{std::move(normals), std::move(offsets)};
    const auto probe = project_halfspaces(h, Vec::Zero(h.normals.cols()));
    const double scale = 1.0 + h.offsets.cwiseAbs().maxCoeff();
    if (probe.max_violation > 1e-9 * scale) {
        throw std::invalid_argument("halfspaces: intersection is empty");
    }
    const int dim = static_cast<int>(h.normals.cols());
    return ConvexBody(std::move(h), dim);
}

ConvexBody ConvexBody::orthant_product(int positive, int free)
{
    if (positive < 0 || free < 0 || positive + free < 1) {
        throw std::invalid_argument("orthant product needs nonnegative sizes summing to >= 1");
    }
    return ConvexBody(OrthantProduct{positive, free}, positive + free);
}

ConvexBody ConvexBody::psd_cone(int order)
{
    if (order < 1) {
        throw std::invalid_argument("psd cone order must be >= 1");
    }
    return ConvexBody(PsdCone{order}, sym_vec_size(order));
}

std::string ConvexBody::describe() const
{
    std::ostringstream os;
    std::visit(Overloaded{
                   [&](const Ball& b) { os << "Ball(dim=" << b.center.size() << ", r=" << b.radius << ")"; },
                   [&](const Box& b) { os << "Box(dim=" << b.lo.size() << ")"; },
                   [&](const HalfspaceIntersection& h) {
                       os << "Halfspaces(dim=" << h.normals.cols() << ", count=" << h.normals.rows() << ")";
                   },
                   [&](const OrthantProduct& o) { os << "OrthantProduct(" << o.positive << ", " << o.free << ")"; },
                   [&](const PsdCone& p) { os << "PsdCone(" << p.order << ")"; },
               },
               shape_);
    return os.str();
}

bool ConvexBody::contains(const Vec& x, double tol) const
{
    return dist2(*this, x) <= tol * tol;
}

bool ConvexBody::near_singular(const Vec& x, double margin) const
{
    check_dim(*this, x);
    return std::visit(
        Overloaded{
            [&](const Ball& b) { return std::fabs((x - b.center).norm() - b.radius) <= margin; },
            [&](const Box& b) {
                for (Eigen::Index i = 0; i < x.size(); ++i) {
                    if (std::fabs(x(i) - b.lo(i)) <= margin || std::fabs(x(i) - b.hi(i)) <= margin) {
                        return true;
                    }
                }
                return false;
            },
            [&](const HalfspaceIntersection& h) {
                const Vec slack = h.normals * x - h.offsets;
                for (Eigen::Index i = 0; i < slack.size(); ++i) {
                    if (std::fabs(slack(i)) <= margin * h.normals.row(i).norm()) {
                        return true;
                    }
                }
                return false;
            },
            [&](const OrthantProduct& o) {
                for (int i = 0; i < o.positive; ++i) {
                    if (std::fabs(x(i)) <= margin) {
                        return true;
                    }
                }
                return false;
            },
            [&](const PsdCone& p) { return psd_singular(p.order, x, margin); },
        },
        shape_);
}

Vec project(const ConvexBody& k, const Vec& x)
{
    check_dim(k, x);
    if (!x.allFinite()) {
        throw std::invalid_argument("project: non-finite point");
    }
    return std::visit(Overloaded{
                          [&](const Ball& b) -> Vec {
                              const Vec v = x - b.center;
                              const double r = v.norm();
                              if (r <= b.radius) {
                                  return x;
                              }
                              return b.center + (b.radius / r) * v;
                          },
                          [&](const Box& b) -> Vec { return x.cwiseMax(b.lo).cwiseMin(b.hi); },
                          [&](const HalfspaceIntersection& h) -> Vec { return project_halfspaces(h, x).point; },
                          [&](const OrthantProduct& o) -> Vec { return project_orthant(o, x); },
                          [&](const PsdCone& p) -> Vec {
                              return sym_to_vec(spectral_split(vec_to_sym(x, p.order)).plus);
                          },
                      },
                      k.shape());
}

double dist2(const ConvexBody& k, const Vec& x)
{
    check_dim(k, x);
    return std::visit(Overloaded{
                          [&](const Ball& b) {
                              const double r = (x - b.center).norm();
                              return r <= b.radius ? 0.0 : (r - b.radius) * (r - b.radius);
                          },
                          [&](const Box& b) {
                              double acc = 0.0;
                              for (Eigen::Index i = 0; i < x.size(); ++i) {
                                  const double e = x(i) < b.lo(i) ? b.lo(i) - x(i)
                                                   : x(i) > b.hi(i) ? x(i) - b.hi(i)
                                                                    : 0.0;
                                  acc += e * e;
                              }
                              return acc;
                          },
                          [&](const HalfspaceIntersection&) { return (x - project(k, x)).squaredNorm(); },
                          [&](const OrthantProduct& o) {
                              double acc = 0.0;
                              for (int i = 0; i < o.positive; ++i) {
                                  if (x(i) < 0.0) {
                                      acc += x(i) * x(i);
                                  }
                              }
                              return acc;
                          },
                          [&](const PsdCone& p) {
                              return spectral_split(vec_to_sym(x, p.order)).minus.matrix().squaredNorm();
                          },
                      },
                      k.shape());
}

Vec grad_dist2(const ConvexBody& k, const Vec& x)
{
    return 2.0 * (x - project(k, x));
}

HessianResult hess_dist2(const ConvexBody& k, const Vec& x)
{
    check_dim(k, x);
    const auto n = x.size();
    return std::visit(
        Overloaded{
            [&](const Ball& b) -> HessianResult {
                const Vec v = x - b.center;
                const double r = v.norm();
                if (std::fabs(r - b.radius) <= kLocusTol * std::max(1.0, b.radius)) {
                    return std::nullopt;
                }
                if (r < b.radius) {
                    return Mat::Zero(n, n);
                }
                const Vec dir = v / r;
                const Mat tangent = Mat::Identity(n, n) - dir * dir.transpose();
                return Mat(2.0 * (Mat::Identity(n, n) - (b.radius / r) * tangent));
            },
            [&](const Box& b) -> HessianResult {
                Mat h = Mat::Zero(n, n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double s = kLocusTol * std::max(1.0, std::fabs(x(i)));
                    if (std::fabs(x(i) - b.lo(i)) <= s || std::fabs(x(i) - b.hi(i)) <= s) {
                        return std::nullopt;
                    }
                    if (x(i) < b.lo(i) || x(i) > b.hi(i)) {
                        h(i, i) = 2.0;
                    }
                }
                return h;
            },
            [&](const HalfspaceIntersection& hs) -> HessianResult {
                // Central differences of the gradient; undefined when the
                // stencil straddles a change of active set.
                const double step = 1e-6 * (1.0 + x.norm());
                const auto base = project_halfspaces(hs, x);
                if (k.near_singular(x, 2.0 * step)) {
                    return std::nullopt;
                }
                Mat h(n, n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    Vec xp = x;
                    Vec xm = x;
                    xp(i) += step;
                    xm(i) -= step;
                    const auto pp = project_halfspaces(hs, xp);
                    const auto pm = project_halfspaces(hs, xm);
                    if (pp.active != base.active || pm.active != base.active) {
                        return std::nullopt;
                    }
                    h.col(i) = (2.0 * (xp - pp.point) - 2.0 * (xm - pm.point)) / (2.0 * step);
                }
                return Mat(0.5 * (h + h.transpose()));
            },
            [&](const OrthantProduct& o) -> HessianResult {
                Mat h = Mat::Zero(n, n);
                for (int i = 0; i < o.positive; ++i) {
                    if (std::fabs(x(i)) <= kLocusTol) {
                        return std::nullopt;
                    }
                    if (x(i) < 0.0) {
                        h(i, i) = 2.0;
                    }
                }
                return h;
            },
            [&](const PsdCone& p) -> HessianResult {
                const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
                if (psd_singular(p.order, x, kLocusTol * scale)) {
                    return std::nullopt;
                }
                return psd_hessian(p.order, x);
            },
        },
        k.shape());
}

double jump_defect(const ConvexBody& k, const Vec& y, const Mat& u, const FiniteMarkMeasure& marks)
{
    if (u.rows() != y.size() || static_cast<std::size_t>(u.cols()) != marks.size()) {
        throw std::invalid_argument("jump_defect: u must be dim x atom-count");
    }
    const double base = dist2(k, y);
    const Vec g = grad_dist2(k, y);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
        const Vec uj = u.col(j);
        acc += (dist2(k, y + uj) - base - g.dot(uj)) * marks.weight(static_cast<std::size_t>(j));
    }
    return acc;
}

SymMatrix::SymMatrix(const Mat& a) : a_(a)
{
    if (a.rows() != a.cols()) {
        throw std::invalid_argument("symmetric matrix must be square");
    }
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw std::invalid_argument("matrix is not symmetric");
    }
    a_ = 0.5 * (a + a.transpose());
}

double inner(const SymMatrix& a, const SymMatrix& b)
{
    return (a.matrix().cwiseProduct(b.matrix())).sum();
}

int sym_vec_size(int order)
{
    return order * (order + 1) / 2;
}

Vec sym_to_vec(const SymMatrix& y)
{
    const int n = y.order();
    Vec v(sym_vec_size(n));
    int idx = 0;
    for (int i = 0; i < n; ++i) {
        for (int j = i; j < n; ++j) {
            v(idx++) = i == j ? y.matrix()(i, i) : std::numbers::sqrt2 * y.matrix()(i, j);
        }
    }
    return v;
}

SymMatrix vec_to_sym(const Vec& v, int order)
{
    if (v.size() != sym_vec_size(order)) {
        throw std::invalid_argument("vector length does not match symmetric order");
    }
    Mat a(order, order);
    int idx = 0;
    for (int i = 0; i < order; ++i) {
        for (int j = i; j < order; ++j) {
            const double val = i == j ? v(idx) : v(idx) / std::numbers::sqrt2;
            a(i, j) = val;
            a(j, i) = val;
            ++idx;
        }
    }
    return SymMatrix(a);
}

SpectralParts spectral_split(const SymMatrix& y)
{
    const auto [lambda, q] = sym_eigen(y.matrix());
    const Vec pos = lambda.cwiseMax(0.0);
    const Vec neg = (-lambda).cwiseMax(0.0);
    const Mat plus = q * pos.asDiagonal() * q.transpose();
    const Mat minus = q * neg.asDiagonal() * q.transpose();
    return {SymMatrix(0.5 * (plus + plus.transpose())), SymMatrix(0.5 * (minus + minus.transpose()))};
}

MollifiedValue mollified_dist2(const ConvexBody& k, const Vec& x, double delta,
                               const QuadratureSpec& quad)
{
    check_dim(k, x);
    if (!(delta > 0.0)) {
        throw std::invalid_argument("mollifier radius must be positive");
    }
    const int m = k.dim();
    std::vector<Vec> offsets;
    std::vector<double> weights;

    MollifiedValue out;
    if (m <= 3) {
        const int n = std::max(1, quad.nodes_per_dim);
        const auto rule = gauss_legendre(n);
        std::vector<int> idx(static_cast<std::size_t>(m), 0);
        for (;;) {
            Vec s(m);
            double w = 1.0;
            for (int a = 0; a < m; ++a) {
                s(a) = rule[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])].first;
                w *= rule[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])].second;
            }
            const double kern = bump(s.squaredNorm());
            if (kern > 0.0) {
                offsets.push_back(delta * s);
                weights.push_back(w * kern);
            }
            int a = 0;
            while (a < m && ++idx[static_cast<std::size_t>(a)] == n) {
                idx[static_cast<std::size_t>(a)] = 0;
                ++a;
            }
            if (a == m) {
                break;
            }
        }
        out.low_confidence = n < 3;
    } else {
        // Uniform samples in the unit ball weighted by the kernel.
        for (std::size_t i = 0; i < quad.mc_samples; ++i) {
            CounterStream rs({quad.seed, static_cast<std::uint32_t>(i), 0, 0});
            Vec s(m);
            for (int a = 0; a < m; ++a) {
                s(a) = rs.normal();
            }
            const double radius = std::pow(rs.uniform(), 1.0 / m);
            s *= radius / s.norm();
            const double kern = bump(s.squaredNorm());
            if (kern > 0.0) {
                offsets.push_back(delta * s);
                weights.push_back(kern);
            }
        }
        out.low_confidence = quad.mc_samples < 1024;
    }
    if (weights.empty()) {
        throw std::invalid_argument("mollifier quadrature has no nodes inside the kernel support");
    }
    double mass = 0.0;
    for (double w : weights) {
        mass += w;
    }

    out.gradient = Vec::Zero(m);
    out.hessian = Mat::Zero(m, m);
    out.nodes = weights.size();
    double hess_mass = 0.0;
    const Vec nudge = Vec::Constant(m, 1.0 / std::sqrt(static_cast<double>(m)));
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double w = weights[i] / mass;
        const Vec p = x - offsets[i];
        out.value += w * dist2(k, p);
        out.gradient += w * grad_dist2(k, p);
        auto h = hess_dist2(k, p);
        if (!h) {
            // Measure-zero locus hit exactly: average the two sides.
            const double tau = 1e-9 * (1.0 + p.norm());
            auto hp = hess_dist2(k, p + tau * nudge);
            auto hm = hess_dist2(k, p - tau * nudge);
            if (hp && hm) {
                h = Mat(0.5 * (*hp + *hm));
            }
        }
        if (h) {
            out.hessian += w * *h;
            hess_mass += w;
        }
    }
    if (hess_mass > 0.0) {
        out.hessian /= hess_mass;
    }
    if (static_cast<double>(out.nodes) < std::pow(2.0, std::min(m, 10))) {
        out.low_confidence = true;
    }
    return out;
}

double dist_to_points(const std::vector<Vec>& points, const Vec& x)
{
    if (points.empty()) {
        throw std::invalid_argument("empty point set");
    }
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : points) {
        best = std::min(best, (x - p).norm());
    }
    return best;
}

}  // namespace bsvlab
