#pragma once

// Closed convex constraint sets and the squared distance function d_K^2:
// projection, gradient, generalized Hessian, the jump defect
//   sum_j [d_K^2(y + u_j) - d_K^2(y) - <grad d_K^2(y), u_j>] n_j,
// the spectral split of symmetric matrices, and a mollified d_K^2.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bsvlab/noise.hpp"
#include "bsvlab/types.hpp"

namespace bsvlab {

struct Ball {
    Vec center;
    double radius = 1.0;
};

struct Box {
    Vec lo;
    Vec hi;
};

/// {x : normals.row(i) . x <= offsets(i) for all i}.
struct HalfspaceIntersection {
    Mat normals;
    Vec offsets;
};

/// R^positive_+ x R^free.
struct OrthantProduct {
    int positive = 0;
    int free = 0;
};

/// Positive semidefinite order x order matrices, embedded as vectors of
/// length order(order+1)/2 (see sym_to_vec).
struct PsdCone {
    int order = 0;
};

class ConvexBody {
public:
    using Shape = std::variant<Ball, Box, HalfspaceIntersection, OrthantProduct, PsdCone>;

    static ConvexBody ball(Vec center, double radius);
    static ConvexBody box(Vec lo, Vec hi);
    /// Throws if the intersection is empty.
    static ConvexBody halfspaces(Mat normals, Vec offsets);
    static ConvexBody orthant_product(int positive, int free);
    static ConvexBody psd_cone(int order);

    int dim() const { return dim_; }
    const Shape& shape() const { return shape_; }
    std::string describe() const;

    bool contains(const Vec& x, double tol = 0.0) const;
    /// True when x lies within margin of the set where d_K^2 fails to be
    /// twice differentiable (the boundary plus variant-specific loci).
    bool near_singular(const Vec& x, double margin) const;

private:
    ConvexBody(Shape shape, int dim) : shape_(std::move(shape)), dim_(dim) {}

    Shape shape_;
    int dim_;
};

Vec project(const ConvexBody& k, const Vec& x);
double dist2(const ConvexBody& k, const Vec& x);
/// 2 (x - project(x)).
Vec grad_dist2(const ConvexBody& k, const Vec& x);

/// Hessian of d_K^2, or nullopt where it does not exist.
using HessianResult = std::optional<Mat>;
HessianResult hess_dist2(const ConvexBody& k, const Vec& x);

/// Jump correction of the viability condition; column j of u is u(e_j).
double jump_defect(const ConvexBody& k, const Vec& y, const Mat& u, const FiniteMarkMeasure& marks);

class SymMatrix {
public:
    SymMatrix() = default;
    /// Rejects matrices with |a_ij - a_ji| > 1e-12 * max(1, max|a|).
    explicit SymMatrix(const Mat& a);

    int order() const { return static_cast<int>(a_.rows()); }
    const Mat& matrix() const { return a_; }
    /// Frobenius norm, (tr y^2)^(1/2).
    double norm() const { return a_.norm(); }

private:
    Mat a_;
};

/// Trace inner product.
double inner(const SymMatrix& a, const SymMatrix& b);

/// Upper-triangle embedding with off-diagonals scaled by sqrt(2), so the
/// Euclidean inner product of embeddings equals the trace inner product.
Vec sym_to_vec(const SymMatrix& y);
SymMatrix vec_to_sym(const Vec& v, int order);
int sym_vec_size(int order);

struct SpectralParts {
    SymMatrix plus;
    SymMatrix minus;
};

/// y = plus - minus with plus, minus PSD and plus * minus = 0.
SpectralParts spectral_split(const SymMatrix& y);

struct QuadratureSpec {
    /// Gauss-Legendre nodes per axis for dimension <= 3.
    int nodes_per_dim = 7;
    /// Kernel samples for dimension > 3.
    std::size_t mc_samples = 4096;
    std::uint64_t seed = 0x5eed;
};

struct MollifiedValue {
    double value = 0.0;
    Vec gradient;
    Mat hessian;
    std::size_t nodes = 0;
    bool low_confidence = false;
};

/// d_K^2 convolved with the bump exp(-1/(1 - |x/delta|^2)) on the delta-ball,
/// normalised to unit mass on the quadrature nodes.
MollifiedValue mollified_dist2(const ConvexBody& k, const Vec& x, double delta,
                               const QuadratureSpec& quad = {});

/// Distance to a finite point set (non-convex; used for demonstrations).
double dist_to_points(const std::vector<Vec>& points, const Vec& x);

}  // namespace bsvlab
