#pragma once

// BSDE drivers f(t, y, z, u) with Lipschitz and dependency metadata.
//
// Shapes: y in R^m, z is m x d (row k is z_k), u is m x J (column j is the
// jump size u(e_j) at atom j).

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bsvlab/geometry.hpp"
#include "bsvlab/noise.hpp"
#include "bsvlab/types.hpp"

namespace bsvlab {

/// Which inputs output component k may depend on.
struct DependencyFlags {
    std::vector<bool> y;        ///< y_l, l = 0..m-1
    std::vector<bool> z_rows;   ///< row l of z
    std::vector<bool> u_rows;   ///< component l of u (all atoms)
    std::vector<bool> u_atoms;  ///< atom j (all components)

    static DependencyFlags none(int m, std::size_t atoms);
    static DependencyFlags all(int m, std::size_t atoms);
    bool operator==(const DependencyFlags&) const = default;
    bool uses_z() const;
    bool uses_u() const;
};

class Generator {
public:
    using EvalFn = std::function<Vec(double t, const Vec& y, const Mat& z, const Mat& u)>;

    Generator(std::string name, int m, int d, std::size_t atoms, double lipschitz,
              std::vector<DependencyFlags> deps, EvalFn fn);

    const std::string& name() const { return name_; }
    int dim() const { return m_; }
    int brownian_dim() const { return d_; }
    std::size_t atoms() const { return atoms_; }
    double lipschitz() const { return lipschitz_; }
    const std::vector<DependencyFlags>& dependencies() const { return deps_; }

    /// Shape-checked evaluation.
    Vec evaluate(double t, const Vec& y, const Mat& z, const Mat& u) const;
    /// No shape checks; for hot loops whose shapes are already validated.
    Vec operator()(double t, const Vec& y, const Mat& z, const Mat& u) const { return fn_(t, y, z, u); }

private:
    std::string name_;
    int m_;
    int d_;
    std::size_t atoms_;
    double lipschitz_;
    std::vector<DependencyFlags> deps_;
    EvalFn fn_;
};

Generator zero_gen(int m, int d, std::size_t atoms);

/// f = y - project(K, y).
Generator projection_drift_gen(const ConvexBody& k, int d, std::size_t atoms);

/// m = 1, one atom of weight n1: f = -c u(e_1).
Generator scaled_jump_gen(double c, int d, double atom_weight = 1.0);

/// f = A y + B vec(z) + sum_j C_j u_j + b + b_slope t, with vec(z) row-major
/// (index l*d + c).
struct AffineCoefficients {
    Mat a;
    Mat b;
    std::vector<Mat> c;
    Vec offset;
    Vec offset_slope;
};
Generator affine_gen(AffineCoefficients coeffs, int d, const FiniteMarkMeasure& marks);

/// Random point pairs for Lipschitz probing.
struct PairSampler {
    std::uint64_t seed = 1;
    double horizon = 1.0;
    double y_range = 5.0;
    double z_range = 3.0;
    double u_range = 3.0;
};

struct LipschitzReport {
    double estimate = 0.0;
    double declared = 0.0;
    bool pass = false;
};

/// max |f(p) - f(p')| / (|dy| + |dz| + ||du||) over sampled pairs. Half of
/// the pairs perturb a single input slot so the supremum is approached.
LipschitzReport verify_lipschitz(const Generator& gen, const FiniteMarkMeasure& marks,
                                 const PairSampler& sampler, std::size_t trials);

/// Observed dependency set of output k, by single-slot perturbation with a
/// 1e-10 detection threshold.
DependencyFlags dependency_probe(const Generator& gen, int k, std::size_t trials,
                                 std::uint64_t seed = 7, double horizon = 1.0);

}  // namespace bsvlab
