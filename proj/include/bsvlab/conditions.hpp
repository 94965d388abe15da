#pragma once

// Pointwise checks of the viability and comparison inequalities, written as
// lhs <= rhs0 + C * q, with three-valued verdicts over seeded samples.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bsvlab/generator.hpp"
#include "bsvlab/geometry.hpp"
#include "bsvlab/noise.hpp"
#include "bsvlab/solver.hpp"
#include "bsvlab/types.hpp"

namespace bsvlab {

/// One evaluation point. Fields not used by a condition are left empty.
struct PointSample {
    double t = 0.0;
    Vec y;
    Vec y2;
    Mat z;
    Mat z2;
    Mat u;
    Mat u2;
};

/// lhs <= rhs0 + c * q is the checked inequality.
struct Terms {
    double lhs = 0.0;
    double rhs0 = 0.0;
    double q = 0.0;

    double rhs(double c) const { return rhs0 + c * q; }
};

enum class Outcome { certified, falsified, inconclusive };
const char* to_string(Outcome o);

struct Witness {
    PointSample sample;
    double lhs = 0.0;
    double rhs = 0.0;
    double margin = 0.0;
    double c = 0.0;  ///< constant the witness violates
};

struct ConditionVerdict {
    std::string condition;
    Outcome outcome = Outcome::inconclusive;
    double c_found = 0.0;         ///< certified: largest required constant seen (>= 0)
    double c_max = 0.0;
    double sup_c_required = 0.0;  ///< over samples with q > 1e-8, including refined ones
    std::optional<Witness> witness;
    std::size_t samples = 0;
    std::size_t skipped_undefined = 0;
    std::size_t boundary_layer = 0;
    std::string note;
};

struct Sampler {
    std::uint64_t seed = 1;
    std::size_t samples = 4000;
    double horizon = 1.0;
    double y_range = 5.0;
    double z_range = 3.0;
    double u_range = 3.0;
    /// Share of samples placed just outside K, at log-uniform distance in
    /// [boundary_near, boundary_far].
    double boundary_fraction = 0.3;
    double boundary_near = 1e-4;
    double boundary_far = 0.1;
    double singular_margin = 1e-6;
    /// Worst samples refined by coordinate ascent.
    int refine_candidates = 5;
};

inline constexpr double kDefaultCMax = 100.0;

// ---- pointwise evaluators ------------------------------------------------

/// 4<y - P(y), f(t,y,z,u)> against <D^2 d^2 z, z> + C d^2 + 2 jump_defect.
/// Empty when the Hessian is undefined at s.y.
std::optional<Terms> viability_terms(const Generator& gen, const ConvexBody& k, const FiniteMarkMeasure& marks,
                                     const PointSample& s);

/// Two-generator comparison inequality, explicit orthant formulas
/// (y = s.y, y' = s.y2, z' = s.z2, u' = s.u2).
Terms comparison_terms(const Generator& f1, const Generator& f2, const FiniteMarkMeasure& marks,
                       const PointSample& s);

/// The same inequality through generic geometry on the cone k (R^m_+ or the
/// PSD cone): lhs = 4<y - P(y), f1(P(y) + y') - f2(y')>, rhs0 =
/// <D^2 d^2 dz, dz> + 2 jump_defect(y, u - u').
std::optional<Terms> comparison_terms_generic(const Generator& f1, const Generator& f2, const ConvexBody& k,
                                              const FiniteMarkMeasure& marks, const PointSample& s);

/// Scalar jump comparison, C-free: -(f1(y',z,u) - f2(y',z,u')) against
/// sum_j (u_j - u'_j) n_j, meaningful for u >= u'.
Terms m1_terms(const Generator& f1, const Generator& f2, const FiniteMarkMeasure& marks, const PointSample& s);

/// Structural clause (b) for output k, C-free. s.y holds the shift (>= 0, zero in slot k).
Terms structural_b_terms(const Generator& gen, int k, const FiniteMarkMeasure& marks, const PointSample& s);

/// Structural clause (c), for u <= u'.
Terms structural_c_terms(const Generator& gen, const FiniteMarkMeasure& marks, const PointSample& s);

// ---- checkers --------------------------------------------------------------

ConditionVerdict check_viability_condition(const Generator& gen, const ConvexBody& k,
                                           const FiniteMarkMeasure& marks, const Sampler& sampler = {},
                                           double c_max = kDefaultCMax);

ConditionVerdict check_comparison_m1(const Generator& f1, const Generator& f2, const FiniteMarkMeasure& marks,
                                     const Sampler& sampler = {});

ConditionVerdict check_comparison_multidim(const Generator& f1, const Generator& f2,
                                           const FiniteMarkMeasure& marks, const Sampler& sampler = {},
                                           double c_max = kDefaultCMax);

/// F1, F2 act on symmetric order x order matrices in sym_to_vec coordinates
/// (dimension sym_vec_size(order)), with d = 1.
ConditionVerdict check_comparison_matrix(const Generator& f1, const Generator& f2, int order,
                                         const FiniteMarkMeasure& marks, const Sampler& sampler = {},
                                         double c_max = kDefaultCMax);

struct StructuralReport {
    bool a_pass = true;
    std::vector<std::string> a_offending;  ///< "f_k depends on z_l"
    ConditionVerdict b;
    ConditionVerdict c;
    bool u_diagonal = false;  ///< f_k depends on u only through u_k
    /// False only if u_diagonal, (a) and (b) hold and (c) is falsified.
    bool reduced_form_consistent = true;
    bool comparison_holds() const;
};

StructuralReport check_structural(const Generator& gen, const FiniteMarkMeasure& marks, const Sampler& sampler = {},
                                  double c_max = kDefaultCMax);

struct StackedSystem {
    Generator gen;
    ConvexBody body;
};

/// (f1(y1 + y2, z1 + z2, u1 + u2) - f2(y2, z2, u2), f2(y2, z2, u2)) on R^2m
/// with K = R^m_+ x R^m.
StackedSystem stacked_reduction(const Generator& f1, const Generator& f2);

/// Replays a witness against the stored constant: true iff lhs > rhs + 1e-9.
bool witness_violates(const Witness& w, const Terms& replayed);

// ---- simulation-based checks ----------------------------------------------

struct EmpiricalViability {
    DistanceStats stats;
    double max_mean_dist = 0.0;    ///< max over t of E d_K(Y_t)
    double pathwise_max_mean = 0.0;  ///< E max_t d_K(Y_t)
    double pathwise_max_ci = 0.0;    ///< 95% half-width
    double tolerance = 0.0;
    bool viable = false;
    std::vector<std::string> warnings;
};

/// dist is the distance to K (convex or not). Throws if xi is outside K on
/// any path.
EmpiricalViability check_viability_empirical(const Generator& gen, const std::function<double(const Vec&)>& dist,
                                             const TerminalCondition& xi, std::shared_ptr<const DrivingPaths> paths,
                                             const SolverConfig& config = {}, double tolerance = 0.05);

struct ComparisonStats {
    std::vector<double> t;
    std::vector<double> min_gap;  ///< min over paths and components of Y1 - Y2
    std::vector<double> violation_fraction;
    std::vector<double> ci_low;  ///< 95% Wilson interval of the fraction
    std::vector<double> ci_high;
    double overall_min_gap = 0.0;
    std::optional<BsdeSolution> first;
    std::optional<BsdeSolution> second;
};

/// Solves both BSDEs on the same paths. A path violates at t when some
/// component of Y1 - Y2 is below -1e-9. Throws if xi1 < xi2 on any path.
ComparisonStats empirical_comparison(const Generator& f1, const Generator& f2, const TerminalCondition& xi1,
                                     const TerminalCondition& xi2, std::shared_ptr<const DrivingPaths> paths,
                                     const SolverConfig& config = {});

}  // namespace bsvlab
