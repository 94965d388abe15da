#pragma once

// Least-squares estimator of conditional expectations on polynomial features.

#include <cstddef>
#include <vector>

#include "bsvlab/types.hpp"

namespace bsvlab {

struct RegressionBasis {
    int degree = 2;
    /// Drop monomials that are numerically dependent on earlier ones (e.g.
    /// every non-constant monomial at t = 0). Without pruning such steps
    /// fail the condition check.
    bool prune_degenerate = true;
};

struct RegressionDiagnostics {
    std::size_t basis_size = 0;  ///< monomials kept
    std::size_t pruned = 0;
    double condition = 1.0;  ///< condition number of the kept design matrix
};

/// Exponent vectors of all monomials of total degree <= degree in q
/// variables, graded order starting from the constant.
std::vector<std::vector<int>> monomial_exponents(int q, int degree);

/// Least-squares projection onto the span of the pruned basis at one step.
/// Built once per step and reused for several target blocks.
class RegressionDesign {
public:
    /// Throws std::runtime_error naming `step` when the design matrix has
    /// condition number above 1e12.
    RegressionDesign(const Mat& features, const RegressionBasis& basis, std::size_t step);

    const RegressionDiagnostics& diagnostics() const { return diag_; }

    /// Fitted values (P x r) of every column of targets (P x r).
    Mat fit(const Mat& targets) const;

private:
    std::size_t rows_ = 0;
    Mat x_;  // kept basis columns
    Eigen::LDLT<Mat> gram_;
    RegressionDiagnostics diag_;
};

/// One-shot convenience wrapper around RegressionDesign.
RegressionDiagnostics regress(const Mat& features, const Mat& targets, const RegressionBasis& basis,
                              Mat& fitted, std::size_t step);

}  // namespace bsvlab
