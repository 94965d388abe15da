#include "bsvlab/regression.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "bsvlab/parallel.hpp"

namespace bsvlab {
namespace {

constexpr std::size_t kBlock = 4096;
constexpr double kPruneTol = 1e-10;
constexpr double kMaxCondition = 1e12;

std::size_t block_count(std::size_t n)
{
    return (n + kBlock - 1) / kBlock;
}

}  // namespace

std::vector<std::vector<int>> monomial_exponents(int q, int degree)
{
    if (q < 0 || degree < 0) {
        throw std::invalid_argument("monomial_exponents: negative size");
    }
    std::vector<std::vector<int>> out;
    out.emplace_back(static_cast<std::size_t>(q), 0);
    // Degree-g monomials from degree-(g-1) ones with a non-decreasing last
    // variable, which enumerates each exactly once.
    std::vector<std::pair<std::vector<int>, int>> frontier{{out.front(), 0}};
    for (int g = 1; g <= degree; ++g) {
        std::vector<std::pair<std::vector<int>, int>> next;
        for (const auto& [e, last] : frontier) {
            for (int v = last; v < q; ++v) {
                auto f = e;
                ++f[static_cast<std::size_t>(v)];
                out.push_back(f);
                next.emplace_back(std::move(f), v);
            }
        }
        frontier = std::move(next);
    }
    return out;
}

RegressionDesign::RegressionDesign(const Mat& features, const RegressionBasis& basis, std::size_t step)
{
    const auto p = static_cast<std::size_t>(features.rows());
    const auto q = static_cast<int>(features.cols());
    if (p == 0) {
        throw std::invalid_argument("regression: no rows");
    }
    rows_ = p;
    const std::size_t nb = block_count(p);

    // Feature standardisation with fixed-order block sums.
    Mat bsum = Mat::Zero(static_cast<Eigen::Index>(nb), q);
    parallel_for(nb, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            const auto r0 = static_cast<Eigen::Index>(b * kBlock);
            const auto len = static_cast<Eigen::Index>(std::min(kBlock, p - b * kBlock));
            bsum.row(static_cast<Eigen::Index>(b)) = features.middleRows(r0, len).colwise().sum();
        }
    });
    Vec mean = Vec::Zero(q);
    for (std::size_t b = 0; b < nb; ++b) {
        mean += bsum.row(static_cast<Eigen::Index>(b)).transpose();
    }
    mean /= static_cast<double>(p);
    parallel_for(nb, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            const auto r0 = static_cast<Eigen::Index>(b * kBlock);
            const auto len = static_cast<Eigen::Index>(std::min(kBlock, p - b * kBlock));
            bsum.row(static_cast<Eigen::Index>(b)) =
                (features.middleRows(r0, len).rowwise() - mean.transpose()).array().square().colwise().sum();
        }
    });
    Vec scale = Vec::Zero(q);
    for (std::size_t b = 0; b < nb; ++b) {
        scale += bsum.row(static_cast<Eigen::Index>(b)).transpose();
    }
    for (int c = 0; c < q; ++c) {
        const double sd = std::sqrt(scale(c) / static_cast<double>(p));
        scale(c) = sd > 0.0 ? 1.0 / sd : 1.0;
    }

    const auto exps = monomial_exponents(q, basis.degree);
    const auto k = static_cast<Eigen::Index>(exps.size());
    Mat x(static_cast<Eigen::Index>(p), k);
    std::vector<Mat> gram_parts(nb);
    parallel_for(nb, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            const std::size_t r0 = b * kBlock;
            const std::size_t r1 = std::min(p, r0 + kBlock);
            for (std::size_t row = r0; row < r1; ++row) {
                const auto ri = static_cast<Eigen::Index>(row);
                for (Eigen::Index col = 0; col < k; ++col) {
                    double v = 1.0;
                    const auto& e = exps[static_cast<std::size_t>(col)];
                    for (int c = 0; c < q; ++c) {
                        const double s = (features(ri, c) - mean(c)) * scale(c);
                        for (int a = 0; a < e[static_cast<std::size_t>(c)]; ++a) {
                            v *= s;
                        }
                    }
                    x(ri, col) = v;
                }
            }
            const auto xb = x.middleRows(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(r1 - r0));
            gram_parts[b] = xb.transpose() * xb;
        }
    });
    Mat gram = Mat::Zero(k, k);
    for (std::size_t b = 0; b < nb; ++b) {
        gram += gram_parts[b];
    }

    // Greedy selection in graded order: keep a column when its residual
    // against the kept ones is a non-negligible part of its norm.
    std::vector<Eigen::Index> kept;
    const auto sub_gram = [&](const std::vector<Eigen::Index>& idx) {
        const auto n = static_cast<Eigen::Index>(idx.size());
        Mat g(n, n);
        for (Eigen::Index a = 0; a < n; ++a) {
            for (Eigen::Index b = 0; b < n; ++b) {
                g(a, b) = gram(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
            }
        }
        return g;
    };
    for (Eigen::Index c = 0; c < k; ++c) {
        if (!basis.prune_degenerate) {
            kept.push_back(c);
            continue;
        }
        const double gcc = gram(c, c);
        if (!(gcc > 0.0)) {
            continue;
        }
        double resid = gcc;
        if (!kept.empty()) {
            Vec gsc(static_cast<Eigen::Index>(kept.size()));
            for (std::size_t a = 0; a < kept.size(); ++a) {
                gsc(static_cast<Eigen::Index>(a)) = gram(kept[a], c);
            }
            resid = gcc - gsc.dot(sub_gram(kept).ldlt().solve(gsc));
        }
        if (resid > kPruneTol * gcc) {
            kept.push_back(c);
        }
    }
    const auto ks = static_cast<Eigen::Index>(kept.size());
    diag_.basis_size = kept.size();
    diag_.pruned = static_cast<std::size_t>(k - ks);
    if (ks == 0) {
        throw std::runtime_error("rank-deficient regression at step " + std::to_string(step) + " (empty basis)");
    }
    const Mat gss = sub_gram(kept);
    Eigen::SelfAdjointEigenSolver<Mat> eig(gss, Eigen::EigenvaluesOnly);
    const double lmin = eig.eigenvalues()(0);
    const double lmax = eig.eigenvalues()(ks - 1);
    diag_.condition = lmin > 0.0 ? std::sqrt(lmax / lmin) : INFINITY;
    if (!(diag_.condition <= kMaxCondition)) {
        throw std::runtime_error("rank-deficient regression at step " + std::to_string(step)
                                 + " (condition number " + std::to_string(diag_.condition) + ")");
    }
    gram_.compute(gss);
    x_.resize(static_cast<Eigen::Index>(p), ks);
    for (Eigen::Index a = 0; a < ks; ++a) {
        x_.col(a) = x.col(kept[static_cast<std::size_t>(a)]);
    }
}

Mat RegressionDesign::fit(const Mat& targets) const
{
    if (static_cast<std::size_t>(targets.rows()) != rows_) {
        throw std::invalid_argument("regression: target row count differs from the design");
    }
    const std::size_t p = rows_;
    const std::size_t nb = block_count(p);
    const auto ks = x_.cols();
    const auto r = targets.cols();
    std::vector<Mat> rhs_parts(nb);
    parallel_for(nb, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            const auto r0 = static_cast<Eigen::Index>(b * kBlock);
            const auto len = static_cast<Eigen::Index>(std::min(p, b * kBlock + kBlock) - b * kBlock);
            rhs_parts[b] = x_.middleRows(r0, len).transpose() * targets.middleRows(r0, len);
        }
    });
    Mat rhs = Mat::Zero(ks, r);
    for (std::size_t b = 0; b < nb; ++b) {
        rhs += rhs_parts[b];
    }
    const Mat beta = gram_.solve(rhs);
    Mat fitted(static_cast<Eigen::Index>(p), r);
    parallel_for(nb, [&](std::size_t b0, std::size_t b1) {
        for (std::size_t b = b0; b < b1; ++b) {
            const auto r0 = static_cast<Eigen::Index>(b * kBlock);
            const auto len = static_cast<Eigen::Index>(std::min(p, b * kBlock + kBlock) - b * kBlock);
            fitted.middleRows(r0, len) = x_.middleRows(r0, len) * beta;
        }
    });
    return fitted;
}

RegressionDiagnostics regress(const Mat& features, const Mat& targets, const RegressionBasis& basis,
                              Mat& fitted, std::size_t step)
{
    if (features.rows() != targets.rows()) {
        throw std::invalid_argument("regress: feature/target row mismatch");
    }
    const RegressionDesign design(features, basis, step);
    fitted = design.fit(targets);
    return design.diagnostics();
}

}  // namespace bsvlab
