#pragma once

// Backward Euler least-squares Monte Carlo scheme for BSDEs with jumps.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bsvlab/generator.hpp"
#include "bsvlab/geometry.hpp"
#include "bsvlab/noise.hpp"
#include "bsvlab/regression.hpp"
#include "bsvlab/types.hpp"

namespace bsvlab {

/// xi as a function of the terminal grid state (W_T, N_T).
struct TerminalCondition {
    std::string name;
    int m = 1;
    std::function<Vec(std::span<const double> w, std::span<const std::int32_t> n)> fn;

    Vec operator()(const DrivingPaths& paths, std::size_t path) const;
};

enum class SchemeMode { explicit_euler, implicit };

struct SolverConfig {
    RegressionBasis basis;
    SchemeMode mode = SchemeMode::explicit_euler;
};

struct StepDiagnostics {
    double t = 0.0;
    RegressionDiagnostics regression;
    int max_fixed_point_iterations = 0;
};

class BsdeSolution {
public:
    BsdeSolution(std::shared_ptr<const DrivingPaths> paths, int m);

    const DrivingPaths& paths() const { return *paths_; }
    std::shared_ptr<const DrivingPaths> paths_ptr() const { return paths_; }
    int dim() const { return m_; }
    std::size_t steps() const { return paths_->steps(); }
    std::size_t n_paths() const { return paths_->n_paths(); }

    /// Y at node i (0..N), Z and U at step i (0..N-1).
    Vec y(std::size_t node, std::size_t path) const;
    Mat z(std::size_t step, std::size_t path) const;
    Mat u(std::size_t step, std::size_t path) const;
    double y_component(std::size_t node, std::size_t path, int k) const;

    Vec mean_y(std::size_t node) const;
    Vec std_y(std::size_t node) const;

    Vec y0;
    Vec y0_stderr;
    std::vector<StepDiagnostics> diagnostics;
    std::vector<std::string> warnings;

    std::span<double> y_mut(std::size_t node, std::size_t path);
    std::span<double> z_mut(std::size_t step, std::size_t path);  ///< m x d, row-major
    std::span<double> u_mut(std::size_t step, std::size_t path);  ///< m x J, column j contiguous

private:
    std::shared_ptr<const DrivingPaths> paths_;
    int m_;
    int d_;
    std::size_t j_;
    std::vector<double> y_;
    std::vector<double> z_;
    std::vector<double> u_;
};

BsdeSolution solve_backward(const Generator& gen, const TerminalCondition& xi,
                            std::shared_ptr<const DrivingPaths> paths, const SolverConfig& config = {});

/// Reference solution of the linear driver f(y) = A y: exp(A (T - t_i))
/// times the zero-driver regression estimate of E[xi | state_i].
BsdeSolution closed_form_linear(const Mat& a, const TerminalCondition& xi,
                                std::shared_ptr<const DrivingPaths> paths, const SolverConfig& config = {});

struct AprioriReport {
    std::vector<double> t;
    std::vector<double> dev_y;  ///< E|Y_t - E(xi|F_t)|^2
    std::vector<double> dev_z;  ///< E int_t^T |Z - R|^2 ds
    std::vector<double> dev_u;  ///< E int_t^T ||U - V||^2 ds
    std::vector<double> z_energy;  ///< E int_t^T |Z|^2 ds
    std::vector<double> u_energy;  ///< E int_t^T ||U||^2 ds
    /// Smallest M with dev_y + dev_z + dev_u <= M (T - t) on the grid (t < T).
    double fitted_m = 0.0;
};

/// Compares sol against the zero-driver solution (E(xi|F_t), R, V) on the
/// same paths.
AprioriReport apriori_diagnostics(const BsdeSolution& sol, const TerminalCondition& xi,
                                  const SolverConfig& config = {});

/// d_K(Y) statistics per node.
struct DistanceStats {
    std::vector<double> t;
    std::vector<double> mean;
    std::vector<double> stderr_mean;
    std::vector<double> max;
};
DistanceStats distance_stats(const BsdeSolution& sol, const std::function<double(const Vec&)>& dist);

}  // namespace bsvlab
