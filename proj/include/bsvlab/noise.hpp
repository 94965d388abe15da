#pragma once

// Driving noise of a BSDE with jumps: a d-dimensional Brownian motion and a
// stationary Poisson random measure whose mark measure is a finite sum of
// weighted atoms. Jumps are realised as per-step counts per atom.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bsvlab/random.hpp"
#include "bsvlab/types.hpp"

namespace bsvlab {

/// Finite atomic mark measure n(de) = sum_j weight_j * delta_{atom_j}.
class FiniteMarkMeasure {
public:
    FiniteMarkMeasure() = default;
    FiniteMarkMeasure(std::vector<Vec> atoms, std::vector<double> weights);

    /// The measure delta_1 on the mark space R.
    static FiniteMarkMeasure unit_atom();

    std::size_t size() const { return weights_.size(); }
    bool empty() const { return weights_.empty(); }
    int mark_dim() const { return atoms_.empty() ? 0 : static_cast<int>(atoms_.front().size()); }
    const std::vector<Vec>& atoms() const { return atoms_; }
    const std::vector<double>& weights() const { return weights_; }
    double weight(std::size_t j) const { return weights_[j]; }
    double total_mass() const { return total_mass_; }

private:
    std::vector<Vec> atoms_;
    std::vector<double> weights_;
    double total_mass_ = 0.0;
};

class TimeGrid {
public:
    explicit TimeGrid(std::vector<double> nodes);
    static TimeGrid uniform(double horizon, std::size_t steps);

    std::size_t steps() const { return nodes_.size() - 1; }
    double horizon() const { return nodes_.back(); }
    double node(std::size_t i) const { return nodes_[i]; }
    double step_size(std::size_t i) const { return nodes_[i + 1] - nodes_[i]; }
    const std::vector<double>& nodes() const { return nodes_; }
    /// Index of the node closest to t.
    std::size_t nearest_node(double t) const;

private:
    std::vector<double> nodes_;
};

/// Simulated increments and cumulative state for n_paths paths.
///
/// Layout is path-major: increments of path p at step i are contiguous, so a
/// path is written by exactly one worker during simulation.
class DrivingPaths {
public:
    DrivingPaths(TimeGrid grid, FiniteMarkMeasure marks, int brownian_dim, std::size_t n_paths);

    const TimeGrid& grid() const { return grid_; }
    const FiniteMarkMeasure& marks() const { return marks_; }
    int brownian_dim() const { return d_; }
    std::size_t atom_count() const { return marks_.size(); }
    std::size_t n_paths() const { return n_paths_; }
    std::size_t steps() const { return grid_.steps(); }

    std::span<const double> dW(std::size_t path, std::size_t step) const;
    std::span<const std::int32_t> counts(std::size_t path, std::size_t step) const;
    /// W at node i (i = 0..N).
    std::span<const double> W(std::size_t path, std::size_t node) const;
    /// Cumulative jump counts per atom at node i.
    std::span<const std::int32_t> N(std::size_t path, std::size_t node) const;

    std::span<double> dW_mut(std::size_t path, std::size_t step);
    std::span<std::int32_t> counts_mut(std::size_t path, std::size_t step);
    std::span<double> W_mut(std::size_t path, std::size_t node);
    std::span<std::int32_t> N_mut(std::size_t path, std::size_t node);

    bool operator==(const DrivingPaths& other) const;

private:
    TimeGrid grid_;
    FiniteMarkMeasure marks_;
    int d_;
    std::size_t n_paths_;
    std::vector<double> dw_;
    std::vector<std::int32_t> counts_;
    std::vector<double> w_;
    std::vector<std::int32_t> ncum_;
};

/// Substream channel of the Brownian increments; atom j uses channel 1 + j.
inline constexpr std::uint32_t kBrownianChannel = 0;

/// Draws dW ~ N(0, h I_d) and counts ~ Poisson(h n_j) for every path and step.
DrivingPaths simulate_paths(const TimeGrid& grid, const FiniteMarkMeasure& marks, int d,
                            std::size_t n_paths, std::uint64_t seed);

/// k_j - h n_j per atom: the compensated random measure over one step.
std::vector<double> compensated_increment(std::span<const std::int32_t> counts, double h,
                                          const FiniteMarkMeasure& marks);

/// sum_j |u_j|^2 n_j where column j of u is u(e_j) in R^m.
double jump_norm2(const Mat& u, const FiniteMarkMeasure& marks);

}  // namespace bsvlab
