#include "bsvlab/noise.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bsvlab/parallel.hpp"

namespace bsvlab {

FiniteMarkMeasure::FiniteMarkMeasure(std::vector<Vec> atoms, std::vector<double> weights)
    : atoms_(std::move(atoms)), weights_(std::move(weights))
{
    if (atoms_.size() != weights_.size()) {
        throw std::invalid_argument("mark measure: atom and weight counts differ");
    }
    for (std::size_t j = 0; j < atoms_.size(); ++j) {
        if (atoms_[j].size() < 1 || atoms_[j].size() != atoms_.front().size()) {
            throw std::invalid_argument("mark measure: atoms must share a dimension >= 1");
        }
        if (!atoms_[j].allFinite() || atoms_[j].isZero(0.0)) {
            throw std::invalid_argument("mark measure: atom " + std::to_string(j)
                                        + " must be finite and nonzero");
        }
        if (!(weights_[j] > 0.0) || !std::isfinite(weights_[j])) {
            throw std::invalid_argument("mark measure: weight " + std::to_string(j)
                                        + " must be finite and positive");
        }
        for (std::size_t i = 0; i < j; ++i) {
            if (atoms_[i] == atoms_[j]) {
                throw std::invalid_argument("mark measure: duplicate atom");
            }
        }
        total_mass_ += weights_[j];
    }
}

FiniteMarkMeasure FiniteMarkMeasure::unit_atom()
{
    return FiniteMarkMeasure({Vec::Ones(1)}, {1.0});
}

TimeGrid::TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes))
{
    if (nodes_.size() < 2) {
        throw std::invalid_argument("empty grid");
    }
    if (nodes_.front() != 0.0) {
        throw std::invalid_argument("time grid must start at 0");
    }
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
        if (!(nodes_[i] > nodes_[i - 1]) || !std::isfinite(nodes_[i])) {
            throw std::invalid_argument("time grid must be strictly increasing");
        }
    }
}

TimeGrid TimeGrid::uniform(double horizon, std::size_t steps)
{
    if (steps == 0) {
        throw std::invalid_argument("empty grid");
    }
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
        throw std::invalid_argument("time grid horizon must be positive");
    }
    std::vector<double> nodes(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) {
        nodes[i] = horizon * static_cast<double>(i) / static_cast<double>(steps);
    }
    nodes.back() = horizon;
    return TimeGrid(std::move(nodes));
}

std::size_t TimeGrid::nearest_node(double t) const
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < nodes_.size(); ++i) {
        if (std::fabs(nodes_[i] - t) < std::fabs(nodes_[best] - t)) {
            best = i;
        }
    }
    return best;
}

DrivingPaths::DrivingPaths(TimeGrid grid, FiniteMarkMeasure marks, int brownian_dim,
                           std::size_t n_paths)
    : grid_(std::move(grid)), marks_(std::move(marks)), d_(brownian_dim), n_paths_(n_paths)
{
    if (d_ < 1) {
        throw std::invalid_argument("brownian dimension must be >= 1");
    }
    if (n_paths_ == 0) {
        throw std::invalid_argument("zero paths");
    }
    const std::size_t n = grid_.steps();
    const std::size_t j = marks_.size();
    dw_.assign(n_paths_ * n * d_, 0.0);
    counts_.assign(n_paths_ * n * j, 0);
    w_.assign(n_paths_ * (n + 1) * d_, 0.0);
    ncum_.assign(n_paths_ * (n + 1) * j, 0);
}

std::span<const double> DrivingPaths::dW(std::size_t path, std::size_t step) const
{
    return {dw_.data() + (path * steps() + step) * d_, static_cast<std::size_t>(d_)};
}

std::span<const std::int32_t> DrivingPaths::counts(std::size_t path, std::size_t step) const
{
    const std::size_t j = atom_count();
    return {counts_.data() + (path * steps() + step) * j, j};
}

std::span<const double> DrivingPaths::W(std::size_t path, std::size_t node) const
{
    return {w_.data() + (path * (steps() + 1) + node) * d_, static_cast<std::size_t>(d_)};
}

std::span<const std::int32_t> DrivingPaths::N(std::size_t path, std::size_t node) const
{
    const std::size_t j = atom_count();
    return {ncum_.data() + (path * (steps() + 1) + node) * j, j};
}

std::span<double> DrivingPaths::dW_mut(std::size_t path, std::size_t step)
{
    return {dw_.data() + (path * steps() + step) * d_, static_cast<std::size_t>(d_)};
}

std::span<std::int32_t> DrivingPaths::counts_mut(std::size_t path, std::size_t step)
{
    const std::size_t j = atom_count();
    return {counts_.data() + (path * steps() + step) * j, j};
}

std::span<double> DrivingPaths::W_mut(std::size_t path, std::size_t node)
{
    return {w_.data() + (path * (steps() + 1) + node) * d_, static_cast<std::size_t>(d_)};
}

std::span<std::int32_t> DrivingPaths::N_mut(std::size_t path, std::size_t node)
{
    const std::size_t j = atom_count();
    return {ncum_.data() + (path * (steps() + 1) + node) * j, j};
}

bool DrivingPaths::operator==(const DrivingPaths& other) const
{
    return grid_.nodes() == other.grid_.nodes() && d_ == other.d_ && n_paths_ == other.n_paths_
        && marks_.weights() == other.marks_.weights() && dw_ == other.dw_
        && counts_ == other.counts_ && w_ == other.w_ && ncum_ == other.ncum_;
}

DrivingPaths simulate_paths(const TimeGrid& grid, const FiniteMarkMeasure& marks, int d,
                            std::size_t n_paths, std::uint64_t seed)
{
    if (grid.steps() == 0) {
        throw std::invalid_argument("empty grid");
    }
    if (n_paths == 0) {
        throw std::invalid_argument("zero paths");
    }
    DrivingPaths paths(grid, marks, d, n_paths);
    const std::size_t n = grid.steps();
    const std::size_t atoms = marks.size();
    parallel_for(n_paths, [&](std::size_t begin, std::size_t end) {
        for (std::size_t p = begin; p < end; ++p) {
            for (std::size_t i = 0; i < n; ++i) {
                const double h = grid.step_size(i);
                const double sd = std::sqrt(h);
                const auto key_path = static_cast<std::uint32_t>(p);
                const auto key_step = static_cast<std::uint32_t>(i);
                CounterStream bm({seed, key_path, key_step, kBrownianChannel});
                auto dw = paths.dW_mut(p, i);
                auto w_prev = paths.W(p, i);
                auto w_next = paths.W_mut(p, i + 1);
                for (int c = 0; c < d; ++c) {
                    dw[c] = sd * bm.normal();
                    w_next[c] = w_prev[c] + dw[c];
                }
                auto k = paths.counts_mut(p, i);
                auto n_prev = paths.N(p, i);
                auto n_next = paths.N_mut(p, i + 1);
                for (std::size_t j = 0; j < atoms; ++j) {
                    CounterStream js({seed, key_path, key_step, static_cast<std::uint32_t>(1 + j)});
                    k[j] = static_cast<std::int32_t>(js.poisson(h * marks.weight(j)));
                    n_next[j] = n_prev[j] + k[j];
                }
            }
        }
    });
    return paths;
}

std::vector<double> compensated_increment(std::span<const std::int32_t> counts, double h,
                                          const FiniteMarkMeasure& marks)
{
    if (counts.size() != marks.size()) {
        throw std::invalid_argument("compensated_increment: counts length != atom count");
    }
    std::vector<double> out(counts.size());
    for (std::size_t j = 0; j < counts.size(); ++j) {
        out[j] = static_cast<double>(counts[j]) - h * marks.weight(j);
    }
    return out;
}

double jump_norm2(const Mat& u, const FiniteMarkMeasure& marks)
{
    if (static_cast<std::size_t>(u.cols()) != marks.size()) {
        throw std::invalid_argument("jump_norm2: u has " + std::to_string(u.cols())
                                    + " atom columns, measure has " + std::to_string(marks.size()));
    }
    double acc = 0.0;
    for (std::size_t j = 0; j < marks.size(); ++j) {
        acc += u.col(static_cast<Eigen::Index>(j)).squaredNorm() * marks.weight(j);
    }
    return acc;
}

}  // namespace bsvlab
