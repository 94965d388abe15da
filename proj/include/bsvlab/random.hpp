#pragma once

// Counter-based random numbers. Every draw is a pure function of
// (master seed, path, step, channel, draw index), so results never depend on
// the order in which paths are visited or on how many workers visit them.

#include <array>
#include <cstdint>

namespace bsvlab {

/// Philox4x32-10 block function (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Coordinates of an independent substream.
struct StreamKey {
    std::uint64_t seed = 0;
    std::uint32_t path = 0;
    std::uint32_t step = 0;
    std::uint32_t channel = 0;
};

/// Sequential reader over one substream. Cheap to construct; holds no
/// shared state.
class CounterStream {
public:
    explicit CounterStream(StreamKey key);

    std::uint64_t next_u64();
    /// Uniform on the open interval (0, 1).
    double uniform();
    double normal();
    std::uint32_t poisson(double mean);

private:
    StreamKey key_;
    std::array<std::uint32_t, 2> philox_key_{};
    std::uint32_t block_ = 0;
    std::array<std::uint32_t, 4> buffer_{};
    int used_ = 4;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

}  // namespace bsvlab
