#include "bsvlab/random.hpp"

#include <cmath>
#include <numbers>

namespace bsvlab {
namespace {

constexpr std::uint32_t kMulA = 0xD2511F53;
constexpr std::uint32_t kMulB = 0xCD9E8D57;
constexpr std::uint32_t kWeylA = 0x9E3779B9;
constexpr std::uint32_t kWeylB = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo, std::uint32_t& hi)
{
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    lo = static_cast<std::uint32_t>(p);
    hi = static_cast<std::uint32_t>(p >> 32);
}

// PTRS transformed rejection (Hormann 1993); used for mean >= 10.
std::uint32_t poisson_ptrs(CounterStream& s, double mean)
{
    const double slam = std::sqrt(mean);
    const double loglam = std::log(mean);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2);
    for (;;) {
        const double u = s.uniform() - 0.5;
        const double v = s.uniform();
        const double us = 0.5 - std::fabs(u);
        const double k = std::floor((2 * a / us + b) * u + mean + 0.43);
        if (us >= 0.07 && v <= vr) {
            return static_cast<std::uint32_t>(k);
        }
        if (k < 0 || (us < 0.013 && v > us)) {
            continue;
        }
        if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b)
            <= -mean + k * loglam - std::lgamma(k + 1)) {
            return static_cast<std::uint32_t>(k);
        }
    }
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c,
                                        std::array<std::uint32_t, 2> k)
{
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            k[0] += kWeylA;
            k[1] += kWeylB;
        }
        std::uint32_t lo0, hi0, lo1, hi1;
        mulhilo(kMulA, c[0], lo0, hi0);
        mulhilo(kMulB, c[2], lo1, hi1);
        c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    }
    return c;
}

CounterStream::CounterStream(StreamKey key)
    : key_(key),
      philox_key_{static_cast<std::uint32_t>(key.seed), static_cast<std::uint32_t>(key.seed >> 32)}
{
}

std::uint64_t CounterStream::next_u64()
{
    if (used_ >= 4) {
        buffer_ = philox4x32({key_.path, key_.step, key_.channel, block_++}, philox_key_);
        used_ = 0;
    }
    const std::uint64_t hi = buffer_[used_];
    const std::uint64_t lo = buffer_[used_ + 1];
    used_ += 2;
    return (hi << 32) | lo;
}

double CounterStream::uniform()
{
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1p-53;
}

double CounterStream::normal()
{
    if (has_spare_normal_) {
        has_spare_normal_ = false;
        return spare_normal_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double theta = 2.0 * std::numbers::pi * uniform();
    spare_normal_ = r * std::sin(theta);
    has_spare_normal_ = true;
    return r * std::cos(theta);
}

std::uint32_t CounterStream::poisson(double mean)
{
    if (mean <= 0.0) {
        return 0;
    }
    if (mean >= 10.0) {
        return poisson_ptrs(*this, mean);
    }
    // inversion
    const double u = uniform();
    double p = std::exp(-mean);
    double cdf = p;
    std::uint32_t k = 0;
    while (u > cdf && k < 1000) {
        ++k;
        p *= mean / k;
        cdf += p;
    }
    return k;
}

}  // namespace bsvlab
