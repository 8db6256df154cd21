#include "qbsde/rng.hpp"

#include <cmath>
#include <numbers>

namespace qbsde {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return static_cast<double>(bits) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kMul0, ctr[0], hi0, lo0);
        mulhilo(kMul1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

std::array<std::uint32_t, 4> CounterRng::block(Stream stream, std::uint64_t path, std::uint64_t step,
                                               std::uint32_t index) const {
    const std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(path),
        static_cast<std::uint32_t>(path >> 32),
        static_cast<std::uint32_t>(step),
        (static_cast<std::uint32_t>(stream) << 24) ^ (static_cast<std::uint32_t>(step >> 32) << 16) ^ index,
    };
    const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                              static_cast<std::uint32_t>(seed_ >> 32)};
    return philox4x32(ctr, key);
}

void CounterRng::normals(Stream stream, std::uint64_t path, std::uint64_t step, std::span<double> out) const {
    std::uint32_t index = 0;
    for (std::size_t i = 0; i < out.size(); i += 2, ++index) {
        const auto r = block(stream, path, step, index);
        // Box-Muller; u1 in (0, 1] keeps the log finite.
        const double u1 = 1.0 - to_unit(r[0], r[1]);
        const double u2 = to_unit(r[2], r[3]);
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        out[i] = radius * std::cos(angle);
        if (i + 1 < out.size()) out[i + 1] = radius * std::sin(angle);
    }
}

double CounterRng::normal(Stream stream, std::uint64_t path, std::uint64_t step) const {
    double z = 0.0;
    normals(stream, path, step, std::span<double>(&z, 1));
    return z;
}

void CounterRng::uniforms(Stream stream, std::uint64_t path, std::uint64_t step, std::span<double> out) const {
    std::uint32_t index = 0;
    for (std::size_t i = 0; i < out.size(); i += 2, ++index) {
        const auto r = block(stream, path, step, index);
        out[i] = to_unit(r[0], r[1]);
        if (i + 1 < out.size()) out[i + 1] = to_unit(r[2], r[3]);
    }
}

}  // namespace qbsde
