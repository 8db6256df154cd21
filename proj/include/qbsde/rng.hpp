#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace qbsde {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
/// Stateless: the same (counter, key) always maps to the same 128 bits.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

/// Independent random streams used by the library. Distinct streams never
/// share a counter, so e.g. bridge noise is independent of the increments.
enum class Stream : std::uint32_t {
    increments = 0,
    bridge = 1,
    exact_transition = 2,
    sampling = 3,
    auxiliary = 4,
};

/// Gaussian and uniform draws keyed by (seed, stream, path, step).
/// Results do not depend on the order in which paths are visited.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    /// Fills `out` with standard normals for the given coordinates.
    void normals(Stream stream, std::uint64_t path, std::uint64_t step, std::span<double> out) const;
    double normal(Stream stream, std::uint64_t path, std::uint64_t step) const;

    /// Uniforms on [0, 1).
    void uniforms(Stream stream, std::uint64_t path, std::uint64_t step, std::span<double> out) const;

private:
    std::array<std::uint32_t, 4> block(Stream stream, std::uint64_t path, std::uint64_t step,
                                       std::uint32_t index) const;

    std::uint64_t seed_;
};

}  // namespace qbsde
