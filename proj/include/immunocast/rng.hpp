#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace immu {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

/// Combine a seed with stream/slot indices into a child seed. Every
/// stochastic draw in the library comes from a generator derived this way,
/// so results do not depend on evaluation order or thread scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) {
    return detail::splitmix64(seed ^ detail::splitmix64(a + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(seed, a), b);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                                 std::uint64_t c) {
    return derive_seed(derive_seed(seed, a, b), c);
}

/// mt19937_64 with hand-rolled draw helpers. The standard distributions are
/// implementation-defined, so uniform/gaussian draws are built directly on
/// the engine output to keep runs bit-identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Uniform integer in [lo, hi], inclusive.
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(uniform01() * (static_cast<double>(hi) - lo + 1.0));
    }

    std::size_t uniform_index(std::size_t count) {
        return static_cast<std::size_t>(uniform01() * static_cast<double>(count));
    }

    /// Standard normal via Box-Muller.
    double gaussian() {
        double u = 1.0 - uniform01(); // (0, 1]
        double v = uniform01();
        return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586476925286766559 * v);
    }

private:
    std::mt19937_64 engine_;
};

inline Rng derive_rng(std::uint64_t seed, std::uint64_t a) {
    return Rng(derive_seed(seed, a));
}

inline Rng derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return Rng(derive_seed(seed, a, b));
}

inline Rng derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return Rng(derive_seed(seed, a, b, c));
}

} // namespace immu
