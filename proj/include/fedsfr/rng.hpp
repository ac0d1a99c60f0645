#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace fedsfr {

// Named sub-stream tags. Every random draw in a run is derived from the
// master seed plus a tag (and up to two ids), so results never depend on
// scheduling order or thread count.
enum class StreamTag : std::uint64_t {
    Init = 1,
    RoundSampling,
    Capacity,
    ClientData,
    ClientChannel,
    ServerFrData,
    ServerFrNoise,
    FeatureSelect,
    EvalNoise,
    GradEval,
    Partition,
    Synth,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Derive an independent stream seed from (master, tag, a, b).
std::uint64_t derive_seed(std::uint64_t master, StreamTag tag, std::uint64_t a = 0,
                          std::uint64_t b = 0);

// A deterministic random stream. mt19937_64 is bit-exact across platforms;
// all value transforms are done here rather than with std:: distributions,
// which the standard leaves implementation-defined.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller. Consumes exactly two engine draws.
    double normal() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    /// Uniform index in [0, n) via multiply-shift. n must be positive.
    std::size_t uniform_index(std::size_t n) {
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::size_t>(m >> 64);
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = uniform_index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// k distinct indices drawn uniformly without replacement from [0, n).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::mt19937_64 engine_;
};

inline RngStream derive_stream(std::uint64_t master, StreamTag tag, std::uint64_t a = 0,
                               std::uint64_t b = 0) {
    return RngStream(derive_seed(master, tag, a, b));
}

}  // namespace fedsfr
