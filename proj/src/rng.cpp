#include "fedsfr/rng.hpp"

#include <stdexcept>

namespace fedsfr {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, StreamTag tag, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = splitmix64(master ^ 0x6a09e667f3bcc908ULL);
    h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    return h;
}

std::vector<std::size_t> RngStream::sample_without_replacement(std::size_t n, std::size_t k) {
    if (k > n) {
        throw std::invalid_argument("cannot sample " + std::to_string(k) + " of " +
                                    std::to_string(n) + " without replacement");
    }
    // Partial Fisher-Yates over the index range.
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + uniform_index(n - i);
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

}  // namespace fedsfr
