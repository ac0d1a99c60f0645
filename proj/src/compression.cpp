#include "fedsfr/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedsfr {

std::size_t SparseUpdate::nnz() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.indices.size();
    return n;
}

ErrorMemory ErrorMemory::zeros(std::size_t n, int owner) {
    ErrorMemory m;
    m.residual.assign(n, 0.0);
    m.owner = owner;
    return m;
}

namespace {

void check_boundaries(const std::vector<std::pair<std::size_t, std::size_t>>& boundaries,
                      std::size_t n) {
    std::size_t expect = 0;
    for (auto [off, len] : boundaries) {
        if (off != expect) throw std::invalid_argument("layer table does not partition the vector");
        expect = off + len;
    }
    if (expect != n) {
        throw std::invalid_argument("layer table covers " + std::to_string(expect) +
                                    " entries, vector has " + std::to_string(n));
    }
}

}  // namespace

std::vector<std::size_t> allocate_budget(
    const std::vector<std::pair<std::size_t, std::size_t>>& boundaries, std::size_t total) {
    std::size_t n = 0;
    for (auto [off, len] : boundaries) n += len;
    if (total > n) {
        throw std::invalid_argument("budget " + std::to_string(total) + " exceeds vector length " +
                                    std::to_string(n));
    }
    std::size_t L = boundaries.size();
    std::vector<std::size_t> out(L, 0);
    std::size_t remaining = total;
    while (remaining > 0) {
        std::size_t spare_total = 0;
        for (std::size_t l = 0; l < L; ++l) spare_total += boundaries[l].second - out[l];
        // Proportional floor shares, then hand the leftover to the largest
        // remainders (ties to the lower layer index).
        std::vector<std::pair<unsigned long long, std::size_t>> rema;
        std::size_t gave = 0;
        for (std::size_t l = 0; l < L; ++l) {
            std::size_t spare = boundaries[l].second - out[l];
            if (spare == 0) continue;
            unsigned __int128 q = static_cast<unsigned __int128>(remaining) * spare;
            std::size_t share = static_cast<std::size_t>(q / spare_total);
            unsigned long long rem = static_cast<unsigned long long>(q % spare_total);
            out[l] += share;
            gave += share;
            if (share < spare) rema.emplace_back(rem, l);
        }
        std::size_t left = remaining - gave;
        std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (const auto& [rem, l] : rema) {
            if (left == 0) break;
            if (out[l] < boundaries[l].second) {
                out[l]++;
                left--;
            }
        }
        remaining = left;
    }
    return out;
}

SparsifyResult top_s_sparsify(const std::vector<double>& v,
                              const std::vector<std::pair<std::size_t, std::size_t>>& boundaries,
                              const std::vector<std::size_t>& budget) {
    check_boundaries(boundaries, v.size());
    if (budget.size() != boundaries.size()) {
        throw std::invalid_argument("budget list does not match layer table");
    }
    SparsifyResult res;
    res.residual = v;
    res.sparse.layers.resize(boundaries.size());
    for (std::size_t l = 0; l < boundaries.size(); ++l) {
        auto [off, len] = boundaries[l];
        std::size_t s = budget[l];
        if (s > len) {
            throw std::invalid_argument("layer " + std::to_string(l) + " budget " +
                                        std::to_string(s) + " exceeds its length " +
                                        std::to_string(len));
        }
        if (s == 0) continue;
        const double* slice = v.data() + off;
        std::vector<std::uint32_t> order(len);
        std::iota(order.begin(), order.end(), 0u);
        auto better = [slice](std::uint32_t a, std::uint32_t b) {
            double ma = std::fabs(slice[a]), mb = std::fabs(slice[b]);
            if (ma != mb) return ma > mb;
            return a < b;
        };
        if (s < len) {
            std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s - 1),
                             order.end(), better);
        }
        order.resize(s);
        std::sort(order.begin(), order.end());
        SparseLayer& sl = res.sparse.layers[l];
        sl.indices = std::move(order);
        sl.values.reserve(s);
        for (std::uint32_t idx : sl.indices) {
            // Move, don't recompute: the kept value leaves the residual so
            // sparse + residual reassembles the input bitwise.
            sl.values.push_back(slice[idx]);
            res.residual[off + idx] = 0.0;
        }
        res.sparse.total_nnz += s;
    }
    return res;
}

LocalUpdateResult build_local_update(const std::vector<double>& accum, const ErrorMemory& memory,
                                     const std::vector<std::pair<std::size_t, std::size_t>>& boundaries,
                                     const std::vector<std::size_t>& budget, int round) {
    if (accum.size() != memory.residual.size()) {
        throw std::invalid_argument("accumulated update length " + std::to_string(accum.size()) +
                                    " does not match error memory (" +
                                    std::to_string(memory.residual.size()) + ")");
    }
    std::vector<double> compensated(accum.size());
    for (std::size_t i = 0; i < accum.size(); ++i) {
        compensated[i] = memory.residual[i] + accum[i];
    }
    SparsifyResult sp = top_s_sparsify(compensated, boundaries, budget);
    sp.sparse.origin_round = round;
    return LocalUpdateResult{std::move(sp.sparse), std::move(sp.residual)};
}

void reset_memory(ErrorMemory& memory) {
    std::fill(memory.residual.begin(), memory.residual.end(), 0.0);
}

std::vector<double> densify(const SparseUpdate& sparse,
                            const std::vector<std::pair<std::size_t, std::size_t>>& boundaries,
                            std::size_t n) {
    check_boundaries(boundaries, n);
    if (sparse.layers.size() != boundaries.size()) {
        throw std::invalid_argument("sparse update has " + std::to_string(sparse.layers.size()) +
                                    " layers, table has " + std::to_string(boundaries.size()));
    }
    std::vector<double> out(n, 0.0);
    for (std::size_t l = 0; l < boundaries.size(); ++l) {
        auto [off, len] = boundaries[l];
        const SparseLayer& sl = sparse.layers[l];
        if (sl.indices.size() != sl.values.size()) {
            throw std::invalid_argument("sparse layer index/value count mismatch");
        }
        for (std::size_t i = 0; i < sl.indices.size(); ++i) {
            if (sl.indices[i] >= len) {
                throw std::invalid_argument("sparse index " + std::to_string(sl.indices[i]) +
                                            " out of range for layer " + std::to_string(l));
            }
            out[off + sl.indices[i]] = sl.values[i];
        }
    }
    return out;
}

double lemma2_bound(double eta0, int Ec, double Gk, double delta) {
    if (!(delta > 0.0) || delta > 1.0) {
        throw std::invalid_argument("keep ratio delta must lie in (0, 1], got " +
                                    std::to_string(delta));
    }
    double step = eta0 * static_cast<double>(Ec) * Gk;
    return 4.0 * (1.0 - delta) / (delta * delta) * step * step;
}

void put_sparse_update(std::string& out, const SparseUpdate& u) {
    put_u32(out, static_cast<std::uint32_t>(u.layers.size()));
    for (const SparseLayer& l : u.layers) {
        put_u32(out, static_cast<std::uint32_t>(l.indices.size()));
        for (std::uint32_t idx : l.indices) put_u32(out, idx);
        for (double v : l.values) put_f64(out, v);
    }
}

SparseUpdate get_sparse_update(ByteReader& r, int origin_round) {
    SparseUpdate u;
    u.origin_round = origin_round;
    std::uint32_t layer_count = r.get_u32();
    u.layers.resize(layer_count);
    for (SparseLayer& l : u.layers) {
        std::uint32_t nnz = r.get_u32();
        l.indices.resize(nnz);
        for (std::uint32_t& idx : l.indices) idx = r.get_u32();
        for (std::size_t i = 1; i < l.indices.size(); ++i) {
            if (l.indices[i] <= l.indices[i - 1]) {
                throw std::runtime_error("sparse update indices not strictly increasing");
            }
        }
        l.values.resize(nnz);
        for (double& v : l.values) v = r.get_f64();
        u.total_nnz += nnz;
    }
    return u;
}

}  // namespace fedsfr
