#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsfr/tensor.hpp"
#include "fedsfr/util.hpp"

namespace fedsfr {

/// One layer's surviving entries after top-S selection. Indices are
/// positions within the layer slice, strictly increasing.
struct SparseLayer {
    std::vector<std::uint32_t> indices;
    std::vector<double> values;
};

struct SparseUpdate {
    std::vector<SparseLayer> layers;
    std::size_t total_nnz = 0;
    int origin_round = 0;

    std::size_t nnz() const;
};

/// Dense error-feedback residual, one per client, length N for its whole life.
struct ErrorMemory {
    std::vector<double> residual;
    int owner = -1;

    static ErrorMemory zeros(std::size_t n, int owner);
};

/// Split a round budget S across layers proportionally to layer length
/// (largest-remainder rounding, capped at each layer's length).
std::vector<std::size_t> allocate_budget(
    const std::vector<std::pair<std::size_t, std::size_t>>& boundaries, std::size_t total);

struct SparsifyResult {
    SparseUpdate sparse;
    std::vector<double> residual;
};

/// Keep the budget[l] largest-magnitude entries of each layer slice (ties:
/// lowest index). Kept entries are moved, not recomputed, so
/// densify(sparse) + residual reassembles v bitwise.
SparsifyResult top_s_sparsify(const std::vector<double>& v,
                              const std::vector<std::pair<std::size_t, std::size_t>>& boundaries,
                              const std::vector<std::size_t>& budget);

struct LocalUpdateResult {
    SparseUpdate update;           // g = Sparse(memory + accum)
    std::vector<double> residual;  // new memory = memory + accum - densify(g)
};

/// The uplink compression step: sparsify the error-compensated update and
/// keep what was cut as the next round's memory.
LocalUpdateResult build_local_update(const std::vector<double>& accum, const ErrorMemory& memory,
                                     const std::vector<std::pair<std::size_t, std::size_t>>& boundaries,
                                     const std::vector<std::size_t>& budget, int round);

void reset_memory(ErrorMemory& memory);

std::vector<double> densify(const SparseUpdate& sparse,
                            const std::vector<std::pair<std::size_t, std::size_t>>& boundaries,
                            std::size_t n);

/// Upper bound on the expected squared error-memory norm under top-S
/// compression with keep ratio delta: 4(1-delta)/delta^2 * (eta0 * Ec * Gk)^2.
double lemma2_bound(double eta0, int Ec, double Gk, double delta);

// Wire form: u32 layer count, then per layer u32 nnz + u32 indices + f64 values.
void put_sparse_update(std::string& out, const SparseUpdate& u);
SparseUpdate get_sparse_update(ByteReader& r, int origin_round);

}  // namespace fedsfr
