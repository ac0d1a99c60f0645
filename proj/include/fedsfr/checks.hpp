#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fedsfr/federation.hpp"

namespace fedsfr {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

/// Self-contained desk-scale experiment world: 1,408 synthetic stripe images
/// on 10 clients, a 5,289-parameter autoencoder with a 16-dim feature, 50
/// rounds. The dataset and partition come from a fixed data seed so runs
/// with different master seeds stay paired; master_seed drives everything
/// else (init, sampling, channel noise, batch order).
struct DeskWorld {
    ImageDataset ds;
    Partition part;
    JsccModel proto;
    TrainSetup setup;  // points into the members above

    DeskWorld() = default;
    DeskWorld(const DeskWorld&) = delete;
    DeskWorld& operator=(const DeskWorld&) = delete;
};

std::unique_ptr<DeskWorld> desk_world(std::uint64_t master_seed);

/// Error-feedback bookkeeping: over 100 rounds x 10 clients with random
/// updates, densify(g) + new_memory reassembles memory + accum bitwise.
CheckResult check_memory_identity(std::uint64_t seed);

/// top_s_sparsify against a full-sort oracle on 1,000 random vectors,
/// tie-heavy grids included.
CheckResult check_top_s_oracle(std::uint64_t seed);

/// aggregate() against an independent naive densify-and-loop oracle, bitwise.
CheckResult check_aggregation_oracle(std::uint64_t seed);

/// Backward vs central finite differences on every layer kind and on both
/// desk-model loss paths; relative error < 1e-6 per instance.
CheckResult check_gradients(std::uint64_t seed);

/// With no feature clients, no server pass, and the full budget, the round
/// loop must match a plain dense-averaging loop bitwise for 20 rounds.
CheckResult check_fedavg_equivalence(std::uint64_t seed);

/// The scaled participant-weighted sum is an unbiased estimate of the full
/// weighted sum: 1e5 samplings, per-coordinate mean within 1% relative.
CheckResult check_sampling_unbiasedness(std::uint64_t seed);

/// The cmd-check suites in stable order. `only` filters by suite name from
/// {identity, grad, fedavg, sampling}; empty runs everything. Unknown names
/// are an error.
std::vector<CheckResult> run_check_suite(const std::vector<std::string>& only, std::uint64_t seed);

}  // namespace fedsfr
