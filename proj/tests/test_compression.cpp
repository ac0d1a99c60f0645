#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <set>

#include "fedsfr/compression.hpp"
#include "fedsfr/rng.hpp"

using namespace fedsfr;

namespace {

using Boundaries = std::vector<std::pair<std::size_t, std::size_t>>;

Boundaries one_layer(std::size_t n) { return {{0, n}}; }

// Brute-force selection oracle: full sort by (magnitude desc, index asc),
// keep the first s.
std::set<std::uint32_t> oracle_top_s(const std::vector<double>& v, std::size_t s) {
    std::vector<std::uint32_t> order(v.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        double ma = std::fabs(v[a]), mb = std::fabs(v[b]);
        if (ma != mb) return ma > mb;
        return a < b;
    });
    return std::set<std::uint32_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s));
}

double norm2(const std::vector<double>& v) {
    double acc = 0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("top-s keeps the largest magnitudes and moves them out of the residual") {
    std::vector<double> v = {0.5, -2, 0.1, 1.5};
    SparsifyResult res = top_s_sparsify(v, one_layer(4), {2});
    REQUIRE(res.sparse.layers.size() == 1);
    CHECK(res.sparse.layers[0].indices == std::vector<std::uint32_t>{1, 3});
    CHECK(res.sparse.layers[0].values == std::vector<double>{-2, 1.5});
    CHECK(res.residual == std::vector<double>{0.5, 0, 0.1, 0});
    CHECK(res.sparse.total_nnz == 2);
}

TEST_CASE("magnitude ties go to the lower index") {
    std::vector<double> v = {1, -1, 1};
    SparsifyResult res = top_s_sparsify(v, one_layer(3), {2});
    CHECK(res.sparse.layers[0].indices == std::vector<std::uint32_t>{0, 1});
    CHECK(res.residual == std::vector<double>{0, 0, 1});
    // and it agrees with the full-sort oracle under the same rule
    std::set<std::uint32_t> kept(res.sparse.layers[0].indices.begin(),
                                 res.sparse.layers[0].indices.end());
    CHECK(kept == oracle_top_s(v, 2));
}

TEST_CASE("selection matches the full-sort oracle on random vectors with ties") {
    RngStream rng(derive_seed(50, StreamTag::Init));
    for (int trial = 0; trial < 1000; ++trial) {
        std::size_t n = 5 + rng.uniform_index(60);
        std::vector<double> v(n);
        // Coarse value grid so magnitude ties are frequent.
        for (double& x : v) {
            x = (static_cast<double>(rng.uniform_index(13)) - 6.0) / 4.0;
        }
        std::size_t s = rng.uniform_index(n + 1);
        SparsifyResult res = top_s_sparsify(v, one_layer(n), {s});
        REQUIRE(res.sparse.total_nnz == s);
        std::set<std::uint32_t> kept(res.sparse.layers[0].indices.begin(),
                                     res.sparse.layers[0].indices.end());
        REQUIRE(kept.size() == s);
        REQUIRE(kept == oracle_top_s(v, s));
        // strictly increasing indices
        for (std::size_t i = 1; i < res.sparse.layers[0].indices.size(); ++i) {
            REQUIRE(res.sparse.layers[0].indices[i] > res.sparse.layers[0].indices[i - 1]);
        }
    }
}

TEST_CASE("oracle agreement on a large vector") {
    RngStream rng(derive_seed(51, StreamTag::Init));
    std::vector<double> v(10000);
    for (double& x : v) x = 4.0 * rng.uniform() - 2.0;
    for (std::size_t s : {0ul, 1ul, 137ul, 4000ul, 9999ul, 10000ul}) {
        SparsifyResult res = top_s_sparsify(v, one_layer(v.size()), {s});
        std::set<std::uint32_t> kept(res.sparse.layers[0].indices.begin(),
                                     res.sparse.layers[0].indices.end());
        REQUIRE(kept == oracle_top_s(v, s));
    }
}

TEST_CASE("sparse plus residual reassembles the input bitwise") {
    RngStream rng(derive_seed(52, StreamTag::Init));
    Boundaries layers = {{0, 40}, {40, 25}, {65, 35}};
    std::vector<double> v(100);
    for (double& x : v) x = 4.0 * rng.uniform() - 2.0;
    auto budget = allocate_budget(layers, 40);
    SparsifyResult res = top_s_sparsify(v, layers, budget);
    std::vector<double> dense = densify(res.sparse, layers, v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double sum = dense[i] + res.residual[i];
        REQUIRE(std::memcmp(&sum, &v[i], sizeof(double)) == 0);
    }
    CHECK(norm2(res.residual) <= norm2(v));
}

TEST_CASE("residual norm never exceeds the input norm") {
    RngStream rng(derive_seed(53, StreamTag::Init));
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 10 + rng.uniform_index(90);
        std::vector<double> v(n);
        for (double& x : v) x = 10.0 * rng.uniform() - 5.0;
        std::size_t s = rng.uniform_index(n + 1);
        SparsifyResult res = top_s_sparsify(v, one_layer(n), {s});
        REQUIRE(norm2(res.residual) <= norm2(v) + 1e-15);
    }
}

TEST_CASE("per-layer budgets cannot exceed layer lengths") {
    std::vector<double> v(6, 1.0);
    CHECK_THROWS_AS(top_s_sparsify(v, {{0, 2}, {2, 4}}, {3, 1}), std::invalid_argument);
}

TEST_CASE("budget allocation is proportional with largest-remainder rounding") {
    CHECK(allocate_budget({{0, 10}, {10, 90}}, 10) == std::vector<std::size_t>{1, 9});
    CHECK(allocate_budget({{0, 3}, {3, 3}, {6, 3}}, 5) == std::vector<std::size_t>{2, 2, 1});
    CHECK(allocate_budget({{0, 100}}, 40) == std::vector<std::size_t>{40});
    CHECK(allocate_budget({{0, 4}, {4, 4}}, 8) == std::vector<std::size_t>{4, 4});
    CHECK(allocate_budget({{0, 5}}, 0) == std::vector<std::size_t>{0});
    CHECK_THROWS_AS(allocate_budget({{0, 4}}, 5), std::invalid_argument);
}

TEST_CASE("budget allocation respects caps by spilling into other layers") {
    // Tiny first layer fills up; its overflow must land in the big layer.
    auto b = allocate_budget({{0, 2}, {2, 98}}, 60);
    CHECK(b[0] <= 2);
    CHECK(b[0] + b[1] == 60);
    RngStream rng(derive_seed(54, StreamTag::Init));
    for (int trial = 0; trial < 100; ++trial) {
        Boundaries layers;
        std::size_t off = 0, total = 0;
        std::size_t L = 1 + rng.uniform_index(6);
        for (std::size_t l = 0; l < L; ++l) {
            std::size_t len = 1 + rng.uniform_index(50);
            layers.emplace_back(off, len);
            off += len;
            total += len;
        }
        std::size_t want = rng.uniform_index(total + 1);
        auto budget = allocate_budget(layers, want);
        std::size_t got = 0;
        for (std::size_t l = 0; l < L; ++l) {
            REQUIRE(budget[l] <= layers[l].second);
            got += budget[l];
        }
        REQUIRE(got == want);
    }
}

TEST_CASE("local update splits the compensated vector into sparse and memory") {
    ErrorMemory mem = ErrorMemory::zeros(4, 0);
    LocalUpdateResult r = build_local_update({0.5, -2, 0.1, 1.5}, mem, one_layer(4), {2}, 0);
    CHECK(r.update.layers[0].indices == std::vector<std::uint32_t>{1, 3});
    CHECK(r.update.layers[0].values == std::vector<double>{-2, 1.5});
    CHECK(r.residual == std::vector<double>{0.5, 0, 0.1, 0});
}

TEST_CASE("full budget leaves no memory behind") {
    ErrorMemory mem = ErrorMemory::zeros(4, 1);
    mem.residual = {0.25, -0.5, 0, 1};
    std::vector<double> accum = {1, 2, 3, 4};
    LocalUpdateResult r = build_local_update(accum, mem, one_layer(4), {4}, 3);
    for (double v : r.residual) CHECK(v == 0.0);
    std::vector<double> dense = densify(r.update, one_layer(4), 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(dense[i] == mem.residual[i] + accum[i]);
}

TEST_CASE("full budget keeps the memory at zero forever") {
    // keep ratio 1 is the degenerate compression case: nothing is ever cut.
    RngStream rng(derive_seed(55, StreamTag::Init));
    ErrorMemory mem = ErrorMemory::zeros(32, 2);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> accum(32);
        for (double& x : accum) x = rng.normal();
        LocalUpdateResult r = build_local_update(accum, mem, one_layer(32), {32}, t);
        mem.residual = r.residual;
        for (double v : mem.residual) REQUIRE(v == 0.0);
    }
}

TEST_CASE("error feedback identity holds exactly across rounds") {
    RngStream rng(derive_seed(56, StreamTag::Init));
    Boundaries layers = {{0, 24}, {24, 40}};
    const std::size_t n = 64;
    ErrorMemory mem = ErrorMemory::zeros(n, 3);
    auto budget = allocate_budget(layers, 16);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> accum(n);
        for (double& x : accum) x = 6.0 * rng.uniform() - 3.0;
        std::vector<double> before = mem.residual;
        LocalUpdateResult r = build_local_update(accum, mem, layers, budget, t);
        std::vector<double> dense = densify(r.update, layers, n);
        for (std::size_t i = 0; i < n; ++i) {
            REQUIRE(r.residual[i] + dense[i] == before[i] + accum[i]);
        }
        mem.residual = r.residual;
    }
}

TEST_CASE("updates telescope bitwise over 100 rounds on grid-valued data") {
    // Dyadic accumulands (multiples of 2^-10, |sum| < 2^7) make every
    // addition below exact, so the telescoped sums must agree bit for bit.
    RngStream rng(derive_seed(57, StreamTag::Init));
    Boundaries layers = {{0, 20}, {20, 12}};
    const std::size_t n = 32;
    ErrorMemory mem = ErrorMemory::zeros(n, 4);
    std::vector<double> sum_g(n, 0.0), sum_accum(n, 0.0);
    auto budget = allocate_budget(layers, 8);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> accum(n);
        for (double& x : accum) {
            x = (static_cast<double>(rng.uniform_index(2048)) - 1024.0) / 1024.0;
        }
        LocalUpdateResult r = build_local_update(accum, mem, layers, budget, t);
        std::vector<double> dense = densify(r.update, layers, n);
        for (std::size_t i = 0; i < n; ++i) {
            sum_g[i] += dense[i];
            sum_accum[i] += accum[i];
        }
        mem.residual = r.residual;
    }
    for (std::size_t i = 0; i < n; ++i) {
        double rhs = sum_accum[i] - mem.residual[i];  // m0 = 0
        REQUIRE(std::memcmp(&sum_g[i], &rhs, sizeof(double)) == 0);
    }
}

TEST_CASE("reset clears the memory and restores fresh-client behavior") {
    ErrorMemory mem = ErrorMemory::zeros(4, 5);
    mem.residual = {1, -2, 3, -4};
    reset_memory(mem);
    CHECK(mem.residual == std::vector<double>{0, 0, 0, 0});

    std::vector<double> accum = {0.5, -2, 0.1, 1.5};
    LocalUpdateResult after_reset = build_local_update(accum, mem, one_layer(4), {2}, 9);
    LocalUpdateResult fresh = build_local_update(accum, ErrorMemory::zeros(4, 6), one_layer(4), {2}, 9);
    CHECK(after_reset.update.layers[0].indices == fresh.update.layers[0].indices);
    CHECK(after_reset.update.layers[0].values == fresh.update.layers[0].values);
    CHECK(after_reset.residual == fresh.residual);
}

TEST_CASE("densify basics") {
    SparseUpdate empty;
    empty.layers.resize(2);
    std::vector<double> zero = densify(empty, {{0, 3}, {3, 3}}, 6);
    CHECK(zero == std::vector<double>(6, 0.0));

    RngStream rng(derive_seed(58, StreamTag::Init));
    std::vector<double> v(50);
    for (double& x : v) x = rng.normal();
    SparsifyResult full = top_s_sparsify(v, one_layer(50), {50});
    CHECK(densify(full.sparse, one_layer(50), 50) == v);

    SparsifyResult part = top_s_sparsify(v, one_layer(50), {17});
    std::vector<double> dense = densify(part.sparse, one_layer(50), 50);
    std::size_t nonzero = 0;
    for (double x : dense) nonzero += x != 0.0;
    CHECK(nonzero == part.sparse.total_nnz);

    SparseUpdate bad;
    bad.layers.resize(1);
    bad.layers[0].indices = {7};
    bad.layers[0].values = {1.0};
    CHECK_THROWS_AS(densify(bad, {{0, 5}}, 5), std::invalid_argument);
}

TEST_CASE("memory norm bound formula") {
    CHECK(lemma2_bound(0.01, 3, 1.0, 1.0) == 0.0);
    CHECK(lemma2_bound(0.01, 3, 1.0, 0.5) == doctest::Approx(7.2e-3).epsilon(1e-12));
    CHECK_THROWS_AS(lemma2_bound(0.01, 3, 1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(lemma2_bound(0.01, 3, 1.0, 1.5), std::invalid_argument);
}

TEST_CASE("sparse updates survive the wire") {
    RngStream rng(derive_seed(59, StreamTag::Init));
    Boundaries layers = {{0, 30}, {30, 34}};
    std::vector<double> v(64);
    for (double& x : v) x = rng.normal();
    SparsifyResult res = top_s_sparsify(v, layers, allocate_budget(layers, 20));

    std::string wire;
    put_sparse_update(wire, res.sparse);
    ByteReader r(wire);
    SparseUpdate back = get_sparse_update(r, 7);
    CHECK(r.at_end());
    CHECK(back.origin_round == 7);
    CHECK(back.total_nnz == res.sparse.total_nnz);
    REQUIRE(back.layers.size() == res.sparse.layers.size());
    for (std::size_t l = 0; l < back.layers.size(); ++l) {
        CHECK(back.layers[l].indices == res.sparse.layers[l].indices);
        CHECK(back.layers[l].values == res.sparse.layers[l].values);
    }
}

TEST_CASE("the wire reader rejects disordered indices") {
    std::string wire;
    put_u32(wire, 1);  // one layer
    put_u32(wire, 2);  // two entries
    put_u32(wire, 5);
    put_u32(wire, 5);  // repeated index
    put_f64(wire, 1.0);
    put_f64(wire, 2.0);
    ByteReader r(wire);
    CHECK_THROWS_AS(get_sparse_update(r, 0), std::runtime_error);
}

TEST_CASE("mismatched lengths are rejected") {
    ErrorMemory mem = ErrorMemory::zeros(3, 7);
    CHECK_THROWS_AS(build_local_update({1, 2, 3, 4}, mem, one_layer(4), {2}, 0),
                    std::invalid_argument);
}
