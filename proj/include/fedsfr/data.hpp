#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fedsfr/rng.hpp"
#include "fedsfr/tensor.hpp"

namespace fedsfr {

/// A set of same-shaped images with values in [0, 1].
struct ImageDataset {
    std::vector<Tensor> images;
    std::vector<std::size_t> ids;
    std::string split;  // "train" / "test"

    std::size_t size() const { return images.size(); }
    const std::vector<std::size_t>& shape() const;
};

enum class SynthKind { GaussianBlobs, Stripes };

/// IDX image file (big-endian, magic 0x00000803), pixels scaled to [0, 1].
ImageDataset load_idx(const std::string& path);

/// Directory of binary PGM (P5) or PPM (P6) images, maxval 255, scaled to
/// [0, 1]. Files are taken in sorted name order; shapes must agree.
ImageDataset load_image_dir(const std::string& path);

/// Seeded synthetic images: soft gaussian blobs on a flat background, or
/// sinusoidal stripe patterns. Values clamped to [0, 1].
ImageDataset synth_dataset(RngStream& rng, std::size_t n, const std::vector<std::size_t>& shape,
                           SynthKind kind);

struct PartitionSpec {
    std::size_t clients = 0;            // K
    std::size_t per_client = 0;         // |D_k|
    std::size_t public_per_client = 0;  // |P_k|
};

struct ClientSplit {
    std::vector<std::size_t> train;          // D_k, indices into the dataset
    std::vector<std::size_t> public_subset;  // P_k, subset of train
    double weight = 0.0;                     // p_k = |D_k| / sum |D_j|
};

struct Partition {
    std::vector<ClientSplit> clients;
    std::vector<std::size_t> test;  // images not consumed by any client
};

/// IID split: clients get disjoint uniform draws of per_client images each;
/// each P_k is a uniform subset of its D_k; the unconsumed remainder is the
/// held-out test pool.
Partition partition_dataset(const ImageDataset& ds, const PartitionSpec& spec, RngStream& rng);

/// Mini-batch index schedule over [0, n): per epoch a fresh permutation cut
/// into consecutive chunks of batch_size, keeping the final short chunk.
std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size,
                                                  int epochs, RngStream& rng);

}  // namespace fedsfr
