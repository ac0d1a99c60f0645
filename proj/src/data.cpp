#include "fedsfr/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "fedsfr/util.hpp"

namespace fedsfr {

const std::vector<std::size_t>& ImageDataset::shape() const {
    if (images.empty()) {
        static const std::vector<std::size_t> empty;
        return empty;
    }
    return images.front().shape;
}

namespace {

void check_uniform(ImageDataset& ds, const std::string& origin) {
    for (std::size_t i = 1; i < ds.images.size(); ++i) {
        if (ds.images[i].shape != ds.images[0].shape) {
            throw std::runtime_error(origin + ": mixed image shapes (" +
                                     shape_str(ds.images[0].shape) + " vs " +
                                     shape_str(ds.images[i].shape) + ")");
        }
    }
    ds.ids.resize(ds.images.size());
    for (std::size_t i = 0; i < ds.ids.size(); ++i) ds.ids[i] = i;
}

std::uint32_t be_u32(const std::string& buf, std::size_t pos) {
    if (pos + 4 > buf.size()) throw std::runtime_error("truncated IDX header");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v = (v << 8) | static_cast<std::uint8_t>(buf[pos + i]);
    }
    return v;
}

}  // namespace

ImageDataset load_idx(const std::string& path) {
    std::string raw = read_file(path);
    std::uint32_t magic = be_u32(raw, 0);
    if (magic != 0x00000803u) {
        throw std::runtime_error(path + ": bad IDX magic (want 0x00000803)");
    }
    std::uint64_t count = be_u32(raw, 4);
    std::uint64_t rows = be_u32(raw, 8);
    std::uint64_t cols = be_u32(raw, 12);
    if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) {
        throw std::runtime_error(path + ": implausible IDX dimensions");
    }
    std::uint64_t need = 16 + count * rows * cols;
    if (raw.size() != need) {
        throw std::runtime_error(path + ": IDX payload size mismatch (have " +
                                 std::to_string(raw.size()) + ", want " + std::to_string(need) +
                                 ")");
    }
    ImageDataset ds;
    ds.split = "train";
    ds.images.reserve(count);
    std::size_t pos = 16;
    for (std::uint64_t i = 0; i < count; ++i) {
        Tensor img = Tensor::zeros({1, rows, cols});
        for (std::size_t p = 0; p < rows * cols; ++p) {
            img.data[p] = static_cast<std::uint8_t>(raw[pos++]) / 255.0;
        }
        ds.images.push_back(std::move(img));
    }
    check_uniform(ds, path);
    return ds;
}

namespace {

// Netpbm header token reader: skips whitespace and '#' comment lines.
struct PnmReader {
    const std::string& buf;
    std::size_t pos = 0;

    std::string token() {
        while (pos < buf.size()) {
            char c = buf[pos];
            if (c == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos;
            } else {
                break;
            }
        }
        std::size_t start = pos;
        while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
        if (start == pos) throw std::runtime_error("truncated netpbm header");
        return buf.substr(start, pos - start);
    }
};

Tensor load_pnm(const std::string& path) {
    std::string raw = read_file(path);
    PnmReader r{raw};
    std::string magic = r.token();
    std::size_t channels;
    if (magic == "P5") {
        channels = 1;
    } else if (magic == "P6") {
        channels = 3;
    } else {
        throw std::runtime_error(path + ": unsupported netpbm type '" + magic +
                                 "' (binary P5/P6 only)");
    }
    std::size_t w = static_cast<std::size_t>(parse_int(r.token()));
    std::size_t h = static_cast<std::size_t>(parse_int(r.token()));
    long long maxval = parse_int(r.token());
    if (maxval != 255) {
        throw std::runtime_error(path + ": unsupported maxval " + std::to_string(maxval));
    }
    // Exactly one whitespace byte separates header and payload.
    std::size_t data_at = r.pos + 1;
    std::size_t need = w * h * channels;
    if (data_at + need > raw.size()) {
        throw std::runtime_error(path + ": truncated pixel payload");
    }
    Tensor img = Tensor::zeros({channels, h, w});
    // Interleaved bytes to channel-planar layout.
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                std::uint8_t b = static_cast<std::uint8_t>(raw[data_at + (y * w + x) * channels + c]);
                img.data[(c * h + y) * w + x] = b / 255.0;
            }
        }
    }
    return img;
}

}  // namespace

ImageDataset load_image_dir(const std::string& path) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path)) throw std::runtime_error(path + ": not a directory");
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (!entry.is_regular_file()) continue;
        std::string ext = entry.path().extension().string();
        if (ext == ".pgm" || ext == ".ppm") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error(path + ": no .pgm/.ppm files");
    ImageDataset ds;
    ds.split = "train";
    for (const std::string& f : files) ds.images.push_back(load_pnm(f));
    check_uniform(ds, path);
    return ds;
}

ImageDataset synth_dataset(RngStream& rng, std::size_t n, const std::vector<std::size_t>& shape,
                           SynthKind kind) {
    if (n == 0) throw std::invalid_argument("synth_dataset: n must be positive");
    if (shape.size() != 3) {
        throw std::invalid_argument("synth_dataset: shape must be (C,H,W), got " +
                                    shape_str(shape));
    }
    std::size_t C = shape[0], H = shape[1], W = shape[2];
    ImageDataset ds;
    ds.split = "train";
    ds.images.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor img = Tensor::zeros(shape);
        if (kind == SynthKind::GaussianBlobs) {
            double background = 0.1 + 0.2 * rng.uniform();
            for (double& v : img.data) v = background;
            std::size_t blobs = 1 + rng.uniform_index(3);
            for (std::size_t bi = 0; bi < blobs; ++bi) {
                double cy = rng.uniform() * H;
                double cx = rng.uniform() * W;
                double sigma = (0.08 + 0.17 * rng.uniform()) * std::min(H, W);
                double inv2s2 = 1.0 / (2.0 * sigma * sigma);
                for (std::size_t c = 0; c < C; ++c) {
                    double amp = 0.3 + 0.4 * rng.uniform();
                    for (std::size_t y = 0; y < H; ++y) {
                        for (std::size_t x = 0; x < W; ++x) {
                            double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
                            img.data[(c * H + y) * W + x] +=
                                amp * std::exp(-(dy * dy + dx * dx) * inv2s2);
                        }
                    }
                }
            }
        } else {
            double angle = rng.uniform() * 3.14159265358979323846;
            // Cap at ~1.6 cycles per image side: higher frequencies alias on
            // small canvases and the gratings stop looking like gratings.
            double freq = (0.6 + 1.0 * rng.uniform()) / std::min(H, W);
            double phase = rng.uniform() * 2.0 * 3.14159265358979323846;
            double fy = std::sin(angle) * freq, fx = std::cos(angle) * freq;
            for (std::size_t c = 0; c < C; ++c) {
                double shift = c * 0.7;
                for (std::size_t y = 0; y < H; ++y) {
                    for (std::size_t x = 0; x < W; ++x) {
                        double v = 0.5 + 0.4 * std::sin(2.0 * 3.14159265358979323846 *
                                                            (fy * y + fx * x) +
                                                        phase + shift);
                        img.data[(c * H + y) * W + x] = v;
                    }
                }
            }
        }
        for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
        ds.images.push_back(std::move(img));
    }
    ds.ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) ds.ids[i] = i;
    return ds;
}

Partition partition_dataset(const ImageDataset& ds, const PartitionSpec& spec, RngStream& rng) {
    if (spec.clients == 0 || spec.per_client == 0) {
        throw std::invalid_argument("partition: clients and per_client must be positive");
    }
    if (spec.public_per_client > spec.per_client) {
        throw std::invalid_argument("partition: public subset (" +
                                    std::to_string(spec.public_per_client) +
                                    ") exceeds per-client size (" +
                                    std::to_string(spec.per_client) + ")");
    }
    std::size_t need = spec.clients * spec.per_client;
    if (need > ds.size()) {
        throw std::invalid_argument("partition: " + std::to_string(spec.clients) + " clients x " +
                                    std::to_string(spec.per_client) + " images need " +
                                    std::to_string(need) + ", dataset has " +
                                    std::to_string(ds.size()));
    }
    std::vector<std::size_t> pool(ds.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
    rng.shuffle(pool);

    Partition out;
    out.clients.resize(spec.clients);
    double total = static_cast<double>(need);
    for (std::size_t k = 0; k < spec.clients; ++k) {
        ClientSplit& cs = out.clients[k];
        cs.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(k * spec.per_client),
                        pool.begin() + static_cast<std::ptrdiff_t>((k + 1) * spec.per_client));
        auto pub_pos = rng.sample_without_replacement(spec.per_client, spec.public_per_client);
        std::sort(pub_pos.begin(), pub_pos.end());
        cs.public_subset.reserve(pub_pos.size());
        for (std::size_t p : pub_pos) cs.public_subset.push_back(cs.train[p]);
        cs.weight = static_cast<double>(spec.per_client) / total;
    }
    out.test.assign(pool.begin() + static_cast<std::ptrdiff_t>(need), pool.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

std::vector<std::vector<std::size_t>> minibatches(std::size_t n, std::size_t batch_size,
                                                  int epochs, RngStream& rng) {
    if (n == 0) throw std::invalid_argument("minibatches: empty dataset");
    if (batch_size == 0) throw std::invalid_argument("minibatches: batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("minibatches: negative epoch count");
    std::vector<std::vector<std::size_t>> out;
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(perm);
        for (std::size_t at = 0; at < n; at += batch_size) {
            std::size_t end = std::min(n, at + batch_size);
            out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(at),
                             perm.begin() + static_cast<std::ptrdiff_t>(end));
        }
    }
    return out;
}

}  // namespace fedsfr
