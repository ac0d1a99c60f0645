#include "fedsfr/checkpoint.hpp"

#include <cstdint>
#include <stdexcept>

#include "fedsfr/util.hpp"

namespace fedsfr {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'F', 'R'};
constexpr std::uint16_t kVersion = 1;

void put_layer(std::string& out, const LayerSpec& s) {
    out.push_back(static_cast<char>(s.kind));
    put_u32(out, static_cast<std::uint32_t>(s.in_features));
    put_u32(out, static_cast<std::uint32_t>(s.out_features));
    put_u32(out, static_cast<std::uint32_t>(s.in_channels));
    put_u32(out, static_cast<std::uint32_t>(s.out_channels));
    put_u32(out, static_cast<std::uint32_t>(s.kernel));
    put_u32(out, static_cast<std::uint32_t>(s.stride));
    put_u32(out, static_cast<std::uint32_t>(s.padding));
}

LayerSpec get_layer(ByteReader& r) {
    LayerSpec s;
    std::uint8_t kind = r.get_u8();
    if (kind > static_cast<std::uint8_t>(LayerKind::Sigmoid)) {
        throw std::runtime_error("checkpoint: unknown layer kind " + std::to_string(kind));
    }
    s.kind = static_cast<LayerKind>(kind);
    s.in_features = static_cast<int>(r.get_u32());
    s.out_features = static_cast<int>(r.get_u32());
    s.in_channels = static_cast<int>(r.get_u32());
    s.out_channels = static_cast<int>(r.get_u32());
    s.kernel = static_cast<int>(r.get_u32());
    s.stride = static_cast<int>(r.get_u32());
    s.padding = static_cast<int>(r.get_u32());
    return s;
}

}  // namespace

void save_networks(const std::string& path, const std::vector<const Network*>& nets) {
    std::string out;
    out.append(kMagic, 4);
    put_u16(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(nets.size()));
    for (const Network* net : nets) {
        put_u32(out, static_cast<std::uint32_t>(net->input_shape().size()));
        for (std::size_t e : net->input_shape()) put_u32(out, static_cast<std::uint32_t>(e));
        put_u32(out, static_cast<std::uint32_t>(net->layers().size()));
        for (const LayerSpec& s : net->layers()) put_layer(out, s);
        for (std::size_t i = 0; i < net->layers().size(); ++i) {
            if (!net->layers()[i].has_params()) continue;
            for (double v : net->weight(i).data) put_f64(out, v);
            for (double v : net->bias(i).data) put_f64(out, v);
        }
    }
    write_file(path, out);
}

std::vector<Network> load_networks(const std::string& path) {
    std::string raw = read_file(path);
    ByteReader r(raw);
    char magic[4];
    for (char& c : magic) c = static_cast<char>(r.get_u8());
    if (magic[0] != 'F' || magic[1] != 'S' || magic[2] != 'F' || magic[3] != 'R') {
        throw std::runtime_error("checkpoint: bad magic in " + path);
    }
    std::uint16_t version = r.get_u16();
    if (version != kVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    std::uint32_t count = r.get_u32();
    std::vector<Network> nets;
    nets.reserve(count);
    for (std::uint32_t n = 0; n < count; ++n) {
        std::uint32_t rank = r.get_u32();
        std::vector<std::size_t> input_shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) input_shape[i] = r.get_u32();
        std::uint32_t layer_count = r.get_u32();
        std::vector<LayerSpec> layers;
        layers.reserve(layer_count);
        for (std::uint32_t i = 0; i < layer_count; ++i) layers.push_back(get_layer(r));
        Network net(std::move(layers), std::move(input_shape));
        for (std::size_t i = 0; i < net.layers().size(); ++i) {
            if (!net.layers()[i].has_params()) continue;
            for (double& v : net.weight(i).data) v = r.get_f64();
            for (double& v : net.bias(i).data) v = r.get_f64();
        }
        nets.push_back(std::move(net));
    }
    if (!r.at_end()) throw std::runtime_error("checkpoint: trailing bytes in " + path);
    return nets;
}

}  // namespace fedsfr
