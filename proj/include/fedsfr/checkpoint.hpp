#pragma once

#include <string>
#include <vector>

#include "fedsfr/tensor.hpp"

namespace fedsfr {

/// Binary network checkpoint.
///
/// Layout: magic "FSFR", u16 format version, u32 network count, then per
/// network a layer table (u8 kind id + dims + input shape) followed by the
/// little-endian f64 parameter payload per parameterized layer (weights,
/// then bias). Everything little-endian.
void save_networks(const std::string& path, const std::vector<const Network*>& nets);
std::vector<Network> load_networks(const std::string& path);

}  // namespace fedsfr
