#pragma once

#include <string>

#include "nfr/network.hpp"

namespace nfr {

/// Checkpoint layout: one JSON header line
///   {"magic":"NFR1","L":..,"d":..,"K":..,"widths":[..],"activation":"..","seed":..}
/// then raw little-endian float64 values: W^(1) row-major, ..., W^(L), U.
void checkpoint_save(const Network& net, const std::string& path);
Network checkpoint_load(const std::string& path);

}  // namespace nfr
