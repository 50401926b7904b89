#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace psdn {

// FNV-1a 64-bit content digest, hex-encoded. Integrity bookkeeping for
// config/dataset identity, not a security primitive.
std::string digest_hex(std::string_view bytes);

}  // namespace psdn
