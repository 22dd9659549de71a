#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace repro {

/// Lower-case hex SHA-256 digest of a byte buffer.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace repro
