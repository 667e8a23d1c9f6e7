#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace tracecal {

// Lowercase hex SHA-256 of raw bytes.
std::string sha256_hex(std::string_view bytes);

// Digest of a sequence of doubles by their exact bit patterns.
std::string sha256_hex(std::span<const double> values);

// First 64 bits of the SHA-256 digest; platform independent.
std::uint64_t stable_hash64(std::string_view bytes);

// Appends an 8-byte little-endian length prefix followed by the bytes.
void append_length_prefixed(std::string& out, std::string_view field);

}  // namespace tracecal
