#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace chainobs {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

std::string to_hex(ByteView bytes);

/// Parses an even-length hex string. Throws std::invalid_argument on bad input.
Bytes from_hex(std::string_view hex);

/// SHA-256(SHA-256(data)).
std::array<std::uint8_t, 32> double_sha256(ByteView data);

std::array<std::uint8_t, 32> sha256(ByteView data);

inline ByteView as_bytes(std::string_view s)
{
    return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

} // namespace chainobs
