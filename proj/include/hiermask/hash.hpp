#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace hiermask {

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::uint8_t> data);

/// Stateless 64-bit mixer used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

} // namespace hiermask
