#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace embed2text {

// SHA-256 digest of a byte string. Used as the embedding-cache key.
std::array<uint8_t, 32> sha256(std::string_view data);
std::string sha256_hex(std::string_view data);

// FNV-1a 64-bit. Used for cache record checksums and word-keyed rows.
uint64_t fnv1a64(std::string_view data);

// Base64 for carrying exact non-UTF-8 byte strings through JSON documents.
std::string base64_encode(std::string_view data);
std::string base64_decode(std::string_view data);

// True when `s` is valid UTF-8 (and thus storable as a raw JSON string).
bool is_valid_utf8(std::string_view s);

// Printable form for logs and display fields: non-printable bytes as \xNN.
std::string sanitize_for_display(std::string_view s);

}  // namespace embed2text
