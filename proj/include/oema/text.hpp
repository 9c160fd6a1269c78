#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace oema::text {

// Lenient UTF-8 decode: every invalid byte becomes U+FFFD so offsets stay
// well defined on dirty input.
std::u32string decode_utf8(std::string_view s);
std::string encode_utf8(std::u32string_view cps);

// Number of Unicode scalar values in s. All character offsets in this
// project are in scalar values, never bytes.
std::size_t cp_length(std::string_view s);

// Substring by scalar-value offsets [start, end).
std::string cp_substr(std::string_view s, std::size_t start, std::size_t end);

// Simple case fold covering ASCII and the Latin-1 uppercase range.
char32_t fold_char(char32_t c);
std::u32string fold(std::u32string_view cps);

bool is_space_char(char32_t c);

std::string trim(std::string_view s);

// Canonical mention key: trimmed, whitespace runs collapsed to one space,
// case folded.
std::string normalize_key(std::string_view surface);

// FNV-1a, used for cache keys and fixture keys. Not cryptographic.
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 14695981039346656037ull);

// 32 hex chars from two independently seeded FNV-1a passes.
std::string stable_hash_hex(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

}  // namespace oema::text
