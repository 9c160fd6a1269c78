#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Tolerant reader for the JSON-shaped text LLMs actually produce: single or
// curly quotes, unquoted keys, trailing prose, code fences, truncation.
// Salvages every complete string-keyed entry it can find and never throws.
namespace oema::lenient {

struct Scalar {
    std::string value;
    bool quoted = false;
};

struct Entry {
    std::string key;
    Scalar value;
};

struct Object {
    std::vector<Entry> entries;
};

// Drops a leading ``` fence (with optional language tag) and anything after
// the closing fence; returns the input unchanged when no fence is present.
std::string strip_code_fences(std::string_view raw);

// Reads the object starting at the first '{' at or after `from`.
std::optional<Object> read_object_at(std::string_view s, std::size_t from);

// Reads the array of objects starting at the first '[' at or after `from`.
// Non-object elements are skipped.
std::vector<Object> read_object_array_at(std::string_view s, std::size_t from);

}  // namespace oema::lenient
