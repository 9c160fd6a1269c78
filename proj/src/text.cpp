#include "oema/text.hpp"

#include <array>
#include <cstdio>

namespace oema::text {

std::u32string decode_utf8(std::string_view s) {
    std::u32string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        char32_t cp = 0;
        int len = 0;
        if (c < 0x80) {
            cp = c;
            len = 1;
        } else if ((c >> 5) == 0x6) {
            cp = c & 0x1F;
            len = 2;
        } else if ((c >> 4) == 0xE) {
            cp = c & 0x0F;
            len = 3;
        } else if ((c >> 3) == 0x1E) {
            cp = c & 0x07;
            len = 4;
        } else {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        if (i + static_cast<std::size_t>(len) > s.size()) {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        bool ok = true;
        for (int j = 1; j < len; ++j) {
            const unsigned char cc = static_cast<unsigned char>(s[i + j]);
            if ((cc >> 6) != 0x2) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (cc & 0x3F);
        }
        if (!ok) {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

std::string encode_utf8(std::u32string_view cps) {
    std::string out;
    out.reserve(cps.size());
    for (char32_t cp : cps) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else {
            out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
    }
    return out;
}

std::size_t cp_length(std::string_view s) {
    return decode_utf8(s).size();
}

std::string cp_substr(std::string_view s, std::size_t start, std::size_t end) {
    const std::u32string cps = decode_utf8(s);
    if (start > cps.size()) start = cps.size();
    if (end > cps.size()) end = cps.size();
    if (start >= end) return {};
    return encode_utf8(std::u32string_view(cps).substr(start, end - start));
}

char32_t fold_char(char32_t c) {
    if (c >= U'A' && c <= U'Z') return c + 32;
    // Latin-1 uppercase letters except the multiplication sign.
    if (c >= 0xC0 && c <= 0xDE && c != 0xD7) return c + 32;
    return c;
}

std::u32string fold(std::u32string_view cps) {
    std::u32string out;
    out.reserve(cps.size());
    for (char32_t c : cps) out.push_back(fold_char(c));
    return out;
}

bool is_space_char(char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' ||
           c == U'\v' || c == 0xA0;
}

std::string trim(std::string_view s) {
    std::u32string cps = decode_utf8(s);
    std::size_t b = 0;
    std::size_t e = cps.size();
    while (b < e && is_space_char(cps[b])) ++b;
    while (e > b && is_space_char(cps[e - 1])) --e;
    return encode_utf8(std::u32string_view(cps).substr(b, e - b));
}

std::string normalize_key(std::string_view surface) {
    const std::u32string cps = decode_utf8(surface);
    std::u32string out;
    out.reserve(cps.size());
    bool pending_space = false;
    for (char32_t c : cps) {
        if (is_space_char(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(U' ');
            pending_space = false;
        }
        out.push_back(fold_char(c));
    }
    return encode_utf8(out);
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string stable_hash_hex(std::string_view s) {
    const std::uint64_t a = fnv1a64(s);
    const std::uint64_t b = fnv1a64(s, 0x9E3779B97F4A7C15ull);
    std::array<char, 33> buf{};
    std::snprintf(buf.data(), buf.size(), "%016llx%016llx",
                  static_cast<unsigned long long>(a),
                  static_cast<unsigned long long>(b));
    return std::string(buf.data(), 32);
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const std::size_t next = s.find(sep, pos);
        if (next == std::string_view::npos) {
            out.emplace_back(s.substr(pos));
            break;
        }
        out.emplace_back(s.substr(pos, next - pos));
        pos = next + 1;
    }
    return out;
}

}  // namespace oema::text
