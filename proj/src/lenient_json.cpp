#include "oema/lenient_json.hpp"

#include <cctype>
#include <cstdlib>

#include "oema/text.hpp"

namespace oema::lenient {

namespace {

// Quote tokens: ASCII quotes plus the curly pairs U+2018/U+2019 and
// U+201C/U+201D as they appear in UTF-8 bytes.
struct QuoteToken {
    char32_t open = 0;
    std::size_t length = 0;  // bytes consumed
};

constexpr char32_t kSingle = U'\'';
constexpr char32_t kDouble = U'"';
constexpr char32_t kCurlySingleOpen = 0x2018;
constexpr char32_t kCurlySingleClose = 0x2019;
constexpr char32_t kCurlyDoubleOpen = 0x201C;
constexpr char32_t kCurlyDoubleClose = 0x201D;

std::optional<QuoteToken> quote_at(std::string_view s, std::size_t i) {
    if (i >= s.size()) return std::nullopt;
    const unsigned char c = static_cast<unsigned char>(s[i]);
    if (c == '"') return QuoteToken{kDouble, 1};
    if (c == '\'') return QuoteToken{kSingle, 1};
    if (c == 0xE2 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80) {
        const unsigned char c3 = static_cast<unsigned char>(s[i + 2]);
        if (c3 == 0x98) return QuoteToken{kCurlySingleOpen, 3};
        if (c3 == 0x99) return QuoteToken{kCurlySingleClose, 3};
        if (c3 == 0x9C) return QuoteToken{kCurlyDoubleOpen, 3};
        if (c3 == 0x9D) return QuoteToken{kCurlyDoubleClose, 3};
    }
    return std::nullopt;
}

bool closes(char32_t open, char32_t candidate) {
    switch (open) {
        case kDouble: return candidate == kDouble || candidate == kCurlyDoubleClose;
        case kSingle: return candidate == kSingle || candidate == kCurlySingleClose;
        case kCurlySingleOpen: return candidate == kCurlySingleClose || candidate == kSingle;
        case kCurlyDoubleOpen: return candidate == kCurlyDoubleClose || candidate == kDouble;
        default: return false;
    }
}

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

class Reader {
public:
    explicit Reader(std::string_view s) : s_(s) {}

    void seek(std::size_t i) { i_ = i; }
    bool eof() const { return i_ >= s_.size(); }
    char peek() const { return eof() ? '\0' : s_[i_]; }

    void skip_ws() {
        while (!eof() && is_ws(s_[i_])) ++i_;
    }

    // Next non-whitespace byte at or after i, without moving.
    char peek_nonspace(std::size_t from) const {
        std::size_t j = from;
        while (j < s_.size() && is_ws(s_[j])) ++j;
        return j < s_.size() ? s_[j] : '\0';
    }

    std::optional<std::string> read_string() {
        const auto open = quote_at(s_, i_);
        if (!open) return std::nullopt;
        i_ += open->length;
        std::string out;
        while (!eof()) {
            if (s_[i_] == '\\' && i_ + 1 < s_.size()) {
                out += unescape();
                continue;
            }
            const auto q = quote_at(s_, i_);
            if (q && closes(open->open, q->open)) {
                // Apostrophes inside single-quoted strings: only accept the
                // close when a structural character (or end) follows.
                const char next = peek_nonspace(i_ + q->length);
                const bool structural = next == ':' || next == ',' || next == '}' ||
                                        next == ']' || next == '\0';
                if (structural || open->open == kDouble || open->open == kCurlyDoubleOpen) {
                    i_ += q->length;
                    return out;
                }
            }
            out.push_back(s_[i_]);
            ++i_;
        }
        return out;  // unterminated: salvage what we have
    }

    std::optional<std::string> read_word() {
        std::string out;
        while (!eof()) {
            const char c = s_[i_];
            if ((c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                c == '.' || c == '+' || c == '-' || c == '_') {
                out.push_back(c);
                ++i_;
            } else {
                break;
            }
        }
        if (out.empty()) return std::nullopt;
        return out;
    }

    // Skips a balanced {...} or [...] container, string-aware.
    void skip_container() {
        const char open = s_[i_];
        const char close = open == '{' ? '}' : ']';
        int depth = 0;
        while (!eof()) {
            if (quote_at(s_, i_)) {
                read_string();
                continue;
            }
            const char c = s_[i_];
            if (c == open) ++depth;
            if (c == close) {
                --depth;
                ++i_;
                if (depth == 0) return;
                continue;
            }
            ++i_;
        }
    }

    // Scalar or nullopt for containers (which are consumed).
    std::optional<Scalar> read_value() {
        skip_ws();
        if (eof()) return std::nullopt;
        if (auto str = read_string()) return Scalar{*str, true};
        const char c = peek();
        if (c == '{' || c == '[') {
            skip_container();
            return std::nullopt;
        }
        if (auto word = read_word()) return Scalar{*word, false};
        ++i_;  // stray byte
        return std::nullopt;
    }

    std::optional<Object> read_object() {
        skip_ws();
        if (peek() != '{') return std::nullopt;
        ++i_;
        Object obj;
        while (true) {
            skip_ws();
            if (eof()) return obj;  // truncated: keep complete entries
            if (peek() == '}') {
                ++i_;
                return obj;
            }
            if (peek() == ',') {
                ++i_;
                continue;
            }
            std::string key;
            if (auto str = read_string()) {
                key = *str;
            } else {
                // Bare key up to the separator.
                while (!eof() && peek() != ':' && peek() != '}' && peek() != ',') {
                    key.push_back(s_[i_]);
                    ++i_;
                }
                key = text::trim(key);
            }
            skip_ws();
            if (peek() != ':') {
                resync();
                continue;
            }
            ++i_;
            auto value = read_value();
            if (value && !key.empty()) obj.entries.push_back({key, *value});
        }
    }

    std::vector<Object> read_object_array() {
        skip_ws();
        std::vector<Object> out;
        if (peek() != '[') return out;
        ++i_;
        while (true) {
            skip_ws();
            if (eof()) return out;
            const char c = peek();
            if (c == ']') {
                ++i_;
                return out;
            }
            if (c == ',') {
                ++i_;
                continue;
            }
            if (c == '{') {
                if (auto obj = read_object()) out.push_back(std::move(*obj));
                continue;
            }
            read_value();  // skip non-object element
        }
    }

private:
    std::string unescape() {
        // i_ points at '\\'.
        const char e = s_[i_ + 1];
        i_ += 2;
        switch (e) {
            case 'n': return "\n";
            case 't': return "\t";
            case 'r': return "\r";
            case 'b': return "\b";
            case 'f': return "\f";
            case 'u': {
                if (i_ + 4 <= s_.size()) {
                    const std::string hex(s_.substr(i_, 4));
                    char* endp = nullptr;
                    const long cp = std::strtol(hex.c_str(), &endp, 16);
                    if (endp == hex.c_str() + 4) {
                        i_ += 4;
                        char32_t full = static_cast<char32_t>(cp);
                        // Surrogate pair.
                        if (cp >= 0xD800 && cp <= 0xDBFF && i_ + 6 <= s_.size() &&
                            s_[i_] == '\\' && s_[i_ + 1] == 'u') {
                            const std::string hex2(s_.substr(i_ + 2, 4));
                            const long lo = std::strtol(hex2.c_str(), &endp, 16);
                            if (lo >= 0xDC00 && lo <= 0xDFFF) {
                                full = 0x10000 + ((cp - 0xD800) << 10) + (lo - 0xDC00);
                                i_ += 6;
                            }
                        }
                        return text::encode_utf8(std::u32string(1, full));
                    }
                }
                return "u";
            }
            default: return std::string(1, e);
        }
    }

    void resync() {
        while (!eof() && peek() != ',' && peek() != '}') ++i_;
    }

    std::string_view s_;
    std::size_t i_ = 0;
};

}  // namespace

std::string strip_code_fences(std::string_view raw) {
    const std::size_t fence = raw.find("```");
    if (fence == std::string_view::npos) return std::string(raw);
    std::size_t start = fence + 3;
    // Optional language tag up to end of line.
    const std::size_t nl = raw.find('\n', start);
    std::size_t content = start;
    if (nl != std::string_view::npos) {
        const std::string tag = text::trim(std::string(raw.substr(start, nl - start)));
        bool word = !tag.empty();
        for (char c : tag)
            if (!std::isalnum(static_cast<unsigned char>(c))) word = false;
        if (word || tag.empty()) content = nl + 1;
    }
    const std::size_t close = raw.find("```", content);
    if (close == std::string_view::npos) return std::string(raw.substr(content));
    return std::string(raw.substr(content, close - content));
}

std::optional<Object> read_object_at(std::string_view s, std::size_t from) {
    const std::size_t pos = s.find('{', from);
    if (pos == std::string_view::npos) return std::nullopt;
    Reader r(s);
    r.seek(pos);
    return r.read_object();
}

std::vector<Object> read_object_array_at(std::string_view s, std::size_t from) {
    const std::size_t pos = s.find('[', from);
    if (pos == std::string_view::npos) return {};
    Reader r(s);
    r.seek(pos);
    return r.read_object_array();
}

}  // namespace oema::lenient
