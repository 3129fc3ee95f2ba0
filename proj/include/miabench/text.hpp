#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mia {

// Minimal UTF-8 handling. Invalid bytes are treated as single one-byte
// codepoints so every input is processable; nothing here ever throws.

// Decodes the codepoint starting at byte `pos` and advances `pos` past it.
inline char32_t utf8_decode(std::string_view s, std::size_t& pos) {
    const auto byte = [&](std::size_t i) -> std::uint8_t {
        return static_cast<std::uint8_t>(s[i]);
    };
    const std::uint8_t b0 = byte(pos);
    std::size_t len = 1;
    char32_t cp = b0;
    if (b0 < 0x80) {
        len = 1;
    } else if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        ++pos;
        return b0;  // stray continuation byte
    }
    if (pos + len > s.size()) {
        ++pos;
        return b0;
    }
    for (std::size_t i = 1; i < len; ++i) {
        const std::uint8_t bi = byte(pos + i);
        if ((bi & 0xC0) != 0x80) {
            ++pos;
            return b0;
        }
        cp = (cp << 6) | (bi & 0x3F);
    }
    pos += len;
    return cp;
}

inline void utf8_encode(char32_t cp, std::string& out) {
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

inline std::string utf8_encode(char32_t cp) {
    std::string out;
    utf8_encode(cp, out);
    return out;
}

inline std::size_t codepoint_count(std::string_view s) {
    std::size_t n = 0;
    for (std::size_t pos = 0; pos < s.size(); ++n) {
        utf8_decode(s, pos);
    }
    return n;
}

// Byte offsets of each codepoint start, in order.
inline std::vector<std::size_t> codepoint_offsets(std::string_view s) {
    std::vector<std::size_t> offsets;
    for (std::size_t pos = 0; pos < s.size();) {
        offsets.push_back(pos);
        utf8_decode(s, pos);
    }
    return offsets;
}

// First `n` codepoints of `s`.
inline std::string codepoint_prefix(std::string_view s, std::size_t n) {
    std::size_t pos = 0;
    for (std::size_t seen = 0; pos < s.size() && seen < n; ++seen) {
        utf8_decode(s, pos);
    }
    return std::string(s.substr(0, pos));
}

inline bool is_unicode_space(char32_t cp) {
    switch (cp) {
        case U'\t':
        case U'\n':
        case U'\v':
        case U'\f':
        case U'\r':
        case U' ':
        case 0x0085:  // NEL
        case 0x00A0:  // NBSP
        case 0x1680:
        case 0x2028:
        case 0x2029:
        case 0x202F:
        case 0x205F:
        case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

// Splits on runs of unicode whitespace; never returns empty words.
inline std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> words;
    std::size_t pos = 0;
    std::size_t word_start = 0;
    bool in_word = false;
    while (pos < s.size()) {
        const std::size_t cp_start = pos;
        const char32_t cp = utf8_decode(s, pos);
        if (is_unicode_space(cp)) {
            if (in_word) {
                words.emplace_back(s.substr(word_start, cp_start - word_start));
                in_word = false;
            }
        } else if (!in_word) {
            word_start = cp_start;
            in_word = true;
        }
    }
    if (in_word) {
        words.emplace_back(s.substr(word_start));
    }
    return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i != 0) out += ' ';
        out += words[i];
    }
    return out;
}

// Collapses all whitespace runs to single spaces and trims the ends.
inline std::string normalize_whitespace(std::string_view s) {
    return join_words(split_words(s));
}

// Keeps the first `token_length` whitespace-delimited words (rejoined with
// single spaces), or the first `token_length` codepoints when the language
// is not space-delimited. Shorter text comes back unchanged apart from
// whitespace normalization in word mode.
inline std::string truncate_words(std::string_view text, std::size_t token_length,
                                  bool space_delimited) {
    if (space_delimited) {
        auto words = split_words(text);
        if (words.size() > token_length) {
            words.resize(token_length);
        }
        return join_words(words);
    }
    return codepoint_prefix(text, token_length);
}

// ASCII-range lowercasing. Multi-byte codepoints pass through untouched;
// good enough for the latin-script datasets this tool targets.
inline std::string lowercase_ascii(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') {
            c = static_cast<char>(c - 'A' + 'a');
        }
    }
    return out;
}

}  // namespace mia
