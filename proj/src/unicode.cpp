#include "biorag/unicode.hpp"

#include <stdexcept>

namespace biorag::utf8 {

namespace {

bool is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

}  // namespace

std::size_t sequence_length(std::string_view text, std::size_t pos) {
    const auto lead = static_cast<unsigned char>(text[pos]);
    std::size_t len = 1;
    if (lead >= 0xF0 && lead <= 0xF4) {
        len = 4;
    } else if (lead >= 0xE0) {
        len = lead <= 0xEF ? 3 : 1;
    } else if (lead >= 0xC2) {
        len = 2;
    }
    if (pos + len > text.size()) return 1;
    for (std::size_t i = 1; i < len; ++i) {
        if (!is_continuation(static_cast<unsigned char>(text[pos + i]))) return 1;
    }
    return len;
}

std::size_t codepoint_count(std::string_view text) {
    std::size_t count = 0;
    for (std::size_t pos = 0; pos < text.size(); pos += sequence_length(text, pos)) ++count;
    return count;
}

std::vector<std::size_t> codepoint_byte_offsets(std::string_view text) {
    std::vector<std::size_t> offsets;
    offsets.reserve(text.size() + 1);
    for (std::size_t pos = 0; pos < text.size(); pos += sequence_length(text, pos)) {
        offsets.push_back(pos);
    }
    offsets.push_back(text.size());
    return offsets;
}

std::size_t byte_offset(std::string_view text, std::size_t cp_index) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < cp_index; ++i) {
        if (pos >= text.size()) throw std::out_of_range("code point index past end of text");
        pos += sequence_length(text, pos);
    }
    return pos;
}

std::string slice(std::string_view text, std::size_t begin, std::size_t end) {
    if (begin > end) throw std::out_of_range("slice begin after end");
    const auto from = byte_offset(text, begin);
    const auto to = from + byte_offset(text.substr(from), end - begin);
    return std::string(text.substr(from, to - from));
}

char32_t decode(std::string_view text, std::size_t pos) {
    const auto len = sequence_length(text, pos);
    const auto lead = static_cast<unsigned char>(text[pos]);
    if (len == 1) return lead < 0x80 ? char32_t{lead} : char32_t{0xFFFD};
    char32_t cp = lead & (0xFF >> (len + 1));
    for (std::size_t i = 1; i < len; ++i) {
        cp = (cp << 6) | (static_cast<unsigned char>(text[pos + i]) & 0x3F);
    }
    return cp;
}

}  // namespace biorag::utf8
