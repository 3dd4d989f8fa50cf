#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Code-point level helpers over UTF-8 text. Offsets exchanged with the
// outside world (snippet offsets) are code-point indices; everything else
// works on bytes.
namespace biorag::utf8 {

/// Byte length of the UTF-8 sequence starting at `text[pos]`. Malformed or
/// truncated sequences count as a single byte so that arbitrary input is
/// always walkable.
std::size_t sequence_length(std::string_view text, std::size_t pos);

std::size_t codepoint_count(std::string_view text);

/// Byte offset of every code point in `text`, plus a trailing entry equal to
/// `text.size()`. The result has `codepoint_count(text) + 1` entries.
std::vector<std::size_t> codepoint_byte_offsets(std::string_view text);

/// Byte offset of code point `cp_index`; `cp_index == codepoint_count(text)`
/// maps to `text.size()`. Throws std::out_of_range past the end.
std::size_t byte_offset(std::string_view text, std::size_t cp_index);

/// The code points [begin, end) of `text`. Throws std::out_of_range when the
/// range does not fit.
std::string slice(std::string_view text, std::size_t begin, std::size_t end);

/// Decodes the code point at `pos` (U+FFFD for malformed input).
char32_t decode(std::string_view text, std::size_t pos);

}  // namespace biorag::utf8
