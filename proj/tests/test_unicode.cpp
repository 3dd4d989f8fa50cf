#include <gtest/gtest.h>

#include "biorag/unicode.hpp"

using namespace biorag;

TEST(Utf8, CountsCodePointsNotBytes) {
    EXPECT_EQ(utf8::codepoint_count(""), 0u);
    EXPECT_EQ(utf8::codepoint_count("abc"), 3u);
    EXPECT_EQ(utf8::codepoint_count("\xCE\xB1-helix"), 7u);  // α-helix
    EXPECT_EQ(utf8::codepoint_count("\xF0\x9F\xA7\xAC"), 1u);
}

TEST(Utf8, SliceUsesCodePointOffsets) {
    const std::string text = "IL-1\xCE\xB2 and TNF-\xCE\xB1";  // IL-1β and TNF-α
    EXPECT_EQ(utf8::slice(text, 0, 5), "IL-1\xCE\xB2");
    EXPECT_EQ(utf8::slice(text, 10, 15), "TNF-\xCE\xB1");
    EXPECT_EQ(utf8::slice(text, 3, 3), "");
    EXPECT_THROW(utf8::slice(text, 10, 16), std::out_of_range);
}

TEST(Utf8, MalformedBytesAreSingleCodePoints) {
    const std::string bad = "a\xC3(b\xE2\x82";
    EXPECT_EQ(utf8::codepoint_count(bad), 6u);
    EXPECT_EQ(utf8::slice(bad, 1, 2), "\xC3");
    EXPECT_EQ(utf8::decode(bad, 1), char32_t{0xFFFD});
}

TEST(Utf8, OffsetTableHasTrailingEntry) {
    const auto offsets = utf8::codepoint_byte_offsets("a\xCE\xB1z");
    ASSERT_EQ(offsets.size(), 4u);
    EXPECT_EQ(offsets[1], 1u);
    EXPECT_EQ(offsets[2], 3u);
    EXPECT_EQ(offsets[3], 4u);
}
