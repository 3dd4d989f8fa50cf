#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace biorag {

enum class StemmerKind { porter, none };

std::string_view to_string(StemmerKind kind);
StemmerKind parse_stemmer_kind(std::string_view name);

struct AnalyzerConfig {
    std::set<std::string, std::less<>> stopwords;
    StemmerKind stemmer = StemmerKind::porter;

    /// The 33-word English stop list with Porter stemming.
    static AnalyzerConfig english();

    /// Stable digest of the stop list and stemmer; stored with every index.
    std::string fingerprint() const;

    bool operator==(const AnalyzerConfig&) const = default;
};

/// The built-in English stop list, identical to data/stopwords_en.txt.
const std::vector<std::string_view>& default_english_stopwords();

/// One term per line; blank lines and lines starting with '#' are ignored.
std::set<std::string, std::less<>> load_stopwords(const std::filesystem::path& path);

struct Token {
    std::string term;
    /// Ordinal among all raw tokens of the field, stopwords included.
    std::uint32_t position = 0;

    bool operator==(const Token&) const = default;
};

/// Splits on non-alphanumeric boundaries, lowercases, strips a trailing
/// possessive "'s", drops stopwords (keeping their positions) and stems.
std::vector<Token> analyze(std::string_view text, const AnalyzerConfig& config);

/// Classic Porter (1980) suffix stripping on a lowercase word.
std::string porter_stem(std::string_view word);

}  // namespace biorag
