#include "biorag/analysis.hpp"

#include <fstream>

#include <fmt/format.h>

#include "biorag/corpus.hpp"
#include "biorag/hash.hpp"
#include "biorag/unicode.hpp"

namespace biorag {

std::string_view to_string(StemmerKind kind) { return kind == StemmerKind::porter ? "porter" : "none"; }

StemmerKind parse_stemmer_kind(std::string_view name) {
    if (name == "porter") return StemmerKind::porter;
    if (name == "none") return StemmerKind::none;
    throw std::invalid_argument(fmt::format("unknown stemmer '{}'", name));
}

const std::vector<std::string_view>& default_english_stopwords() {
    static const std::vector<std::string_view> words = {
        "a",    "an",   "and",  "are",   "as",    "at",   "be",    "but",  "by",
        "for",  "if",   "in",   "into",  "is",    "it",   "no",    "not",  "of",
        "on",   "or",   "such", "that",  "the",   "their", "then", "there", "these",
        "they", "this", "to",   "was",   "will",  "with"};
    return words;
}

AnalyzerConfig AnalyzerConfig::english() {
    AnalyzerConfig config;
    for (auto w : default_english_stopwords()) config.stopwords.emplace(w);
    return config;
}

std::string AnalyzerConfig::fingerprint() const {
    std::string canonical = "analyzer-v1;stemmer=";
    canonical += to_string(stemmer);
    canonical += ";stopwords=";
    for (const auto& w : stopwords) {
        canonical += w;
        canonical += '\n';
    }
    return sha256_hex(canonical);
}

std::set<std::string, std::less<>> load_stopwords(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(fmt::format("cannot open stopword file {}", path.string()));
    std::set<std::string, std::less<>> words;
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto last = line.find_last_not_of(" \t\r");
        std::string word = line.substr(first, last - first + 1);
        for (auto& c : word) {
            if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        }
        words.insert(std::move(word));
    }
    return words;
}

namespace {

// Word characters: ASCII letters and digits plus non-ASCII code points outside
// the common punctuation and symbol blocks.
bool is_word_char(char32_t cp) {
    if (cp < 0x80) {
        return (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z') || (cp >= '0' && cp <= '9');
    }
    if (cp <= 0xBF) return false;  // Latin-1 controls, punctuation, symbols
    if (cp == 0xD7 || cp == 0xF7) return false;
    if (cp >= 0x2000 && cp <= 0x2BFF) return false;  // punctuation, arrows, math
    if (cp >= 0x3000 && cp <= 0x303F) return false;
    if (cp >= 0xFE30 && cp <= 0xFE4F) return false;
    if (cp >= 0xFF00 && cp <= 0xFF0F) return false;
    if (cp == 0xFEFF || cp == 0xFFFD) return false;
    return true;
}

bool is_apostrophe(char32_t cp) { return cp == '\'' || cp == 0x2019; }

void append_lower(std::string& out, std::string_view text, std::size_t pos, std::size_t len) {
    if (len == 1) {
        char c = text[pos];
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        out.push_back(c);
        return;
    }
    const char32_t cp = utf8::decode(text, pos);
    // Latin-1 and Greek capitals map to lowercase by a fixed offset.
    const bool latin_upper = cp >= 0xC0 && cp <= 0xDE && cp != 0xD7;
    const bool greek_upper = cp >= 0x391 && cp <= 0x3A9 && cp != 0x3A2;
    if (len == 2 && (latin_upper || greek_upper)) {
        const char32_t lower = cp + 0x20;
        out.push_back(static_cast<char>(0xC0 | (lower >> 6)));
        out.push_back(static_cast<char>(0x80 | (lower & 0x3F)));
        return;
    }
    out.append(text.substr(pos, len));
}

}  // namespace

std::vector<Token> analyze(std::string_view text, const AnalyzerConfig& config) {
    std::vector<Token> tokens;
    std::uint32_t position = 0;
    std::string current;
    std::size_t pos = 0;

    auto flush = [&] {
        if (current.empty()) return;
        const auto ordinal = position++;
        if (config.stopwords.find(current) == config.stopwords.end()) {
            std::string term =
                config.stemmer == StemmerKind::porter ? porter_stem(current) : current;
            if (!term.empty()) tokens.push_back(Token{std::move(term), ordinal});
        }
        current.clear();
    };

    while (pos < text.size()) {
        const auto len = utf8::sequence_length(text, pos);
        const char32_t cp = utf8::decode(text, pos);
        if (is_word_char(cp)) {
            append_lower(current, text, pos, len);
            pos += len;
            continue;
        }
        // Possessive: apostrophe + s at the end of a word is dropped.
        if (!current.empty() && is_apostrophe(cp)) {
            const auto s_pos = pos + len;
            if (s_pos < text.size() && (text[s_pos] == 's' || text[s_pos] == 'S')) {
                const auto after = s_pos + 1;
                if (after >= text.size() || !is_word_char(utf8::decode(text, after))) {
                    flush();
                    pos = after;
                    continue;
                }
            }
        }
        flush();
        pos += len;
    }
    flush();
    return tokens;
}

}  // namespace biorag
