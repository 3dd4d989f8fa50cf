#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "biorag/analysis.hpp"
#include "biorag/corpus.hpp"
#include "biorag/query.hpp"

namespace biorag {

inline constexpr double kBm25K1 = 1.2;
inline constexpr double kBm25B = 0.75;

enum class Field : std::uint8_t { title = 0, abstract = 1 };
inline constexpr std::size_t kFieldCount = 2;

std::string_view to_string(Field f);
/// Throws std::invalid_argument for anything but "title" / "abstract".
Field parse_field(std::string_view name);

struct Posting {
    std::uint32_t doc = 0;
    std::uint32_t tf = 0;
    std::vector<std::uint32_t> positions;

    bool operator==(const Posting&) const = default;
};

struct SearchHit {
    std::string doc_id;
    double score = 0;

    bool operator==(const SearchHit&) const = default;
};

class IndexFormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class FingerprintMismatch : public IndexFormatError {
  public:
    using IndexFormatError::IndexFormatError;
};

struct IndexStats {
    std::size_t documents = 0;
    std::array<std::size_t, kFieldCount> terms{};
    std::array<std::size_t, kFieldCount> tokens{};
    std::array<double, kFieldCount> average_length{};
};

class InvertedIndex {
  public:
    /// Throws FormatError on a duplicate doc_id.
    static InvertedIndex build(std::span<const Document> docs, const AnalyzerConfig& config);

    /// Documents matching the query, best first, at most `size` of them.
    /// Throws std::invalid_argument for an unknown field, a non-positive
    /// boost or size 0.
    std::vector<SearchHit> search(const QueryAst& ast, std::span<const FieldSpec> fields,
                                  std::size_t size) const;
    std::vector<SearchHit> search(const QueryEnvelope& envelope) const;

    /// Every matching document with its score, unsorted.
    std::vector<std::pair<std::uint32_t, double>> match_all(const QueryAst& ast,
                                                            std::span<const FieldSpec> fields) const;

    void persist(const std::filesystem::path& path) const;
    /// With `expected`, refuses an index built under a different analyzer.
    static InvertedIndex load(const std::filesystem::path& path,
                              const std::optional<AnalyzerConfig>& expected = std::nullopt);

    const AnalyzerConfig& analyzer() const { return config_; }
    const std::string& fingerprint() const { return fingerprint_; }

    std::size_t size() const { return docs_.size(); }
    const Document& document(std::uint32_t ordinal) const { return docs_.at(ordinal); }
    const Document* find(std::string_view doc_id) const;
    std::optional<std::uint32_t> ordinal(std::string_view doc_id) const;

    std::size_t doc_freq(Field f, std::string_view term) const;
    const std::vector<Posting>* postings(Field f, std::string_view term) const;
    std::uint32_t field_length(Field f, std::uint32_t ordinal) const;
    double average_length(Field f) const;
    /// Floored Lucene idf: max(0, ln(1 + (N - df + 0.5) / (df + 0.5))).
    double idf(std::size_t df) const;

    IndexStats stats() const;

  private:
    struct FieldData {
        std::unordered_map<std::string, std::vector<Posting>> terms;
        std::vector<std::uint32_t> lengths;
        std::uint64_t total_length = 0;
    };

    AnalyzerConfig config_;
    std::string fingerprint_;
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::uint32_t> by_id_;
    std::array<FieldData, kFieldCount> fields_;

    const FieldData& field(Field f) const { return fields_[static_cast<std::size_t>(f)]; }
    void index_document(std::uint32_t ordinal, const Document& doc);
};

/// Searches several indices built with the same analyzer and merges by score
/// (doc_id ascending on ties). A doc_id present in more than one index keeps
/// its best score.
std::vector<SearchHit> search_all(std::span<const InvertedIndex* const> indices, const QueryAst& ast,
                                  std::span<const FieldSpec> fields, std::size_t size);

/// Sorts by score descending, then doc_id ascending, and truncates.
void rank_hits(std::vector<SearchHit>& hits, std::size_t size);

/// DocumentLookup over several indices, first match wins.
DocumentLookup document_lookup(std::vector<const InvertedIndex*> indices);

}  // namespace biorag
