#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace biorag {

inline constexpr std::size_t kFactoidCap = 5;
inline constexpr std::size_t kListCap = 200;
inline constexpr std::size_t kDocumentCap = 50;
inline constexpr std::size_t kSnippetCap = 10;

inline constexpr std::string_view kPubmedUrlPrefix = "http://www.ncbi.nlm.nih.gov/pubmed/";

/// Raised for unreadable or malformed interchange files.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Document {
    std::string doc_id;
    std::string title;
    std::string abstract;

    bool operator==(const Document&) const = default;
};

enum class QuestionType { yesno, factoid, list, summary };

std::string_view to_string(QuestionType type);
/// Throws FormatError on anything but the four known names.
QuestionType parse_question_type(std::string_view name);

enum class Section { title, abstract };

std::string_view to_string(Section section);
Section parse_section(std::string_view name);

/// A verbatim span of a document section. Offsets are code points, `end`
/// exclusive.
struct Snippet {
    std::string doc_id;
    Section section = Section::abstract;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string text;

    bool operator==(const Snippet&) const = default;
};

/// Text of `section` within `doc`.
const std::string& section_text(const Document& doc, Section section);

/// Builds a snippet for the code points [begin, end) of a section.
Snippet make_snippet(const Document& doc, Section section, std::size_t begin, std::size_t end);

/// Describes why `snippet` is not a faithful slice of `doc`, if it is not.
std::optional<std::string> check_snippet(const Snippet& snippet, const Document& doc);

using Synonyms = std::vector<std::string>;

struct YesNoAnswer {
    std::string value;
    bool operator==(const YesNoAnswer&) const = default;
};
struct FactoidAnswer {
    std::vector<Synonyms> entities;
    bool operator==(const FactoidAnswer&) const = default;
};
struct ListAnswer {
    std::vector<Synonyms> entities;
    bool operator==(const ListAnswer&) const = default;
};

using ExactAnswer = std::variant<YesNoAnswer, FactoidAnswer, ListAnswer>;

QuestionType answer_type(const ExactAnswer& answer);

struct Question {
    std::string id;
    std::string body;
    QuestionType qtype = QuestionType::summary;
    std::optional<std::vector<std::string>> gold_documents;
    std::optional<std::vector<Snippet>> gold_snippets;
    std::optional<ExactAnswer> gold_exact;
    std::optional<std::string> gold_ideal;
    /// Synergy readiness flag; files without it are treated as ready.
    bool answer_ready = true;

    bool operator==(const Question&) const = default;
};

struct FeedbackRecord {
    std::string question_id;
    std::vector<std::string> relevant_documents;
    std::vector<std::string> irrelevant_documents;
    std::vector<Snippet> relevant_snippets;
    std::vector<Snippet> irrelevant_snippets;

    bool operator==(const FeedbackRecord&) const = default;
};

using FeedbackMap = std::map<std::string, FeedbackRecord, std::less<>>;

struct RunEntry {
    std::string id;
    /// Document ids in rank order; absent when the phase submits none.
    std::optional<std::vector<std::string>> documents;
    std::optional<std::vector<Snippet>> snippets;
    std::optional<ExactAnswer> exact_answer;
    std::optional<std::string> ideal_answer;

    bool operator==(const RunEntry&) const = default;
};

struct RunFile {
    std::vector<RunEntry> questions;

    bool operator==(const RunFile&) const = default;
    const RunEntry* find(std::string_view id) const;
};

using DocumentLookup = std::function<const Document*(std::string_view doc_id)>;

std::string pubmed_url(std::string_view doc_id);
/// Accepts either a PubMed URL or a bare id.
std::string doc_id_from_url(std::string_view url);

/// Streams a line-delimited corpus file ({"id", "title", "abstract"} per
/// line). Blank lines are skipped.
class CorpusReader {
  public:
    explicit CorpusReader(const std::filesystem::path& path);

    /// Next record in file order, or nullopt at end of file. Throws
    /// FormatError naming the line for malformed records and duplicate ids.
    std::optional<Document> next();

  private:
    std::ifstream in_;
    std::filesystem::path path_;
    std::size_t line_no_ = 0;
    std::unordered_set<std::string> seen_;
};

std::vector<Document> load_corpus(const std::filesystem::path& path);

std::vector<Question> parse_questions(const nlohmann::json& doc);
std::vector<Question> load_questions(const std::filesystem::path& path);
nlohmann::ordered_json questions_to_json(std::span<const Question> questions);

FeedbackMap parse_feedback(const nlohmann::json& doc);
FeedbackMap load_feedback(const std::filesystem::path& path);

nlohmann::ordered_json snippet_to_json(const Snippet& snippet);
Snippet snippet_from_json(const nlohmann::json& j);
nlohmann::ordered_json exact_answer_to_json(const ExactAnswer& answer);
ExactAnswer exact_answer_from_json(const nlohmann::json& j, QuestionType type);

nlohmann::ordered_json run_to_json(const RunFile& run);
/// `questions` resolves factoid versus list answers, which share a JSON shape;
/// without a matching question an array loads as a list answer.
RunFile run_from_json(const nlohmann::json& j, std::span<const Question> questions = {});
RunFile load_run_file(const std::filesystem::path& path, std::span<const Question> questions = {});
/// Canonical serialized text of a run file.
std::string serialize_run(const RunFile& run);

struct ValidationContext {
    /// When non-empty, run ids must match these questions and exact answers
    /// must match their type.
    std::span<const Question> questions;
    /// When set, snippet offsets are checked against the document text.
    DocumentLookup documents;
};

/// Every violated run-file invariant, as human-readable strings. Never throws
/// on well-typed input.
std::vector<std::string> validate_run_file(const RunFile& run, const ValidationContext& ctx = {});

/// Raised by write_run_file with the full violation list.
class RunValidationError : public std::runtime_error {
  public:
    explicit RunValidationError(std::vector<std::string> violations);
    const std::vector<std::string>& violations() const { return violations_; }

  private:
    std::vector<std::string> violations_;
};

void write_run_file(const RunFile& run, const std::filesystem::path& path,
                    const ValidationContext& ctx = {});

/// Reads a whole file; throws FormatError when it cannot be opened.
std::string read_text_file(const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace biorag
