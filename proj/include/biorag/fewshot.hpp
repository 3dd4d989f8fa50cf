#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biorag/corpus.hpp"
#include "biorag/index.hpp"
#include "biorag/llm.hpp"
#include "biorag/prompts.hpp"
#include "biorag/query.hpp"

namespace biorag {

enum class ExampleKind {
    query_generation,
    snippet_extraction,
    snippet_rerank,
    summary_qa,
    yesno_qa,
    factoid_qa,
    list_qa,
};

/// The six sub-problems sampled from training data, in a fixed order.
inline constexpr ExampleKind kSubProblems[] = {ExampleKind::snippet_extraction, ExampleKind::snippet_rerank,
                                               ExampleKind::summary_qa,         ExampleKind::yesno_qa,
                                               ExampleKind::factoid_qa,         ExampleKind::list_qa};

std::string_view to_string(ExampleKind kind);
ExampleKind parse_example_kind(std::string_view name);

/// Answer-stage example kind for a question type.
ExampleKind answer_kind(QuestionType type);

struct ExampleRecord {
    /// User turns (and any assistant turns between them); ends with a user turn.
    std::vector<ChatMessage> prompt;
    ChatMessage completion{Role::assistant, {}};

    bool operator==(const ExampleRecord&) const = default;
};

struct ExampleSet {
    ExampleKind kind = ExampleKind::query_generation;
    std::vector<ExampleRecord> records;

    bool operator==(const ExampleSet&) const = default;
};

class ExampleError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// `<dir>/<kind>.jsonl`
std::filesystem::path example_path(const std::filesystem::path& dir, ExampleKind kind);

/// One {"messages": [...]} object per line, the last message being the
/// assistant completion.
void save_example_set(const std::filesystem::path& path, const ExampleSet& set);
ExampleSet load_example_set(const std::filesystem::path& path, ExampleKind kind);
/// Every `<kind>.jsonl` present in `dir`.
std::map<ExampleKind, ExampleSet> load_example_dir(const std::filesystem::path& dir);

/// Optional system turn, then strictly alternating user/assistant, ending
/// with a user turn.
bool has_strict_alternation(std::span<const ChatMessage> messages);

/// The first `k` records of `set` placed between the optional system turn
/// of `live` and its remaining turns. Throws ExampleError when k exceeds the
/// set size.
std::vector<ChatMessage> prepend_examples(const ExampleSet& set, std::size_t k, std::span<const ChatMessage> live);

struct SamplingOptions {
    std::size_t max_per_set = 200;
    std::uint64_t seed = 0;
    /// Shuffle the question order (seeded) before taking the first max_per_set.
    bool shuffle = false;
    /// Defaults to all six sub-problems.
    std::vector<ExampleKind> kinds;
};

/// One set per requested sub-problem, completions built from gold data.
/// Snippet extraction needs `documents` to render the source article.
/// Throws ExampleError naming a sub-problem without eligible questions.
std::vector<ExampleSet> sample_training_sets(std::span<const Question> training, const DocumentLookup& documents,
                                             const PromptSet& prompts, const SamplingOptions& options = {});

/// Seeded Fisher-Yates permutation of 0..n-1; identical on every platform.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

struct QueryCandidate {
    std::string question_id;
    std::string query;
};

/// {"queries": [{"id", "query"}]} or a JSON array of such objects.
std::vector<QueryCandidate> load_query_candidates(const std::filesystem::path& path);

struct ScoredCandidate {
    std::string question_id;
    std::string query;
    double f1 = 0;
    std::optional<std::string> problem;
};

struct QuerySelection {
    ExampleSet examples;
    /// Every candidate, best first.
    std::vector<ScoredCandidate> ranking;
};

struct QuerySearchShape {
    std::vector<FieldSpec> fields = default_fields();
    DefaultOperator default_operator = DefaultOperator::and_op;
    std::size_t size = kDefaultResultSize;
};

/// Runs every candidate query, scores the returned documents by F1 against
/// the question's gold documents and keeps the best k (ties by question id).
/// Unparseable queries score 0 and stay in the ranking.
QuerySelection select_query_examples(std::span<const Question> questions, std::span<const QueryCandidate> candidates,
                                     std::span<const InvertedIndex* const> indices, const PromptSet& prompts,
                                     std::size_t k = 10, const QuerySearchShape& shape = {});

}  // namespace biorag
