#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biorag/corpus.hpp"
#include "biorag/fewshot.hpp"
#include "biorag/index.hpp"
#include "biorag/llm.hpp"
#include "biorag/prompts.hpp"
#include "biorag/query.hpp"
#include "biorag/stages.hpp"
#include "biorag/wiki.hpp"

namespace biorag {

enum class Phase { synergy, phase_a, phase_a_plus, phase_b };

std::string_view to_string(Phase phase);
/// Throws std::invalid_argument.
Phase parse_phase(std::string_view name);

struct ShotCounts {
    /// nullopt: 2 for synergy, 10 otherwise.
    std::optional<std::size_t> query;
    std::size_t extraction = 0;
    std::size_t rerank = 0;
    std::size_t answer = 0;
};

struct PipelineConfig {
    Phase phase = Phase::phase_a;
    ShotCounts shots;
    bool wiki = false;
    std::size_t retrieval_size = kDocumentCap;
    std::size_t snippet_cap = kSnippetCap;
    std::size_t ideal_words = 200;
    std::size_t context_budget = kDefaultContextBudget;
    std::size_t parallelism = 1;
    /// How bare query strings are searched.
    std::vector<FieldSpec> bare_fields = default_fields();
    DefaultOperator bare_operator = DefaultOperator::and_op;
    GenerationParams params;

    std::size_t query_shots() const;
    QueryMode query_mode() const { return phase == Phase::synergy ? QueryMode::envelope : QueryMode::bare; }
};

class PipelineConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Everything a run reads. Pointers are borrowed and must outlive the run.
struct PipelineResources {
    LlmProvider* provider = nullptr;
    const PromptSet* prompts = nullptr;
    std::vector<const InvertedIndex*> indices;
    std::map<ExampleKind, ExampleSet> examples;
    const FeedbackMap* feedback = nullptr;
    /// Prior run whose snippets feed phase_a_plus answers.
    const RunFile* snippet_source = nullptr;
    KbClient* kb = nullptr;
};

/// Throws PipelineConfigError describing the first inconsistency.
void check_pipeline(std::span<const Question> questions, const PipelineConfig& config,
                    const PipelineResources& resources);

// ---- stages ------------------------------------------------------------------

struct StageContext {
    LlmProvider& provider;
    const PromptSet& prompts;
    const std::map<ExampleKind, ExampleSet>& examples;
    GenerationParams params;
    /// Knowledge-base summary; empty when none.
    std::string background;
    CallLog* log = nullptr;
};

/// [system?] + first `shots` examples of `kind` + `live`.
std::vector<ChatMessage> compose_messages(const StageContext& ctx, ExampleKind kind, std::size_t shots,
                                          ChatMessage live);

/// Throws StructuredOutputError when no usable query came back after the retry.
QueryEnvelope generate_query(const StageContext& ctx, const Question& question, QueryMode mode, std::size_t shots,
                             const PipelineConfig& config);

struct RetrievalResult {
    std::vector<SearchHit> hits;
    std::vector<std::string> removed;
    std::optional<std::string> improved_query;
    bool retried = false;
};

RetrievalResult retrieve_documents(const StageContext& ctx, const Question& question, const QueryEnvelope& envelope,
                                   std::span<const InvertedIndex* const> indices,
                                   const std::vector<std::string>& irrelevant, std::size_t size);

/// First occurrence of `candidate` in the title, then the abstract; failing
/// that, the same search with whitespace runs collapsed, mapped back to the
/// original offsets.
std::optional<Snippet> locate_snippet(const Document& doc, std::string_view candidate);

struct Dropped {
    std::string item;
    std::string reason;
};

struct ExtractionResult {
    std::vector<Snippet> snippets;
    std::vector<Dropped> dropped;
    std::optional<std::string> error;
};

ExtractionResult extract_snippets(const StageContext& ctx, const Question& question, const Document& doc,
                                  std::size_t shots);

/// Documents with at least one snippet, in their original order.
std::vector<std::string> filter_documents_by_snippets(const std::vector<std::string>& docs,
                                                      const std::vector<Snippet>& snippets);

/// Model picks made valid: unknown indices dropped, repeats removed, at most `cap`.
std::vector<std::size_t> apply_selection(std::span<const std::size_t> picks, std::size_t count, std::size_t cap);

struct RerankResult {
    std::vector<Snippet> snippets;
    std::vector<std::size_t> selection;
    bool fallback = false;
};

RerankResult rerank_snippets(const StageContext& ctx, const Question& question, const std::vector<Snippet>& snippets,
                             std::size_t shots, std::size_t cap);

/// Documents in order of their first snippet in `ranked`, then the remaining
/// ones in their prior order.
std::vector<std::string> rerank_documents(const std::vector<Snippet>& ranked, const std::vector<std::string>& docs);

struct ExactResult {
    std::optional<ExactAnswer> answer;
    std::optional<std::string> flag;
};

ExactResult answer_exact(const StageContext& ctx, const Question& question, const std::vector<std::string>& snippets,
                         std::size_t shots);

struct IdealResult {
    std::string text;
    bool flagged = false;
};

IdealResult answer_ideal(const StageContext& ctx, const Question& question, const std::vector<std::string>& snippets,
                         std::size_t shots, std::size_t max_words);

// ---- whole run ---------------------------------------------------------------

struct PipelineOutput {
    RunFile run;
    /// One per question, input order.
    std::vector<nlohmann::ordered_json> traces;
    std::size_t failed = 0;
};

/// Processes every question; a question that fails is emitted with empty
/// sections and its trace says why. A missing mock fixture aborts the run.
PipelineOutput run_pipeline(std::span<const Question> questions, const PipelineConfig& config,
                            const PipelineResources& resources);

/// `<dir>/<question id>.json` per trace.
void write_traces(const std::filesystem::path& dir, std::span<const nlohmann::ordered_json> traces);

}  // namespace biorag
