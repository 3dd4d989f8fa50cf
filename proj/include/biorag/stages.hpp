#pragma once

// Prompt construction and completion parsing for each pipeline stage. The
// few-shot sampler renders its gold completions with the same functions, so
// examples and live prompts always share one format.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "biorag/corpus.hpp"
#include "biorag/llm.hpp"
#include "biorag/prompts.hpp"
#include "biorag/query.hpp"

namespace biorag {

enum class QueryMode {
    envelope,  // model writes the whole JSON request body
    bare,      // model writes only the query string
};

std::string_view to_string(QueryMode mode);

/// "- text" per line.
std::string snippet_list_block(std::span<const std::string> texts);
/// "[i] text" per line, i from 0.
std::string numbered_snippet_block(std::span<const std::string> texts);

ChatMessage query_prompt(const PromptSet& prompts, QueryMode mode, std::string_view question,
                         std::string_view context = {});
ChatMessage improve_query_prompt(const PromptSet& prompts, std::string_view question, std::string_view failed_query,
                                 std::string_view context = {});
ChatMessage extraction_prompt(const PromptSet& prompts, std::string_view question, const Document& doc,
                              std::string_view context = {});
ChatMessage rerank_prompt(const PromptSet& prompts, std::string_view question, std::span<const std::string> texts,
                          std::size_t max_selected, std::string_view context = {});
ChatMessage answer_prompt(const PromptSet& prompts, QuestionType type, std::string_view question,
                          std::span<const std::string> snippet_texts, std::string_view context = {});

// ---- gold completions (few-shot examples) ----------------------------------

std::string snippets_completion(std::span<const std::string> texts);
std::string rerank_completion(std::span<const std::size_t> indices);
std::string entities_completion(std::span<const std::string> entities);

// ---- parsing; nullopt means the completion is unusable ----------------------

/// {"snippets": [..]} or a bare array of strings.
std::optional<std::vector<std::string>> parse_snippet_list(const nlohmann::json& j);
/// {"selected": [..]} or a bare array of non-negative integers.
std::optional<std::vector<std::size_t>> parse_selection(const nlohmann::json& j);
/// {"answer": [..]} or a bare array. An element may itself be a list of
/// synonyms; its first string is used. Entries are trimmed, empty ones dropped.
std::optional<std::vector<std::string>> parse_entities(const nlohmann::json& j);
/// Casefolds, strips punctuation and takes the first word; "yes" or "no".
std::optional<std::string> parse_yesno(std::string_view completion);
/// Unwraps code fences, surrounding quotes or a JSON string, then checks the
/// result parses. Returns the cleaned query text.
std::optional<std::string> parse_query_completion(std::string_view completion, DefaultOperator op);
/// A JSON request body anywhere in the completion.
std::optional<QueryEnvelope> parse_envelope_completion(std::string_view completion);

/// Collapses whitespace (newlines included) to single spaces and keeps at most
/// `max_words` words.
std::string normalize_ideal(std::string_view text, std::size_t max_words);

}  // namespace biorag
