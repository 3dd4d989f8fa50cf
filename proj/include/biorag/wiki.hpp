#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biorag/llm.hpp"
#include "biorag/prompts.hpp"

namespace biorag {

struct KbArticle {
    std::string title;
    std::string content;

    bool operator==(const KbArticle&) const = default;
};

struct ContextSummary {
    std::string question_id;
    std::vector<std::string> sources;
    std::string summary;

    bool operator==(const ContextSummary&) const = default;
};

class KbError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Text between paired '#' marks. A pair never spans a line break; pieces
/// that are empty after trimming are skipped, repeats keep the first.
std::vector<std::string> extract_titles(std::string_view completion);

class KbClient {
  public:
    virtual ~KbClient() = default;
    /// nullopt when no article has this title.
    virtual std::optional<KbArticle> fetch(const std::string& title) = 0;
};

/// Directory of `<title>.txt` files. A missing file means the article does
/// not exist.
class FixtureKb : public KbClient {
  public:
    explicit FixtureKb(std::filesystem::path dir);
    std::optional<KbArticle> fetch(const std::string& title) override;

  private:
    std::filesystem::path dir_;
};

inline constexpr std::string_view kWikipediaApi = "https://en.wikipedia.org/w/api.php";

/// MediaWiki action API, plain-text extracts with redirects followed.
class WikipediaKb : public KbClient {
  public:
    WikipediaKb(std::shared_ptr<HttpTransport> transport, std::string endpoint = std::string(kWikipediaApi),
                RetryPolicy retry = {}, Sleeper sleeper = {});
    std::optional<KbArticle> fetch(const std::string& title) override;

    std::string request_url(std::string_view title) const;

  private:
    std::shared_ptr<HttpTransport> transport_;
    std::string endpoint_;
    RetryPolicy retry_;
    Sleeper sleeper_;
};

std::string url_encode(std::string_view text);

/// Sends the knowledge-base prompt for `question`; the raw completion.
std::string propose_articles(LlmProvider& provider, const PromptSet& prompts, std::string_view question,
                             const GenerationParams& params, CallLog* log = nullptr);

/// Fetches titles in order, dropping the ones that do not exist and articles
/// already fetched under another name (redirects). Titles with no article
/// are appended to `missing`.
std::vector<KbArticle> resolve_and_fetch(KbClient& kb, const std::vector<std::string>& titles,
                                         std::vector<std::string>* missing = nullptr);

inline constexpr std::size_t kDefaultContextBudget = 24000;

/// Articles are taken whole, in order, while their combined content length
/// (code points) fits `budget`; one that does not fit is skipped. No
/// articles, or an empty completion, yields an empty summary and no sources.
ContextSummary summarize_context(LlmProvider& provider, const PromptSet& prompts, std::string_view question_id,
                                 std::string_view question, const std::vector<KbArticle>& articles,
                                 const GenerationParams& params, std::size_t budget = kDefaultContextBudget,
                                 CallLog* log = nullptr);

struct WikiTrace {
    std::string proposal;
    std::vector<std::string> titles;
    std::vector<std::string> dropped;
    ContextSummary summary;
};

/// propose, extract, fetch and summarize.
WikiTrace build_context(LlmProvider& provider, KbClient& kb, const PromptSet& prompts, std::string_view question_id,
                        std::string_view question, const GenerationParams& params,
                        std::size_t budget = kDefaultContextBudget, CallLog* log = nullptr);

}  // namespace biorag
