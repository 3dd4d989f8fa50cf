#include "biorag/wiki.hpp"

#include <algorithm>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "biorag/corpus.hpp"
#include "biorag/unicode.hpp"

namespace biorag {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

}  // namespace

std::vector<std::string> extract_titles(std::string_view completion) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const auto open = completion.find('#', pos);
        if (open == std::string_view::npos) break;
        const auto close = completion.find('#', open + 1);
        if (close == std::string_view::npos) break;
        const auto inner = completion.substr(open + 1, close - open - 1);
        if (inner.find('\n') != std::string_view::npos) {
            // an unpaired '#' earlier on the line; restart from the later one
            pos = close;
            continue;
        }
        auto title = trim(inner);
        if (!title.empty() && std::find(out.begin(), out.end(), title) == out.end()) out.push_back(std::move(title));
        pos = close + 1;
    }
    return out;
}

FixtureKb::FixtureKb(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!std::filesystem::is_directory(dir_)) throw KbError(fmt::format("{} is not a directory", dir_.string()));
}

std::optional<KbArticle> FixtureKb::fetch(const std::string& title) {
    if (title.empty() || title == "." || title == ".." || title.find('/') != std::string::npos ||
        title.find('\0') != std::string::npos) {
        return std::nullopt;
    }
    const auto p = dir_ / (title + ".txt");
    std::error_code ec;
    if (!std::filesystem::is_regular_file(p, ec)) return std::nullopt;
    return KbArticle{title, read_text_file(p)};
}

std::string url_encode(std::string_view text) {
    std::string out;
    for (const unsigned char c : text) {
        if ((c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' || c == '_' ||
            c == '.' || c == '~') {
            out += static_cast<char>(c);
        } else {
            out += fmt::format("%{:02X}", c);
        }
    }
    return out;
}

WikipediaKb::WikipediaKb(std::shared_ptr<HttpTransport> transport, std::string endpoint, RetryPolicy retry,
                         Sleeper sleeper)
    : transport_(std::move(transport)), endpoint_(std::move(endpoint)), retry_(std::move(retry)),
      sleeper_(std::move(sleeper)) {
    if (!transport_) throw std::invalid_argument("knowledge-base client needs a transport");
    if (retry_.max_attempts < 1) throw std::invalid_argument("retry.max_attempts must be at least 1");
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string WikipediaKb::request_url(std::string_view title) const {
    return fmt::format("{}?action=query&format=json&formatversion=2&prop=extracts&explaintext=1&redirects=1&titles={}",
                       endpoint_, url_encode(title));
}

std::optional<KbArticle> WikipediaKb::fetch(const std::string& title) {
    const auto url = request_url(title);
    const HttpHeaders headers = {{"User-Agent", "biorag/0.1 (research toolkit)"}};
    std::string last_error;
    for (int n = 1; n <= retry_.max_attempts; ++n) {
        bool retryable = true;
        try {
            const auto res = transport_->get(url, headers);
            if (res.status == 200) {
                const auto j = json::parse(res.body, nullptr, false);
                const auto p = json::json_pointer("/query/pages");
                if (j.is_discarded() || !j.contains(p) || !j[p].is_array()) {
                    throw KbError(fmt::format("unexpected knowledge-base response for '{}'", title));
                }
                for (const auto& page : j[p]) {
                    if (page.value("missing", false) || page.value("invalid", false)) continue;
                    if (!page.contains("extract") || !page["extract"].is_string()) continue;
                    const auto text = page["extract"].get<std::string>();
                    if (text.empty()) continue;
                    return KbArticle{page.value("title", title), text};
                }
                return std::nullopt;
            }
            last_error = fmt::format("HTTP {}", res.status);
            retryable = res.status == 429 || res.status >= 500;
        } catch (const TransportError& e) {
            last_error = e.what();
        }
        if (!retryable) break;
        if (n < retry_.max_attempts && !retry_.backoff.empty()) {
            sleeper_(retry_.backoff[std::min<std::size_t>(static_cast<std::size_t>(n - 1), retry_.backoff.size() - 1)]);
        }
    }
    throw KbError(fmt::format("fetching '{}' failed: {}", title, last_error));
}

std::string propose_articles(LlmProvider& provider, const PromptSet& prompts, std::string_view question,
                             const GenerationParams& params, CallLog* log) {
    const std::vector<ChatMessage> msgs = {
        {Role::user, prompts.render(prompt::wiki_titles, {{"question", std::string(question)}})}};
    auto p = params;
    p.response_format = ResponseFormat::text;
    return call_provider(provider, msgs, p, log).content;
}

std::vector<KbArticle> resolve_and_fetch(KbClient& kb, const std::vector<std::string>& titles,
                                         std::vector<std::string>* missing) {
    std::vector<KbArticle> out;
    std::vector<std::string> asked;
    for (const auto& t : titles) {
        if (std::find(asked.begin(), asked.end(), t) != asked.end()) continue;
        asked.push_back(t);
        auto a = kb.fetch(t);
        if (!a) {
            if (missing) missing->push_back(t);
            continue;
        }
        const bool seen = std::any_of(out.begin(), out.end(), [&](const KbArticle& x) { return x.title == a->title; });
        if (!seen) out.push_back(std::move(*a));
    }
    return out;
}

ContextSummary summarize_context(LlmProvider& provider, const PromptSet& prompts, std::string_view question_id,
                                 std::string_view question, const std::vector<KbArticle>& articles,
                                 const GenerationParams& params, std::size_t budget, CallLog* log) {
    ContextSummary out{std::string(question_id), {}, {}};
    std::string block;
    std::size_t used = 0;
    for (const auto& a : articles) {
        const auto len = utf8::codepoint_count(a.content);
        if (used + len > budget) continue;
        used += len;
        out.sources.push_back(a.title);
        if (!block.empty()) block += "\n\n";
        block += fmt::format("# {}\n{}", a.title, a.content);
    }
    if (out.sources.empty()) return out;

    const std::vector<ChatMessage> msgs = {
        {Role::user, prompts.render(prompt::wiki_summary, {{"question", std::string(question)}, {"articles", block}})}};
    auto p = params;
    p.response_format = ResponseFormat::text;
    out.summary = trim(call_provider(provider, msgs, p, log).content);
    if (out.summary.empty()) out.sources.clear();
    return out;
}

WikiTrace build_context(LlmProvider& provider, KbClient& kb, const PromptSet& prompts, std::string_view question_id,
                        std::string_view question, const GenerationParams& params, std::size_t budget,
                        CallLog* log) {
    WikiTrace t;
    t.proposal = propose_articles(provider, prompts, question, params, log);
    t.titles = extract_titles(t.proposal);
    const auto articles = resolve_and_fetch(kb, t.titles, &t.dropped);
    t.summary = summarize_context(provider, prompts, question_id, question, articles, params, budget, log);
    return t;
}

}  // namespace biorag
