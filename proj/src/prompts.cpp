#include "biorag/prompts.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "biorag/corpus.hpp"
#include "biorag/hash.hpp"

namespace biorag {

std::string render_template(std::string_view text, const TemplateVars& vars) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto open = text.find("{{", pos);
        if (open == std::string_view::npos) break;
        const auto close = text.find("}}", open + 2);
        if (close == std::string_view::npos) break;
        const auto name = text.substr(open + 2, close - open - 2);
        const auto it = vars.find(name);
        if (it == vars.end()) throw TemplateError(fmt::format("template variable '{}' has no value", name));
        out.append(text.substr(pos, open - pos));
        out += it->second;
        pos = close + 2;
    }
    out.append(text.substr(pos));
    return out;
}

std::vector<std::string> template_placeholders(std::string_view text) {
    std::vector<std::string> names;
    std::size_t pos = 0;
    while (true) {
        const auto open = text.find("{{", pos);
        if (open == std::string_view::npos) break;
        const auto close = text.find("}}", open + 2);
        if (close == std::string_view::npos) break;
        std::string name(text.substr(open + 2, close - open - 2));
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(std::move(name));
        pos = close + 2;
    }
    return names;
}

namespace {

constexpr std::string_view kSystem =
    "You are an expert in biomedical literature search and question answering. "
    "Follow the requested output format exactly.";

// Reference query expansion prompt, with a slot for optional background.
constexpr std::string_view kQueryEnvelope =
    "{{context}}Turn the following biomedical question into an effective elasticsearch query using the "
    "query_string query type by incorporating synonyms and additional terms that closely relate to the main "
    "topic and help reduce ambiguity. Focus on maintaining the query's precision and relevance to the original "
    "question, the index contains the fields 'title' and 'abstract', return valid json: '{{question}}'";

constexpr std::string_view kQueryString =
    "{{context}}Write a search query for the biomedical question below in Elasticsearch query_string syntax. "
    "Add synonyms and closely related terms, group alternatives with OR inside parentheses and put multi-word "
    "terms in double quotes. Do not name fields, do not use wildcards. The index holds PubMed titles and "
    "abstracts.\nReturn only the query string.\n\nQuestion: '{{question}}'";

constexpr std::string_view kQueryImprove =
    "{{context}}The query_string query\n{{query}}\nreturned no documents for the biomedical question "
    "'{{question}}'. Write a broader query in the same syntax: fewer required terms, more synonyms joined "
    "with OR.\nReturn only the query string.";

constexpr std::string_view kSnippetExtraction =
    "{{context}}Extract the passages of the article below that help answer the question. Copy each passage "
    "character for character from the title or the abstract; do not shorten, merge or rephrase. If nothing "
    "is relevant, return an empty list.\nReturn JSON: {\"snippets\": [\"passage\", ...]}\n\n"
    "Question: {{question}}\n\nTitle: {{title}}\nAbstract: {{abstract}}";

constexpr std::string_view kSnippetRerank =
    "{{context}}The numbered snippets below were retrieved for the question. Pick up to {{max}} snippets that "
    "are most helpful for answering it, most helpful first.\nReturn JSON: {\"selected\": [number, ...]}\n\n"
    "Question: {{question}}\n\nSnippets:\n{{snippets}}";

constexpr std::string_view kAnswerYesNo =
    "{{context}}Answer the biomedical question using the snippets.\n\nQuestion: {{question}}\n\n"
    "Snippets:\n{{snippets}}\n\nAnswer with \"yes\" or \"no\" only.";

constexpr std::string_view kAnswerFactoid =
    "{{context}}Answer the biomedical question using the snippets.\n\nQuestion: {{question}}\n\n"
    "Snippets:\n{{snippets}}\n\nList up to 5 candidate entities, most likely first, each as short as possible."
    "\nReturn JSON: {\"answer\": [\"entity\", ...]}";

constexpr std::string_view kAnswerList =
    "{{context}}Answer the biomedical question using the snippets.\n\nQuestion: {{question}}\n\n"
    "Snippets:\n{{snippets}}\n\nList every entity that answers the question (at most 200), each as short as "
    "possible.\nReturn JSON: {\"answer\": [\"entity\", ...]}";

constexpr std::string_view kAnswerSummary =
    "{{context}}Answer the biomedical question using the snippets.\n\nQuestion: {{question}}\n\n"
    "Snippets:\n{{snippets}}\n\nWrite one short paragraph of at most 200 words that answers the question.";

// Reference knowledge-base prompt, whitespace kept verbatim.
constexpr std::string_view kWikiTitles = R"PROMPT(
    Given the question "{{question}}", identify existing Wikipedia articles that offer helpful background information to answer this question. 
    Ensure that the titles listed are of real articles on Wikipedia as of your last training cut-off. Wrap the confirmed article titles in hashtags (e.g., #Article Title#). 
    Provide a step-by-step reasoning for your selections, ensuring relevance to the main components of the question.

    Step 1: Confirm the Existence of Articles
    Before listing any articles, briefly verify their existence by ensuring they are well-known topics generally covered by Wikipedia.

    Step 2: List Relevant Wikipedia Articles
    After confirming, list the articles, wrapping the titles in hashtags and explaining how each article is relevant to the question.
    )PROMPT";

constexpr std::string_view kWikiSummary =
    "Summarize the Wikipedia articles below into a concise background note that helps to answer the question "
    "'{{question}}'. Keep only facts relevant to the question.\n\n{{articles}}";

}  // namespace

const std::map<std::string, std::vector<std::string>, std::less<>>& PromptSet::allowed_placeholders() {
    static const std::map<std::string, std::vector<std::string>, std::less<>> allowed = {
        {std::string(prompt::system), {}},
        {std::string(prompt::query_envelope), {"context", "question"}},
        {std::string(prompt::query_string), {"context", "question"}},
        {std::string(prompt::query_improve), {"context", "question", "query"}},
        {std::string(prompt::snippet_extraction), {"context", "question", "title", "abstract"}},
        {std::string(prompt::snippet_rerank), {"context", "question", "snippets", "max"}},
        {std::string(prompt::answer_yesno), {"context", "question", "snippets"}},
        {std::string(prompt::answer_factoid), {"context", "question", "snippets"}},
        {std::string(prompt::answer_list), {"context", "question", "snippets"}},
        {std::string(prompt::answer_summary), {"context", "question", "snippets"}},
        {std::string(prompt::wiki_titles), {"question"}},
        {std::string(prompt::wiki_summary), {"question", "articles"}},
    };
    return allowed;
}

PromptSet PromptSet::defaults() {
    PromptSet set;
    set.texts_ = {
        {std::string(prompt::system), std::string(kSystem)},
        {std::string(prompt::query_envelope), std::string(kQueryEnvelope)},
        {std::string(prompt::query_string), std::string(kQueryString)},
        {std::string(prompt::query_improve), std::string(kQueryImprove)},
        {std::string(prompt::snippet_extraction), std::string(kSnippetExtraction)},
        {std::string(prompt::snippet_rerank), std::string(kSnippetRerank)},
        {std::string(prompt::answer_yesno), std::string(kAnswerYesNo)},
        {std::string(prompt::answer_factoid), std::string(kAnswerFactoid)},
        {std::string(prompt::answer_list), std::string(kAnswerList)},
        {std::string(prompt::answer_summary), std::string(kAnswerSummary)},
        {std::string(prompt::wiki_titles), std::string(kWikiTitles)},
        {std::string(prompt::wiki_summary), std::string(kWikiSummary)},
    };
    return set;
}

PromptSet PromptSet::with_overrides(const std::filesystem::path& dir) {
    auto set = defaults();
    if (!std::filesystem::is_directory(dir)) {
        throw TemplateError(fmt::format("prompt directory {} does not exist", dir.string()));
    }
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    const auto& allowed = allowed_placeholders();
    for (const auto& f : files) {
        const auto name = f.stem().string();
        const auto it = allowed.find(name);
        if (it == allowed.end()) throw TemplateError(fmt::format("{}: not a known prompt name", f.string()));
        auto text = read_text_file(f);
        for (const auto& p : template_placeholders(text)) {
            if (std::find(it->second.begin(), it->second.end(), p) == it->second.end()) {
                throw TemplateError(fmt::format("{}: placeholder {{{{{}}}}} is not available here", f.string(), p));
            }
        }
        set.texts_[name] = std::move(text);
    }
    return set;
}

const std::string& PromptSet::text(std::string_view name) const {
    const auto it = texts_.find(name);
    if (it == texts_.end()) throw TemplateError(fmt::format("no prompt named '{}'", name));
    return it->second;
}

std::string PromptSet::render(std::string_view name, const TemplateVars& vars) const {
    return render_template(text(name), vars);
}

std::string PromptSet::fingerprint() const {
    std::string all;
    for (const auto& [name, text] : texts_) {
        all += name;
        all += '\0';
        all += text;
        all += '\0';
    }
    return sha256_hex(all);
}

std::string context_block(std::string_view summary) {
    if (summary.empty()) return {};
    return fmt::format("Background: {}\n\n", summary);
}

}  // namespace biorag
