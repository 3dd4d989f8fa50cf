#include "biorag/stages.hpp"

#include <fmt/format.h>

namespace biorag {

using nlohmann::json;

std::string_view to_string(QueryMode mode) { return mode == QueryMode::envelope ? "envelope" : "bare"; }

std::string snippet_list_block(std::span<const std::string> texts) {
    std::string out;
    for (const auto& t : texts) {
        if (!out.empty()) out += '\n';
        out += "- ";
        out += t;
    }
    return out;
}

std::string numbered_snippet_block(std::span<const std::string> texts) {
    std::string out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (i) out += '\n';
        out += fmt::format("[{}] {}", i, texts[i]);
    }
    return out;
}

ChatMessage query_prompt(const PromptSet& prompts, QueryMode mode, std::string_view question,
                         std::string_view context) {
    const auto name = mode == QueryMode::envelope ? prompt::query_envelope : prompt::query_string;
    return {Role::user, prompts.render(name, {{"context", context_block(context)}, {"question", std::string(question)}})};
}

ChatMessage improve_query_prompt(const PromptSet& prompts, std::string_view question, std::string_view failed_query,
                                 std::string_view context) {
    return {Role::user, prompts.render(prompt::query_improve, {{"context", context_block(context)},
                                                               {"question", std::string(question)},
                                                               {"query", std::string(failed_query)}})};
}

ChatMessage extraction_prompt(const PromptSet& prompts, std::string_view question, const Document& doc,
                              std::string_view context) {
    return {Role::user, prompts.render(prompt::snippet_extraction, {{"context", context_block(context)},
                                                                    {"question", std::string(question)},
                                                                    {"title", doc.title},
                                                                    {"abstract", doc.abstract}})};
}

ChatMessage rerank_prompt(const PromptSet& prompts, std::string_view question, std::span<const std::string> texts,
                          std::size_t max_selected, std::string_view context) {
    return {Role::user, prompts.render(prompt::snippet_rerank, {{"context", context_block(context)},
                                                                {"question", std::string(question)},
                                                                {"snippets", numbered_snippet_block(texts)},
                                                                {"max", std::to_string(max_selected)}})};
}

ChatMessage answer_prompt(const PromptSet& prompts, QuestionType type, std::string_view question,
                          std::span<const std::string> snippet_texts, std::string_view context) {
    std::string_view name;
    switch (type) {
    case QuestionType::yesno: name = prompt::answer_yesno; break;
    case QuestionType::factoid: name = prompt::answer_factoid; break;
    case QuestionType::list: name = prompt::answer_list; break;
    case QuestionType::summary: name = prompt::answer_summary; break;
    }
    return {Role::user, prompts.render(name, {{"context", context_block(context)},
                                              {"question", std::string(question)},
                                              {"snippets", snippet_list_block(snippet_texts)}})};
}

std::string snippets_completion(std::span<const std::string> texts) {
    return json{{"snippets", std::vector<std::string>(texts.begin(), texts.end())}}.dump();
}

std::string rerank_completion(std::span<const std::size_t> indices) {
    return json{{"selected", std::vector<std::size_t>(indices.begin(), indices.end())}}.dump();
}

std::string entities_completion(std::span<const std::string> entities) {
    return json{{"answer", std::vector<std::string>(entities.begin(), entities.end())}}.dump();
}

namespace {

const json* list_field(const json& j, const char* key) {
    if (j.is_array()) return &j;
    if (j.is_object() && j.contains(key) && j[key].is_array()) return &j[key];
    return nullptr;
}

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

}  // namespace

std::optional<std::vector<std::string>> parse_snippet_list(const json& j) {
    const auto* list = list_field(j, "snippets");
    if (!list) return std::nullopt;
    std::vector<std::string> out;
    for (const auto& e : *list) {
        if (!e.is_string()) return std::nullopt;
        out.push_back(e.get<std::string>());
    }
    return out;
}

std::optional<std::vector<std::size_t>> parse_selection(const json& j) {
    const auto* list = list_field(j, "selected");
    if (!list) return std::nullopt;
    std::vector<std::size_t> out;
    for (const auto& e : *list) {
        if (e.is_number_unsigned()) {
            out.push_back(e.get<std::size_t>());
        } else if (e.is_number_integer()) {
            if (e.get<long long>() < 0) continue;  // never a valid index
            out.push_back(static_cast<std::size_t>(e.get<long long>()));
        } else {
            return std::nullopt;
        }
    }
    return out;
}

std::optional<std::vector<std::string>> parse_entities(const json& j) {
    const auto* list = list_field(j, "answer");
    if (!list) return std::nullopt;
    std::vector<std::string> out;
    for (const auto& e : *list) {
        std::string value;
        if (e.is_string()) {
            value = e.get<std::string>();
        } else if (e.is_array() && !e.empty() && e[0].is_string()) {
            value = e[0].get<std::string>();
        } else {
            return std::nullopt;
        }
        value = trim(value);
        if (!value.empty()) out.push_back(std::move(value));
    }
    return out;
}

std::optional<std::string> parse_yesno(std::string_view completion) {
    std::string text(completion);
    if (const auto j = extract_json(completion); j && j->is_object() && j->contains("answer") &&
                                                 (*j)["answer"].is_string()) {
        text = (*j)["answer"].get<std::string>();
    }
    std::string word;
    for (const char raw : text) {
        char c = raw;
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
        const bool letter = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
        if (letter) {
            word.push_back(c);
        } else if (!word.empty()) {
            break;
        }
    }
    if (word == "yes" || word == "no") return word;
    return std::nullopt;
}

std::optional<std::string> parse_query_completion(std::string_view completion, DefaultOperator op) {
    auto accept = [&](std::string candidate) -> std::optional<std::string> {
        for (auto& c : candidate) {
            if (c == '\n' || c == '\r' || c == '\t') c = ' ';
        }
        candidate = trim(candidate);
        if (candidate.empty()) return std::nullopt;
        try {
            parse_query_string(candidate, op);
            return candidate;
        } catch (const QueryParseError&) {
            return std::nullopt;
        }
    };

    auto text = trim(completion);
    // backticks are plain characters to the lexer, so strip them up front
    if (const auto fence = text.find("```"); fence != std::string::npos) {
        const auto body = text.find('\n', fence);
        const auto close = body == std::string::npos ? body : text.find("```", body);
        if (close != std::string::npos) text = trim(text.substr(body + 1, close - body - 1));
    }
    if (text.size() >= 2 && text.front() == '`' && text.back() == '`') text = trim(text.substr(1, text.size() - 2));
    if (auto q = accept(text)) return q;

    std::vector<std::string> alternatives;
    if (text.size() >= 2 && text.front() == '\'' && text.back() == '\'') {
        alternatives.push_back(text.substr(1, text.size() - 2));
    }
    if (const auto j = json::parse(text, nullptr, false); !j.is_discarded()) {
        if (j.is_string()) alternatives.push_back(j.get<std::string>());
        if (j.is_object()) {
            if (j.contains("query") && j["query"].is_string()) alternatives.push_back(j["query"].get<std::string>());
            const auto p = json::json_pointer("/query/query_string/query");
            if (j.contains(p) && j[p].is_string()) alternatives.push_back(j[p].get<std::string>());
        }
    }
    for (const auto* prefix : {"Query:", "query:", "QUERY:"}) {
        if (text.rfind(prefix, 0) == 0) alternatives.push_back(text.substr(std::string_view(prefix).size()));
    }
    for (auto& alt : alternatives) {
        if (auto q = accept(alt)) return q;
    }
    return std::nullopt;
}

std::optional<QueryEnvelope> parse_envelope_completion(std::string_view completion) {
    const auto j = extract_json(completion);
    if (!j || !j->is_object()) return std::nullopt;
    try {
        return parse_query_envelope(j->dump());
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

std::string normalize_ideal(std::string_view text, std::size_t max_words) {
    std::string out;
    std::size_t words = 0;
    std::size_t pos = 0;
    auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (pos < text.size() && words < max_words) {
        while (pos < text.size() && is_ws(text[pos])) ++pos;
        if (pos >= text.size()) break;
        const auto start = pos;
        while (pos < text.size() && !is_ws(text[pos])) ++pos;
        if (!out.empty()) out += ' ';
        out.append(text.substr(start, pos - start));
        ++words;
    }
    return out;
}

}  // namespace biorag
