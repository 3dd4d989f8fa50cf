#pragma once

// A deterministic stand-in for a chat model. It recognises each stage by its
// prompt wording and answers with fixed, sometimes deliberately messy output.

#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "biorag/corpus.hpp"
#include "biorag/llm.hpp"

namespace biorag::testing {

inline const std::string kCircQuestion =
    "Is CircRNA produced by back splicing of exon, intron or both, forming exon or intron circRNA?";

inline bool contains(std::string_view hay, std::string_view needle) { return hay.find(needle) != std::string_view::npos; }

inline std::string bare_query_for(std::string_view prompt) {
    if (contains(prompt, "CircRNA")) return "(circRNA OR \"circular RNA\") AND (splicing OR exon OR intron)";
    if (contains(prompt, "p53")) return "p53 AND (degradation OR ubiquitin)";
    if (contains(prompt, "PARP")) return "PARP AND (ovarian OR olaparib)";
    if (contains(prompt, "cystic fibrosis")) return "\"cystic fibrosis\" OR CFTR";
    if (contains(prompt, "microexon")) return "microexons AND neuronal";
    return "zzzunknownterm";
}

inline std::string envelope_for(std::string_view prompt) {
    nlohmann::ordered_json j;
    j["query"]["query_string"]["query"] = bare_query_for(prompt);
    j["query"]["query_string"]["default_operator"] = "and";
    j["query"]["query_string"]["fields"] = {"title^10", "abstract"};
    j["size"] = 50;
    return "```json\n" + j.dump(2) + "\n```";
}

/// First sentence of the abstract shown in an extraction prompt.
inline std::string first_sentence(std::string_view prompt) {
    const auto at = prompt.find("\nAbstract: ");
    if (at == std::string_view::npos) return {};
    auto abs = prompt.substr(at + 11);
    const auto stop = abs.find(". ");
    return std::string(stop == std::string_view::npos ? abs : abs.substr(0, stop + 1));
}

inline std::string title_of(std::string_view prompt) {
    const auto at = prompt.find("\nTitle: ");
    if (at == std::string_view::npos) return {};
    auto rest = prompt.substr(at + 8);
    return std::string(rest.substr(0, rest.find('\n')));
}

inline std::string scripted_reply(std::span<const ChatMessage> messages, const GenerationParams&) {
    const std::string& p = messages.back().content;
    if (contains(p, "Wikipedia articles that offer")) {
        return "Step 1: these exist.\nStep 2:\n- #Circular RNA# explains the molecule.\n"
               "- #RNA splicing# covers the mechanism.\n- #Backsplice Atlas Project# may help.\n";
    }
    if (contains(p, "Summarize the Wikipedia articles")) return "Circular RNA forms when a splice donor joins an upstream acceptor.";
    if (contains(p, "query_string query type")) return envelope_for(p);
    if (contains(p, "returned no documents")) return "splicing";
    if (contains(p, "Return only the query string")) return bare_query_for(p);
    if (contains(p, "Extract the passages")) {
        // one verbatim sentence, one with mangled spacing, one invented
        const auto title = title_of(p);
        std::string spaced = title;
        if (const auto sp = spaced.find(' '); sp != std::string::npos) spaced.replace(sp, 1, "  \n ");
        return nlohmann::json{{"snippets", {first_sentence(p), spaced, "This sentence does not appear anywhere."}}}.dump();
    }
    if (contains(p, "numbered snippets")) {
        std::size_t n = 0;
        while (contains(p, fmt::format("\n[{}] ", n))) ++n;
        std::vector<long long> picks;
        for (std::size_t i = n; i > 0; --i) picks.push_back(static_cast<long long>(i - 1));
        picks.push_back(99);
        picks.push_back(0);
        return nlohmann::json{{"selected", picks}}.dump();
    }
    if (contains(p, "Answer with \"yes\" or \"no\"")) return "Yes, because back splicing joins exons.";
    if (contains(p, "List up to 5 candidate")) {
        return nlohmann::json{{"answer", {"MDM2", "MDM4", "COP1", "PIRH2", "ARF-BP1", "CHIP", "TRIM24"}}}.dump();
    }
    if (contains(p, "List every entity")) {
        std::vector<std::string> many;
        for (int i = 0; i < 250; ++i) many.push_back(fmt::format("entity {}", i));
        return nlohmann::json{{"answer", many}}.dump();
    }
    if (contains(p, "Write one short paragraph")) {
        std::string text;
        for (int i = 0; i < 300; ++i) text += (i % 40 == 39) ? "word\n\n" : "word ";
        return text;
    }
    return "unrecognised prompt";
}

inline Question make_question(std::string id, std::string body, QuestionType type) {
    Question q;
    q.id = std::move(id);
    q.body = std::move(body);
    q.qtype = type;
    return q;
}

}  // namespace biorag::testing
