#include "biorag/fewshot.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "biorag/stages.hpp"

namespace biorag {

using nlohmann::json;

namespace {

constexpr std::pair<ExampleKind, std::string_view> kKindNames[] = {
    {ExampleKind::query_generation, "query_generation"},
    {ExampleKind::snippet_extraction, "snippet_extraction"},
    {ExampleKind::snippet_rerank, "snippet_rerank"},
    {ExampleKind::summary_qa, "summary_qa"},
    {ExampleKind::yesno_qa, "yesno_qa"},
    {ExampleKind::factoid_qa, "factoid_qa"},
    {ExampleKind::list_qa, "list_qa"},
};

constexpr std::size_t kRerankMax = 10;
constexpr std::size_t kFactoidMax = 5;
constexpr std::size_t kListMax = 200;

std::vector<std::string> unique_texts(const std::vector<Snippet>& snippets) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& s : snippets) {
        if (s.text.empty()) continue;
        if (seen.insert(s.text).second) out.push_back(s.text);
    }
    return out;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (const unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

std::string_view to_string(ExampleKind kind) {
    for (const auto& [k, name] : kKindNames) {
        if (k == kind) return name;
    }
    return "unknown";
}

ExampleKind parse_example_kind(std::string_view name) {
    for (const auto& [k, n] : kKindNames) {
        if (n == name) return k;
    }
    throw std::invalid_argument(fmt::format("unknown example set '{}'", name));
}

ExampleKind answer_kind(QuestionType type) {
    switch (type) {
    case QuestionType::yesno: return ExampleKind::yesno_qa;
    case QuestionType::factoid: return ExampleKind::factoid_qa;
    case QuestionType::list: return ExampleKind::list_qa;
    case QuestionType::summary: return ExampleKind::summary_qa;
    }
    return ExampleKind::summary_qa;
}

std::filesystem::path example_path(const std::filesystem::path& dir, ExampleKind kind) {
    return dir / fmt::format("{}.jsonl", to_string(kind));
}

bool has_strict_alternation(std::span<const ChatMessage> messages) {
    std::size_t i = 0;
    if (!messages.empty() && messages[0].role == Role::system) i = 1;
    if (i == messages.size()) return false;
    for (std::size_t n = 0; i < messages.size(); ++i, ++n) {
        const auto want = n % 2 == 0 ? Role::user : Role::assistant;
        if (messages[i].role != want) return false;
    }
    return messages.back().role == Role::user;
}

void save_example_set(const std::filesystem::path& path, const ExampleSet& set) {
    std::string out;
    for (const auto& r : set.records) {
        std::vector<ChatMessage> all = r.prompt;
        all.push_back(r.completion);
        json line = {{"messages", messages_to_json(all)}};
        out += line.dump();
        out += '\n';
    }
    write_text_file(path, out);
}

ExampleSet load_example_set(const std::filesystem::path& path, ExampleKind kind) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ExampleError(fmt::format("cannot read {}", path.string()));
    ExampleSet set{kind, {}};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        auto fail = [&](std::string_view why) {
            return ExampleError(fmt::format("{}:{}: {}", path.string(), lineno, why));
        };
        const auto j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("messages")) throw fail("expected {\"messages\": [...]}");
        std::vector<ChatMessage> msgs;
        try {
            msgs = messages_from_json(j["messages"]);
        } catch (const std::exception& e) {
            throw fail(e.what());
        }
        if (msgs.size() < 2 || msgs.back().role != Role::assistant) throw fail("last message must be the assistant completion");
        ExampleRecord r;
        r.completion = msgs.back();
        msgs.pop_back();
        r.prompt = std::move(msgs);
        if (r.prompt.front().role == Role::system || !has_strict_alternation(r.prompt)) {
            throw fail("example turns must alternate user/assistant and carry no system turn");
        }
        set.records.push_back(std::move(r));
    }
    return set;
}

std::map<ExampleKind, ExampleSet> load_example_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ExampleError(fmt::format("{} is not a directory", dir.string()));
    std::map<ExampleKind, ExampleSet> out;
    for (const auto& [kind, name] : kKindNames) {
        const auto p = example_path(dir, kind);
        if (std::filesystem::exists(p)) out.emplace(kind, load_example_set(p, kind));
    }
    return out;
}

std::vector<ChatMessage> prepend_examples(const ExampleSet& set, std::size_t k, std::span<const ChatMessage> live) {
    if (k > set.records.size()) {
        throw ExampleError(fmt::format("{} examples requested but the {} set holds {}", k, to_string(set.kind),
                                       set.records.size()));
    }
    std::vector<ChatMessage> out;
    auto rest = live;
    if (!rest.empty() && rest.front().role == Role::system) {
        out.push_back(rest.front());
        rest = rest.subspan(1);
    }
    for (std::size_t i = 0; i < k; ++i) {
        const auto& r = set.records[i];
        out.insert(out.end(), r.prompt.begin(), r.prompt.end());
        out.push_back(r.completion);
    }
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    // mt19937_64 output is fixed by the standard; std::shuffle's use of it is not.
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng() % i);
        std::swap(p[i - 1], p[j]);
    }
    return p;
}

namespace {

struct Sampler {
    const DocumentLookup& documents;
    const PromptSet& prompts;
    std::uint64_t seed;

    static ExampleRecord record(ChatMessage user, std::string completion) {
        return {{std::move(user)}, {Role::assistant, std::move(completion)}};
    }

    std::optional<ExampleRecord> extraction(const Question& q) const {
        if (!documents || !q.gold_snippets) return std::nullopt;
        // first gold document present in the corpus with a verbatim snippet
        std::vector<std::string> order;
        for (const auto& s : *q.gold_snippets) {
            if (std::find(order.begin(), order.end(), s.doc_id) == order.end()) order.push_back(s.doc_id);
        }
        for (const auto& id : order) {
            const Document* doc = documents(id);
            if (!doc) continue;
            std::vector<std::string> texts;
            for (const auto& s : *q.gold_snippets) {
                if (s.doc_id != id || s.text.empty()) continue;
                if (doc->title.find(s.text) == std::string::npos && doc->abstract.find(s.text) == std::string::npos) continue;
                if (std::find(texts.begin(), texts.end(), s.text) == texts.end()) texts.push_back(s.text);
            }
            if (texts.empty()) continue;
            return record(extraction_prompt(prompts, q.body, *doc), snippets_completion(texts));
        }
        return std::nullopt;
    }

    std::optional<ExampleRecord> rerank(const Question& q) const {
        if (!q.gold_snippets) return std::nullopt;
        const auto gold = unique_texts(*q.gold_snippets);
        if (gold.empty()) return std::nullopt;
        // seed mixed with the question id so every question gets its own order
        const auto perm = seeded_permutation(gold.size(), seed ^ fnv1a(q.id));
        std::vector<std::string> shown(gold.size());
        std::vector<std::size_t> position(gold.size());
        for (std::size_t slot = 0; slot < perm.size(); ++slot) {
            shown[slot] = gold[perm[slot]];
            position[perm[slot]] = slot;
        }
        const auto keep = std::min(gold.size(), kRerankMax);
        std::vector<std::size_t> selected(position.begin(), position.begin() + static_cast<std::ptrdiff_t>(keep));
        return record(rerank_prompt(prompts, q.body, shown, kRerankMax), rerank_completion(selected));
    }

    std::optional<ExampleRecord> answer(const Question& q, ExampleKind kind) const {
        if (answer_kind(q.qtype) != kind || !q.gold_snippets) return std::nullopt;
        const auto texts = unique_texts(*q.gold_snippets);
        if (texts.empty()) return std::nullopt;
        const auto prompt = answer_prompt(prompts, q.qtype, q.body, texts);
        switch (kind) {
        case ExampleKind::summary_qa: {
            if (!q.gold_ideal) return std::nullopt;
            auto ideal = normalize_ideal(*q.gold_ideal, 200);
            if (ideal.empty()) return std::nullopt;
            return record(prompt, std::move(ideal));
        }
        case ExampleKind::yesno_qa: {
            if (!q.gold_exact) return std::nullopt;
            const auto* yn = std::get_if<YesNoAnswer>(&*q.gold_exact);
            if (!yn || (yn->value != "yes" && yn->value != "no")) return std::nullopt;
            return record(prompt, yn->value);
        }
        case ExampleKind::factoid_qa:
        case ExampleKind::list_qa: {
            if (!q.gold_exact) return std::nullopt;
            const std::vector<Synonyms>* entities = nullptr;
            if (const auto* f = std::get_if<FactoidAnswer>(&*q.gold_exact)) entities = &f->entities;
            if (const auto* l = std::get_if<ListAnswer>(&*q.gold_exact)) entities = &l->entities;
            if (!entities) return std::nullopt;
            const auto cap = kind == ExampleKind::factoid_qa ? kFactoidMax : kListMax;
            std::vector<std::string> names;
            for (const auto& syn : *entities) {
                if (names.size() == cap) break;
                if (!syn.empty() && !syn.front().empty()) names.push_back(syn.front());
            }
            if (names.empty()) return std::nullopt;
            return record(prompt, entities_completion(names));
        }
        default: return std::nullopt;
        }
    }

    std::optional<ExampleRecord> build(const Question& q, ExampleKind kind) const {
        switch (kind) {
        case ExampleKind::snippet_extraction: return extraction(q);
        case ExampleKind::snippet_rerank: return rerank(q);
        case ExampleKind::query_generation: return std::nullopt;
        default: return answer(q, kind);
        }
    }
};

}  // namespace

std::vector<ExampleSet> sample_training_sets(std::span<const Question> training, const DocumentLookup& documents,
                                             const PromptSet& prompts, const SamplingOptions& options) {
    std::vector<ExampleKind> kinds = options.kinds;
    if (kinds.empty()) kinds.assign(std::begin(kSubProblems), std::end(kSubProblems));

    std::vector<std::size_t> order(training.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (options.shuffle) order = seeded_permutation(training.size(), options.seed);

    const Sampler sampler{documents, prompts, options.seed};
    std::vector<ExampleSet> out;
    for (const auto kind : kinds) {
        if (kind == ExampleKind::query_generation) {
            throw ExampleError("query_generation examples come from select-query-examples, not training sampling");
        }
        ExampleSet set{kind, {}};
        for (const auto i : order) {
            if (set.records.size() >= options.max_per_set) break;
            if (auto r = sampler.build(training[i], kind)) set.records.push_back(std::move(*r));
        }
        if (set.records.empty()) {
            throw ExampleError(fmt::format("no training question is eligible for {}", to_string(kind)));
        }
        out.push_back(std::move(set));
    }
    return out;
}

std::vector<QueryCandidate> load_query_candidates(const std::filesystem::path& path) {
    const auto j = read_json_file(path);
    const json* list = &j;
    if (j.is_object() && j.contains("queries")) list = &j["queries"];
    if (!list->is_array()) throw ExampleError(fmt::format("{}: expected a list of {{\"id\", \"query\"}}", path.string()));
    std::vector<QueryCandidate> out;
    for (const auto& e : *list) {
        if (!e.is_object() || !e.contains("id") || !e["id"].is_string() || !e.contains("query") || !e["query"].is_string()) {
            throw ExampleError(fmt::format("{}: every entry needs string fields id and query", path.string()));
        }
        out.push_back({e["id"].get<std::string>(), e["query"].get<std::string>()});
    }
    return out;
}

QuerySelection select_query_examples(std::span<const Question> questions, std::span<const QueryCandidate> candidates,
                                     std::span<const InvertedIndex* const> indices, const PromptSet& prompts,
                                     std::size_t k, const QuerySearchShape& shape) {
    std::map<std::string_view, const Question*> by_id;
    for (const auto& q : questions) by_id.emplace(q.id, &q);

    QuerySelection sel;
    sel.examples.kind = ExampleKind::query_generation;
    for (const auto& c : candidates) {
        ScoredCandidate sc{c.question_id, c.query, 0.0, std::nullopt};
        const auto it = by_id.find(c.question_id);
        if (it == by_id.end()) {
            sc.problem = "unknown question id";
        } else if (!it->second->gold_documents || it->second->gold_documents->empty()) {
            sc.problem = "question has no gold documents";
        } else {
            try {
                const auto ast = parse_query_string(c.query, shape.default_operator);
                const auto hits = search_all(indices, ast, shape.fields, shape.size);
                const std::set<std::string> gold(it->second->gold_documents->begin(), it->second->gold_documents->end());
                std::size_t overlap = 0;
                for (const auto& h : hits) overlap += gold.count(h.doc_id);
                if (overlap > 0) {
                    const double p = static_cast<double>(overlap) / static_cast<double>(hits.size());
                    const double r = static_cast<double>(overlap) / static_cast<double>(gold.size());
                    sc.f1 = 2 * p * r / (p + r);
                }
            } catch (const QueryParseError& e) {
                sc.problem = fmt::format("unparseable query: {}", e.what());
            }
        }
        sel.ranking.push_back(std::move(sc));
    }
    std::stable_sort(sel.ranking.begin(), sel.ranking.end(), [](const auto& a, const auto& b) {
        if (a.f1 != b.f1) return a.f1 > b.f1;
        return a.question_id < b.question_id;
    });
    for (const auto& sc : sel.ranking) {
        if (sel.examples.records.size() == k) break;
        const auto it = by_id.find(sc.question_id);
        if (it == by_id.end() || sc.problem) continue;
        sel.examples.records.push_back(
            {{query_prompt(prompts, QueryMode::bare, it->second->body)}, {Role::assistant, sc.query}});
    }
    return sel;
}

}  // namespace biorag
