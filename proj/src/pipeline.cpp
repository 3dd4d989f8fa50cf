#include "biorag/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "biorag/unicode.hpp"

namespace biorag {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(Phase phase) {
    switch (phase) {
    case Phase::synergy: return "synergy";
    case Phase::phase_a: return "phase_a";
    case Phase::phase_a_plus: return "phase_a_plus";
    case Phase::phase_b: return "phase_b";
    }
    return "unknown";
}

Phase parse_phase(std::string_view name) {
    for (auto p : {Phase::synergy, Phase::phase_a, Phase::phase_a_plus, Phase::phase_b}) {
        if (to_string(p) == name) return p;
    }
    throw std::invalid_argument(fmt::format("unknown phase '{}' (synergy, phase_a, phase_a_plus, phase_b)", name));
}

std::size_t PipelineConfig::query_shots() const {
    if (shots.query) return *shots.query;
    return phase == Phase::synergy ? 2 : 10;
}

namespace {

bool retrieves(Phase p) { return p == Phase::synergy || p == Phase::phase_a; }
bool answers(Phase p) { return p != Phase::phase_a; }

void need_examples(const PipelineResources& r, ExampleKind kind, std::size_t shots) {
    if (shots == 0) return;
    const auto it = r.examples.find(kind);
    const std::size_t have = it == r.examples.end() ? 0 : it->second.records.size();
    if (have < shots) {
        throw PipelineConfigError(fmt::format("{} shots requested for {} but only {} examples are loaded", shots,
                                              to_string(kind), have));
    }
}

}  // namespace

void check_pipeline(std::span<const Question> questions, const PipelineConfig& config,
                    const PipelineResources& r) {
    if (!r.provider) throw PipelineConfigError("no language model provider configured");
    if (!r.prompts) throw PipelineConfigError("no prompt set configured");
    if (config.parallelism == 0) throw PipelineConfigError("parallelism must be at least 1");
    if (config.retrieval_size == 0 || config.retrieval_size > kDocumentCap) {
        throw PipelineConfigError(fmt::format("retrieval size must be between 1 and {}", kDocumentCap));
    }
    if (config.snippet_cap == 0 || config.snippet_cap > kSnippetCap) {
        throw PipelineConfigError(fmt::format("snippet cap must be between 1 and {}", kSnippetCap));
    }
    if (config.ideal_words == 0) throw PipelineConfigError("ideal answer word cap must be positive");
    if (config.bare_fields.empty()) throw PipelineConfigError("no search fields for bare queries");
    for (const auto& f : config.bare_fields) {
        try {
            parse_field(f.field);
        } catch (const std::invalid_argument& e) {
            throw PipelineConfigError(e.what());
        }
    }
    if (retrieves(config.phase)) {
        if (r.indices.empty()) throw PipelineConfigError(fmt::format("{} needs at least one index", to_string(config.phase)));
        need_examples(r, ExampleKind::query_generation, config.query_shots());
        need_examples(r, ExampleKind::snippet_extraction, config.shots.extraction);
        need_examples(r, ExampleKind::snippet_rerank, config.shots.rerank);
    }
    if (answers(config.phase)) {
        for (const auto& q : questions) need_examples(r, answer_kind(q.qtype), config.shots.answer);
        // summary examples also drive the ideal answer of every other type
        if (!questions.empty()) need_examples(r, ExampleKind::summary_qa, config.shots.answer);
    }
    if (config.phase == Phase::phase_a_plus && !r.snippet_source) {
        throw PipelineConfigError("phase_a_plus needs a snippet source run");
    }
    if (config.phase == Phase::phase_b) {
        const bool any = std::any_of(questions.begin(), questions.end(),
                                     [](const Question& q) { return q.gold_snippets.has_value(); });
        if (!questions.empty() && !any) throw PipelineConfigError("phase_b needs questions that carry gold snippets");
    }
    if (config.wiki && !r.kb) throw PipelineConfigError("knowledge-base context enabled without a knowledge base");
}

// ---- stages ------------------------------------------------------------------

std::vector<ChatMessage> compose_messages(const StageContext& ctx, ExampleKind kind, std::size_t shots,
                                          ChatMessage live) {
    std::vector<ChatMessage> turns;
    const auto& system = ctx.prompts.text(prompt::system);
    if (!system.empty()) turns.push_back({Role::system, system});
    turns.push_back(std::move(live));
    if (shots == 0) return turns;
    const auto it = ctx.examples.find(kind);
    if (it == ctx.examples.end()) throw PipelineConfigError(fmt::format("no {} examples loaded", to_string(kind)));
    return prepend_examples(it->second, shots, turns);
}

namespace {

GenerationParams with_format(GenerationParams p, ResponseFormat f) {
    p.response_format = f;
    return p;
}

bool fields_known(const std::vector<FieldSpec>& fields) {
    for (const auto& f : fields) {
        try {
            parse_field(f.field);
        } catch (const std::invalid_argument&) {
            return false;
        }
    }
    return true;
}

}  // namespace

QueryEnvelope generate_query(const StageContext& ctx, const Question& question, QueryMode mode, std::size_t shots,
                             const PipelineConfig& config) {
    auto msgs = compose_messages(ctx, ExampleKind::query_generation, shots,
                                 query_prompt(ctx.prompts, mode, question.body, ctx.background));
    if (mode == QueryMode::envelope) {
        return complete_validated(
            ctx.provider, std::move(msgs), with_format(ctx.params, ResponseFormat::structured),
            [](const std::string& text) -> std::optional<QueryEnvelope> {
                auto env = parse_envelope_completion(text);
                if (env && !fields_known(env->fields)) return std::nullopt;
                return env;
            },
            ctx.log);
    }
    const auto op = config.bare_operator;
    const auto text = complete_validated(
        ctx.provider, std::move(msgs), with_format(ctx.params, ResponseFormat::text),
        [op](const std::string& t) { return parse_query_completion(t, op); }, ctx.log);
    QueryEnvelope env;
    env.ast = parse_query_string(text, op);
    env.query_text = text;
    env.fields = config.bare_fields;
    env.default_operator = op;
    env.size = config.retrieval_size;
    return env;
}

namespace {

std::vector<SearchHit> filtered_search(std::span<const InvertedIndex* const> indices, const QueryAst& ast,
                                       const std::vector<FieldSpec>& fields, std::size_t size,
                                       const std::vector<std::string>& irrelevant, std::vector<std::string>& removed) {
    // ask for extra hits so that filtering still leaves `size`
    auto hits = search_all(indices, ast, fields, size + irrelevant.size());
    std::vector<SearchHit> kept;
    for (auto& h : hits) {
        if (std::find(irrelevant.begin(), irrelevant.end(), h.doc_id) != irrelevant.end()) {
            removed.push_back(h.doc_id);
        } else if (kept.size() < size) {
            kept.push_back(std::move(h));
        }
    }
    return kept;
}

}  // namespace

RetrievalResult retrieve_documents(const StageContext& ctx, const Question& question, const QueryEnvelope& envelope,
                                   std::span<const InvertedIndex* const> indices,
                                   const std::vector<std::string>& irrelevant, std::size_t size) {
    RetrievalResult out;
    const auto n = std::max<std::size_t>(1, std::min(size, envelope.size));
    out.hits = filtered_search(indices, envelope.ast, envelope.fields, n, irrelevant, out.removed);
    if (!out.hits.empty()) return out;

    out.retried = true;
    std::vector<ChatMessage> msgs;
    const auto& system = ctx.prompts.text(prompt::system);
    if (!system.empty()) msgs.push_back({Role::system, system});
    msgs.push_back(improve_query_prompt(ctx.prompts, question.body, envelope.query_text, ctx.background));
    const auto op = envelope.default_operator;
    try {
        out.improved_query = complete_validated(
            ctx.provider, std::move(msgs), with_format(ctx.params, ResponseFormat::text),
            [op](const std::string& t) { return parse_query_completion(t, op); }, ctx.log);
    } catch (const StructuredOutputError&) {
        return out;
    }
    const auto ast = parse_query_string(*out.improved_query, op);
    out.hits = filtered_search(indices, ast, envelope.fields, n, irrelevant, out.removed);
    return out;
}

namespace {

bool is_ws(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

/// Whitespace runs collapsed to one space, ends trimmed; `map[i]` is the byte
/// in `text` that produced normalized byte i.
std::string collapse(std::string_view text, std::vector<std::size_t>* map) {
    std::string out;
    bool pending = false;
    std::size_t pending_at = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (is_ws(text[i])) {
            if (!pending) pending_at = i;
            pending = true;
            continue;
        }
        if (pending && !out.empty()) {
            out += ' ';
            if (map) map->push_back(pending_at);
        }
        pending = false;
        out += text[i];
        if (map) map->push_back(i);
    }
    return out;
}

Snippet from_bytes(const Document& doc, Section section, std::size_t begin_byte, std::size_t end_byte) {
    const auto& text = section_text(doc, section);
    const auto begin = utf8::codepoint_count(std::string_view(text).substr(0, begin_byte));
    const auto end = begin + utf8::codepoint_count(std::string_view(text).substr(begin_byte, end_byte - begin_byte));
    return make_snippet(doc, section, begin, end);
}

}  // namespace

std::optional<Snippet> locate_snippet(const Document& doc, std::string_view candidate) {
    std::size_t a = 0;
    std::size_t b = candidate.size();
    while (a < b && is_ws(candidate[a])) ++a;
    while (b > a && is_ws(candidate[b - 1])) --b;
    const auto needle = candidate.substr(a, b - a);
    if (needle.empty()) return std::nullopt;

    for (auto section : {Section::title, Section::abstract}) {
        const auto& text = section_text(doc, section);
        if (const auto pos = text.find(needle); pos != std::string::npos) {
            return from_bytes(doc, section, pos, pos + needle.size());
        }
    }
    const auto norm_needle = collapse(needle, nullptr);
    for (auto section : {Section::title, Section::abstract}) {
        const auto& text = section_text(doc, section);
        std::vector<std::size_t> map;
        const auto norm = collapse(text, &map);
        const auto pos = norm.find(norm_needle);
        if (pos == std::string::npos) continue;
        const auto last = pos + norm_needle.size() - 1;
        return from_bytes(doc, section, map[pos], map[last] + 1);
    }
    return std::nullopt;
}

ExtractionResult extract_snippets(const StageContext& ctx, const Question& question, const Document& doc,
                                  std::size_t shots) {
    ExtractionResult out;
    auto msgs = compose_messages(ctx, ExampleKind::snippet_extraction, shots,
                                 extraction_prompt(ctx.prompts, question.body, doc, ctx.background));
    std::vector<std::string> candidates;
    try {
        candidates = complete_validated(
            ctx.provider, std::move(msgs), with_format(ctx.params, ResponseFormat::structured),
            [](const std::string& t) -> std::optional<std::vector<std::string>> {
                const auto j = extract_json(t);
                if (!j) return std::nullopt;
                return parse_snippet_list(*j);
            },
            ctx.log);
    } catch (const StructuredOutputError& e) {
        out.error = e.what();
        return out;
    } catch (const ProviderError& e) {
        out.error = e.what();
        return out;
    }
    for (const auto& c : candidates) {
        auto s = locate_snippet(doc, c);
        if (!s) {
            out.dropped.push_back({c, "not found in title or abstract"});
            continue;
        }
        const bool dup = std::any_of(out.snippets.begin(), out.snippets.end(), [&](const Snippet& x) {
            return x.section == s->section && x.begin == s->begin && x.end == s->end;
        });
        if (dup) {
            out.dropped.push_back({c, "duplicate"});
            continue;
        }
        out.snippets.push_back(std::move(*s));
    }
    return out;
}

std::vector<std::string> filter_documents_by_snippets(const std::vector<std::string>& docs,
                                                      const std::vector<Snippet>& snippets) {
    std::vector<std::string> out;
    for (const auto& d : docs) {
        const bool has = std::any_of(snippets.begin(), snippets.end(), [&](const Snippet& s) { return s.doc_id == d; });
        if (has) out.push_back(d);
    }
    return out;
}

std::vector<std::size_t> apply_selection(std::span<const std::size_t> picks, std::size_t count, std::size_t cap) {
    std::vector<std::size_t> out;
    for (const auto p : picks) {
        if (out.size() == cap) break;
        if (p >= count || std::find(out.begin(), out.end(), p) != out.end()) continue;
        out.push_back(p);
    }
    return out;
}

RerankResult rerank_snippets(const StageContext& ctx, const Question& question, const std::vector<Snippet>& snippets,
                             std::size_t shots, std::size_t cap) {
    RerankResult out;
    if (snippets.empty()) return out;
    std::vector<std::string> texts;
    for (const auto& s : snippets) texts.push_back(s.text);
    auto msgs = compose_messages(ctx, ExampleKind::snippet_rerank, shots,
                                 rerank_prompt(ctx.prompts, question.body, texts, cap, ctx.background));
    try {
        const auto picks = complete_validated(
            ctx.provider, std::move(msgs), with_format(ctx.params, ResponseFormat::structured),
            [](const std::string& t) -> std::optional<std::vector<std::size_t>> {
                const auto j = extract_json(t);
                if (!j) return std::nullopt;
                return parse_selection(*j);
            },
            ctx.log);
        out.selection = apply_selection(picks, snippets.size(), cap);
    } catch (const StructuredOutputError&) {
        out.fallback = true;
    } catch (const ProviderError&) {
        out.fallback = true;
    }
    if (out.fallback) {
        out.selection.clear();
        for (std::size_t i = 0; i < std::min(cap, snippets.size()); ++i) out.selection.push_back(i);
    }
    for (const auto i : out.selection) out.snippets.push_back(snippets[i]);
    return out;
}

std::vector<std::string> rerank_documents(const std::vector<Snippet>& ranked, const std::vector<std::string>& docs) {
    std::vector<std::string> out;
    for (const auto& s : ranked) {
        if (std::find(out.begin(), out.end(), s.doc_id) != out.end()) continue;
        if (std::find(docs.begin(), docs.end(), s.doc_id) == docs.end()) continue;
        out.push_back(s.doc_id);
    }
    for (const auto& d : docs) {
        if (std::find(out.begin(), out.end(), d) == out.end()) out.push_back(d);
    }
    return out;
}

ExactResult answer_exact(const StageContext& ctx, const Question& question, const std::vector<std::string>& snippets,
                         std::size_t shots) {
    ExactResult out;
    const auto kind = answer_kind(question.qtype);
    auto msgs = compose_messages(ctx, kind, shots,
                                 answer_prompt(ctx.prompts, question.qtype, question.body, snippets, ctx.background));
    if (question.qtype == QuestionType::yesno) {
        try {
            out.answer = YesNoAnswer{complete_validated(ctx.provider, std::move(msgs),
                                                        with_format(ctx.params, ResponseFormat::text),
                                                        [](const std::string& t) { return parse_yesno(t); }, ctx.log)};
        } catch (const std::exception& e) {
            if (dynamic_cast<const FixtureMissError*>(&e)) throw;
            out.answer = YesNoAnswer{"yes"};
            out.flag = fmt::format("fallback answer 'yes': {}", e.what());
        }
        return out;
    }
    const auto cap = question.qtype == QuestionType::factoid ? kFactoidCap : kListCap;
    std::vector<std::string> entities;
    try {
        entities = complete_validated(
            ctx.provider, std::move(msgs), with_format(ctx.params, ResponseFormat::structured),
            [](const std::string& t) -> std::optional<std::vector<std::string>> {
                const auto j = extract_json(t);
                if (!j) return std::nullopt;
                auto e = parse_entities(*j);
                if (e && e->empty()) return std::nullopt;
                return e;
            },
            ctx.log);
    } catch (const StructuredOutputError& e) {
        out.flag = fmt::format("no exact answer: {}", e.what());
        return out;
    } catch (const ProviderError& e) {
        out.flag = fmt::format("no exact answer: {}", e.what());
        return out;
    }
    std::vector<Synonyms> kept;
    for (auto& e : entities) {
        if (kept.size() == cap) break;
        const bool dup = std::any_of(kept.begin(), kept.end(), [&](const Synonyms& s) { return s.front() == e; });
        if (!dup) kept.push_back({std::move(e)});
    }
    if (question.qtype == QuestionType::factoid) {
        out.answer = FactoidAnswer{std::move(kept)};
    } else {
        out.answer = ListAnswer{std::move(kept)};
    }
    return out;
}

IdealResult answer_ideal(const StageContext& ctx, const Question& question, const std::vector<std::string>& snippets,
                         std::size_t shots, std::size_t max_words) {
    IdealResult out;
    // the ideal answer is a summary-style answer whatever the question type
    auto msgs = compose_messages(
        ctx, ExampleKind::summary_qa, shots,
        answer_prompt(ctx.prompts, QuestionType::summary, question.body, snippets, ctx.background));
    try {
        out.text = complete_validated(
            ctx.provider, std::move(msgs), with_format(ctx.params, ResponseFormat::text),
            [max_words](const std::string& t) -> std::optional<std::string> {
                auto s = normalize_ideal(t, max_words);
                if (s.empty()) return std::nullopt;
                return s;
            },
            ctx.log);
    } catch (const StructuredOutputError&) {
        out.flagged = true;
    } catch (const ProviderError&) {
        out.flagged = true;
    }
    return out;
}

// ---- whole run ---------------------------------------------------------------

namespace {

ojson calls_json(const CallLog& log) {
    ojson arr = ojson::array();
    for (const auto& c : log) {
        arr.push_back({{"fingerprint", c.fingerprint},
                       {"messages", messages_to_json(c.messages)},
                       {"completion", c.completion},
                       {"attempts", c.attempts}});
    }
    return arr;
}

ojson dropped_json(const std::vector<Dropped>& d) {
    ojson arr = ojson::array();
    for (const auto& x : d) arr.push_back({{"item", x.item}, {"reason", x.reason}});
    return arr;
}

ojson snippets_json(const std::vector<Snippet>& s) {
    ojson arr = ojson::array();
    for (const auto& x : s) arr.push_back(snippet_to_json(x));
    return arr;
}

class Stopwatch {
  public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    long long ms() const {
        return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

class QuestionRun {
  public:
    QuestionRun(const Question& q, const PipelineConfig& cfg, const PipelineResources& res, const DocumentLookup& docs)
        : q_(q), cfg_(cfg), res_(res), docs_(docs) {
        trace_["question_id"] = q.id;
        trace_["type"] = to_string(q.qtype);
        trace_["phase"] = to_string(cfg.phase);
        trace_["model"] = res.provider->model();
        trace_["prompts"] = res.prompts->fingerprint();
        trace_["stages"] = ojson::array();
        trace_["flags"] = ojson::array();
    }

    RunEntry run(bool& failed) {
        RunEntry entry{q_.id, {}, {}, {}, {}};
        failed = false;
        try {
            fill(entry);
        } catch (const FixtureMissError&) {
            throw;
        } catch (const std::exception& e) {
            failed = true;
            trace_["error"] = e.what();
            entry = RunEntry{q_.id, {}, {}, {}, {}};
            if (retrieves(cfg_.phase)) {
                entry.documents = std::vector<std::string>{};
                entry.snippets = std::vector<Snippet>{};
            }
        }
        return entry;
    }

    ojson take_trace() { return std::move(trace_); }

  private:
    StageContext context(CallLog* log) const {
        return StageContext{*res_.provider, *res_.prompts, res_.examples, cfg_.params, background_, log};
    }

    void stage(ojson s) { trace_["stages"].push_back(std::move(s)); }
    void flag(std::string f) { trace_["flags"].push_back(std::move(f)); }

    void enrich() {
        if (!cfg_.wiki) return;
        Stopwatch w;
        CallLog log;
        ojson s = {{"stage", "knowledge_base"}};
        try {
            const auto t = build_context(*res_.provider, *res_.kb, *res_.prompts, q_.id, q_.body,
                                         with_format(cfg_.params, ResponseFormat::text), cfg_.context_budget, &log);
            background_ = t.summary.summary;
            s["titles"] = t.titles;
            s["dropped"] = t.dropped;
            s["sources"] = t.summary.sources;
            s["summary"] = t.summary.summary;
        } catch (const FixtureMissError&) {
            throw;
        } catch (const std::exception& e) {
            // enrichment is optional; carry on without it
            s["error"] = e.what();
            flag("knowledge-base context unavailable");
        }
        s["calls"] = calls_json(log);
        s["elapsed_ms"] = w.ms();
        stage(std::move(s));
    }

    void fill(RunEntry& entry) {
        enrich();
        std::vector<Snippet> own;
        if (retrieves(cfg_.phase)) own = retrieve(entry);
        if (!answers(cfg_.phase)) return;
        if (cfg_.phase == Phase::synergy && !q_.answer_ready) {
            flag("not ready to answer");
            return;
        }
        answer(entry, answer_snippets(own));
    }

    std::vector<std::string> irrelevant_docs() const {
        if (cfg_.phase != Phase::synergy || !res_.feedback) return {};
        const auto it = res_.feedback->find(q_.id);
        if (it == res_.feedback->end()) return {};
        return it->second.irrelevant_documents;
    }

    std::vector<Snippet> retrieve(RunEntry& entry) {
        // query
        QueryEnvelope env;
        {
            Stopwatch w;
            CallLog log;
            ojson s = {{"stage", "query"}, {"mode", to_string(cfg_.query_mode())}, {"shots", cfg_.query_shots()}};
            try {
                env = generate_query(context(&log), q_, cfg_.query_mode(), cfg_.query_shots(), cfg_);
            } catch (...) {
                s["calls"] = calls_json(log);
                stage(std::move(s));
                throw;
            }
            s["query"] = env.query_text;
            s["envelope"] = json::parse(render_envelope(env));
            s["calls"] = calls_json(log);
            s["elapsed_ms"] = w.ms();
            stage(std::move(s));
        }
        // search
        std::vector<std::string> retrieved;
        {
            Stopwatch w;
            CallLog log;
            const auto irrelevant = irrelevant_docs();
            const auto r = retrieve_documents(context(&log), q_, env, res_.indices, irrelevant, cfg_.retrieval_size);
            ojson hits = ojson::array();
            for (const auto& h : r.hits) {
                hits.push_back({{"id", h.doc_id}, {"score", h.score}});
                retrieved.push_back(h.doc_id);
            }
            ojson s = {{"stage", "retrieval"}, {"hits", hits}, {"removed_by_feedback", r.removed}, {"retried", r.retried}};
            if (r.improved_query) s["improved_query"] = *r.improved_query;
            s["calls"] = calls_json(log);
            s["elapsed_ms"] = w.ms();
            stage(std::move(s));
        }
        // extraction, one document at a time
        std::vector<Snippet> extracted;
        {
            Stopwatch w;
            CallLog log;
            ojson per_doc = ojson::array();
            for (const auto& id : retrieved) {
                const Document* doc = docs_(id);
                ojson d = {{"doc", id}};
                if (!doc) {
                    d["error"] = "document text unavailable";
                    per_doc.push_back(std::move(d));
                    continue;
                }
                auto r = extract_snippets(context(&log), q_, *doc, cfg_.shots.extraction);
                drop_feedback_snippets(r);
                d["snippets"] = snippets_json(r.snippets);
                d["dropped"] = dropped_json(r.dropped);
                if (r.error) d["error"] = *r.error;
                per_doc.push_back(std::move(d));
                extracted.insert(extracted.end(), r.snippets.begin(), r.snippets.end());
            }
            stage({{"stage", "extraction"},
                   {"documents", per_doc},
                   {"calls", calls_json(log)},
                   {"elapsed_ms", w.ms()}});
        }
        const auto kept = filter_documents_by_snippets(retrieved, extracted);
        // rerank
        Stopwatch w;
        CallLog log;
        const auto rr = rerank_snippets(context(&log), q_, extracted, cfg_.shots.rerank, cfg_.snippet_cap);
        if (rr.fallback) flag("rerank fallback: first snippets in extraction order");
        auto docs = rerank_documents(rr.snippets, kept);
        if (docs.size() > kDocumentCap) docs.resize(kDocumentCap);
        stage({{"stage", "rerank"},
               {"candidates", extracted.size()},
               {"selection", rr.selection},
               {"fallback", rr.fallback},
               {"documents", docs},
               {"calls", calls_json(log)},
               {"elapsed_ms", w.ms()}});
        entry.documents = docs;
        entry.snippets = rr.snippets;
        return rr.snippets;
    }

    void drop_feedback_snippets(ExtractionResult& r) const {
        if (cfg_.phase != Phase::synergy || !res_.feedback) return;
        const auto it = res_.feedback->find(q_.id);
        if (it == res_.feedback->end()) return;
        const auto& bad = it->second.irrelevant_snippets;
        std::vector<Snippet> keep;
        for (auto& s : r.snippets) {
            const bool judged = std::any_of(bad.begin(), bad.end(), [&](const Snippet& b) {
                return b.doc_id == s.doc_id && b.section == s.section && b.begin == s.begin && b.end == s.end;
            });
            if (judged) {
                r.dropped.push_back({s.text, "marked irrelevant in feedback"});
            } else {
                keep.push_back(std::move(s));
            }
        }
        r.snippets = std::move(keep);
    }

    std::vector<std::string> answer_snippets(const std::vector<Snippet>& own) {
        std::vector<std::string> texts;
        auto add = [&](const std::string& t) {
            if (!t.empty() && std::find(texts.begin(), texts.end(), t) == texts.end()) texts.push_back(t);
        };
        std::string source;
        switch (cfg_.phase) {
        case Phase::phase_b:
            source = "gold";
            if (!q_.gold_snippets) throw std::runtime_error("question has no gold snippets");
            for (const auto& s : *q_.gold_snippets) add(s.text);
            break;
        case Phase::phase_a_plus: {
            source = "snippet source run";
            const auto* prior = res_.snippet_source->find(q_.id);
            if (prior && prior->snippets) {
                for (const auto& s : *prior->snippets) add(s.text);
            }
            break;
        }
        case Phase::synergy: {
            source = "feedback and retrieval";
            if (res_.feedback) {
                if (const auto it = res_.feedback->find(q_.id); it != res_.feedback->end()) {
                    for (const auto& s : it->second.relevant_snippets) add(s.text);
                }
            }
            for (const auto& s : own) add(s.text);
            break;
        }
        case Phase::phase_a: break;
        }
        if (texts.empty()) flag("answering without snippets");
        trace_["answer_snippets"] = {{"source", source}, {"texts", texts}};
        return texts;
    }

    void answer(RunEntry& entry, const std::vector<std::string>& texts) {
        if (q_.qtype != QuestionType::summary) {
            Stopwatch w;
            CallLog log;
            auto r = answer_exact(context(&log), q_, texts, cfg_.shots.answer);
            ojson s = {{"stage", "exact_answer"}, {"shots", cfg_.shots.answer}};
            if (r.answer) s["answer"] = exact_answer_to_json(*r.answer);
            if (r.flag) {
                s["flag"] = *r.flag;
                flag(*r.flag);
            }
            s["calls"] = calls_json(log);
            s["elapsed_ms"] = w.ms();
            stage(std::move(s));
            entry.exact_answer = std::move(r.answer);
        }
        Stopwatch w;
        CallLog log;
        auto r = answer_ideal(context(&log), q_, texts, cfg_.shots.answer, cfg_.ideal_words);
        if (r.flagged) flag("empty ideal answer");
        stage({{"stage", "ideal_answer"},
               {"answer", r.text},
               {"calls", calls_json(log)},
               {"elapsed_ms", w.ms()}});
        entry.ideal_answer = std::move(r.text);
    }

    const Question& q_;
    const PipelineConfig& cfg_;
    const PipelineResources& res_;
    const DocumentLookup& docs_;
    std::string background_;
    ojson trace_;
};

}  // namespace

PipelineOutput run_pipeline(std::span<const Question> questions, const PipelineConfig& config,
                            const PipelineResources& resources) {
    check_pipeline(questions, config, resources);
    const auto docs = document_lookup(resources.indices);

    const std::size_t n = questions.size();
    std::vector<RunEntry> entries(n);
    std::vector<ojson> traces(n);
    std::vector<char> failed(n, 0);

    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::exception_ptr fatal;
    std::mutex fatal_mutex;

    auto worker = [&] {
        while (!abort) {
            const auto i = next++;
            if (i >= n) return;
            try {
                QuestionRun qr(questions[i], config, resources, docs);
                bool f = false;
                entries[i] = qr.run(f);
                failed[i] = f;
                traces[i] = qr.take_trace();
            } catch (...) {
                std::lock_guard lock(fatal_mutex);
                if (!fatal) fatal = std::current_exception();
                abort = true;
            }
        }
    };

    const auto width = std::min(config.parallelism, std::max<std::size_t>(n, 1));
    if (width <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < width; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (fatal) std::rethrow_exception(fatal);

    PipelineOutput out;
    out.run.questions = std::move(entries);
    out.traces = std::move(traces);
    out.failed = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
    return out;
}

void write_traces(const std::filesystem::path& dir, std::span<const ojson> traces) {
    std::filesystem::create_directories(dir);
    for (const auto& t : traces) {
        std::string name = t.value("question_id", std::string("unknown"));
        for (auto& c : name) {
            const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                            c == '_' || c == '.';
            if (!ok) c = '_';
        }
        write_text_file(dir / (name + ".json"), t.dump(2) + "\n");
    }
}

}  // namespace biorag
