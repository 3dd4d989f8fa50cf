#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "biorag/fewshot.hpp"
#include "biorag/stages.hpp"
#include "test_support.hpp"

using namespace biorag;
using biorag::testing::TempDir;
using biorag::testing::pick;
using nlohmann::json;

namespace {

const std::vector<Document>& docs() {
    static const std::vector<Document> d = {
        {"100", "Aspirin and platelets", "Aspirin inhibits platelet aggregation. It is widely used."},
        {"200", "TP53 in cancer", "TP53 is mutated in many tumours. Loss of p53 drives growth."},
        {"300", "Circular RNA", "CircRNA is produced by back splicing. Exons are joined."},
    };
    return d;
}

DocumentLookup lookup() {
    return [](std::string_view id) -> const Document* {
        for (const auto& d : docs()) {
            if (d.doc_id == id) return &d;
        }
        return nullptr;
    };
}

Snippet snip(std::string doc, std::string text) {
    Snippet s;
    s.doc_id = std::move(doc);
    s.text = std::move(text);
    return s;
}

Question q(std::string id, QuestionType t) {
    Question x;
    x.id = std::move(id);
    x.body = "Question " + x.id + "?";
    x.qtype = t;
    x.gold_snippets = std::vector<Snippet>{snip("100", "Aspirin inhibits platelet aggregation."),
                                           snip("200", "TP53 is mutated in many tumours."),
                                           snip("300", "CircRNA is produced by back splicing.")};
    switch (t) {
    case QuestionType::yesno: x.gold_exact = YesNoAnswer{"yes"}; break;
    case QuestionType::factoid: x.gold_exact = FactoidAnswer{{{"TP53", "p53"}, {"MDM2"}}}; break;
    case QuestionType::list: x.gold_exact = ListAnswer{{{"exon"}, {"intron", "introns"}}}; break;
    case QuestionType::summary: x.gold_ideal = "Back splicing\n makes circRNA."; break;
    }
    return x;
}

std::vector<Question> training() {
    return {q("y1", QuestionType::yesno),   q("l1", QuestionType::list),    q("y2", QuestionType::yesno),
            q("f1", QuestionType::factoid), q("s1", QuestionType::summary), q("y3", QuestionType::yesno),
            q("l2", QuestionType::list)};
}

const ExampleSet& find_set(const std::vector<ExampleSet>& sets, ExampleKind k) {
    for (const auto& s : sets) {
        if (s.kind == k) return s;
    }
    throw std::runtime_error("missing set");
}

ExampleSet numbered_set(std::size_t n) {
    ExampleSet s{ExampleKind::query_generation, {}};
    for (std::size_t i = 0; i < n; ++i) {
        s.records.push_back({{{Role::user, "u" + std::to_string(i + 1)}}, {Role::assistant, "a" + std::to_string(i + 1)}});
    }
    return s;
}

}  // namespace

TEST(ExampleKinds, SixSubProblemsAndNames) {
    EXPECT_EQ(std::size(kSubProblems), 6u);
    for (auto k : kSubProblems) EXPECT_EQ(parse_example_kind(to_string(k)), k);
    EXPECT_EQ(parse_example_kind("query_generation"), ExampleKind::query_generation);
    EXPECT_THROW(parse_example_kind("bogus"), std::invalid_argument);
}

TEST(Sampling, CountsPerType) {
    const auto t = training();
    const auto sets = sample_training_sets(t, lookup(), PromptSet::defaults());
    ASSERT_EQ(sets.size(), 6u);
    EXPECT_EQ(find_set(sets, ExampleKind::yesno_qa).records.size(), 3u);
    EXPECT_EQ(find_set(sets, ExampleKind::list_qa).records.size(), 2u);
    EXPECT_EQ(find_set(sets, ExampleKind::factoid_qa).records.size(), 1u);
    EXPECT_EQ(find_set(sets, ExampleKind::summary_qa).records.size(), 1u);
    EXPECT_EQ(find_set(sets, ExampleKind::snippet_extraction).records.size(), 7u);
    EXPECT_EQ(find_set(sets, ExampleKind::snippet_rerank).records.size(), 7u);
}

TEST(Sampling, Deterministic) {
    const auto t = training();
    SamplingOptions o;
    o.seed = 99;
    o.shuffle = true;
    EXPECT_EQ(sample_training_sets(t, lookup(), PromptSet::defaults(), o),
              sample_training_sets(t, lookup(), PromptSet::defaults(), o));
}

TEST(Sampling, FactoidWithoutExactAnswerExcluded) {
    auto t = training();
    auto extra = q("f2", QuestionType::factoid);
    extra.gold_exact.reset();
    t.push_back(extra);
    const auto sets = sample_training_sets(t, lookup(), PromptSet::defaults());
    const auto& f = find_set(sets, ExampleKind::factoid_qa);
    ASSERT_EQ(f.records.size(), 1u);
    EXPECT_NE(f.records[0].prompt[0].content.find("Question f1?"), std::string::npos);
}

TEST(Sampling, ZeroEligibleNamesTheSubProblem) {
    std::vector<Question> t = {q("y1", QuestionType::yesno)};
    try {
        sample_training_sets(t, lookup(), PromptSet::defaults());
        FAIL() << "expected an error";
    } catch (const ExampleError& e) {
        EXPECT_NE(std::string(e.what()).find("summary_qa"), std::string::npos);
    }
    SamplingOptions o;
    o.kinds = {ExampleKind::yesno_qa};
    EXPECT_EQ(sample_training_sets(t, lookup(), PromptSet::defaults(), o).size(), 1u);
    o.kinds = {ExampleKind::snippet_extraction};
    EXPECT_THROW(sample_training_sets(t, DocumentLookup{}, PromptSet::defaults(), o), ExampleError);
}

TEST(Sampling, KeepsFirstNInInputOrder) {
    const auto t = training();
    SamplingOptions o;
    o.max_per_set = 2;
    o.kinds = {ExampleKind::yesno_qa};
    const auto sets = sample_training_sets(t, lookup(), PromptSet::defaults(), o);
    ASSERT_EQ(sets[0].records.size(), 2u);
    EXPECT_NE(sets[0].records[0].prompt[0].content.find("Question y1?"), std::string::npos);
    EXPECT_NE(sets[0].records[1].prompt[0].content.find("Question y2?"), std::string::npos);
}

TEST(Sampling, CompletionsFromGold) {
    const auto t = training();
    const auto sets = sample_training_sets(t, lookup(), PromptSet::defaults());
    EXPECT_EQ(find_set(sets, ExampleKind::yesno_qa).records[0].completion.content, "yes");
    EXPECT_EQ(json::parse(find_set(sets, ExampleKind::factoid_qa).records[0].completion.content),
              json::parse(R"({"answer":["TP53","MDM2"]})"));
    EXPECT_EQ(json::parse(find_set(sets, ExampleKind::list_qa).records[0].completion.content),
              json::parse(R"({"answer":["exon","intron"]})"));
    EXPECT_EQ(find_set(sets, ExampleKind::summary_qa).records[0].completion.content, "Back splicing makes circRNA.");
    // extraction uses the first gold document found in the corpus
    const auto& ex = find_set(sets, ExampleKind::snippet_extraction).records[0];
    EXPECT_NE(ex.prompt[0].content.find("Aspirin and platelets"), std::string::npos);
    EXPECT_EQ(json::parse(ex.completion.content), json::parse(R"({"snippets":["Aspirin inhibits platelet aggregation."]})"));
}

TEST(Sampling, ExtractionSkipsSnippetsNotInTheDocument) {
    auto x = q("s9", QuestionType::summary);
    x.gold_snippets = std::vector<Snippet>{snip("100", "not in the article"), snip("404", "missing doc"),
                                           snip("200", "Loss of p53 drives growth.")};
    std::vector<Question> t = {x};
    SamplingOptions o;
    o.kinds = {ExampleKind::snippet_extraction};
    const auto sets = sample_training_sets(t, lookup(), PromptSet::defaults(), o);
    EXPECT_EQ(json::parse(sets[0].records[0].completion.content), json::parse(R"({"snippets":["Loss of p53 drives growth."]})"));
}

TEST(Sampling, ExtractionCompletionsAreVerbatimProperty) {
    std::mt19937_64 rng(5);
    const std::vector<std::string> words = {"gene", "cell", "p53", "ü", "of", "the", "RNA"};
    for (int iter = 0; iter < 100; ++iter) {
        std::vector<Document> corpus;
        for (int d = 0; d < 4; ++d) {
            std::string abs;
            for (std::size_t i = 0, n = 3 + pick(rng, 20); i < n; ++i) abs += words[pick(rng, words.size())] + " ";
            corpus.push_back({std::to_string(d), words[pick(rng, words.size())], abs});
        }
        const DocumentLookup look = [&](std::string_view id) -> const Document* {
            for (const auto& d : corpus) {
                if (d.doc_id == id) return &d;
            }
            return nullptr;
        };
        Question x = q("r" + std::to_string(iter), QuestionType::summary);
        std::vector<Snippet> gold;
        for (int s = 0; s < 5; ++s) {
            const auto& d = corpus[pick(rng, corpus.size())];
            // half verbatim slices, half random text
            if (pick(rng, 2) == 0) {
                // cut on code point starts so the slice stays valid UTF-8
                std::vector<std::size_t> cuts;
                for (std::size_t i = 0; i <= d.abstract.size(); ++i) {
                    if (i == d.abstract.size() || (static_cast<unsigned char>(d.abstract[i]) & 0xC0) != 0x80) cuts.push_back(i);
                }
                const auto b = pick(rng, cuts.size() - 1);
                const auto e = b + 1 + pick(rng, cuts.size() - 1 - b);
                gold.push_back(snip(d.doc_id, d.abstract.substr(cuts[b], cuts[e] - cuts[b])));
            } else {
                gold.push_back(snip(d.doc_id, words[pick(rng, words.size())] + " zz"));
            }
        }
        x.gold_snippets = gold;
        std::vector<Question> t = {x};
        SamplingOptions o;
        o.kinds = {ExampleKind::snippet_extraction};
        try {
            const auto sets = sample_training_sets(t, look, PromptSet::defaults(), o);
            const auto& r = sets[0].records[0];
            const auto texts = parse_snippet_list(json::parse(r.completion.content));
            ASSERT_TRUE(texts);
            ASSERT_FALSE(texts->empty());
            const Document* src = nullptr;
            for (const auto& d : corpus) {
                if (r.prompt[0].content.find(d.abstract) != std::string::npos) src = &d;
            }
            ASSERT_NE(src, nullptr);
            for (const auto& s : *texts) {
                ASSERT_TRUE(src->title.find(s) != std::string::npos || src->abstract.find(s) != std::string::npos) << s;
            }
        } catch (const ExampleError&) {
            // no verbatim snippet at all: nothing may be emitted
            for (const auto& s : gold) {
                const auto* d = look(s.doc_id);
                ASSERT_TRUE(d->title.find(s.text) == std::string::npos && d->abstract.find(s.text) == std::string::npos);
            }
        }
    }
}

TEST(Sampling, RerankCompletionRecoversGoldOrder) {
    const auto t = training();
    SamplingOptions o;
    o.kinds = {ExampleKind::snippet_rerank};
    for (std::uint64_t seed : {0ull, 1ull, 12345ull}) {
        o.seed = seed;
        const auto sets = sample_training_sets(t, lookup(), PromptSet::defaults(), o);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const auto& r = sets[0].records[i];
            const auto sel = parse_selection(json::parse(r.completion.content));
            ASSERT_TRUE(sel);
            ASSERT_EQ(sel->size(), 3u);
            // "[k] text" lines in the prompt, looked up independently
            for (std::size_t g = 0; g < sel->size(); ++g) {
                const auto line = "[" + std::to_string((*sel)[g]) + "] " + (*t[i].gold_snippets)[g].text;
                EXPECT_NE(r.prompt[0].content.find(line), std::string::npos) << line;
            }
        }
    }
}

TEST(Permutation, IsAPermutationAndSeedStable) {
    for (std::size_t n : {0u, 1u, 2u, 7u, 50u}) {
        for (std::uint64_t seed : {0ull, 3ull, 77ull}) {
            auto p = seeded_permutation(n, seed);
            EXPECT_EQ(p, seeded_permutation(n, seed));
            std::sort(p.begin(), p.end());
            for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(p[i], i);
        }
    }
    EXPECT_NE(seeded_permutation(50, 1), seeded_permutation(50, 2));
}

TEST(ExampleFiles, RoundTrip) {
    TempDir dir;
    const auto sets = sample_training_sets(training(), lookup(), PromptSet::defaults());
    for (const auto& s : sets) save_example_set(example_path(dir.path(), s.kind), s);
    const auto loaded = load_example_dir(dir.path());
    ASSERT_EQ(loaded.size(), 6u);
    for (const auto& s : sets) EXPECT_EQ(loaded.at(s.kind), s);
    // one JSON object per line
    const auto text = biorag::testing::slurp(example_path(dir.path(), ExampleKind::yesno_qa));
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
    EXPECT_EQ(json::parse(text.substr(0, text.find('\n')))["messages"].size(), 2u);
}

TEST(ExampleFiles, MalformedLines) {
    TempDir dir;
    const auto bad = [&](std::string_view body) {
        const auto p = dir.write("x.jsonl", body);
        EXPECT_THROW(load_example_set(p, ExampleKind::yesno_qa), ExampleError) << body;
    };
    bad("not json\n");
    bad(R"({"messages": [{"role": "user", "content": "q"}]})");
    bad(R"({"messages": [{"role": "user", "content": "q"}, {"role": "user", "content": "a"}]})");
    bad(R"({"messages": [{"role": "system", "content": "s"}, {"role": "user", "content": "q"}, {"role": "assistant", "content": "a"}]})");
    bad(R"({"messages": [{"role": "wizard", "content": "q"}, {"role": "assistant", "content": "a"}]})");
    EXPECT_THROW(load_example_set(dir / "absent.jsonl", ExampleKind::yesno_qa), ExampleError);
    const auto ok = dir.write("ok.jsonl", "\n" R"({"messages": [{"role": "user", "content": "q"}, {"role": "assistant", "content": "a"}]})" "\n\n");
    EXPECT_EQ(load_example_set(ok, ExampleKind::yesno_qa).records.size(), 1u);
}

TEST(Prepend, ZeroShotIsIdentity) {
    const std::vector<ChatMessage> live = {{Role::system, "s"}, {Role::user, "live"}};
    EXPECT_EQ(prepend_examples(numbered_set(3), 0, live), live);
}

TEST(Prepend, TwoShot) {
    const std::vector<ChatMessage> live = {{Role::user, "live"}};
    const auto m = prepend_examples(numbered_set(3), 2, live);
    std::vector<std::string> contents;
    for (const auto& x : m) contents.push_back(x.content);
    EXPECT_EQ(contents, (std::vector<std::string>{"u1", "a1", "u2", "a2", "live"}));
}

TEST(Prepend, TenShotWithSystemTurn) {
    const std::vector<ChatMessage> live = {{Role::system, "s"}, {Role::user, "live"}};
    const auto m = prepend_examples(numbered_set(12), 10, live);
    EXPECT_EQ(m.size(), 22u);
    EXPECT_EQ(m.front().role, Role::system);
    EXPECT_EQ(m.back().content, "live");
    const auto no_sys = prepend_examples(numbered_set(12), 10, std::span(live).subspan(1));
    EXPECT_EQ(no_sys.size(), 21u);
}

TEST(Prepend, TooManyRequested) {
    const std::vector<ChatMessage> live = {{Role::user, "live"}};
    EXPECT_THROW(prepend_examples(numbered_set(2), 3, live), ExampleError);
}

TEST(Prepend, AlternationProperty) {
    std::mt19937_64 rng(11);
    for (int iter = 0; iter < 300; ++iter) {
        ExampleSet s{ExampleKind::snippet_rerank, {}};
        const auto n = pick(rng, 12);
        for (std::size_t i = 0; i < n; ++i) {
            ExampleRecord r;
            // multi-turn prompts: u (a u)*
            r.prompt.push_back({Role::user, "u"});
            for (std::size_t extra = pick(rng, 3); extra > 0; --extra) {
                r.prompt.push_back({Role::assistant, "a"});
                r.prompt.push_back({Role::user, "u"});
            }
            r.completion = {Role::assistant, "c"};
            s.records.push_back(r);
        }
        std::vector<ChatMessage> live;
        if (pick(rng, 2)) live.push_back({Role::system, "sys"});
        live.push_back({Role::user, "live"});
        const auto m = prepend_examples(s, pick(rng, n + 1), live);
        ASSERT_TRUE(has_strict_alternation(m));
        ASSERT_EQ(m.back().content, "live");
    }
}

TEST(Alternation, Checker) {
    using V = std::vector<ChatMessage>;
    EXPECT_TRUE(has_strict_alternation(V{{Role::user, ""}}));
    EXPECT_TRUE(has_strict_alternation(V{{Role::system, ""}, {Role::user, ""}}));
    EXPECT_FALSE(has_strict_alternation(V{}));
    EXPECT_FALSE(has_strict_alternation(V{{Role::system, ""}}));
    EXPECT_FALSE(has_strict_alternation(V{{Role::user, ""}, {Role::assistant, ""}}));
    EXPECT_FALSE(has_strict_alternation(V{{Role::user, ""}, {Role::user, ""}}));
    EXPECT_FALSE(has_strict_alternation(V{{Role::user, ""}, {Role::system, ""}, {Role::user, ""}}));
}

namespace {

struct SelectionFixture {
    std::vector<Document> corpus;
    InvertedIndex index;
    std::vector<Question> questions;

    SelectionFixture() : corpus(make_corpus()), index(InvertedIndex::build(corpus, AnalyzerConfig{})) {
        auto add = [&](std::string id, std::vector<std::string> gold) {
            Question x;
            x.id = std::move(id);
            x.body = "body of " + x.id;
            x.gold_documents = std::move(gold);
            questions.push_back(std::move(x));
        };
        add("q1", {"d1", "x1"});
        add("q2", {"d1", "x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8", "x9"});
        add("q3", {"d2", "x1"});
        add("q4", {"d1"});
    }

    static std::vector<Document> make_corpus() {
        // alpha in d1..d3, beta in d1..d10
        std::vector<Document> c;
        for (int i = 1; i <= 10; ++i) {
            c.push_back({"d" + std::to_string(i), i <= 3 ? "alpha beta" : "beta", "filler text"});
        }
        return c;
    }

    QuerySelection run(std::span<const QueryCandidate> cands, std::size_t k) const {
        const InvertedIndex* idx[] = {&index};
        return select_query_examples(questions, cands, idx, PromptSet::defaults(), k);
    }
};

}  // namespace

TEST(QuerySelection, TopKByF1TieBreakById) {
    const SelectionFixture f;
    // hand values: q1 3 hits, 1 of 2 gold -> P 1/3 R 1/2 F1 0.4; q2 10 hits, 1 of 10 gold -> 0.1; q3 as q1
    const std::vector<QueryCandidate> c = {{"q3", "alpha"}, {"q2", "beta"}, {"q1", "alpha"}};
    const auto sel = f.run(c, 2);
    ASSERT_EQ(sel.ranking.size(), 3u);
    EXPECT_EQ(sel.ranking[0].question_id, "q1");
    EXPECT_EQ(sel.ranking[1].question_id, "q3");
    EXPECT_EQ(sel.ranking[2].question_id, "q2");
    EXPECT_NEAR(sel.ranking[0].f1, 0.4, 1e-12);
    EXPECT_NEAR(sel.ranking[1].f1, 0.4, 1e-12);
    EXPECT_NEAR(sel.ranking[2].f1, 0.1, 1e-12);
    ASSERT_EQ(sel.examples.records.size(), 2u);
    EXPECT_EQ(sel.examples.kind, ExampleKind::query_generation);
    EXPECT_EQ(sel.examples.records[0].completion.content, "alpha");
    EXPECT_EQ(sel.examples.records[0].prompt[0],
              query_prompt(PromptSet::defaults(), QueryMode::bare, "body of q1"));
    EXPECT_EQ(sel.examples.records[1].prompt[0].content.find("body of q3") != std::string::npos, true);
}

TEST(QuerySelection, KLargerThanCandidates) {
    const SelectionFixture f;
    const std::vector<QueryCandidate> c = {{"q2", "beta"}, {"q1", "alpha"}};
    const auto sel = f.run(c, 10);
    ASSERT_EQ(sel.examples.records.size(), 2u);
    EXPECT_EQ(sel.examples.records[0].completion.content, "alpha");
    EXPECT_EQ(sel.examples.records[1].completion.content, "beta");
}

TEST(QuerySelection, ZeroHitsAndUnparseable) {
    const SelectionFixture f;
    const std::vector<QueryCandidate> c = {{"q1", "gamma"}, {"q3", "alpha AND (beta"}, {"q4", "alpha"}, {"q9", "alpha"}};
    const auto sel = f.run(c, 10);
    ASSERT_EQ(sel.ranking.size(), 4u);
    // q4: 3 hits, 1 gold found -> P 1/3 R 1 -> F1 0.5
    EXPECT_EQ(sel.ranking[0].question_id, "q4");
    EXPECT_NEAR(sel.ranking[0].f1, 0.5, 1e-12);
    for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(sel.ranking[i].f1, 0.0);
    EXPECT_EQ(sel.ranking[1].question_id, "q1");
    EXPECT_FALSE(sel.ranking[1].problem);
    EXPECT_EQ(sel.ranking[2].question_id, "q3");
    ASSERT_TRUE(sel.ranking[2].problem);
    EXPECT_NE(sel.ranking[2].problem->find("unparseable"), std::string::npos);
    EXPECT_TRUE(sel.ranking[3].problem);
    // problem candidates never become examples
    EXPECT_EQ(sel.examples.records.size(), 2u);
}

TEST(QuerySelection, Deterministic) {
    const SelectionFixture f;
    std::vector<QueryCandidate> c = {{"q3", "alpha"}, {"q2", "beta"}, {"q1", "alpha"}, {"q4", "beta OR alpha"}};
    const auto a = f.run(c, 3);
    std::reverse(c.begin(), c.end());
    const auto b = f.run(c, 3);
    EXPECT_EQ(a.examples, b.examples);
}

TEST(QuerySelection, CandidateFileFormats) {
    TempDir dir;
    const auto a = dir.write("a.json", R"({"queries": [{"id": "q1", "query": "x"}]})");
    const auto b = dir.write("b.json", R"([{"id": "q1", "query": "x"}, {"id": "q2", "query": "y z"}])");
    EXPECT_EQ(load_query_candidates(a).size(), 1u);
    EXPECT_EQ(load_query_candidates(b)[1].query, "y z");
    const auto c = dir.write("c.json", R"([{"id": 1, "query": "x"}])");
    EXPECT_THROW(load_query_candidates(c), ExampleError);
}
