#include <gtest/gtest.h>

#include <random>

#include "biorag/prompts.hpp"
#include "biorag/stages.hpp"
#include "test_support.hpp"

using namespace biorag;
using biorag::testing::TempDir;
using biorag::testing::slurp;
using biorag::testing::test_data;
using nlohmann::json;

TEST(Template, ReplacesPlaceholders) {
    EXPECT_EQ(render_template("a {{x}} b {{y}}{{x}}", {{"x", "1"}, {"y", "2"}}), "a 1 b 21");
    EXPECT_EQ(render_template("no vars", {}), "no vars");
    EXPECT_EQ(render_template("open {{ only", {}), "open {{ only");
}

TEST(Template, ValuesAreNotExpandedAgain) {
    EXPECT_EQ(render_template("Q: {{question}}", {{"question", "what is {{question}}?"}}), "Q: what is {{question}}?");
}

TEST(Template, UnknownPlaceholderThrows) {
    EXPECT_THROW(render_template("{{nope}}", {{"x", "1"}}), TemplateError);
}

TEST(Template, PlaceholdersInFirstUseOrder) {
    EXPECT_EQ(template_placeholders("{{b}} {{a}} {{b}}"), (std::vector<std::string>{"b", "a"}));
}

TEST(Prompts, QueryExpansionPromptIsVerbatim) {
    const auto p = PromptSet::defaults();
    const auto expected = slurp(test_data("query_expansion_prompt.txt"));
    EXPECT_EQ(p.render(prompt::query_envelope, {{"context", ""}, {"question", "{{question}}"}}), expected);
    EXPECT_EQ(p.text(prompt::query_envelope), "{{context}}" + expected);
}

TEST(Prompts, KnowledgeBasePromptIsVerbatim) {
    const auto p = PromptSet::defaults();
    EXPECT_EQ(p.text(prompt::wiki_titles), slurp(test_data("kb_titles_prompt.txt")));
}

TEST(Prompts, DefaultsRespectAllowedPlaceholders) {
    const auto p = PromptSet::defaults();
    for (const auto& [name, allowed] : PromptSet::allowed_placeholders()) {
        for (const auto& ph : template_placeholders(p.text(name))) {
            EXPECT_NE(std::find(allowed.begin(), allowed.end(), ph), allowed.end()) << name << " uses " << ph;
        }
    }
}

TEST(Prompts, OverridesReplaceText) {
    TempDir dir;
    dir.write("answer_yesno.txt", "Q={{question}} S={{snippets}}{{context}}");
    const auto p = PromptSet::with_overrides(dir.path());
    EXPECT_EQ(p.text(prompt::answer_yesno), "Q={{question}} S={{snippets}}{{context}}");
    EXPECT_EQ(p.text(prompt::answer_list), PromptSet::defaults().text(prompt::answer_list));
    EXPECT_NE(p.fingerprint(), PromptSet::defaults().fingerprint());
}

TEST(Prompts, OverrideErrors) {
    {
        TempDir dir;
        dir.write("made_up.txt", "x");
        EXPECT_THROW(PromptSet::with_overrides(dir.path()), TemplateError);
    }
    {
        TempDir dir;
        dir.write("wiki_titles.txt", "{{question}} {{snippets}}");
        EXPECT_THROW(PromptSet::with_overrides(dir.path()), TemplateError);
    }
    EXPECT_THROW(PromptSet::with_overrides("/nonexistent/prompt/dir"), TemplateError);
}

TEST(Prompts, ContextBlock) {
    EXPECT_EQ(context_block(""), "");
    EXPECT_EQ(context_block("CRISPR is a tool."), "Background: CRISPR is a tool.\n\n");
}

TEST(Stages, ContextSitsBeforeSnippetsOnce) {
    const auto p = PromptSet::defaults();
    const std::vector<std::string> snippets = {"alpha", "beta"};
    for (auto t : {QuestionType::yesno, QuestionType::factoid, QuestionType::list, QuestionType::summary}) {
        const auto m = answer_prompt(p, t, "Q?", snippets, "BG");
        const auto bg = m.content.find("Background: BG");
        ASSERT_NE(bg, std::string::npos);
        EXPECT_EQ(m.content.find("Background:", bg + 1), std::string::npos);
        EXPECT_LT(bg, m.content.find("- alpha\n- beta"));
        EXPECT_EQ(answer_prompt(p, t, "Q?", snippets).content.find("Background"), std::string::npos);
    }
}

TEST(Stages, SnippetBlocks) {
    const std::vector<std::string> t = {"a", "b c"};
    EXPECT_EQ(snippet_list_block(t), "- a\n- b c");
    EXPECT_EQ(numbered_snippet_block(t), "[0] a\n[1] b c");
    EXPECT_EQ(numbered_snippet_block({}), "");
}

TEST(Stages, ExtractionPromptShowsDocument) {
    const Document d{"1", "Title T", "Abstract A."};
    const auto m = extraction_prompt(PromptSet::defaults(), "Why?", d);
    EXPECT_EQ(m.role, Role::user);
    EXPECT_NE(m.content.find("Title T"), std::string::npos);
    EXPECT_NE(m.content.find("Abstract A."), std::string::npos);
}

TEST(Stages, CompletionsRoundTripThroughParsers) {
    const std::vector<std::string> texts = {"x \"quoted\"", "ü"};
    EXPECT_EQ(parse_snippet_list(json::parse(snippets_completion(texts))), texts);
    const std::vector<std::size_t> idx = {3, 0, 1};
    EXPECT_EQ(parse_selection(json::parse(rerank_completion(idx))), idx);
    EXPECT_EQ(parse_entities(json::parse(entities_completion(texts))), texts);
}

TEST(Stages, ParsersAcceptBareArrays) {
    EXPECT_EQ(parse_snippet_list(json::parse(R"(["a","b"])")), (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(parse_selection(json::parse("[2, -1, 0]")), (std::vector<std::size_t>{2, 0}));
    EXPECT_EQ(parse_entities(json::parse(R"([["TP53","p53"], " BRCA1 ", ""])")),
              (std::vector<std::string>{"TP53", "BRCA1"}));
    EXPECT_FALSE(parse_snippet_list(json::parse(R"({"other": []})")));
    EXPECT_FALSE(parse_selection(json::parse(R"(["one"])")));
    EXPECT_FALSE(parse_entities(json::parse("[3]")));
}

TEST(Stages, YesNoParsing) {
    EXPECT_EQ(parse_yesno("Yes."), "yes");
    EXPECT_EQ(parse_yesno("  NO, because"), "no");
    EXPECT_EQ(parse_yesno(R"({"answer": "yes"})"), "yes");
    EXPECT_EQ(parse_yesno("**No**"), "no");
    EXPECT_FALSE(parse_yesno("Probably yes"));
    EXPECT_FALSE(parse_yesno("yesterday"));
    EXPECT_FALSE(parse_yesno(""));
}

TEST(Stages, QueryCompletionUnwrapping) {
    const auto op = DefaultOperator::and_op;
    EXPECT_EQ(parse_query_completion("  aspirin OR \"acetylsalicylic acid\"\n", op), "aspirin OR \"acetylsalicylic acid\"");
    EXPECT_EQ(parse_query_completion("```\n(tp53 OR p53) AND cancer\n```", op), "(tp53 OR p53) AND cancer");
    EXPECT_EQ(parse_query_completion("`circRNA splicing`", op), "circRNA splicing");
    EXPECT_EQ(parse_query_completion(R"({"query": "x OR y"})", op), "x OR y");
    EXPECT_EQ(parse_query_completion(R"({"query": {"query_string": {"query": "x y"}}})", op), "x y");
    EXPECT_EQ(parse_query_completion("Query: gene therapy", op), "gene therapy");
    EXPECT_FALSE(parse_query_completion("title:aspirin", op));
    EXPECT_FALSE(parse_query_completion("", op));
    EXPECT_FALSE(parse_query_completion("(unclosed", op));
}

TEST(Stages, EnvelopeCompletion) {
    const auto env = parse_envelope_completion(slurp(test_data("circrna_envelope.json")));
    ASSERT_TRUE(env);
    EXPECT_EQ(env->size, 50u);
    const auto wrapped = parse_envelope_completion("Here you go:\n```json\n" +
                                                   slurp(test_data("circrna_envelope.json")) + "\n```");
    ASSERT_TRUE(wrapped);
    EXPECT_EQ(wrapped->query_text, env->query_text);
    EXPECT_FALSE(parse_envelope_completion("not json"));
    EXPECT_FALSE(parse_envelope_completion(R"({"query": {"query_string": {"query": "(a"}}})"));
}

TEST(Stages, NormalizeIdeal) {
    EXPECT_EQ(normalize_ideal("  a\n\nb\t c  ", 200), "a b c");
    EXPECT_EQ(normalize_ideal("one two three", 2), "one two");
    EXPECT_EQ(normalize_ideal("", 5), "");
}

TEST(Stages, NormalizeIdealWordBoundProperty) {
    std::mt19937_64 rng(7);
    const char alphabet[] = "ab \n\t";
    for (int iter = 0; iter < 500; ++iter) {
        std::string s;
        const auto len = biorag::testing::pick(rng, 80);
        for (std::size_t i = 0; i < len; ++i) s += alphabet[biorag::testing::pick(rng, 5)];
        const auto cap = biorag::testing::pick(rng, 10);
        const auto out = normalize_ideal(s, cap);
        std::size_t words = out.empty() ? 0 : 1;
        for (char c : out) {
            ASSERT_TRUE(c == 'a' || c == 'b' || c == ' ');
            words += c == ' ';
        }
        ASSERT_LE(words, cap);
        ASSERT_EQ(normalize_ideal(out, cap), out);
    }
}
