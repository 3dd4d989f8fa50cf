#include <gtest/gtest.h>

#include <sstream>

#include "biorag/cli.hpp"
#include "biorag/evaluation.hpp"
#include "fixture_support.hpp"
#include "test_support.hpp"

using namespace biorag;
using namespace biorag::testing;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string s(const std::filesystem::path& p) { return p.string(); }

// A built index, a question file and fixtures for a bare-query phase_a run.
struct Workspace {
    TempDir dir;
    std::filesystem::path index = dir / "corpus.idx";
    std::filesystem::path questions = dir / "questions.json";
    std::filesystem::path fixtures = dir / "fixtures.json";
    std::vector<Question> qs;

    Workspace() {
        const auto r = cli({"index", "build", "--corpus", s(test_data("corpus20.jsonl")), "--out", s(index)});
        EXPECT_EQ(r.code, 0) << r.err;
        qs = {make_question("q1", kCircQuestion, QuestionType::yesno),
              make_question("q2", "Which protein targets p53 for degradation?", QuestionType::factoid)};
        qs[0].gold_documents = std::vector<std::string>{"31000001", "31000002"};
        qs[0].gold_exact = YesNoAnswer{"yes"};
        qs[1].gold_documents = std::vector<std::string>{"31000006"};
        qs[1].gold_exact = FactoidAnswer{{{"MDM2"}}};
        write_text_file(questions, questions_to_json(qs).dump(2));

        const auto idx = InvertedIndex::load(index);
        const auto prompts = PromptSet::defaults();
        PipelineConfig cfg;
        cfg.phase = Phase::phase_a;
        cfg.shots.query = 0;
        PipelineResources res;
        res.prompts = &prompts;
        res.indices = {&idx};
        save_fixtures(fixtures, record_run(qs, cfg, res));
    }

    std::vector<std::string> run_args(const std::filesystem::path& out) const {
        return {"run", "--questions", s(questions), "--out", s(out), "--index", s(index),
                "--fixtures", s(fixtures), "--shots", "query=0"};
    }
};

}  // namespace

TEST(Cli, HelpDocumentsEveryKeyAndDefault) {
    const auto keys = cli_config_keys();
    ASSERT_GT(keys.size(), 40u);
    for (const auto& k : keys) {
        std::vector<std::string> args;
        std::stringstream ss(k.subcommand);
        for (std::string w; ss >> w;) args.push_back(w);
        args.push_back("--help");
        const auto r = cli(args);
        ASSERT_EQ(r.code, 0);
        const auto at = r.out.find("--" + k.name + " ");
        ASSERT_NE(at, std::string::npos) << k.subcommand << " --" << k.name;
        if (!k.default_value.empty()) {
            const auto line_end = r.out.find('\n', at);
            EXPECT_NE(r.out.substr(at, line_end - at).find("[" + k.default_value + "]"), std::string::npos)
                << k.subcommand << " --" << k.name << " default " << k.default_value;
        }
    }
    EXPECT_NE(cli({"--help"}).out.find("flags are off unless given"), std::string::npos);
}

TEST(Cli, UsageErrors) {
    EXPECT_EQ(cli({}).code, kExitUsage);
    EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
    EXPECT_EQ(cli({"eval", "a.json", "b.json", "--bogus"}).code, kExitUsage);
    EXPECT_EQ(cli({"run", "--questions", "q.json", "--out", "o.json", "--phase", "phase_c"}).code, kExitUsage);
    const auto r = cli({"run", "--questions", "q.json", "--out", "o.json", "--phase", "phase_a_plus", "--index",
                        "x.idx", "--fixtures", "f.json"});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("--snippet-source"), std::string::npos);
    EXPECT_EQ(cli({"run", "--questions", "q.json", "--out", "o.json", "--phase", "phase_a", "--index", "x.idx"}).code,
              kExitUsage);  // mock provider without fixtures
}

TEST(Cli, IndexStatsSearchAndOverwrite) {
    Workspace w;
    const auto stats = cli({"index", "stats", "--index", s(w.index)});
    EXPECT_EQ(stats.code, 0);
    EXPECT_NE(stats.out.find("documents: 20"), std::string::npos);
    const auto hits = cli({"search", "--index", s(w.index), "--query", "CFTR OR ivacaftor", "--operator", "or"});
    EXPECT_EQ(hits.code, 0);
    EXPECT_NE(hits.out.find("  1  "), std::string::npos);
    EXPECT_EQ(cli({"search", "--index", s(w.index), "--query", "(unclosed"}).code, kExitUsage);
    const auto again = cli({"index", "build", "--corpus", s(test_data("corpus20.jsonl")), "--out", s(w.index)});
    EXPECT_EQ(again.code, kExitUsage);
    EXPECT_NE(again.err.find("--force"), std::string::npos);
    EXPECT_EQ(cli({"index", "build", "--corpus", s(test_data("corpus20.jsonl")), "--out", s(w.index), "--force"}).code,
              0);
}

TEST(Cli, RunEvalValidate) {
    Workspace w;
    const auto run_file = w.dir / "run.json";
    const auto traces = w.dir / "traces";
    auto args = w.run_args(run_file);
    args.insert(args.end(), {"--traces", s(traces), "--parallelism", "2"});
    const auto r = cli(args);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(traces / "q1.json"));
    const auto run = load_run_file(run_file, w.qs);
    EXPECT_EQ(run.questions.size(), 2u);

    const auto v = cli({"validate", s(run_file), "--questions", s(w.questions), "--index", s(w.index)});
    EXPECT_EQ(v.code, 0) << v.out;

    const auto e = cli({"eval", s(run_file), s(w.questions), "--json", s(w.dir / "report.json")});
    EXPECT_EQ(e.code, 0) << e.err;
    EXPECT_NE(e.out.find("Documents"), std::string::npos);
    EXPECT_NE(e.out.find("GMAP"), std::string::npos);
    EXPECT_TRUE(read_json_file(w.dir / "report.json").contains("documents"));

    // the same run file is not overwritten by accident
    EXPECT_EQ(cli(w.run_args(run_file)).code, kExitUsage);

    auto broken = run;
    broken.questions[0].documents = std::vector<std::string>{"x y"};
    write_text_file(w.dir / "broken.json", serialize_run(broken));
    EXPECT_EQ(cli({"validate", s(w.dir / "broken.json")}).code, kExitRunError);
    EXPECT_EQ(cli({"eval", s(w.dir / "broken.json"), s(w.questions)}).code, kExitRunError);
}

TEST(Cli, MissingFixtureIsRunError) {
    Workspace w;
    write_text_file(w.fixtures, "{}");
    const auto r = cli(w.run_args(w.dir / "run.json"));
    EXPECT_EQ(r.code, kExitRunError);
    EXPECT_FALSE(std::filesystem::exists(w.dir / "run.json"));
}

TEST(Cli, ConfigFileUnderFlags) {
    Workspace w;
    // the file asks for another model, whose fixtures do not exist
    const auto conf = w.dir.write("run.conf", "[run]\nmodel=other-model\nparallelism=3\n");
    auto args = w.run_args(w.dir / "a.json");
    args.insert(args.end(), {"--config", s(conf)});
    EXPECT_EQ(cli(args).code, kExitRunError);
    args = w.run_args(w.dir / "b.json");
    args.insert(args.end(), {"--config", s(conf), "--model", "mock"});
    EXPECT_EQ(cli(args).code, 0);
}

TEST(Cli, ExampleCommands) {
    Workspace w;
    auto training = w.qs;
    Snippet sn = make_snippet(*InvertedIndex::load(w.index).find("31000001"), Section::abstract, 0, 10);
    training[0].gold_snippets = std::vector<Snippet>{sn};
    training[0].gold_ideal = "Exon circRNAs form by back splicing.";
    write_text_file(w.dir / "training.json", questions_to_json(training).dump());
    const auto r = cli({"sample-examples", "--training", s(w.dir / "training.json"), "--index", s(w.index), "--out",
                        s(w.dir / "examples"), "--kinds", "snippet_extraction", "yesno_qa"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(w.dir / "examples" / "yesno_qa.jsonl"));

    write_text_file(w.dir / "cands.json", R"({"queries": [{"id": "q1", "query": "circRNA"}, {"id": "q2", "query": "p53"}]})");
    const auto sel = cli({"select-query-examples", "--training", s(w.dir / "training.json"), "--candidates",
                          s(w.dir / "cands.json"), "--index", s(w.index), "--out", s(w.dir / "query.jsonl"), "--k",
                          "1"});
    ASSERT_EQ(sel.code, 0) << sel.err;
    EXPECT_EQ(load_example_set(w.dir / "query.jsonl", ExampleKind::query_generation).records.size(), 1u);
}
