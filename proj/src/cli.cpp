#include "biorag/cli.hpp"

#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "biorag/evaluation.hpp"
#include "biorag/fewshot.hpp"
#include "biorag/index.hpp"
#include "biorag/pipeline.hpp"

namespace fs = std::filesystem;

namespace biorag {

namespace {

// Usage problems found after parsing (missing companions, existing outputs).
class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct IndexBuildOpts {
    std::string corpus, out, stopwords, stemmer = "porter";
    bool force = false;
};

struct SearchOpts {
    std::vector<std::string> indices;
    std::string query, fields = "title^10,abstract", op = "and";
    std::size_t size = 10;
};

struct SampleOpts {
    std::string training, out, prompts;
    std::vector<std::string> indices;
    std::vector<std::string> kinds;
    std::size_t max = 200;
    std::uint64_t seed = 0;
    bool shuffle = false, force = false;
};

struct SelectOpts {
    std::string training, candidates, out, prompts, fields = "title^10,abstract", op = "and";
    std::vector<std::string> indices;
    std::size_t k = 10, size = kDefaultResultSize;
    bool force = false;
};

struct RunOpts {
    std::string questions, out, phase = "phase_a", examples, feedback, snippet_source, shots, prompts, traces;
    std::vector<std::string> indices;
    bool wiki = false, force = false;
    std::string kb_fixtures, kb_endpoint = std::string(kWikipediaApi);
    std::size_t context_budget = kDefaultContextBudget;
    std::string provider = "mock", fixtures, model = "mock", endpoint, api_key_env = "OPENAI_API_KEY";
    double temperature = 0, rpm = 0;
    std::optional<std::int64_t> seed;
    std::size_t parallelism = 1, size = kDocumentCap, ideal_words = 200;
    std::string bare_fields = "title^10,abstract", bare_op = "and";
};

struct EvalOpts {
    std::string run, gold, json, system = "run";
    bool force = false;
};

struct ValidateOpts {
    std::string run, questions;
    std::vector<std::string> indices;
};

struct Opts {
    IndexBuildOpts build;
    std::string stats_index;
    SearchOpts search;
    SampleOpts sample;
    SelectOpts select;
    RunOpts run;
    EvalOpts eval;
    ValidateOpts validate;
};

struct Commands {
    CLI::App* index = nullptr;
    CLI::App* build = nullptr;
    CLI::App* stats = nullptr;
    CLI::App* search = nullptr;
    CLI::App* sample = nullptr;
    CLI::App* select = nullptr;
    CLI::App* run = nullptr;
    CLI::App* eval = nullptr;
    CLI::App* validate = nullptr;
};

Commands define(CLI::App& app, Opts& o) {
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "key=value file; [section] per subcommand, e.g. [run] or [index.build]");
    app.option_defaults()->always_capture_default();
    app.footer("Options without a bracketed default are unset; flags are off unless given.");
    Commands c;

    c.index = app.add_subcommand("index", "Build or inspect a search index");
    c.index->require_subcommand(1);
    c.build = c.index->add_subcommand("build", "Index a JSONL corpus");
    c.build->add_option("--corpus", o.build.corpus, "JSONL corpus, one {id,title,abstract} per line")->required();
    c.build->add_option("--out", o.build.out, "Index file to write")->required();
    c.build->add_option("--stopwords", o.build.stopwords, "Stop word file; empty for the built-in English list");
    c.build->add_option("--stemmer", o.build.stemmer, "porter or none")
        ->check(CLI::IsMember({"porter", "none"}));
    c.build->add_flag("--force", o.build.force, "Overwrite an existing index file");

    c.stats = c.index->add_subcommand("stats", "Print index statistics");
    c.stats->add_option("--index", o.stats_index, "Index file")->required();

    c.search = app.add_subcommand("search", "Run a query_string query against indices");
    c.search->add_option("--index", o.search.indices, "Index file (repeatable)")->required();
    c.search->add_option("--query", o.search.query, "Query string")->required();
    c.search->add_option("--fields", o.search.fields, "Comma-separated field^boost list");
    c.search->add_option("--operator", o.search.op, "Default operator: and or or");
    c.search->add_option("--size", o.search.size, "Hits to print");

    c.sample = app.add_subcommand("sample-examples", "Derive few-shot example sets from a training file");
    c.sample->add_option("--training", o.sample.training, "Training questions JSON")->required();
    c.sample->add_option("--index", o.sample.indices, "Index file for document text (repeatable)")->required();
    c.sample->add_option("--out", o.sample.out, "Directory for <kind>.jsonl files")->required();
    c.sample->add_option("--kinds", o.sample.kinds, "Example kinds; empty for all sub-problems");
    c.sample->add_option("--max", o.sample.max, "Records per set");
    c.sample->add_option("--seed", o.sample.seed, "Seed for --shuffle and rerank order");
    c.sample->add_flag("--shuffle", o.sample.shuffle, "Shuffle eligible questions before taking --max");
    c.sample->add_option("--prompts", o.sample.prompts, "Prompt override directory");
    c.sample->add_flag("--force", o.sample.force, "Overwrite existing example files");

    c.select = app.add_subcommand("select-query-examples", "Keep the best-scoring candidate queries as examples");
    c.select->add_option("--training", o.select.training, "Training questions JSON with gold documents")->required();
    c.select->add_option("--candidates", o.select.candidates, "Candidate queries JSON")->required();
    c.select->add_option("--index", o.select.indices, "Index file (repeatable)")->required();
    c.select->add_option("--out", o.select.out, "Example file to write (JSONL)")->required();
    c.select->add_option("--k", o.select.k, "Examples to keep");
    c.select->add_option("--fields", o.select.fields, "Fields the candidate queries search");
    c.select->add_option("--operator", o.select.op, "Default operator of the candidate queries");
    c.select->add_option("--size", o.select.size, "Documents retrieved per candidate");
    c.select->add_option("--prompts", o.select.prompts, "Prompt override directory");
    c.select->add_flag("--force", o.select.force, "Overwrite the output file");

    auto* r = c.run = app.add_subcommand("run", "Answer a question file");
    r->add_option("--questions", o.run.questions, "Questions JSON")->required();
    r->add_option("--out", o.run.out, "Run file to write")->required();
    r->add_option("--phase", o.run.phase, "synergy, phase_a, phase_a_plus or phase_b")
        ->check(CLI::IsMember({"synergy", "phase_a", "phase_a_plus", "phase_b"}));
    r->add_option("--index", o.run.indices, "Index file (repeatable; needed for retrieval phases)");
    r->add_option("--examples", o.run.examples, "Directory of <kind>.jsonl example sets");
    r->add_option("--shots", o.run.shots,
                  "Examples per stage as query=N,extraction=N,rerank=N,answer=N; empty query means 2 for synergy, "
                  "10 otherwise; others default to 0");
    r->add_option("--feedback", o.run.feedback, "Synergy feedback JSON");
    r->add_option("--snippet-source", o.run.snippet_source, "Run file whose snippets feed phase_a_plus answers");
    r->add_flag("--wiki", o.run.wiki, "Add a knowledge-base summary to every prompt");
    r->add_option("--kb-fixtures", o.run.kb_fixtures, "Directory of <title>.txt articles instead of the live API");
    r->add_option("--kb-endpoint", o.run.kb_endpoint, "MediaWiki API endpoint");
    r->add_option("--context-budget", o.run.context_budget, "Article code points given to the summary prompt");
    r->add_option("--provider", o.run.provider, "mock or http")->check(CLI::IsMember({"mock", "http"}));
    r->add_option("--fixtures", o.run.fixtures, "Fixture file or directory for the mock provider");
    r->add_option("--model", o.run.model, "Model name sent to the provider");
    r->add_option("--endpoint", o.run.endpoint, "Chat-completions URL for the http provider");
    r->add_option("--api-key-env", o.run.api_key_env, "Environment variable holding the API key");
    r->add_option("--temperature", o.run.temperature, "Sampling temperature");
    r->add_option("--seed", o.run.seed, "Sampling seed passed to the provider; unset sends none");
    r->add_option("--rpm", o.run.rpm, "Request limit per minute; 0 for none");
    r->add_option("--parallelism", o.run.parallelism, "Questions processed at once")
        ->check(CLI::Range(std::size_t{1}, std::size_t{64}));
    r->add_option("--size", o.run.size, "Documents retrieved per question")
        ->check(CLI::Range(std::size_t{1}, kDocumentCap));
    r->add_option("--ideal-words", o.run.ideal_words, "Word cap for ideal answers");
    r->add_option("--bare-fields", o.run.bare_fields, "Fields searched by bare query strings");
    r->add_option("--bare-operator", o.run.bare_op, "Default operator for bare query strings");
    r->add_option("--prompts", o.run.prompts, "Prompt override directory");
    r->add_option("--traces", o.run.traces, "Directory for per-question traces");
    r->add_flag("--force", o.run.force, "Overwrite the run file");

    c.eval = app.add_subcommand("eval", "Score a run file against gold questions");
    c.eval->add_option("run", o.eval.run, "Run file")->required();
    c.eval->add_option("gold", o.eval.gold, "Gold questions JSON")->required();
    c.eval->add_option("--json", o.eval.json, "Also write the machine-readable report here");
    c.eval->add_option("--system", o.eval.system, "Row label in the tables");
    c.eval->add_flag("--force", o.eval.force, "Overwrite the report file");

    c.validate = app.add_subcommand("validate", "Check a run file");
    c.validate->add_option("run", o.validate.run, "Run file")->required();
    c.validate->add_option("--questions", o.validate.questions, "Questions the run answers");
    c.validate->add_option("--index", o.validate.indices, "Index files for snippet offset checks (repeatable)");
    return c;
}

void ensure_writable(const fs::path& p, bool force) {
    if (fs::exists(p) && !force) throw UsageError(fmt::format("{} exists; pass --force to overwrite", p.string()));
}

std::vector<FieldSpec> parse_fields(const std::string& text) {
    std::vector<FieldSpec> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(parse_field_spec(item));
    }
    if (out.empty()) throw UsageError("no fields given");
    return out;
}

ShotCounts parse_shots(const std::string& text) {
    ShotCounts s;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw UsageError(fmt::format("--shots item '{}' is not name=N", item));
        const auto key = item.substr(0, eq);
        std::size_t n = 0;
        try {
            std::size_t used = 0;
            n = std::stoul(item.substr(eq + 1), &used);
            if (used != item.size() - eq - 1) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(fmt::format("--shots value in '{}' is not a count", item));
        }
        if (key == "query") s.query = n;
        else if (key == "extraction") s.extraction = n;
        else if (key == "rerank") s.rerank = n;
        else if (key == "answer") s.answer = n;
        else throw UsageError(fmt::format("--shots has no stage '{}'", key));
    }
    return s;
}

struct Indices {
    std::vector<InvertedIndex> owned;
    std::vector<const InvertedIndex*> ptrs;

    explicit Indices(const std::vector<std::string>& paths) {
        owned.reserve(paths.size());
        for (const auto& p : paths) owned.push_back(InvertedIndex::load(p));
        for (const auto& i : owned) ptrs.push_back(&i);
    }
};

PromptSet load_prompts(const std::string& dir) {
    return dir.empty() ? PromptSet::defaults() : PromptSet::with_overrides(dir);
}

int cmd_index_build(const IndexBuildOpts& o, std::ostream& out) {
    ensure_writable(o.out, o.force);
    AnalyzerConfig cfg = AnalyzerConfig::english();
    if (!o.stopwords.empty()) cfg.stopwords = load_stopwords(o.stopwords);
    cfg.stemmer = parse_stemmer_kind(o.stemmer);
    const auto docs = load_corpus(o.corpus);
    const auto index = InvertedIndex::build(docs, cfg);
    index.persist(o.out);
    out << fmt::format("indexed {} documents into {}\n", index.size(), o.out);
    return kExitOk;
}

int cmd_index_stats(const std::string& path, std::ostream& out) {
    const auto index = InvertedIndex::load(path);
    const auto s = index.stats();
    out << fmt::format("documents: {}\nanalyzer: {}\n", s.documents, index.fingerprint());
    for (std::size_t f = 0; f < kFieldCount; ++f) {
        out << fmt::format("{}: {} terms, {} tokens, average length {:.2f}\n", to_string(static_cast<Field>(f)),
                           s.terms[f], s.tokens[f], s.average_length[f]);
    }
    return kExitOk;
}

int cmd_search(const SearchOpts& o, std::ostream& out) {
    Indices idx(o.indices);
    const auto op = parse_default_operator(o.op);
    const auto ast = parse_query_string(o.query, op);
    const auto fields = parse_fields(o.fields);
    out << "parsed: " << describe(ast) << "\n";
    const auto hits = search_all(idx.ptrs, ast, fields, o.size);
    const auto lookup = document_lookup(idx.ptrs);
    for (std::size_t i = 0; i < hits.size(); ++i) {
        const auto* d = lookup(hits[i].doc_id);
        out << fmt::format("{:>3}  {:<12} {:>9.4f}  {}\n", i + 1, hits[i].doc_id, hits[i].score, d ? d->title : "");
    }
    if (hits.empty()) out << "no hits\n";
    return kExitOk;
}

int cmd_sample(const SampleOpts& o, std::ostream& out) {
    Indices idx(o.indices);
    const auto training = load_questions(o.training);
    SamplingOptions so;
    so.max_per_set = o.max;
    so.seed = o.seed;
    so.shuffle = o.shuffle;
    for (const auto& k : o.kinds) so.kinds.push_back(parse_example_kind(k));
    const auto prompts = load_prompts(o.prompts);
    const auto sets = sample_training_sets(training, document_lookup(idx.ptrs), prompts, so);
    fs::create_directories(o.out);
    for (const auto& s : sets) ensure_writable(example_path(o.out, s.kind), o.force);
    for (const auto& s : sets) {
        save_example_set(example_path(o.out, s.kind), s);
        out << fmt::format("{}: {} examples\n", to_string(s.kind), s.records.size());
    }
    return kExitOk;
}

int cmd_select(const SelectOpts& o, std::ostream& out) {
    ensure_writable(o.out, o.force);
    Indices idx(o.indices);
    const auto training = load_questions(o.training);
    const auto candidates = load_query_candidates(o.candidates);
    QuerySearchShape shape{parse_fields(o.fields), parse_default_operator(o.op), o.size};
    const auto prompts = load_prompts(o.prompts);
    const auto sel = select_query_examples(training, candidates, idx.ptrs, prompts, o.k, shape);
    save_example_set(o.out, sel.examples);
    for (const auto& c : sel.ranking) {
        out << fmt::format("{:.4f}  {}  {}{}\n", c.f1, c.question_id, c.query,
                           c.problem ? fmt::format("  ({})", *c.problem) : "");
    }
    out << fmt::format("kept {} examples in {}\n", sel.examples.records.size(), o.out);
    return kExitOk;
}

int cmd_run(const RunOpts& o, std::ostream& out, std::ostream& err) {
    const auto phase = parse_phase(o.phase);
    if (phase == Phase::phase_a_plus && o.snippet_source.empty()) {
        throw UsageError("--phase phase_a_plus needs --snippet-source");
    }
    if (phase != Phase::phase_b && o.indices.empty()) throw UsageError(fmt::format("--phase {} needs --index", o.phase));
    if (o.provider == "mock" && o.fixtures.empty()) throw UsageError("--provider mock needs --fixtures");
    if (o.provider == "http" && o.endpoint.empty()) throw UsageError("--provider http needs --endpoint");
    ensure_writable(o.out, o.force);

    PipelineConfig cfg;
    cfg.phase = phase;
    cfg.shots = parse_shots(o.shots);
    cfg.wiki = o.wiki;
    cfg.retrieval_size = o.size;
    cfg.ideal_words = o.ideal_words;
    cfg.context_budget = o.context_budget;
    cfg.parallelism = o.parallelism;
    cfg.bare_fields = parse_fields(o.bare_fields);
    cfg.bare_operator = parse_default_operator(o.bare_op);
    cfg.params.temperature = o.temperature;
    cfg.params.seed = o.seed;

    const auto questions = load_questions(o.questions);
    Indices idx(o.indices);
    const auto prompts = load_prompts(o.prompts);

    ProviderConfig pc;
    pc.kind = o.provider == "http" ? ProviderKind::http : ProviderKind::mock;
    pc.model = o.model;
    pc.fixtures = o.fixtures;
    pc.endpoint = o.endpoint;
    pc.api_key_env = o.api_key_env;
    pc.requests_per_minute = o.rpm;
    std::unique_ptr<LlmProvider> provider;
    try {
        provider = make_provider(pc);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }

    PipelineResources res;
    res.provider = provider.get();
    res.prompts = &prompts;
    res.indices = idx.ptrs;
    if (!o.examples.empty()) res.examples = load_example_dir(o.examples);
    FeedbackMap feedback;
    if (!o.feedback.empty()) {
        feedback = load_feedback(o.feedback);
        res.feedback = &feedback;
    }
    RunFile source;
    if (!o.snippet_source.empty()) {
        source = load_run_file(o.snippet_source, questions);
        res.snippet_source = &source;
    }
    std::unique_ptr<KbClient> kb;
    if (o.wiki) {
        if (!o.kb_fixtures.empty()) kb = std::make_unique<FixtureKb>(o.kb_fixtures);
        else kb = std::make_unique<WikipediaKb>(make_http_transport(std::chrono::seconds(60)), o.kb_endpoint);
        res.kb = kb.get();
    }

    const auto result = run_pipeline(questions, cfg, res);
    write_run_file(result.run, o.out, {questions, idx.ptrs.empty() ? DocumentLookup{} : document_lookup(idx.ptrs)});
    if (!o.traces.empty()) write_traces(o.traces, result.traces);
    out << fmt::format("wrote {} questions to {} ({} failed)\n", result.run.questions.size(), o.out, result.failed);
    if (result.failed) err << fmt::format("{} questions failed; see their traces\n", result.failed);
    return kExitOk;
}

int cmd_eval(const EvalOpts& o, std::ostream& out, std::ostream& err) {
    if (!o.json.empty()) ensure_writable(o.json, o.force);
    const auto gold = load_questions(o.gold);
    const auto run = load_run_file(o.run, gold);
    const auto report = evaluate_run(run, gold);
    for (const auto& w : report.warnings) err << "warning: " << w << "\n";
    out << format_report(report, o.system);
    if (!o.json.empty()) write_text_file(o.json, report_to_json(report).dump(2) + "\n");
    return kExitOk;
}

int cmd_validate(const ValidateOpts& o, std::ostream& out) {
    std::vector<Question> questions;
    if (!o.questions.empty()) questions = load_questions(o.questions);
    const auto run = load_run_file(o.run, questions);
    Indices idx(o.indices);
    const auto problems =
        validate_run_file(run, {questions, idx.ptrs.empty() ? DocumentLookup{} : document_lookup(idx.ptrs)});
    for (const auto& p : problems) out << p << "\n";
    out << fmt::format("{} entries, {} problems\n", run.questions.size(), problems.size());
    return problems.empty() ? kExitOk : kExitRunError;
}

void collect_keys(const CLI::App& app, const std::string& prefix, std::vector<ConfigKey>& out) {
    for (const auto* opt : app.get_options()) {
        if (opt->get_lnames().empty() || opt->get_name() == "--help" || opt->get_name() == "--config") continue;
        out.push_back({prefix, opt->get_lnames().front(), opt->get_default_str()});
    }
    for (const auto* sub : app.get_subcommands({})) {
        collect_keys(*sub, prefix.empty() ? sub->get_name() : prefix + " " + sub->get_name(), out);
    }
}

}  // namespace

std::vector<ConfigKey> cli_config_keys() {
    CLI::App app("biorag");
    Opts o;
    define(app, o);
    std::vector<ConfigKey> keys;
    collect_keys(app, "", keys);
    return keys;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app("Biomedical retrieval-augmented question answering", "biorag");
    Opts o;
    const auto c = define(app, o);

    std::vector<std::string> argv_store = {"biorag"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n" << "run with --help for usage\n";
        return kExitUsage;
    }

    try {
        if (c.build->parsed()) return cmd_index_build(o.build, out);
        if (c.stats->parsed()) return cmd_index_stats(o.stats_index, out);
        if (c.search->parsed()) return cmd_search(o.search, out);
        if (c.sample->parsed()) return cmd_sample(o.sample, out);
        if (c.select->parsed()) return cmd_select(o.select, out);
        if (c.run->parsed()) return cmd_run(o.run, out, err);
        if (c.eval->parsed()) return cmd_eval(o.eval, out, err);
        if (c.validate->parsed()) return cmd_validate(o.validate, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const PipelineConfigError& e) {
        err << "configuration error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const QueryParseError& e) {
        err << "query error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const RunValidationError& e) {
        err << "run file rejected:\n";
        for (const auto& v : e.violations()) err << "  " << v << "\n";
        return kExitRunError;
    } catch (const EvaluationError& e) {
        err << "run file rejected:\n";
        for (const auto& v : e.problems()) err << "  " << v << "\n";
        return kExitRunError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRunError;
    }
    err << "no command given\n";
    return kExitUsage;
}

}  // namespace biorag
