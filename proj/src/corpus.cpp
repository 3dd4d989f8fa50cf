#include "biorag/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "biorag/unicode.hpp"

namespace biorag {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string_view to_string(QuestionType type) {
    switch (type) {
    case QuestionType::yesno: return "yesno";
    case QuestionType::factoid: return "factoid";
    case QuestionType::list: return "list";
    case QuestionType::summary: return "summary";
    }
    return "summary";
}

QuestionType parse_question_type(std::string_view name) {
    if (name == "yesno") return QuestionType::yesno;
    if (name == "factoid") return QuestionType::factoid;
    if (name == "list") return QuestionType::list;
    if (name == "summary") return QuestionType::summary;
    throw FormatError(fmt::format("unknown question type '{}'", name));
}

std::string_view to_string(Section section) {
    return section == Section::title ? "title" : "abstract";
}

Section parse_section(std::string_view name) {
    // BioASQ files use "sections.0" for the abstract.
    if (name == "title") return Section::title;
    if (name == "abstract" || name == "sections.0") return Section::abstract;
    throw FormatError(fmt::format("unknown section '{}'", name));
}

const std::string& section_text(const Document& doc, Section section) {
    return section == Section::title ? doc.title : doc.abstract;
}

Snippet make_snippet(const Document& doc, Section section, std::size_t begin, std::size_t end) {
    return Snippet{doc.doc_id, section, begin, end,
                   utf8::slice(section_text(doc, section), begin, end)};
}

std::optional<std::string> check_snippet(const Snippet& snippet, const Document& doc) {
    const auto& text = section_text(doc, snippet.section);
    const auto length = utf8::codepoint_count(text);
    if (snippet.begin >= snippet.end) {
        return fmt::format("snippet [{}, {}) of {} is empty or reversed", snippet.begin,
                           snippet.end, snippet.doc_id);
    }
    if (snippet.end > length) {
        return fmt::format("snippet end {} exceeds {} length {} of {}", snippet.end,
                           to_string(snippet.section), length, snippet.doc_id);
    }
    if (utf8::slice(text, snippet.begin, snippet.end) != snippet.text) {
        return fmt::format("snippet text does not match {} [{}, {}) of {}",
                           to_string(snippet.section), snippet.begin, snippet.end,
                           snippet.doc_id);
    }
    return std::nullopt;
}

QuestionType answer_type(const ExactAnswer& answer) {
    switch (answer.index()) {
    case 0: return QuestionType::yesno;
    case 1: return QuestionType::factoid;
    default: return QuestionType::list;
    }
}

const RunEntry* RunFile::find(std::string_view id) const {
    for (const auto& entry : questions) {
        if (entry.id == id) return &entry;
    }
    return nullptr;
}

std::string pubmed_url(std::string_view doc_id) {
    return std::string(kPubmedUrlPrefix) + std::string(doc_id);
}

std::string doc_id_from_url(std::string_view url) {
    while (!url.empty() && url.back() == '/') url.remove_suffix(1);
    const auto slash = url.rfind('/');
    auto id = slash == std::string_view::npos ? url : url.substr(slash + 1);
    if (id.empty()) throw FormatError(fmt::format("cannot extract a document id from '{}'", url));
    return std::string(id);
}

// ---------------------------------------------------------------------------
// files

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(fmt::format("cannot open {}", path.string()));
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

json read_json_file(const std::filesystem::path& path) {
    const auto text = read_text_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(fmt::format("{}: invalid JSON: {}", path.string(), e.what()));
    }
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(fmt::format("cannot write {}", path.string()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw FormatError(fmt::format("write to {} failed", path.string()));
}

// ---------------------------------------------------------------------------
// corpus

CorpusReader::CorpusReader(const std::filesystem::path& path) : in_(path), path_(path) {
    if (!in_) throw FormatError(fmt::format("cannot open corpus {}", path.string()));
}

namespace {

std::string string_field(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return {};
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number_integer()) return std::to_string(it->get<long long>());
    throw FormatError(fmt::format("field '{}' is not a string", key));
}

}  // namespace

std::optional<Document> CorpusReader::next() {
    std::string line;
    while (std::getline(in_, line)) {
        ++line_no_;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        Document doc;
        try {
            const auto j = json::parse(line);
            if (!j.is_object()) throw FormatError("record is not an object");
            doc.doc_id = string_field(j, "id");
            doc.title = string_field(j, "title");
            doc.abstract = string_field(j, "abstract");
        } catch (const std::exception& e) {
            throw FormatError(
                fmt::format("{}:{}: malformed record: {}", path_.string(), line_no_, e.what()));
        }
        if (doc.doc_id.empty()) {
            throw FormatError(fmt::format("{}:{}: missing id", path_.string(), line_no_));
        }
        if (doc.title.empty() && doc.abstract.empty()) {
            throw FormatError(fmt::format("{}:{}: document {} has neither title nor abstract",
                                          path_.string(), line_no_, doc.doc_id));
        }
        if (!seen_.insert(doc.doc_id).second) {
            throw FormatError(fmt::format("{}:{}: duplicate document id {}", path_.string(),
                                          line_no_, doc.doc_id));
        }
        return doc;
    }
    return std::nullopt;
}

std::vector<Document> load_corpus(const std::filesystem::path& path) {
    CorpusReader reader(path);
    std::vector<Document> docs;
    while (auto doc = reader.next()) docs.push_back(std::move(*doc));
    return docs;
}

// ---------------------------------------------------------------------------
// snippets and answers

ordered_json snippet_to_json(const Snippet& snippet) {
    ordered_json j;
    j["document"] = pubmed_url(snippet.doc_id);
    j["beginSection"] = to_string(snippet.section);
    j["endSection"] = to_string(snippet.section);
    j["offsetInBeginSection"] = snippet.begin;
    j["offsetInEndSection"] = snippet.end;
    j["text"] = snippet.text;
    return j;
}

Snippet snippet_from_json(const json& j) {
    if (!j.is_object()) throw FormatError("snippet is not an object");
    Snippet s;
    s.doc_id = doc_id_from_url(j.at("document").get<std::string>());
    s.section = parse_section(j.value("beginSection", std::string("abstract")));
    const auto end_section = parse_section(j.value("endSection", std::string(to_string(s.section))));
    if (end_section != s.section) throw FormatError("snippet spans two sections");
    const auto begin = j.at("offsetInBeginSection").get<long long>();
    const auto end = j.at("offsetInEndSection").get<long long>();
    if (begin < 0 || end < 0) throw FormatError("negative snippet offset");
    s.begin = static_cast<std::size_t>(begin);
    s.end = static_cast<std::size_t>(end);
    s.text = j.at("text").get<std::string>();
    return s;
}

ordered_json exact_answer_to_json(const ExactAnswer& answer) {
    if (const auto* yn = std::get_if<YesNoAnswer>(&answer)) return yn->value;
    const auto& entities = answer.index() == 1 ? std::get<FactoidAnswer>(answer).entities
                                               : std::get<ListAnswer>(answer).entities;
    ordered_json arr = ordered_json::array();
    for (const auto& synonyms : entities) arr.push_back(synonyms);
    return arr;
}

namespace {

std::vector<Synonyms> entities_from_json(const json& j) {
    if (!j.is_array()) throw FormatError("exact answer must be an array");
    std::vector<Synonyms> out;
    for (const auto& item : j) {
        if (item.is_string()) {
            out.push_back({item.get<std::string>()});
        } else if (item.is_array()) {
            Synonyms syn;
            for (const auto& s : item) syn.push_back(s.get<std::string>());
            out.push_back(std::move(syn));
        } else {
            throw FormatError("exact answer entity must be a string or list of strings");
        }
    }
    return out;
}

}  // namespace

ExactAnswer exact_answer_from_json(const json& j, QuestionType type) {
    switch (type) {
    case QuestionType::yesno: {
        if (!j.is_string()) throw FormatError("yes/no exact answer must be a string");
        return YesNoAnswer{j.get<std::string>()};
    }
    case QuestionType::factoid: return FactoidAnswer{entities_from_json(j)};
    case QuestionType::list: return ListAnswer{entities_from_json(j)};
    case QuestionType::summary: break;
    }
    throw FormatError("summary questions carry no exact answer");
}

// ---------------------------------------------------------------------------
// questions

namespace {

std::optional<std::string> ideal_from_json(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_array() && !j.empty() && j.front().is_string()) return j.front().get<std::string>();
    return std::nullopt;
}

}  // namespace

std::vector<Question> parse_questions(const json& doc) {
    if (!doc.is_object() || !doc.contains("questions") || !doc["questions"].is_array()) {
        throw FormatError("expected an object with a \"questions\" array");
    }
    std::vector<Question> out;
    std::set<std::string> ids;
    std::size_t index = 0;
    for (const auto& entry : doc["questions"]) {
        const auto where = fmt::format("questions[{}]", index++);
        if (!entry.is_object()) throw FormatError(where + ": not an object");
        Question q;
        if (!entry.contains("id") || !entry["id"].is_string()) {
            throw FormatError(where + ": missing id");
        }
        q.id = entry["id"].get<std::string>();
        if (!entry.contains("body") || !entry["body"].is_string()) {
            throw FormatError(fmt::format("{} ({}): missing body", where, q.id));
        }
        q.body = entry["body"].get<std::string>();
        if (!entry.contains("type") || !entry["type"].is_string()) {
            throw FormatError(fmt::format("{} ({}): missing type", where, q.id));
        }
        try {
            q.qtype = parse_question_type(entry["type"].get<std::string>());
            if (const auto it = entry.find("documents"); it != entry.end()) {
                std::vector<std::string> docs;
                for (const auto& d : *it) {
                    auto id = doc_id_from_url(d.get<std::string>());
                    if (std::find(docs.begin(), docs.end(), id) == docs.end()) {
                        docs.push_back(std::move(id));
                    }
                }
                q.gold_documents = std::move(docs);
            }
            if (const auto it = entry.find("snippets"); it != entry.end()) {
                std::vector<Snippet> snippets;
                for (const auto& s : *it) snippets.push_back(snippet_from_json(s));
                q.gold_snippets = std::move(snippets);
            }
            if (const auto it = entry.find("exact_answer");
                it != entry.end() && q.qtype != QuestionType::summary && !it->is_null()) {
                q.gold_exact = exact_answer_from_json(*it, q.qtype);
            }
            if (const auto it = entry.find("ideal_answer"); it != entry.end()) {
                q.gold_ideal = ideal_from_json(*it);
            }
            if (const auto it = entry.find("answerReady"); it != entry.end() && it->is_boolean()) {
                q.answer_ready = it->get<bool>();
            }
        } catch (const FormatError& e) {
            throw FormatError(fmt::format("{} ({}): {}", where, q.id, e.what()));
        } catch (const json::exception& e) {
            throw FormatError(fmt::format("{} ({}): {}", where, q.id, e.what()));
        }
        if (!ids.insert(q.id).second) {
            throw FormatError(fmt::format("{}: duplicate question id {}", where, q.id));
        }
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<Question> load_questions(const std::filesystem::path& path) {
    try {
        return parse_questions(read_json_file(path));
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

ordered_json questions_to_json(std::span<const Question> questions) {
    ordered_json arr = ordered_json::array();
    for (const auto& q : questions) {
        ordered_json j;
        j["id"] = q.id;
        j["body"] = q.body;
        j["type"] = to_string(q.qtype);
        if (!q.answer_ready) j["answerReady"] = false;
        if (q.gold_documents) {
            ordered_json docs = ordered_json::array();
            for (const auto& d : *q.gold_documents) docs.push_back(pubmed_url(d));
            j["documents"] = std::move(docs);
        }
        if (q.gold_snippets) {
            ordered_json snippets = ordered_json::array();
            for (const auto& s : *q.gold_snippets) snippets.push_back(snippet_to_json(s));
            j["snippets"] = std::move(snippets);
        }
        if (q.gold_exact) j["exact_answer"] = exact_answer_to_json(*q.gold_exact);
        if (q.gold_ideal) j["ideal_answer"] = *q.gold_ideal;
        arr.push_back(std::move(j));
    }
    ordered_json root;
    root["questions"] = std::move(arr);
    return root;
}

// ---------------------------------------------------------------------------
// feedback

FeedbackMap parse_feedback(const json& doc) {
    if (!doc.is_object() || !doc.contains("questions") || !doc["questions"].is_array()) {
        throw FormatError("feedback: expected an object with a \"questions\" array");
    }
    FeedbackMap out;
    for (const auto& entry : doc["questions"]) {
        FeedbackRecord r;
        try {
            r.question_id = entry.at("id").get<std::string>();
            for (const auto& d : entry.value("relevant_documents", json::array())) {
                r.relevant_documents.push_back(doc_id_from_url(d.get<std::string>()));
            }
            for (const auto& d : entry.value("irrelevant_documents", json::array())) {
                r.irrelevant_documents.push_back(doc_id_from_url(d.get<std::string>()));
            }
            for (const auto& s : entry.value("relevant_snippets", json::array())) {
                r.relevant_snippets.push_back(snippet_from_json(s));
            }
            for (const auto& s : entry.value("irrelevant_snippets", json::array())) {
                r.irrelevant_snippets.push_back(snippet_from_json(s));
            }
        } catch (const json::exception& e) {
            throw FormatError(fmt::format("feedback: {}", e.what()));
        }
        for (const auto& d : r.relevant_documents) {
            if (std::find(r.irrelevant_documents.begin(), r.irrelevant_documents.end(), d) !=
                r.irrelevant_documents.end()) {
                throw FormatError(fmt::format(
                    "feedback for {}: document {} is both relevant and irrelevant", r.question_id, d));
            }
        }
        const auto id = r.question_id;
        if (!out.emplace(id, std::move(r)).second) {
            throw FormatError(fmt::format("feedback: duplicate question id {}", id));
        }
    }
    return out;
}

FeedbackMap load_feedback(const std::filesystem::path& path) {
    try {
        return parse_feedback(read_json_file(path));
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

// ---------------------------------------------------------------------------
// run files

ordered_json run_to_json(const RunFile& run) {
    ordered_json arr = ordered_json::array();
    for (const auto& entry : run.questions) {
        ordered_json j;
        j["id"] = entry.id;
        if (entry.documents) {
            ordered_json docs = ordered_json::array();
            for (const auto& d : *entry.documents) docs.push_back(pubmed_url(d));
            j["documents"] = std::move(docs);
        }
        if (entry.snippets) {
            ordered_json snippets = ordered_json::array();
            for (const auto& s : *entry.snippets) snippets.push_back(snippet_to_json(s));
            j["snippets"] = std::move(snippets);
        }
        if (entry.exact_answer) j["exact_answer"] = exact_answer_to_json(*entry.exact_answer);
        if (entry.ideal_answer) j["ideal_answer"] = *entry.ideal_answer;
        arr.push_back(std::move(j));
    }
    ordered_json root;
    root["questions"] = std::move(arr);
    return root;
}

namespace {

// Run files do not name the question type: a string is a yes/no answer and
// an array is a factoid answer only when the matching question says so.
ExactAnswer run_answer_from_json(const json& j, const Question* question) {
    if (j.is_string()) return YesNoAnswer{j.get<std::string>()};
    auto entities = entities_from_json(j);
    if (question != nullptr && question->qtype == QuestionType::factoid) {
        return FactoidAnswer{std::move(entities)};
    }
    return ListAnswer{std::move(entities)};
}

}  // namespace

RunFile run_from_json(const json& j, std::span<const Question> questions) {
    if (!j.is_object() || !j.contains("questions") || !j["questions"].is_array()) {
        throw FormatError("run file: expected an object with a \"questions\" array");
    }
    RunFile run;
    for (const auto& entry : j["questions"]) {
        RunEntry e;
        try {
            e.id = entry.at("id").get<std::string>();
            if (const auto it = entry.find("documents"); it != entry.end()) {
                std::vector<std::string> docs;
                for (const auto& d : *it) docs.push_back(doc_id_from_url(d.get<std::string>()));
                e.documents = std::move(docs);
            }
            if (const auto it = entry.find("snippets"); it != entry.end()) {
                std::vector<Snippet> snippets;
                for (const auto& s : *it) snippets.push_back(snippet_from_json(s));
                e.snippets = std::move(snippets);
            }
            if (const auto it = entry.find("exact_answer"); it != entry.end() && !it->is_null()) {
                const auto q = std::find_if(questions.begin(), questions.end(),
                                            [&](const Question& x) { return x.id == e.id; });
                e.exact_answer = run_answer_from_json(*it, q == questions.end() ? nullptr : &*q);
            }
            if (const auto it = entry.find("ideal_answer"); it != entry.end()) {
                if (auto ideal = ideal_from_json(*it)) e.ideal_answer = std::move(*ideal);
            }
        } catch (const json::exception& ex) {
            throw FormatError(fmt::format("run file entry {}: {}", e.id, ex.what()));
        }
        run.questions.push_back(std::move(e));
    }
    return run;
}

RunFile load_run_file(const std::filesystem::path& path, std::span<const Question> questions) {
    try {
        return run_from_json(read_json_file(path), questions);
    } catch (const FormatError& e) {
        throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

std::string serialize_run(const RunFile& run) { return run_to_json(run).dump(2) + "\n"; }

namespace {

void check_entities(const std::vector<Synonyms>& entities, std::size_t cap, std::string_view kind,
                    const std::string& id, std::vector<std::string>& out) {
    if (entities.size() > cap) {
        out.push_back(fmt::format("{}: {} cap {} exceeded ({} entities)", id, kind, cap,
                                  entities.size()));
    }
    for (std::size_t i = 0; i < entities.size(); ++i) {
        if (entities[i].empty()) {
            out.push_back(fmt::format("{}: {} entity {} has no synonyms", id, kind, i));
        }
        for (const auto& s : entities[i]) {
            if (s.empty()) out.push_back(fmt::format("{}: {} entity {} has an empty string", id, kind, i));
        }
    }
}

bool answer_matches(const ExactAnswer& answer, QuestionType type) {
    // Untyped run files load every array as a list answer; a list answer with
    // at most the factoid cap is an acceptable factoid submission.
    const auto kind = answer_type(answer);
    if (kind == type) return true;
    return type == QuestionType::factoid && kind == QuestionType::list;
}

}  // namespace

std::vector<std::string> validate_run_file(const RunFile& run, const ValidationContext& ctx) {
    std::vector<std::string> out;
    std::set<std::string, std::less<>> seen;
    for (const auto& entry : run.questions) {
        const auto& id = entry.id;
        if (id.empty()) out.push_back("run entry with an empty id");
        if (!seen.insert(id).second) out.push_back(fmt::format("{}: duplicate run entry", id));

        const Question* question = nullptr;
        if (!ctx.questions.empty()) {
            for (const auto& q : ctx.questions) {
                if (q.id == id) question = &q;
            }
            if (question == nullptr) out.push_back(fmt::format("{}: no such question", id));
        }

        if (entry.documents) {
            const auto& docs = *entry.documents;
            if (docs.size() > kDocumentCap) {
                out.push_back(fmt::format("{}: document cap {} exceeded ({} documents)", id,
                                          kDocumentCap, docs.size()));
            }
            std::set<std::string_view> unique;
            for (const auto& d : docs) {
                if (d.empty() || d.find('/') != std::string::npos) {
                    out.push_back(fmt::format("{}: malformed document id '{}'", id, d));
                }
                if (!unique.insert(d).second) {
                    out.push_back(fmt::format("{}: document {} listed twice", id, d));
                }
            }
        }
        if (entry.snippets) {
            const auto& snippets = *entry.snippets;
            if (snippets.size() > kSnippetCap) {
                out.push_back(fmt::format("{}: snippet cap {} exceeded ({} snippets)", id,
                                          kSnippetCap, snippets.size()));
            }
            for (std::size_t i = 0; i < snippets.size(); ++i) {
                const auto& s = snippets[i];
                const bool listed = entry.documents && std::find(entry.documents->begin(),
                                                                 entry.documents->end(),
                                                                 s.doc_id) != entry.documents->end();
                if (!listed) {
                    out.push_back(fmt::format("{}: snippet {} cites document {} absent from documents",
                                              id, i, s.doc_id));
                }
                if (s.begin >= s.end) {
                    out.push_back(fmt::format("{}: snippet {} has empty range [{}, {})", id, i,
                                              s.begin, s.end));
                } else if (utf8::codepoint_count(s.text) != s.end - s.begin) {
                    out.push_back(fmt::format("{}: snippet {} text length differs from [{}, {})", id,
                                              i, s.begin, s.end));
                }
                if (ctx.documents) {
                    const Document* doc = nullptr;
                    try {
                        doc = ctx.documents(s.doc_id);
                    } catch (...) {
                        doc = nullptr;
                    }
                    if (doc == nullptr) {
                        out.push_back(fmt::format("{}: snippet {} cites unknown document {}", id, i,
                                                  s.doc_id));
                    } else if (auto problem = check_snippet(s, *doc)) {
                        out.push_back(fmt::format("{}: snippet {}: {}", id, i, *problem));
                    }
                }
            }
        }
        if (entry.exact_answer) {
            const auto& answer = *entry.exact_answer;
            if (const auto* yn = std::get_if<YesNoAnswer>(&answer)) {
                if (yn->value != "yes" && yn->value != "no") {
                    out.push_back(fmt::format("{}: yes/no answer '{}' is neither yes nor no", id,
                                              yn->value));
                }
            } else if (const auto* f = std::get_if<FactoidAnswer>(&answer)) {
                check_entities(f->entities, kFactoidCap, "factoid", id, out);
            } else {
                const auto& entities = std::get<ListAnswer>(answer).entities;
                const bool as_factoid = question && question->qtype == QuestionType::factoid;
                check_entities(entities, as_factoid ? kFactoidCap : kListCap,
                               as_factoid ? "factoid" : "list", id, out);
            }
            if (question != nullptr) {
                if (question->qtype == QuestionType::summary) {
                    out.push_back(fmt::format("{}: summary question carries an exact answer", id));
                } else if (!answer_matches(answer, question->qtype)) {
                    out.push_back(fmt::format("{}: exact answer is {} but question is {}", id,
                                              to_string(answer_type(answer)),
                                              to_string(question->qtype)));
                }
            }
        }
    }
    return out;
}

RunValidationError::RunValidationError(std::vector<std::string> violations)
    : std::runtime_error([&] {
          std::string msg = "run file failed validation:";
          for (const auto& v : violations) msg += "\n  " + v;
          return msg;
      }()),
      violations_(std::move(violations)) {}

void write_run_file(const RunFile& run, const std::filesystem::path& path,
                    const ValidationContext& ctx) {
    auto violations = validate_run_file(run, ctx);
    if (!violations.empty()) throw RunValidationError(std::move(violations));
    write_text_file(path, serialize_run(run));
}

}  // namespace biorag
