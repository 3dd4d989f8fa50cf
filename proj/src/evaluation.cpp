#include "biorag/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

namespace biorag {

namespace {

double ratio(std::size_t num, std::size_t den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; }

template <class T, class F>
double mean_of(const std::vector<T>& xs, F get) {
    if (xs.empty()) return 0;
    double s = 0;
    for (const auto& x : xs) s += get(x);
    return s / static_cast<double>(xs.size());
}

}  // namespace

double harmonic(double p, double r) { return p + r == 0 ? 0.0 : 2 * p * r / (p + r); }

RetrievalQuestionScore score_ranked(std::string id, const RankedJudgement& j, std::size_t cutoff) {
    RetrievalQuestionScore s;
    s.id = std::move(id);
    const auto hits = static_cast<std::size_t>(std::count(j.relevant.begin(), j.relevant.end(), true));
    s.precision = ratio(hits, j.relevant.size());
    s.recall = ratio(j.covered, j.gold);
    s.f_measure = harmonic(s.precision, s.recall);

    double sum = 0;
    std::size_t seen = 0;
    const auto n = std::min(cutoff, j.relevant.size());
    for (std::size_t k = 0; k < n; ++k) {
        if (!j.relevant[k]) continue;
        ++seen;
        sum += static_cast<double>(seen) / static_cast<double>(k + 1);
    }
    // several snippets can hit one gold snippet; never let that push AP past 1
    const auto den = std::max(j.gold, seen);
    s.average_precision = den == 0 ? 0.0 : sum / static_cast<double>(den);
    return s;
}

RetrievalScores aggregate_retrieval(std::vector<RetrievalQuestionScore> qs) {
    RetrievalScores out;
    out.precision = mean_of(qs, [](auto& q) { return q.precision; });
    out.recall = mean_of(qs, [](auto& q) { return q.recall; });
    out.f_measure = mean_of(qs, [](auto& q) { return q.f_measure; });
    out.map = mean_of(qs, [](auto& q) { return q.average_precision; });
    if (!qs.empty()) {
        const double logs = mean_of(qs, [](auto& q) { return std::log(q.average_precision + kGmapEpsilon); });
        out.gmap = std::clamp(std::exp(logs), 0.0, out.map);
    }
    out.questions = std::move(qs);
    return out;
}

RankedJudgement judge_documents(const std::vector<std::string>& retrieved, const std::vector<std::string>& gold) {
    const std::set<std::string> g(gold.begin(), gold.end());
    std::set<std::string> hit;
    RankedJudgement j;
    j.gold = g.size();
    for (const auto& d : retrieved) j.relevant.push_back(g.count(d) && hit.insert(d).second);
    j.covered = hit.size();
    return j;
}

bool snippets_overlap(const Snippet& a, const Snippet& b) {
    return a.doc_id == b.doc_id && a.section == b.section && a.begin < b.end && b.begin < a.end;
}

RankedJudgement judge_snippets(const std::vector<Snippet>& retrieved, const std::vector<Snippet>& gold) {
    RankedJudgement j;
    j.gold = gold.size();
    std::vector<bool> covered(gold.size(), false);
    for (const auto& s : retrieved) {
        bool rel = false;
        for (std::size_t i = 0; i < gold.size(); ++i) {
            if (snippets_overlap(s, gold[i])) {
                rel = true;
                covered[i] = true;
            }
        }
        j.relevant.push_back(rel);
    }
    j.covered = static_cast<std::size_t>(std::count(covered.begin(), covered.end(), true));
    return j;
}

YesNoScores score_yesno(std::span<const YesNoPair> pairs) {
    YesNoScores s;
    s.questions = pairs.size();
    if (pairs.empty()) return s;
    std::size_t correct = 0, tp_yes = 0, fp_yes = 0, fn_yes = 0, tp_no = 0, fp_no = 0, fn_no = 0;
    for (const auto& p : pairs) {
        const std::string pred = p.predicted.value_or("");
        if (pred == p.gold) ++correct;
        if (p.gold == "yes") {
            pred == "yes" ? ++tp_yes : ++fn_yes;
            if (pred == "no") ++fp_no;
        } else {
            pred == "no" ? ++tp_no : ++fn_no;
            if (pred == "yes") ++fp_yes;
        }
    }
    s.accuracy = ratio(correct, pairs.size());
    s.f1_yes = harmonic(ratio(tp_yes, tp_yes + fp_yes), ratio(tp_yes, tp_yes + fn_yes));
    s.f1_no = harmonic(ratio(tp_no, tp_no + fp_no), ratio(tp_no, tp_no + fn_no));
    s.macro_f1 = (s.f1_yes + s.f1_no) / 2;
    return s;
}

std::string normalize_entity(std::string_view text) {
    std::string out;
    bool gap = false;
    for (unsigned char c : text) {
        if (c < 0x80 && std::ispunct(c)) continue;
        if (c < 0x80 && std::isspace(c)) {
            gap = true;
            continue;
        }
        if (gap && !out.empty()) out += ' ';
        gap = false;
        out += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    }
    return out;
}

bool entity_matches(const Synonyms& predicted, const Synonyms& gold) {
    for (const auto& p : predicted) {
        const auto np = normalize_entity(p);
        if (np.empty()) continue;
        for (const auto& g : gold) {
            if (np == normalize_entity(g)) return true;
        }
    }
    return false;
}

namespace {

bool matches_any(const Synonyms& predicted, const std::vector<Synonyms>& gold) {
    return std::any_of(gold.begin(), gold.end(), [&](const Synonyms& g) { return entity_matches(predicted, g); });
}

}  // namespace

double reciprocal_rank(const EntityPair& pair) {
    const auto n = std::min(pair.predicted.size(), kFactoidCap);
    for (std::size_t i = 0; i < n; ++i) {
        if (matches_any(pair.predicted[i], pair.gold)) return 1.0 / static_cast<double>(i + 1);
    }
    return 0;
}

FactoidScores score_factoid(std::span<const EntityPair> pairs) {
    FactoidScores s;
    s.questions = pairs.size();
    if (pairs.empty()) return s;
    double strict = 0, lenient = 0, rr = 0;
    for (const auto& p : pairs) {
        const double r = reciprocal_rank(p);
        strict += r == 1.0;
        lenient += r > 0;
        rr += r;
    }
    const auto n = static_cast<double>(pairs.size());
    s.strict_accuracy = strict / n;
    s.lenient_accuracy = lenient / n;
    s.mrr = rr / n;
    return s;
}

ListQuestionScore score_list_question(const EntityPair& pair) {
    // duplicates by normalized synonym set collapse to the first occurrence
    std::vector<const Synonyms*> unique;
    std::set<std::set<std::string>> keys;
    for (const auto& e : pair.predicted) {
        std::set<std::string> key;
        for (const auto& s : e) {
            if (auto n = normalize_entity(s); !n.empty()) key.insert(std::move(n));
        }
        if (key.empty() || !keys.insert(key).second) continue;
        unique.push_back(&e);
    }
    ListQuestionScore s;
    std::size_t matched = 0;
    for (const auto* e : unique) matched += matches_any(*e, pair.gold);
    std::size_t covered = 0;
    for (const auto& g : pair.gold) {
        covered += std::any_of(unique.begin(), unique.end(), [&](const Synonyms* e) { return entity_matches(*e, g); });
    }
    s.precision = ratio(matched, unique.size());
    s.recall = ratio(covered, pair.gold.size());
    s.f_measure = harmonic(s.precision, s.recall);
    return s;
}

ListScores score_list(std::span<const EntityPair> pairs) {
    ListScores s;
    s.questions = pairs.size();
    std::vector<ListQuestionScore> per;
    for (const auto& p : pairs) per.push_back(score_list_question(p));
    s.mean_precision = mean_of(per, [](auto& q) { return q.precision; });
    s.recall = mean_of(per, [](auto& q) { return q.recall; });
    s.f_measure = mean_of(per, [](auto& q) { return q.f_measure; });
    return s;
}

EvaluationError::EvaluationError(std::vector<std::string> problems)
    : std::runtime_error(fmt::format("run file is invalid: {}", problems.empty() ? "" : problems.front())),
      problems_(std::move(problems)) {}

namespace {

const std::vector<Synonyms>* entities_of(const std::optional<ExactAnswer>& a) {
    if (!a) return nullptr;
    if (const auto* f = std::get_if<FactoidAnswer>(&*a)) return &f->entities;
    if (const auto* l = std::get_if<ListAnswer>(&*a)) return &l->entities;
    return nullptr;
}

}  // namespace

EvaluationReport evaluate_run(const RunFile& run, std::span<const Question> gold) {
    if (auto v = validate_run_file(run); !v.empty()) throw EvaluationError(std::move(v));

    EvaluationReport report;
    std::unordered_map<std::string, const Question*> by_id;
    for (const auto& q : gold) by_id[q.id] = &q;

    std::vector<std::pair<const RunEntry*, const Question*>> shared;
    bool any_docs = false, any_snippets = false, any_exact = false;
    for (const auto& e : run.questions) {
        const auto it = by_id.find(e.id);
        if (it == by_id.end()) {
            report.warnings.push_back(fmt::format("{}: not in the gold file, skipped", e.id));
            continue;
        }
        shared.emplace_back(&e, it->second);
        any_docs |= e.documents.has_value();
        any_snippets |= e.snippets.has_value();
        any_exact |= e.exact_answer.has_value();
    }
    for (const auto& q : gold) {
        if (!run.find(q.id)) report.warnings.push_back(fmt::format("{}: missing from the run", q.id));
    }

    if (any_docs) {
        std::vector<RetrievalQuestionScore> qs;
        for (const auto& [e, q] : shared) {
            if (!q->gold_documents || q->gold_documents->empty()) continue;
            const auto docs = e->documents.value_or(std::vector<std::string>{});
            qs.push_back(score_ranked(e->id, judge_documents(docs, *q->gold_documents)));
        }
        report.documents = aggregate_retrieval(std::move(qs));
    }
    if (any_snippets) {
        std::vector<RetrievalQuestionScore> qs;
        for (const auto& [e, q] : shared) {
            if (!q->gold_snippets || q->gold_snippets->empty()) continue;
            const auto sn = e->snippets.value_or(std::vector<Snippet>{});
            qs.push_back(score_ranked(e->id, judge_snippets(sn, *q->gold_snippets)));
        }
        report.snippets = aggregate_retrieval(std::move(qs));
    }
    if (any_exact) {
        std::vector<YesNoPair> yn;
        std::vector<EntityPair> factoid, list;
        for (const auto& [e, q] : shared) {
            if (!q->gold_exact) continue;
            if (q->qtype == QuestionType::yesno) {
                const auto* g = std::get_if<YesNoAnswer>(&*q->gold_exact);
                if (!g) continue;
                YesNoPair p{std::nullopt, g->value};
                if (e->exact_answer) {
                    if (const auto* a = std::get_if<YesNoAnswer>(&*e->exact_answer)) p.predicted = a->value;
                }
                yn.push_back(std::move(p));
            } else if (q->qtype == QuestionType::factoid || q->qtype == QuestionType::list) {
                const auto* g = entities_of(q->gold_exact);
                if (!g) continue;
                const auto* a = entities_of(e->exact_answer);
                EntityPair p{a ? *a : std::vector<Synonyms>{}, *g};
                (q->qtype == QuestionType::factoid ? factoid : list).push_back(std::move(p));
            }
        }
        if (!yn.empty()) report.yesno = score_yesno(yn);
        if (!factoid.empty()) report.factoid = score_factoid(factoid);
        if (!list.empty()) report.list = score_list(list);
    }
    return report;
}

namespace {

nlohmann::ordered_json retrieval_json(const RetrievalScores& s) {
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (const auto& q : s.questions) {
        per.push_back({{"id", q.id},
                       {"precision", q.precision},
                       {"recall", q.recall},
                       {"f_measure", q.f_measure},
                       {"average_precision", q.average_precision}});
    }
    return {{"questions", s.questions.size()}, {"precision", s.precision}, {"recall", s.recall},
            {"f_measure", s.f_measure},        {"map", s.map},             {"gmap", s.gmap},
            {"per_question", per}};
}

struct Table {
    std::string title;
    std::vector<std::string> columns;
    std::vector<double> values;
    std::size_t questions;
};

std::string render(const Table& t, std::string_view system) {
    const auto name_w = std::max<std::size_t>(system.size(), 6);
    std::vector<std::size_t> widths;
    for (const auto& c : t.columns) widths.push_back(std::max<std::size_t>(c.size(), 6));
    std::string out = fmt::format("{} ({} questions)\n", t.title, t.questions);
    out += fmt::format("{:<{}}", "System", name_w);
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += fmt::format("  {:>{}}", t.columns[i], widths[i]);
    out += '\n';
    out += fmt::format("{:<{}}", system, name_w);
    for (std::size_t i = 0; i < t.values.size(); ++i) out += fmt::format("  {:>{}.4f}", t.values[i], widths[i]);
    out += '\n';
    return out;
}

}  // namespace

nlohmann::ordered_json report_to_json(const EvaluationReport& r) {
    nlohmann::ordered_json j;
    j["metric_version"] = kMetricVersion;
    if (r.documents) j["documents"] = retrieval_json(*r.documents);
    if (r.snippets) j["snippets"] = retrieval_json(*r.snippets);
    if (r.yesno) {
        j["yesno"] = {{"questions", r.yesno->questions}, {"accuracy", r.yesno->accuracy},
                      {"f1_yes", r.yesno->f1_yes},       {"f1_no", r.yesno->f1_no},
                      {"macro_f1", r.yesno->macro_f1}};
    }
    if (r.factoid) {
        j["factoid"] = {{"questions", r.factoid->questions},
                        {"strict_accuracy", r.factoid->strict_accuracy},
                        {"lenient_accuracy", r.factoid->lenient_accuracy},
                        {"mrr", r.factoid->mrr}};
    }
    if (r.list) {
        j["list"] = {{"questions", r.list->questions},
                     {"mean_precision", r.list->mean_precision},
                     {"recall", r.list->recall},
                     {"f_measure", r.list->f_measure}};
    }
    j["warnings"] = r.warnings;
    return j;
}

std::string format_report(const EvaluationReport& r, std::string_view system) {
    std::vector<Table> tables;
    const std::vector<std::string> retrieval_cols = {"Precision", "Recall", "F-Measure", "MAP", "GMAP"};
    auto retrieval = [&](std::string title, const RetrievalScores& s) {
        tables.push_back({std::move(title), retrieval_cols, {s.precision, s.recall, s.f_measure, s.map, s.gmap},
                          s.questions.size()});
    };
    if (r.documents) retrieval("Documents", *r.documents);
    if (r.snippets) retrieval("Snippets", *r.snippets);
    if (r.yesno) {
        tables.push_back({"Yes/No",
                          {"Accuracy", "F1 Yes", "F1 No", "Macro F1"},
                          {r.yesno->accuracy, r.yesno->f1_yes, r.yesno->f1_no, r.yesno->macro_f1},
                          r.yesno->questions});
    }
    if (r.factoid) {
        tables.push_back({"Factoid",
                          {"Strict Acc.", "Lenient Acc.", "MRR"},
                          {r.factoid->strict_accuracy, r.factoid->lenient_accuracy, r.factoid->mrr},
                          r.factoid->questions});
    }
    if (r.list) {
        tables.push_back({"List",
                          {"Mean Prec.", "Recall", "F-Measure"},
                          {r.list->mean_precision, r.list->recall, r.list->f_measure},
                          r.list->questions});
    }
    std::string out = fmt::format("metrics: {}\n", kMetricVersion);
    for (const auto& t : tables) out += "\n" + render(t, system);
    if (tables.empty()) out += "\nnothing to score\n";
    return out;
}

}  // namespace biorag
