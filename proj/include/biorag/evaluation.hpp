#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "biorag/corpus.hpp"

namespace biorag {

/// Bumped whenever a metric definition changes, so reports stay comparable.
inline constexpr std::string_view kMetricVersion = "biorag-eval/1 (ap=|gold|@10, gmap-eps=1e-5, snippet=char-overlap)";
inline constexpr std::size_t kApCutoff = 10;
inline constexpr double kGmapEpsilon = 1e-5;

struct RetrievalQuestionScore {
    std::string id;
    double precision = 0;
    double recall = 0;
    double f_measure = 0;
    double average_precision = 0;
};

struct RetrievalScores {
    std::vector<RetrievalQuestionScore> questions;
    double precision = 0;
    double recall = 0;
    double f_measure = 0;
    double map = 0;
    double gmap = 0;
};

struct YesNoScores {
    std::size_t questions = 0;
    double accuracy = 0;
    double f1_yes = 0;
    double f1_no = 0;
    double macro_f1 = 0;
};

struct FactoidScores {
    std::size_t questions = 0;
    double strict_accuracy = 0;
    double lenient_accuracy = 0;
    double mrr = 0;
};

struct ListScores {
    std::size_t questions = 0;
    double mean_precision = 0;
    double recall = 0;
    double f_measure = 0;
};

/// Harmonic mean, 0 when both are 0.
double harmonic(double p, double r);

/// One question's ranked submission. `relevant[k]` says whether item k is
/// relevant; `covered` is how many gold items the whole list hits.
struct RankedJudgement {
    std::vector<bool> relevant;
    std::size_t covered = 0;
    std::size_t gold = 0;
};

RetrievalQuestionScore score_ranked(std::string id, const RankedJudgement& judgement, std::size_t cutoff = kApCutoff);
/// Means, MAP and GMAP over per-question scores.
RetrievalScores aggregate_retrieval(std::vector<RetrievalQuestionScore> questions);

RankedJudgement judge_documents(const std::vector<std::string>& retrieved, const std::vector<std::string>& gold);
/// Two snippets overlap when they share a document, a section and at least
/// one code point.
bool snippets_overlap(const Snippet& a, const Snippet& b);
RankedJudgement judge_snippets(const std::vector<Snippet>& retrieved, const std::vector<Snippet>& gold);

struct YesNoPair {
    /// nullopt or anything but "yes"/"no" counts as wrong.
    std::optional<std::string> predicted;
    std::string gold;
};
YesNoScores score_yesno(std::span<const YesNoPair> pairs);

/// Lowercase, punctuation removed, whitespace collapsed and trimmed.
std::string normalize_entity(std::string_view text);
/// Any synonym of `predicted` equals any synonym of `gold` after normalization.
bool entity_matches(const Synonyms& predicted, const Synonyms& gold);

struct EntityPair {
    std::vector<Synonyms> predicted;
    /// Factoid: the gold synonym sets (any of them counts); list: one entry per
    /// gold item.
    std::vector<Synonyms> gold;
};

/// Reciprocal rank of the first match among the first five predictions.
double reciprocal_rank(const EntityPair& pair);
FactoidScores score_factoid(std::span<const EntityPair> pairs);

struct ListQuestionScore {
    double precision = 0;
    double recall = 0;
    double f_measure = 0;
};
ListQuestionScore score_list_question(const EntityPair& pair);
ListScores score_list(std::span<const EntityPair> pairs);

struct EvaluationReport {
    std::optional<RetrievalScores> documents;
    std::optional<RetrievalScores> snippets;
    std::optional<YesNoScores> yesno;
    std::optional<FactoidScores> factoid;
    std::optional<ListScores> list;
    std::vector<std::string> warnings;
};

class EvaluationError : public std::runtime_error {
  public:
    explicit EvaluationError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

  private:
    std::vector<std::string> problems_;
};

/// Scores the run against the gold questions it shares with them. Retrieval
/// tables appear when the run submits documents or snippets, answer tables
/// when it submits exact answers. Throws EvaluationError for malformed runs.
EvaluationReport evaluate_run(const RunFile& run, std::span<const Question> gold);

nlohmann::ordered_json report_to_json(const EvaluationReport& report);
/// Fixed-width tables, one per scored section.
std::string format_report(const EvaluationReport& report, std::string_view system = "run");

}  // namespace biorag
