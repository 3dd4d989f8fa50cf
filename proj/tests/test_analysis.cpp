#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "biorag/analysis.hpp"
#include "test_support.hpp"

using namespace biorag;

namespace {

std::vector<std::string> terms(const std::vector<Token>& tokens) {
    std::vector<std::string> out;
    for (const auto& t : tokens) out.push_back(t.term);
    return out;
}

}  // namespace

TEST(Analyze, EmptyInput) { EXPECT_TRUE(analyze("", AnalyzerConfig::english()).empty()); }

TEST(Analyze, AllStopwords) { EXPECT_TRUE(analyze("The of and", AnalyzerConfig::english()).empty()); }

TEST(Analyze, StemsAndKeepsPositions) {
    const auto tokens = analyze("Transcription factors", AnalyzerConfig::english());
    ASSERT_EQ(tokens.size(), 2u);
    EXPECT_EQ(tokens[0], (Token{"transcript", 0}));
    EXPECT_EQ(tokens[1], (Token{"factor", 1}));
}

TEST(Analyze, StopwordsLeavePositionGaps) {
    const auto tokens = analyze("role of the p53 protein", AnalyzerConfig::english());
    ASSERT_EQ(tokens.size(), 3u);
    EXPECT_EQ(tokens[0], (Token{"role", 0}));
    EXPECT_EQ(tokens[1], (Token{"p53", 3}));
    EXPECT_EQ(tokens[2], (Token{"protein", 4}));
}

TEST(Analyze, SplitsOnPunctuationAndLowercases) {
    AnalyzerConfig plain;
    plain.stemmer = StemmerKind::none;
    EXPECT_EQ(terms(analyze("COVID-19 (SARS-CoV-2), IL-6/TNF", plain)),
              (std::vector<std::string>{"covid", "19", "sars", "cov", "2", "il", "6", "tnf"}));
    // Greek letters and accented capitals are word characters and lowercase.
    EXPECT_EQ(terms(analyze("TNF-\xCE\x91 \xC3\x89tude", plain)),
              (std::vector<std::string>{"tnf", "\xCE\xB1", "\xC3\xA9tude"}));
    // Typographic punctuation separates.
    EXPECT_EQ(terms(analyze("alpha\xE2\x80\x94" "beta", plain)), (std::vector<std::string>{"alpha", "beta"}));
}

TEST(Analyze, StripsPossessive) {
    AnalyzerConfig plain;
    plain.stemmer = StemmerKind::none;
    EXPECT_EQ(terms(analyze("Alzheimer's disease", plain)),
              (std::vector<std::string>{"alzheimer", "disease"}));
    EXPECT_EQ(terms(analyze("Crohn\xE2\x80\x99s", plain)), (std::vector<std::string>{"crohn"}));
    // Only a trailing 's is possessive.
    EXPECT_EQ(terms(analyze("o'sullivan", plain)), (std::vector<std::string>{"o", "sullivan"}));
    const auto tokens = analyze("Parkinson's patients", plain);
    EXPECT_EQ(tokens[1].position, 1u);
}

TEST(Stopwords, DataFileMatchesBuiltInList) {
    const auto from_file = load_stopwords(std::filesystem::path(BIORAG_SOURCE_DIR) / "data/stopwords_en.txt");
    EXPECT_EQ(from_file.size(), 33u);
    EXPECT_EQ(from_file, AnalyzerConfig::english().stopwords);
}

TEST(Fingerprint, TracksStopwordsAndStemmer) {
    const auto base = AnalyzerConfig::english();
    auto fewer = base;
    fewer.stopwords.erase("the");
    auto unstemmed = base;
    unstemmed.stemmer = StemmerKind::none;
    EXPECT_EQ(base.fingerprint(), AnalyzerConfig::english().fingerprint());
    EXPECT_NE(base.fingerprint(), fewer.fingerprint());
    EXPECT_NE(base.fingerprint(), unstemmed.fingerprint());
    EXPECT_EQ(base.fingerprint().size(), 64u);
}

// Vectors frozen from an independent implementation of the 1980 algorithm
// (NLTK's PorterStemmer in ORIGINAL_ALGORITHM mode), covering the examples
// published with the algorithm and the vocabulary of this project's docs.
TEST(PorterStemmer, MatchesReferenceVectors) {
    std::ifstream in(biorag::testing::test_data("porter_vectors.tsv"));
    ASSERT_TRUE(in.good());
    std::string line;
    std::size_t checked = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        const auto word = line.substr(0, tab);
        const auto stem = line.substr(tab + 1);
        EXPECT_EQ(porter_stem(word), stem) << word;
        ++checked;
    }
    EXPECT_GT(checked, 2000u);
}

TEST(PorterStemmer, PublishedExamples) {
    const std::vector<std::pair<std::string, std::string>> cases = {
        {"caresses", "caress"}, {"ponies", "poni"},      {"motoring", "motor"},
        {"hopping", "hop"},     {"conformabli", "conform"}, {"generalizations", "gener"},
        {"controll", "control"}, {"roll", "roll"},       {"is", "is"}};
    for (const auto& [word, stem] : cases) EXPECT_EQ(porter_stem(word), stem) << word;
}

TEST(AnalyzeProperty, Deterministic) {
    std::mt19937_64 rng(3);
    const auto config = AnalyzerConfig::english();
    const std::string alphabet = "abcdeiouy sST'-.(\xCE\xB1";
    for (int i = 0; i < 300; ++i) {
        std::string text;
        for (std::size_t n = biorag::testing::pick(rng, 40); n > 0; --n) {
            text += alphabet[biorag::testing::pick(rng, alphabet.size())];
        }
        EXPECT_EQ(analyze(text, config), analyze(text, config));
    }
}

// Re-analyzing the joined output terms reproduces the term multiset. This
// holds without stemming; the Porter rules are not idempotent (see below).
TEST(AnalyzeProperty, IdempotentOnNormalizedTermsWithoutStemming) {
    std::mt19937_64 rng(5);
    auto config = AnalyzerConfig::english();
    config.stemmer = StemmerKind::none;
    const std::vector<std::string> words = {"The", "CircRNA", "of", "IL-6", "Crohn's", "exon", "A",
                                            "\xCE\x91", "back-splicing", "is", "TNF\xE2\x80\x94\xCE\xB1"};
    for (int i = 0; i < 300; ++i) {
        std::string text;
        for (std::size_t n = biorag::testing::pick(rng, 12); n > 0; --n) {
            text += words[biorag::testing::pick(rng, words.size())] + " ";
        }
        auto first = terms(analyze(text, config));
        std::ostringstream joined;
        for (const auto& t : first) joined << t << ' ';
        auto second = terms(analyze(joined.str(), config));
        std::sort(first.begin(), first.end());
        std::sort(second.begin(), second.end());
        EXPECT_EQ(first, second) << text;
    }
}

TEST(AnalyzeProperty, PorterIsNotIdempotent) {
    EXPECT_EQ(porter_stem("agreed"), "agre");
    EXPECT_EQ(porter_stem("agre"), "agr");
}
