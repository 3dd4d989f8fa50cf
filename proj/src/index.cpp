#include "biorag/index.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "biorag/hash.hpp"

namespace biorag {

std::string_view to_string(Field f) { return f == Field::title ? "title" : "abstract"; }

Field parse_field(std::string_view name) {
    if (name == "title") return Field::title;
    if (name == "abstract") return Field::abstract;
    throw std::invalid_argument(fmt::format("unknown field '{}'", name));
}

void InvertedIndex::index_document(std::uint32_t ordinal, const Document& doc) {
    for (std::size_t f = 0; f < kFieldCount; ++f) {
        const auto& text = f == 0 ? doc.title : doc.abstract;
        auto& data = fields_[f];
        const auto tokens = analyze(text, config_);
        data.lengths.push_back(static_cast<std::uint32_t>(tokens.size()));
        data.total_length += tokens.size();
        for (const auto& tok : tokens) {
            auto& list = data.terms[tok.term];
            if (list.empty() || list.back().doc != ordinal) list.push_back(Posting{ordinal, 0, {}});
            list.back().tf += 1;
            list.back().positions.push_back(tok.position);
        }
    }
}

InvertedIndex InvertedIndex::build(std::span<const Document> docs, const AnalyzerConfig& config) {
    InvertedIndex index;
    index.config_ = config;
    index.fingerprint_ = config.fingerprint();
    index.docs_.reserve(docs.size());
    for (const auto& doc : docs) {
        const auto ordinal = static_cast<std::uint32_t>(index.docs_.size());
        if (!index.by_id_.emplace(doc.doc_id, ordinal).second) {
            throw FormatError(fmt::format("duplicate document id {}", doc.doc_id));
        }
        index.docs_.push_back(doc);
        index.index_document(ordinal, doc);
    }
    return index;
}

const Document* InvertedIndex::find(std::string_view doc_id) const {
    const auto o = ordinal(doc_id);
    return o ? &docs_[*o] : nullptr;
}

std::optional<std::uint32_t> InvertedIndex::ordinal(std::string_view doc_id) const {
    const auto it = by_id_.find(std::string(doc_id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

const std::vector<Posting>* InvertedIndex::postings(Field f, std::string_view term) const {
    const auto& terms = field(f).terms;
    const auto it = terms.find(std::string(term));
    return it == terms.end() ? nullptr : &it->second;
}

std::size_t InvertedIndex::doc_freq(Field f, std::string_view term) const {
    const auto* p = postings(f, term);
    return p ? p->size() : 0;
}

std::uint32_t InvertedIndex::field_length(Field f, std::uint32_t ordinal) const {
    return field(f).lengths.at(ordinal);
}

double InvertedIndex::average_length(Field f) const {
    if (docs_.empty()) return 0;
    return static_cast<double>(field(f).total_length) / static_cast<double>(docs_.size());
}

double InvertedIndex::idf(std::size_t df) const {
    const double n = static_cast<double>(docs_.size());
    const double d = static_cast<double>(df);
    return std::max(0.0, std::log(1.0 + (n - d + 0.5) / (d + 0.5)));
}

IndexStats InvertedIndex::stats() const {
    IndexStats s;
    s.documents = docs_.size();
    for (std::size_t f = 0; f < kFieldCount; ++f) {
        s.terms[f] = fields_[f].terms.size();
        s.tokens[f] = fields_[f].total_length;
        s.average_length[f] = average_length(static_cast<Field>(f));
    }
    return s;
}

namespace {

using Scores = std::vector<std::pair<std::uint32_t, double>>;  // sorted by ordinal

struct ResolvedField {
    Field field;
    double boost;
};

std::vector<ResolvedField> resolve_fields(std::span<const FieldSpec> fields) {
    if (fields.empty()) throw std::invalid_argument("no fields to search");
    std::vector<ResolvedField> out;
    for (const auto& spec : fields) {
        if (!(spec.boost > 0) || !std::isfinite(spec.boost)) {
            throw std::invalid_argument(fmt::format("boost for field '{}' must be positive", spec.field));
        }
        out.push_back({parse_field(spec.field), spec.boost});
    }
    return out;
}

const Posting* find_posting(const std::vector<Posting>& list, std::uint32_t doc) {
    const auto it = std::lower_bound(list.begin(), list.end(), doc,
                                     [](const Posting& p, std::uint32_t d) { return p.doc < d; });
    return it != list.end() && it->doc == doc ? &*it : nullptr;
}

Scores intersect_sum(const Scores& a, const Scores& b) {
    Scores out;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i].first < b[j].first) {
            ++i;
        } else if (b[j].first < a[i].first) {
            ++j;
        } else {
            out.emplace_back(a[i].first, a[i].second + b[j].second);
            ++i;
            ++j;
        }
    }
    return out;
}

template <typename Combine>
Scores merge_union(const Scores& a, const Scores& b, Combine combine) {
    Scores out;
    out.reserve(a.size() + b.size());
    std::size_t i = 0, j = 0;
    while (i < a.size() || j < b.size()) {
        if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
            out.push_back(a[i++]);
        } else if (i == a.size() || b[j].first < a[i].first) {
            out.push_back(b[j++]);
        } else {
            out.emplace_back(a[i].first, combine(a[i].second, b[j].second));
            ++i;
            ++j;
        }
    }
    return out;
}

class QueryEvaluator {
  public:
    QueryEvaluator(const InvertedIndex& index, std::vector<ResolvedField> fields)
        : index_(index), fields_(std::move(fields)) {}

    // nullopt: the node analyzed away to nothing and takes no part.
    std::optional<Scores> eval(const QueryAst& ast) const {
        return std::visit(
            [&](const auto& n) -> std::optional<Scores> {
                using T = std::decay_t<decltype(n)>;
                if constexpr (std::is_same_v<T, TermNode>) {
                    return leaf(n.text);
                } else if constexpr (std::is_same_v<T, PhraseNode>) {
                    std::string joined;
                    for (const auto& w : n.words) {
                        if (!joined.empty()) joined += ' ';
                        joined += w;
                    }
                    return leaf(joined);
                } else if constexpr (std::is_same_v<T, AndNode>) {
                    std::optional<Scores> acc;
                    for (const auto& c : n.children) {
                        auto s = eval(c);
                        if (!s) continue;
                        acc = acc ? intersect_sum(*acc, *s) : std::move(*s);
                    }
                    return acc;
                } else {
                    std::optional<Scores> acc;
                    for (const auto& c : n.children) {
                        auto s = eval(c);
                        if (!s) continue;
                        acc = acc ? merge_union(*acc, *s, [](double x, double y) { return x + y; })
                                  : std::move(*s);
                    }
                    return acc;
                }
            },
            ast.node);
    }

  private:
    const InvertedIndex& index_;
    std::vector<ResolvedField> fields_;

    std::optional<Scores> leaf(std::string_view text) const {
        const auto tokens = analyze(text, index_.analyzer());
        if (tokens.empty()) return std::nullopt;
        Scores best;
        for (const auto& rf : fields_) {
            auto s = tokens.size() == 1 ? term_scores(rf.field, tokens[0].term) : phrase_scores(rf.field, tokens);
            for (auto& entry : s) entry.second *= rf.boost;
            best = merge_union(best, s, [](double x, double y) { return std::max(x, y); });
        }
        return best;
    }

    double saturate(double tf, Field f, std::uint32_t doc) const {
        const double len = index_.field_length(f, doc);
        const double avg = index_.average_length(f);
        const double norm = kBm25K1 * (1.0 - kBm25B + kBm25B * len / avg);
        return tf * (kBm25K1 + 1.0) / (tf + norm);
    }

    Scores term_scores(Field f, const std::string& term) const {
        Scores out;
        const auto* list = index_.postings(f, term);
        if (!list) return out;
        const double idf = index_.idf(list->size());
        out.reserve(list->size());
        for (const auto& p : *list) out.emplace_back(p.doc, idf * saturate(p.tf, f, p.doc));
        return out;
    }

    Scores phrase_scores(Field f, const std::vector<Token>& tokens) const {
        Scores out;
        std::vector<const std::vector<Posting>*> lists;
        double idf = 0;
        for (const auto& t : tokens) {
            const auto* list = index_.postings(f, t.term);
            if (!list) return out;
            lists.push_back(list);
            idf += index_.idf(list->size());
        }
        const auto base = tokens.front().position;
        std::vector<const Posting*> hits(tokens.size());
        for (const auto& first : *lists.front()) {
            bool all = true;
            for (std::size_t i = 1; i < lists.size() && all; ++i) {
                hits[i] = find_posting(*lists[i], first.doc);
                all = hits[i] != nullptr;
            }
            if (!all) continue;
            std::uint32_t freq = 0;
            for (const auto start : first.positions) {
                bool ok = true;
                for (std::size_t i = 1; i < tokens.size() && ok; ++i) {
                    const auto want = start + (tokens[i].position - base);
                    ok = std::binary_search(hits[i]->positions.begin(), hits[i]->positions.end(), want);
                }
                if (ok) ++freq;
            }
            if (freq > 0) out.emplace_back(first.doc, idf * saturate(freq, f, first.doc));
        }
        return out;
    }
};

}  // namespace

std::vector<std::pair<std::uint32_t, double>> InvertedIndex::match_all(const QueryAst& ast,
                                                                       std::span<const FieldSpec> fields) const {
    QueryEvaluator evaluator(*this, resolve_fields(fields));
    auto scores = evaluator.eval(ast);
    return scores ? std::move(*scores) : Scores{};
}

void rank_hits(std::vector<SearchHit>& hits, std::size_t size) {
    std::sort(hits.begin(), hits.end(), [](const SearchHit& a, const SearchHit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.doc_id < b.doc_id;
    });
    if (hits.size() > size) hits.resize(size);
}

std::vector<SearchHit> InvertedIndex::search(const QueryAst& ast, std::span<const FieldSpec> fields,
                                             std::size_t size) const {
    if (size == 0) throw std::invalid_argument("search size must be at least 1");
    std::vector<SearchHit> hits;
    for (const auto& [doc, score] : match_all(ast, fields)) hits.push_back({docs_[doc].doc_id, score});
    rank_hits(hits, size);
    return hits;
}

std::vector<SearchHit> InvertedIndex::search(const QueryEnvelope& envelope) const {
    return search(envelope.ast, envelope.fields, envelope.size);
}

std::vector<SearchHit> search_all(std::span<const InvertedIndex* const> indices, const QueryAst& ast,
                                  std::span<const FieldSpec> fields, std::size_t size) {
    if (size == 0) throw std::invalid_argument("search size must be at least 1");
    std::map<std::string, double, std::less<>> best;
    for (const auto* index : indices) {
        for (const auto& [doc, score] : index->match_all(ast, fields)) {
            const auto& id = index->document(doc).doc_id;
            auto [it, inserted] = best.emplace(id, score);
            if (!inserted) it->second = std::max(it->second, score);
        }
    }
    std::vector<SearchHit> hits;
    hits.reserve(best.size());
    for (auto& [id, score] : best) hits.push_back({id, score});
    rank_hits(hits, size);
    return hits;
}

DocumentLookup document_lookup(std::vector<const InvertedIndex*> indices) {
    return [indices = std::move(indices)](std::string_view id) -> const Document* {
        for (const auto* index : indices) {
            if (const auto* doc = index->find(id)) return doc;
        }
        return nullptr;
    };
}

// ---- persistence -----------------------------------------------------------

namespace {

constexpr std::string_view kMagic = "BIORAGIX";
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::size_t kChecksumSize = 64;

class Writer {
  public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        buf_.append(s);
    }
    void raw(std::string_view s) { buf_.append(s); }
    std::string& buffer() { return buf_; }

  private:
    std::string buf_;
};

class Reader {
  public:
    explicit Reader(std::string_view data) : data_(data) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
        return v;
    }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::string_view raw(std::size_t n) {
        need(n);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == data_.size(); }

  private:
    std::string_view data_;
    std::size_t pos_ = 0;

    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw IndexFormatError("index file is truncated");
    }
};

}  // namespace

void InvertedIndex::persist(const std::filesystem::path& path) const {
    Writer w;
    w.raw(kMagic);
    w.u32(kFormatVersion);
    w.str(fingerprint_);
    w.str(to_string(config_.stemmer));
    w.u32(static_cast<std::uint32_t>(config_.stopwords.size()));
    for (const auto& s : config_.stopwords) w.str(s);

    w.u32(static_cast<std::uint32_t>(docs_.size()));
    for (const auto& d : docs_) {
        w.str(d.doc_id);
        w.str(d.title);
        w.str(d.abstract);
    }

    w.u32(static_cast<std::uint32_t>(kFieldCount));
    for (std::size_t f = 0; f < kFieldCount; ++f) {
        const auto& data = fields_[f];
        w.str(to_string(static_cast<Field>(f)));
        for (const auto len : data.lengths) w.u32(len);
        std::vector<const std::string*> terms;
        terms.reserve(data.terms.size());
        for (const auto& [term, _] : data.terms) terms.push_back(&term);
        std::sort(terms.begin(), terms.end(), [](const auto* a, const auto* b) { return *a < *b; });
        w.u32(static_cast<std::uint32_t>(terms.size()));
        for (const auto* term : terms) {
            const auto& list = data.terms.at(*term);
            w.str(*term);
            w.u32(static_cast<std::uint32_t>(list.size()));
            for (const auto& p : list) {
                w.u32(p.doc);
                w.u32(p.tf);
                for (const auto pos : p.positions) w.u32(pos);
            }
        }
    }
    auto& buf = w.buffer();
    buf += sha256_hex(buf);

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IndexFormatError(fmt::format("cannot write {}", tmp.string()));
        out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!out) throw IndexFormatError(fmt::format("write failed for {}", tmp.string()));
    }
    std::filesystem::rename(tmp, path);
}

InvertedIndex InvertedIndex::load(const std::filesystem::path& path, const std::optional<AnalyzerConfig>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IndexFormatError(fmt::format("cannot open index {}", path.string()));
    const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto where = path.string();

    if (data.size() < kMagic.size() + kChecksumSize || std::string_view(data).substr(0, kMagic.size()) != kMagic) {
        throw IndexFormatError(fmt::format("{}: not an index file (or truncated)", where));
    }
    const std::string_view body = std::string_view(data).substr(0, data.size() - kChecksumSize);
    if (sha256_hex(body) != std::string_view(data).substr(body.size())) {
        throw IndexFormatError(fmt::format("{}: checksum mismatch, file is truncated or corrupt", where));
    }

    Reader r(body);
    r.raw(kMagic.size());
    const auto version = r.u32();
    if (version != kFormatVersion) {
        throw IndexFormatError(fmt::format("{}: unsupported index version {}", where, version));
    }
    InvertedIndex index;
    index.fingerprint_ = r.str();
    index.config_.stemmer = parse_stemmer_kind(r.str());
    const auto n_stop = r.u32();
    for (std::uint32_t i = 0; i < n_stop; ++i) index.config_.stopwords.insert(r.str());
    if (index.config_.fingerprint() != index.fingerprint_) {
        throw IndexFormatError(fmt::format("{}: stored analyzer does not match its fingerprint", where));
    }
    if (expected && expected->fingerprint() != index.fingerprint_) {
        throw FingerprintMismatch(fmt::format(
            "{}: index was built with analyzer {} but {} is configured", where,
            index.fingerprint_.substr(0, 12), expected->fingerprint().substr(0, 12)));
    }

    const auto n_docs = r.u32();
    for (std::uint32_t i = 0; i < n_docs; ++i) {
        Document d;
        d.doc_id = r.str();
        d.title = r.str();
        d.abstract = r.str();
        if (!index.by_id_.emplace(d.doc_id, i).second) {
            throw IndexFormatError(fmt::format("{}: duplicate document id {}", where, d.doc_id));
        }
        index.docs_.push_back(std::move(d));
    }

    if (r.u32() != kFieldCount) throw IndexFormatError(fmt::format("{}: unexpected field count", where));
    for (std::size_t f = 0; f < kFieldCount; ++f) {
        if (r.str() != to_string(static_cast<Field>(f))) {
            throw IndexFormatError(fmt::format("{}: unexpected field layout", where));
        }
        auto& data_f = index.fields_[f];
        data_f.lengths.resize(n_docs);
        for (auto& len : data_f.lengths) {
            len = r.u32();
            data_f.total_length += len;
        }
        const auto n_terms = r.u32();
        for (std::uint32_t t = 0; t < n_terms; ++t) {
            auto term = r.str();
            const auto n_post = r.u32();
            std::vector<Posting> list(n_post);
            for (auto& p : list) {
                p.doc = r.u32();
                p.tf = r.u32();
                if (p.doc >= n_docs || p.tf == 0 || p.tf > data_f.lengths[p.doc]) {
                    throw IndexFormatError(fmt::format("{}: corrupt posting for '{}'", where, term));
                }
                p.positions.resize(p.tf);
                for (auto& pos : p.positions) pos = r.u32();
            }
            data_f.terms.emplace(std::move(term), std::move(list));
        }
    }
    if (!r.done()) throw IndexFormatError(fmt::format("{}: trailing data", where));
    return index;
}

}  // namespace biorag
