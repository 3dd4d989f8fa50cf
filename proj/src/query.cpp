#include "biorag/query.hpp"

#include <charconv>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace biorag {

namespace {

template <typename Node>
void flatten_into(std::vector<QueryAst>& out, QueryAst child) {
    if (auto* same = std::get_if<Node>(&child.node)) {
        for (auto& grandchild : same->children) out.push_back(std::move(grandchild));
    } else {
        out.push_back(std::move(child));
    }
}

template <typename Node>
QueryAst combine(std::vector<QueryAst> children) {
    if (children.empty()) throw std::invalid_argument("boolean node needs at least one child");
    if (children.size() == 1) return std::move(children.front());
    Node node;
    for (auto& child : children) flatten_into<Node>(node.children, std::move(child));
    return QueryAst{std::move(node)};
}

}  // namespace

QueryAst QueryAst::all_of(std::vector<QueryAst> children) { return combine<AndNode>(std::move(children)); }
QueryAst QueryAst::any_of(std::vector<QueryAst> children) { return combine<OrNode>(std::move(children)); }

bool operator==(const AndNode& a, const AndNode& b) { return a.children == b.children; }
bool operator==(const OrNode& a, const OrNode& b) { return a.children == b.children; }
bool operator==(const QueryAst& a, const QueryAst& b) { return a.node == b.node; }

std::string_view to_string(DefaultOperator op) { return op == DefaultOperator::and_op ? "and" : "or"; }

DefaultOperator parse_default_operator(std::string_view name) {
    std::string lower(name);
    for (auto& c : lower) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    if (lower == "and") return DefaultOperator::and_op;
    if (lower == "or") return DefaultOperator::or_op;
    throw std::invalid_argument(fmt::format("unknown default_operator '{}'", name));
}

QueryParseError::QueryParseError(const std::string& message, std::size_t position)
    : std::runtime_error(fmt::format("{} at offset {}", message, position)), position_(position) {}

namespace {

enum class TokKind { word, phrase, lparen, rparen, or_op, and_op, end };

struct Tok {
    TokKind kind;
    std::size_t pos;
    std::string text;                // word
    std::vector<std::string> words;  // phrase
};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Characters with a meaning in the full query_string syntax that we do not
// support. Inside a word they make the query unparseable.
bool is_reserved(char c) {
    switch (c) {
    case ':':
    case '*':
    case '?':
    case '~':
    case '^':
    case '\\':
    case '{':
    case '}':
    case '[':
    case ']':
    case '/':
    case '<':
    case '>':
    case '=':
    case '!': return true;
    default: return false;
    }
}

class Lexer {
  public:
    explicit Lexer(std::string_view text) : text_(text) {}

    std::vector<Tok> run() {
        std::vector<Tok> out;
        while (true) {
            while (pos_ < text_.size() && is_space(text_[pos_])) ++pos_;
            if (pos_ >= text_.size()) break;
            const char c = text_[pos_];
            if (c == '(') {
                out.push_back({TokKind::lparen, pos_++, {}, {}});
            } else if (c == ')') {
                out.push_back({TokKind::rparen, pos_++, {}, {}});
            } else if (c == '"') {
                out.push_back(phrase());
            } else {
                out.push_back(word());
            }
        }
        out.push_back({TokKind::end, text_.size(), {}, {}});
        return out;
    }

  private:
    std::string_view text_;
    std::size_t pos_ = 0;

    Tok phrase() {
        const auto start = pos_++;
        std::vector<std::string> words;
        std::string current;
        while (true) {
            if (pos_ >= text_.size()) throw QueryParseError("unbalanced quote", start);
            const char c = text_[pos_];
            if (c == '"') break;
            if (c == '\\') throw QueryParseError("escape sequences are not supported", pos_);
            if (is_space(c)) {
                if (!current.empty()) words.push_back(std::move(current));
                current.clear();
            } else {
                current.push_back(c);
            }
            ++pos_;
        }
        ++pos_;
        if (!current.empty()) words.push_back(std::move(current));
        if (words.empty()) throw QueryParseError("empty phrase", start);
        return {TokKind::phrase, start, {}, std::move(words)};
    }

    Tok word() {
        const auto start = pos_;
        while (pos_ < text_.size()) {
            const char c = text_[pos_];
            if (is_space(c) || c == '(' || c == ')' || c == '"') break;
            if (is_reserved(c)) {
                throw QueryParseError(fmt::format("unsupported character '{}'", c), pos_);
            }
            if ((c == '&' || c == '|') && pos_ + 1 < text_.size() && text_[pos_ + 1] == c) {
                throw QueryParseError(fmt::format("unsupported operator '{}{}'", c, c), pos_);
            }
            ++pos_;
        }
        std::string w(text_.substr(start, pos_ - start));
        if (w.front() == '+' || w.front() == '-') {
            throw QueryParseError(fmt::format("unsupported prefix operator '{}'", w.front()), start);
        }
        if (w == "OR") return {TokKind::or_op, start, {}, {}};
        if (w == "AND") return {TokKind::and_op, start, {}, {}};
        if (w == "NOT") throw QueryParseError("NOT is not supported", start);
        return {TokKind::word, start, std::move(w), {}};
    }
};

class Parser {
  public:
    Parser(std::vector<Tok> toks, DefaultOperator op) : toks_(std::move(toks)), op_(op) {}

    QueryAst parse() {
        if (peek().kind == TokKind::end) throw QueryParseError("empty query", 0);
        auto ast = expr();
        if (peek().kind == TokKind::rparen) throw QueryParseError("unbalanced ')'", peek().pos);
        if (peek().kind != TokKind::end) throw QueryParseError("unexpected token", peek().pos);
        return ast;
    }

  private:
    std::vector<Tok> toks_;
    std::size_t i_ = 0;
    DefaultOperator op_;
    int depth_ = 0;

    const Tok& peek() const { return toks_[i_]; }

    QueryAst expr() {
        std::vector<QueryAst> parts;
        parts.push_back(conj());
        while (peek().kind == TokKind::or_op) {
            const auto op_pos = peek().pos;
            ++i_;
            if (!starts_primary(peek().kind)) throw QueryParseError("dangling OR", op_pos);
            parts.push_back(conj());
        }
        return QueryAst::any_of(std::move(parts));
    }

    QueryAst conj() {
        std::vector<QueryAst> parts;
        parts.push_back(adjacent());
        while (peek().kind == TokKind::and_op) {
            const auto op_pos = peek().pos;
            ++i_;
            if (!starts_primary(peek().kind)) throw QueryParseError("dangling AND", op_pos);
            parts.push_back(adjacent());
        }
        return QueryAst::all_of(std::move(parts));
    }

    QueryAst adjacent() {
        std::vector<QueryAst> parts;
        if (!starts_primary(peek().kind)) {
            const auto& t = peek();
            if (t.kind == TokKind::or_op) throw QueryParseError("dangling OR", t.pos);
            if (t.kind == TokKind::and_op) throw QueryParseError("dangling AND", t.pos);
            if (t.kind == TokKind::rparen) throw QueryParseError("unbalanced ')'", t.pos);
            throw QueryParseError("expected a term", t.pos);
        }
        while (starts_primary(peek().kind)) parts.push_back(primary());
        return op_ == DefaultOperator::and_op ? QueryAst::all_of(std::move(parts))
                                              : QueryAst::any_of(std::move(parts));
    }

    static bool starts_primary(TokKind k) {
        return k == TokKind::word || k == TokKind::phrase || k == TokKind::lparen;
    }

    QueryAst primary() {
        Tok& t = toks_[i_++];
        switch (t.kind) {
        case TokKind::word: return QueryAst::term(std::move(t.text));
        case TokKind::phrase: return QueryAst::phrase(std::move(t.words));
        case TokKind::lparen: {
            if (peek().kind == TokKind::rparen) throw QueryParseError("empty group", t.pos);
            if (peek().kind == TokKind::end) throw QueryParseError("unbalanced '('", t.pos);
            // deep nesting from hostile input would otherwise blow the stack
            if (++depth_ > 256) throw QueryParseError("nesting too deep", t.pos);
            auto inner = expr();
            --depth_;
            if (peek().kind != TokKind::rparen) throw QueryParseError("unbalanced '('", t.pos);
            ++i_;
            return inner;
        }
        default: throw QueryParseError("expected a term", t.pos);
        }
    }
};

}  // namespace

QueryAst parse_query_string(std::string_view text, DefaultOperator op) {
    return Parser(Lexer(text).run(), op).parse();
}

namespace {

void render_into(std::string& out, const QueryAst& ast, DefaultOperator op, bool group) {
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, TermNode>) {
                out += n.text;
            } else if constexpr (std::is_same_v<T, PhraseNode>) {
                out += '"';
                for (std::size_t i = 0; i < n.words.size(); ++i) {
                    if (i) out += ' ';
                    out += n.words[i];
                }
                out += '"';
            } else if constexpr (std::is_same_v<T, AndNode>) {
                if (group) out += '(';
                const char* sep = op == DefaultOperator::and_op ? " " : " AND ";
                for (std::size_t i = 0; i < n.children.size(); ++i) {
                    if (i) out += sep;
                    const auto& child = n.children[i];
                    const bool nested = !std::holds_alternative<TermNode>(child.node) &&
                                        !std::holds_alternative<PhraseNode>(child.node);
                    render_into(out, child, op, nested);
                }
                if (group) out += ')';
            } else {
                if (group) out += '(';
                for (std::size_t i = 0; i < n.children.size(); ++i) {
                    if (i) out += " OR ";
                    const auto& child = n.children[i];
                    render_into(out, child, op, std::holds_alternative<OrNode>(child.node));
                }
                if (group) out += ')';
            }
        },
        ast.node);
}

void describe_into(std::string& out, const QueryAst& ast, int indent) {
    out.append(static_cast<std::size_t>(indent) * 2, ' ');
    std::visit(
        [&](const auto& n) {
            using T = std::decay_t<decltype(n)>;
            if constexpr (std::is_same_v<T, TermNode>) {
                out += fmt::format("Term({})\n", n.text);
            } else if constexpr (std::is_same_v<T, PhraseNode>) {
                out += fmt::format("Phrase({})\n", fmt::join(n.words, " "));
            } else {
                out += std::is_same_v<T, AndNode> ? "And\n" : "Or\n";
                for (const auto& c : n.children) describe_into(out, c, indent + 1);
            }
        },
        ast.node);
}

}  // namespace

std::string render(const QueryAst& ast) { return render(ast, DefaultOperator::and_op); }

std::string render(const QueryAst& ast, DefaultOperator op) {
    std::string out;
    render_into(out, ast, op, false);
    return out;
}

std::string describe(const QueryAst& ast) {
    std::string out;
    describe_into(out, ast, 0);
    return out;
}

FieldSpec parse_field_spec(std::string_view spec) {
    const auto caret = spec.rfind('^');
    FieldSpec out;
    out.field = std::string(spec.substr(0, caret));
    if (out.field.empty()) throw std::invalid_argument(fmt::format("empty field name in '{}'", spec));
    if (caret == std::string_view::npos) return out;
    const auto boost = spec.substr(caret + 1);
    double value = 0;
    const auto [ptr, ec] = std::from_chars(boost.data(), boost.data() + boost.size(), value);
    if (boost.empty() || ec != std::errc{} || ptr != boost.data() + boost.size() || !std::isfinite(value)) {
        throw std::invalid_argument(fmt::format("invalid boost '{}' in field '{}'", boost, spec));
    }
    if (value <= 0) throw std::invalid_argument(fmt::format("boost must be positive in '{}'", spec));
    out.boost = value;
    return out;
}

std::vector<FieldSpec> default_fields() { return {{"title", 10.0}, {"abstract", 1.0}}; }

QueryEnvelope parse_query_envelope(std::string_view payload) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(payload);
    } catch (const nlohmann::json::parse_error& e) {
        throw std::invalid_argument(fmt::format("query envelope is not valid JSON: {}", e.what()));
    }
    if (!j.is_object() || !j.contains("query") || !j["query"].is_object()) {
        throw std::invalid_argument("query envelope lacks a \"query\" object");
    }
    const auto& query = j["query"];
    if (!query.contains("query_string") || !query["query_string"].is_object()) {
        throw std::invalid_argument("only query_string queries are supported");
    }
    const auto& qs = query["query_string"];
    if (!qs.contains("query") || !qs["query"].is_string()) {
        throw std::invalid_argument("query_string lacks query text");
    }

    QueryEnvelope env;
    env.query_text = qs["query"].get<std::string>();
    if (qs.contains("default_operator")) {
        if (!qs["default_operator"].is_string()) throw std::invalid_argument("default_operator must be a string");
        env.default_operator = parse_default_operator(qs["default_operator"].get<std::string>());
    }
    if (qs.contains("fields")) {
        if (!qs["fields"].is_array()) throw std::invalid_argument("fields must be an array");
        for (const auto& f : qs["fields"]) {
            if (!f.is_string()) throw std::invalid_argument("field entries must be strings");
            env.fields.push_back(parse_field_spec(f.get<std::string>()));
        }
        if (env.fields.empty()) throw std::invalid_argument("fields must not be empty");
    } else {
        env.fields = {{"title", 1.0}, {"abstract", 1.0}};
    }
    if (j.contains("size")) {
        const auto& s = j["size"];
        if (!s.is_number_integer() || s.get<long long>() < 1) {
            throw std::invalid_argument("size must be a positive integer");
        }
        env.size = static_cast<std::size_t>(s.get<long long>());
    }
    env.ast = parse_query_string(env.query_text, env.default_operator);
    return env;
}

std::string render_envelope(const QueryEnvelope& envelope) {
    nlohmann::ordered_json fields = nlohmann::ordered_json::array();
    for (const auto& f : envelope.fields) {
        fields.push_back(f.boost == 1.0 ? f.field : fmt::format("{}^{}", f.field, f.boost));
    }
    nlohmann::ordered_json j;
    j["query"]["query_string"]["query"] = envelope.query_text.empty()
                                              ? render(envelope.ast, envelope.default_operator)
                                              : envelope.query_text;
    j["query"]["query_string"]["fields"] = std::move(fields);
    j["query"]["query_string"]["default_operator"] = std::string(to_string(envelope.default_operator));
    j["size"] = envelope.size;
    return j.dump(2);
}

}  // namespace biorag
