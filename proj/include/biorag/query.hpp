#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace biorag {

struct QueryAst;

struct TermNode {
    std::string text;
    bool operator==(const TermNode&) const = default;
};

/// Quoted phrase; words are kept raw and analyzed at execution.
struct PhraseNode {
    std::vector<std::string> words;
    bool operator==(const PhraseNode&) const = default;
};

struct AndNode {
    std::vector<QueryAst> children;
};

struct OrNode {
    std::vector<QueryAst> children;
};

/// Boolean query tree. And/Or nodes have at least two children and never
/// directly contain a node of their own kind.
struct QueryAst {
    std::variant<TermNode, PhraseNode, AndNode, OrNode> node;

    static QueryAst term(std::string text) { return {TermNode{std::move(text)}}; }
    static QueryAst phrase(std::vector<std::string> words) { return {PhraseNode{std::move(words)}}; }
    static QueryAst all_of(std::vector<QueryAst> children);
    static QueryAst any_of(std::vector<QueryAst> children);
};

bool operator==(const AndNode& a, const AndNode& b);
bool operator==(const OrNode& a, const OrNode& b);
bool operator==(const QueryAst& a, const QueryAst& b);

enum class DefaultOperator { and_op, or_op };

std::string_view to_string(DefaultOperator op);
/// Case-insensitive "and" / "or".
DefaultOperator parse_default_operator(std::string_view name);

class QueryParseError : public std::runtime_error {
  public:
    QueryParseError(const std::string& message, std::size_t position);
    /// Byte offset into the query text.
    std::size_t position() const { return position_; }

  private:
    std::size_t position_;
};

/// Parses the query-string language:
///
///   expr    := conj ("OR" conj)*
///   conj    := adj ("AND" adj)*
///   adj     := primary primary*        (joined by the default operator)
///   primary := term | '"' words '"' | '(' expr ')'
///
/// Fielded terms, +/- prefixes, NOT, wildcards, fuzzy/proximity operators,
/// boosts and escapes are rejected with a positioned QueryParseError.
QueryAst parse_query_string(std::string_view text, DefaultOperator op);

/// Inverse of parse_query_string under DefaultOperator::and_op.
std::string render(const QueryAst& ast);

/// Renders for the given default operator (explicit AND where adjacency
/// means OR).
std::string render(const QueryAst& ast, DefaultOperator op);

/// Indented tree, one node per line; for diagnostics.
std::string describe(const QueryAst& ast);

struct FieldSpec {
    std::string field;
    double boost = 1.0;
    bool operator==(const FieldSpec&) const = default;
};

/// "title^10" -> (title, 10); a bare name has boost 1.
FieldSpec parse_field_spec(std::string_view spec);

struct QueryEnvelope {
    QueryAst ast;
    std::string query_text;
    std::vector<FieldSpec> fields;
    DefaultOperator default_operator = DefaultOperator::or_op;
    std::size_t size = 50;
};

inline constexpr std::size_t kDefaultResultSize = 50;

/// Fields wrapped around a bare query string: title^10, abstract.
std::vector<FieldSpec> default_fields();

/// Parses a query_string request body:
/// {"query": {"query_string": {"query", "fields", "default_operator"}}, "size"}.
/// Missing fields fall back to title and abstract with boost 1, a missing
/// operator to "or", a missing size to 50. Throws QueryParseError for bad
/// query text and std::invalid_argument for a malformed envelope.
QueryEnvelope parse_query_envelope(std::string_view payload);

/// Serializes back to the request-body shape accepted above.
std::string render_envelope(const QueryEnvelope& envelope);

}  // namespace biorag
