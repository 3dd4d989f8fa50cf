#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace biorag {

/// Template names. Each is a plain text file `<name>.txt` when overridden.
namespace prompt {
inline constexpr std::string_view system = "system";
inline constexpr std::string_view query_envelope = "query_envelope";  // Synergy: full JSON request body
inline constexpr std::string_view query_string = "query_string";      // Task B: bare query string
inline constexpr std::string_view query_improve = "query_improve";
inline constexpr std::string_view snippet_extraction = "snippet_extraction";
inline constexpr std::string_view snippet_rerank = "snippet_rerank";
inline constexpr std::string_view answer_yesno = "answer_yesno";
inline constexpr std::string_view answer_factoid = "answer_factoid";
inline constexpr std::string_view answer_list = "answer_list";
inline constexpr std::string_view answer_summary = "answer_summary";
inline constexpr std::string_view wiki_titles = "wiki_titles";
inline constexpr std::string_view wiki_summary = "wiki_summary";
}  // namespace prompt

class TemplateError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using TemplateVars = std::map<std::string, std::string, std::less<>>;

/// Replaces every {{name}} with vars[name]. Values are inserted as-is (a
/// value containing "{{x}}" is not expanded again). An unknown name throws.
std::string render_template(std::string_view text, const TemplateVars& vars);

/// Names referenced by a template, in order of first use.
std::vector<std::string> template_placeholders(std::string_view text);

class PromptSet {
  public:
    /// The shipped templates. The query-envelope and wiki-title prompts are
    /// fixed reference texts; the rest are our own wording.
    static PromptSet defaults();

    /// Defaults, with any `<name>.txt` in `dir` replacing the built-in text.
    /// Unknown file names and placeholders a template may not use are errors.
    static PromptSet with_overrides(const std::filesystem::path& dir);

    const std::string& text(std::string_view name) const;
    std::string render(std::string_view name, const TemplateVars& vars) const;

    /// Placeholders each template may use.
    static const std::map<std::string, std::vector<std::string>, std::less<>>& allowed_placeholders();

    /// sha256 over all template texts; recorded in traces.
    std::string fingerprint() const;

  private:
    std::map<std::string, std::string, std::less<>> texts_;
};

/// "Background: <summary>\n\n", or "" without a summary.
std::string context_block(std::string_view summary);

}  // namespace biorag
