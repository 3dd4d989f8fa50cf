#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

namespace biorag {

enum class Role { system, user, assistant };

std::string_view to_string(Role role);
Role parse_role(std::string_view name);

struct ChatMessage {
    Role role = Role::user;
    std::string content;

    bool operator==(const ChatMessage&) const = default;
};

nlohmann::json messages_to_json(std::span<const ChatMessage> messages);
std::vector<ChatMessage> messages_from_json(const nlohmann::json& j);

enum class ResponseFormat { text, structured };

struct GenerationParams {
    double temperature = 0.0;
    std::optional<std::int64_t> seed;
    ResponseFormat response_format = ResponseFormat::text;
    std::optional<int> max_output;

    bool operator==(const GenerationParams&) const = default;
};

/// sha256 over a canonical JSON rendering of (model, params, messages).
std::string request_fingerprint(std::string_view model, std::span<const ChatMessage> messages,
                                const GenerationParams& params);

struct Attempt {
    int number = 0;
    int status = 0;  // HTTP status, 0 when the transport failed
    std::string detail;
};

struct Completion {
    std::string content;
    std::string fingerprint;
    std::vector<Attempt> attempts;
};

class ProviderError : public std::runtime_error {
  public:
    ProviderError(const std::string& message, std::vector<Attempt> attempts = {})
        : std::runtime_error(message), attempts_(std::move(attempts)) {}
    const std::vector<Attempt>& attempts() const { return attempts_; }

  private:
    std::vector<Attempt> attempts_;
};

/// A strict mock was asked for a request it has no fixture for. Treated as a
/// configuration error: it aborts a run instead of being isolated per question.
class FixtureMissError : public std::runtime_error {
  public:
    FixtureMissError(const std::string& fingerprint, const std::string& hint);
    const std::string& fingerprint() const { return fingerprint_; }

  private:
    std::string fingerprint_;
};

class LlmProvider {
  public:
    virtual ~LlmProvider() = default;
    virtual const std::string& model() const = 0;
    /// Must be safe to call from several threads at once.
    virtual Completion complete(std::span<const ChatMessage> messages, const GenerationParams& params) = 0;
};

// ---- offline fixtures -------------------------------------------------------

struct FixtureEntry {
    std::string completion;
    std::string label;

    bool operator==(const FixtureEntry&) const = default;
};

using FixtureSet = std::map<std::string, FixtureEntry, std::less<>>;

/// A fixture file is a JSON object {fingerprint: "text"} or
/// {fingerprint: {"completion": "text", "label": "..."}}. A directory loads
/// every *.json file in it; the same fingerprint with two different
/// completions is an error.
FixtureSet load_fixtures(const std::filesystem::path& path);
void save_fixtures(const std::filesystem::path& path, const FixtureSet& fixtures);

/// Short human-readable tag for a request: model and the head of the last turn.
std::string fixture_label(std::string_view model, std::span<const ChatMessage> messages);

class MockProvider : public LlmProvider {
  public:
    MockProvider(std::string model, FixtureSet fixtures, bool strict = true);

    const std::string& model() const override { return model_; }
    Completion complete(std::span<const ChatMessage> messages, const GenerationParams& params) override;

    /// Fingerprints requested but absent (non-strict mode only).
    std::vector<std::string> misses() const;

  private:
    std::string model_;
    FixtureSet fixtures_;
    bool strict_;
    mutable std::mutex mutex_;
    std::vector<std::string> misses_;
};

/// Answers from a function; used to script fixtures and in tests.
class ScriptedProvider : public LlmProvider {
  public:
    using Script = std::function<std::string(std::span<const ChatMessage>, const GenerationParams&)>;

    ScriptedProvider(std::string model, Script script) : model_(std::move(model)), script_(std::move(script)) {}
    const std::string& model() const override { return model_; }
    Completion complete(std::span<const ChatMessage> messages, const GenerationParams& params) override;

  private:
    std::string model_;
    Script script_;
};

/// Forwards to another provider and remembers every exchange as a fixture.
class RecordingProvider : public LlmProvider {
  public:
    explicit RecordingProvider(LlmProvider& inner) : inner_(inner) {}
    const std::string& model() const override { return inner_.model(); }
    Completion complete(std::span<const ChatMessage> messages, const GenerationParams& params) override;
    FixtureSet recorded() const;

  private:
    LlmProvider& inner_;
    mutable std::mutex mutex_;
    FixtureSet recorded_;
};

// ---- live provider ----------------------------------------------------------

struct HttpResponse {
    int status = 0;
    std::string body;
};

class TransportError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

using HttpHeaders = std::vector<std::pair<std::string, std::string>>;

class HttpTransport {
  public:
    virtual ~HttpTransport() = default;
    /// Throws TransportError when no response was received.
    virtual HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers) = 0;
    virtual HttpResponse get(const std::string& url, const HttpHeaders& headers) = 0;
};

/// cpp-httplib backed transport; https needs OpenSSL.
std::unique_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout);

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct RetryPolicy {
    int max_attempts = 3;
    /// Delay before attempt i+2 is backoff[min(i, size-1)].
    std::vector<std::chrono::milliseconds> backoff = {std::chrono::milliseconds(1000),
                                                      std::chrono::milliseconds(4000),
                                                      std::chrono::milliseconds(16000)};
};

/// Token bucket: `per_minute` admissions per minute with bursts of `burst`.
/// Callers block in acquire() until admitted; the call itself runs unlocked.
class RateLimiter {
  public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    RateLimiter(double per_minute, double burst = 1.0, Clock clock = {}, Sleeper sleeper = {});
    /// Returns how long the caller waited.
    std::chrono::milliseconds acquire();

  private:
    double rate_per_ms_;
    double capacity_;
    double tokens_;
    Clock clock_;
    Sleeper sleeper_;
    std::chrono::steady_clock::time_point last_;
    std::mutex mutex_;
};

struct HttpProviderOptions {
    std::string endpoint;  // full chat/completions URL
    std::string api_key;
    std::string model;
    RetryPolicy retry;
    HttpHeaders extra_headers;
};

/// Speaks the common chat-completions wire shape: {model, messages,
/// temperature, seed, max_tokens, response_format}.
class HttpProvider : public LlmProvider {
  public:
    HttpProvider(HttpProviderOptions options, std::shared_ptr<HttpTransport> transport,
                 std::shared_ptr<RateLimiter> limiter = nullptr, Sleeper sleeper = {});

    const std::string& model() const override { return options_.model; }
    Completion complete(std::span<const ChatMessage> messages, const GenerationParams& params) override;

    std::string request_body(std::span<const ChatMessage> messages, const GenerationParams& params) const;

  private:
    HttpProviderOptions options_;
    std::shared_ptr<HttpTransport> transport_;
    std::shared_ptr<RateLimiter> limiter_;
    Sleeper sleeper_;
};

enum class ProviderKind { mock, http };

struct ProviderConfig {
    ProviderKind kind = ProviderKind::mock;
    std::string model = "mock";
    std::filesystem::path fixtures;
    bool strict = true;
    std::string endpoint;
    std::string api_key_env = "OPENAI_API_KEY";
    RetryPolicy retry;
    double requests_per_minute = 0;  // 0: unlimited
    std::chrono::seconds timeout{120};
};

/// Throws std::invalid_argument when the config is incomplete (mock without
/// fixtures, http without endpoint, missing credential variable).
std::unique_ptr<LlmProvider> make_provider(const ProviderConfig& config);

// ---- structured output ------------------------------------------------------

inline constexpr std::string_view kCorrectiveInstruction = "Return only the requested structure.";

class StructuredOutputError : public std::runtime_error {
  public:
    StructuredOutputError(const std::string& message, std::vector<std::string> raw)
        : std::runtime_error(message), raw_(std::move(raw)) {}
    const std::vector<std::string>& raw_completions() const { return raw_; }

  private:
    std::vector<std::string> raw_;
};

/// One provider exchange, kept for traces.
struct CallRecord {
    std::string fingerprint;
    std::vector<ChatMessage> messages;
    std::string completion;
    std::size_t attempts = 0;
};

using CallLog = std::vector<CallRecord>;

/// complete() plus an optional log entry.
Completion call_provider(LlmProvider& provider, std::span<const ChatMessage> messages,
                         const GenerationParams& params, CallLog* log = nullptr);

/// The retry turn pair appended after an unusable completion.
std::vector<ChatMessage> corrective_turns(std::string_view failed_completion);

/// Asks, parses with `parse` (returning std::optional<T>), and on failure asks
/// once more with the failed output and a corrective instruction appended.
/// Throws StructuredOutputError holding both raw completions.
template <typename Parse>
auto complete_validated(LlmProvider& provider, std::vector<ChatMessage> messages, const GenerationParams& params,
                        Parse&& parse, CallLog* log = nullptr) ->
    typename std::invoke_result_t<Parse, const std::string&>::value_type {
    std::vector<std::string> raw;
    for (int round = 0; round < 2; ++round) {
        auto completion = call_provider(provider, messages, params, log);
        if (auto value = parse(static_cast<const std::string&>(completion.content))) return std::move(*value);
        raw.push_back(completion.content);
        if (round == 0) {
            for (auto& m : corrective_turns(completion.content)) messages.push_back(std::move(m));
        }
    }
    throw StructuredOutputError("completion did not have the requested structure after one retry", std::move(raw));
}

/// Finds a JSON value in a completion: the whole text, a fenced code block, or
/// the first balanced {...} / [...] span that parses.
std::optional<nlohmann::json> extract_json(std::string_view text);

/// JSON-mode completion checked by `check`. Requires
/// params.response_format == structured.
nlohmann::json complete_structured(LlmProvider& provider, std::vector<ChatMessage> messages,
                                   const GenerationParams& params,
                                   const std::function<bool(const nlohmann::json&)>& check, CallLog* log = nullptr);

/// Check helper: an array of strings (possibly empty).
bool is_string_list(const nlohmann::json& j);

}  // namespace biorag
