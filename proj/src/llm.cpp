#include "biorag/llm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <fmt/format.h>

#include "biorag/corpus.hpp"
#include "biorag/hash.hpp"

namespace biorag {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Role role) {
    switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    return "user";
}

Role parse_role(std::string_view name) {
    if (name == "system") return Role::system;
    if (name == "user") return Role::user;
    if (name == "assistant") return Role::assistant;
    throw std::invalid_argument(fmt::format("unknown role '{}'", name));
}

json messages_to_json(std::span<const ChatMessage> messages) {
    json out = json::array();
    for (const auto& m : messages) out.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    return out;
}

std::vector<ChatMessage> messages_from_json(const json& j) {
    if (!j.is_array()) throw std::invalid_argument("messages must be an array");
    std::vector<ChatMessage> out;
    for (const auto& m : j) {
        if (!m.is_object() || !m.contains("role") || !m.contains("content") || !m["content"].is_string()) {
            throw std::invalid_argument("message needs a role and string content");
        }
        out.push_back({parse_role(m["role"].get<std::string>()), m["content"].get<std::string>()});
    }
    return out;
}

std::string request_fingerprint(std::string_view model, std::span<const ChatMessage> messages,
                                const GenerationParams& params) {
    ordered_json canon;
    canon["model"] = model;
    ordered_json p;
    p["temperature"] = params.temperature;
    p["seed"] = params.seed ? ordered_json(*params.seed) : ordered_json(nullptr);
    p["response_format"] = params.response_format == ResponseFormat::structured ? "structured" : "text";
    p["max_output"] = params.max_output ? ordered_json(*params.max_output) : ordered_json(nullptr);
    canon["params"] = std::move(p);
    ordered_json msgs = ordered_json::array();
    for (const auto& m : messages) {
        ordered_json e;
        e["role"] = to_string(m.role);
        e["content"] = m.content;
        msgs.push_back(std::move(e));
    }
    canon["messages"] = std::move(msgs);
    return sha256_hex(canon.dump());
}

FixtureMissError::FixtureMissError(const std::string& fingerprint, const std::string& hint)
    : std::runtime_error(fmt::format("no fixture for request {} ({})", fingerprint, hint)), fingerprint_(fingerprint) {}

// ---- fixtures ---------------------------------------------------------------

namespace {

void merge_fixture_file(FixtureSet& out, const std::filesystem::path& path) {
    const auto j = read_json_file(path);
    if (!j.is_object()) throw FormatError(fmt::format("{}: fixture file must be a JSON object", path.string()));
    for (const auto& [fp, value] : j.items()) {
        FixtureEntry entry;
        if (value.is_string()) {
            entry.completion = value.get<std::string>();
        } else if (value.is_object() && value.contains("completion") && value["completion"].is_string()) {
            entry.completion = value["completion"].get<std::string>();
            if (value.contains("label") && value["label"].is_string()) entry.label = value["label"].get<std::string>();
        } else {
            throw FormatError(fmt::format("{}: fixture {} has no completion text", path.string(), fp));
        }
        auto [it, inserted] = out.emplace(fp, entry);
        if (!inserted && it->second.completion != entry.completion) {
            throw FormatError(fmt::format("{}: conflicting completions for fixture {}", path.string(), fp));
        }
    }
}

}  // namespace

FixtureSet load_fixtures(const std::filesystem::path& path) {
    FixtureSet out;
    if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(path)) {
            if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) merge_fixture_file(out, f);
    } else {
        merge_fixture_file(out, path);
    }
    return out;
}

void save_fixtures(const std::filesystem::path& path, const FixtureSet& fixtures) {
    ordered_json j = ordered_json::object();
    for (const auto& [fp, entry] : fixtures) {
        ordered_json e;
        e["completion"] = entry.completion;
        e["label"] = entry.label;
        j[fp] = std::move(e);
    }
    write_text_file(path, j.dump(2) + "\n");
}

std::string fixture_label(std::string_view model, std::span<const ChatMessage> messages) {
    std::string head;
    if (!messages.empty()) {
        const auto& last = messages.back().content;
        for (const char c : last) {
            if (head.size() >= 80) break;
            head.push_back(c == '\n' ? ' ' : c);
        }
        // do not cut a UTF-8 sequence in half
        while (!head.empty() && (static_cast<unsigned char>(head.back()) & 0xC0) == 0x80) head.pop_back();
        if (!head.empty() && (static_cast<unsigned char>(head.back()) & 0xC0) == 0xC0) head.pop_back();
    }
    return fmt::format("{} | {} turns | {}", model, messages.size(), head);
}

MockProvider::MockProvider(std::string model, FixtureSet fixtures, bool strict)
    : model_(std::move(model)), fixtures_(std::move(fixtures)), strict_(strict) {}

Completion MockProvider::complete(std::span<const ChatMessage> messages, const GenerationParams& params) {
    auto fp = request_fingerprint(model_, messages, params);
    const auto it = fixtures_.find(fp);
    if (it != fixtures_.end()) return {it->second.completion, std::move(fp), {}};
    if (strict_) throw FixtureMissError(fp, fixture_label(model_, messages));
    std::lock_guard lock(mutex_);
    misses_.push_back(fp);
    return {"", std::move(fp), {}};
}

std::vector<std::string> MockProvider::misses() const {
    std::lock_guard lock(mutex_);
    return misses_;
}

Completion ScriptedProvider::complete(std::span<const ChatMessage> messages, const GenerationParams& params) {
    return {script_(messages, params), request_fingerprint(model_, messages, params), {}};
}

Completion RecordingProvider::complete(std::span<const ChatMessage> messages, const GenerationParams& params) {
    auto c = inner_.complete(messages, params);
    std::lock_guard lock(mutex_);
    recorded_[c.fingerprint] = FixtureEntry{c.content, fixture_label(inner_.model(), messages)};
    return c;
}

FixtureSet RecordingProvider::recorded() const {
    std::lock_guard lock(mutex_);
    return recorded_;
}

// ---- rate limiting ------------------------------------------------------------

RateLimiter::RateLimiter(double per_minute, double burst, Clock clock, Sleeper sleeper)
    : rate_per_ms_(per_minute / 60000.0),
      capacity_(std::max(1.0, burst)),
      tokens_(capacity_),
      clock_(clock ? std::move(clock) : Clock([] { return std::chrono::steady_clock::now(); })),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper([](auto d) { std::this_thread::sleep_for(d); })),
      last_(clock_()) {
    if (!(per_minute > 0)) throw std::invalid_argument("rate limit must be positive");
}

std::chrono::milliseconds RateLimiter::acquire() {
    std::chrono::milliseconds wait{0};
    {
        std::lock_guard lock(mutex_);
        const auto now = clock_();
        const double elapsed = std::chrono::duration<double, std::milli>(now - last_).count();
        last_ = now;
        tokens_ = std::min(capacity_, tokens_ + elapsed * rate_per_ms_);
        tokens_ -= 1.0;  // a negative balance is a reservation for a later slot
        if (tokens_ < 0) wait = std::chrono::milliseconds(static_cast<long long>(std::ceil(-tokens_ / rate_per_ms_)));
    }
    if (wait.count() > 0) sleeper_(wait);
    return wait;
}

// ---- http provider ------------------------------------------------------------

HttpProvider::HttpProvider(HttpProviderOptions options, std::shared_ptr<HttpTransport> transport,
                           std::shared_ptr<RateLimiter> limiter, Sleeper sleeper)
    : options_(std::move(options)),
      transport_(std::move(transport)),
      limiter_(std::move(limiter)),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper([](auto d) { std::this_thread::sleep_for(d); })) {
    if (options_.endpoint.empty()) throw std::invalid_argument("http provider needs an endpoint");
    if (!transport_) throw std::invalid_argument("http provider needs a transport");
    if (options_.retry.max_attempts < 1) throw std::invalid_argument("retry.max_attempts must be at least 1");
}

std::string HttpProvider::request_body(std::span<const ChatMessage> messages, const GenerationParams& params) const {
    ordered_json body;
    body["model"] = options_.model;
    ordered_json msgs = ordered_json::array();
    for (const auto& m : messages) {
        ordered_json e;
        e["role"] = to_string(m.role);
        e["content"] = m.content;
        msgs.push_back(std::move(e));
    }
    body["messages"] = std::move(msgs);
    body["temperature"] = params.temperature;
    if (params.seed) body["seed"] = *params.seed;
    if (params.max_output) body["max_tokens"] = *params.max_output;
    if (params.response_format == ResponseFormat::structured) body["response_format"] = {{"type", "json_object"}};
    return body.dump();
}

Completion HttpProvider::complete(std::span<const ChatMessage> messages, const GenerationParams& params) {
    if (messages.empty()) throw std::invalid_argument("no messages to send");
    const auto body = request_body(messages, params);
    HttpHeaders headers = {{"Content-Type", "application/json"}};
    if (!options_.api_key.empty()) headers.emplace_back("Authorization", "Bearer " + options_.api_key);
    for (const auto& h : options_.extra_headers) headers.push_back(h);

    std::vector<Attempt> log;
    const auto& retry = options_.retry;
    for (int n = 1; n <= retry.max_attempts; ++n) {
        if (limiter_) limiter_->acquire();
        bool retryable = true;
        try {
            const auto res = transport_->post(options_.endpoint, body, headers);
            log.push_back({n, res.status, res.status >= 200 && res.status < 300 ? "ok" : res.body.substr(0, 200)});
            if (res.status >= 200 && res.status < 300) {
                const auto j = json::parse(res.body, nullptr, false);
                if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
                    throw ProviderError("provider response has no choices", log);
                }
                const auto& msg = j["choices"][0].value("message", json::object());
                std::string content;
                if (msg.contains("content") && msg["content"].is_string()) content = msg["content"].get<std::string>();
                return {std::move(content), request_fingerprint(options_.model, messages, params), std::move(log)};
            }
            retryable = res.status == 429 || res.status >= 500;
        } catch (const TransportError& e) {
            log.push_back({n, 0, e.what()});
        }
        if (!retryable) break;
        if (n < retry.max_attempts && !retry.backoff.empty()) {
            sleeper_(retry.backoff[std::min<std::size_t>(static_cast<std::size_t>(n - 1), retry.backoff.size() - 1)]);
        }
    }
    const auto& last = log.back();
    throw ProviderError(fmt::format("request to {} failed after {} attempt(s): status {} {}", options_.endpoint,
                                    log.size(), last.status, last.detail),
                        std::move(log));
}

std::unique_ptr<LlmProvider> make_provider(const ProviderConfig& config) {
    if (config.kind == ProviderKind::mock) {
        if (config.fixtures.empty()) throw std::invalid_argument("mock provider needs a fixture path");
        return std::make_unique<MockProvider>(config.model, load_fixtures(config.fixtures), config.strict);
    }
    if (config.endpoint.empty()) throw std::invalid_argument("http provider needs an endpoint");
    HttpProviderOptions options;
    options.endpoint = config.endpoint;
    options.model = config.model;
    options.retry = config.retry;
    if (!config.api_key_env.empty()) {
        const char* key = std::getenv(config.api_key_env.c_str());
        if (!key || !*key) {
            throw std::invalid_argument(fmt::format("environment variable {} is not set", config.api_key_env));
        }
        options.api_key = key;
    }
    std::shared_ptr<RateLimiter> limiter;
    if (config.requests_per_minute > 0) limiter = std::make_shared<RateLimiter>(config.requests_per_minute);
    return std::make_unique<HttpProvider>(std::move(options), make_http_transport(config.timeout), std::move(limiter));
}

// ---- structured output --------------------------------------------------------

Completion call_provider(LlmProvider& provider, std::span<const ChatMessage> messages, const GenerationParams& params,
                         CallLog* log) {
    auto c = provider.complete(messages, params);
    if (log) {
        log->push_back(CallRecord{c.fingerprint, std::vector<ChatMessage>(messages.begin(), messages.end()), c.content,
                                  std::max<std::size_t>(1, c.attempts.size())});
    }
    return c;
}

std::vector<ChatMessage> corrective_turns(std::string_view failed_completion) {
    return {{Role::assistant, failed_completion.empty() ? "(empty response)" : std::string(failed_completion)},
            {Role::user, std::string(kCorrectiveInstruction)}};
}

namespace {

std::optional<json> try_parse(std::string_view text) {
    auto j = json::parse(text, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return j;
}

// End (exclusive) of the bracketed value starting at `start`, or npos.
std::size_t balanced_end(std::string_view text, std::size_t start) {
    std::vector<char> stack;
    bool in_string = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (c == '\\') {
                ++i;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{' || c == '[') {
            stack.push_back(c == '{' ? '}' : ']');
        } else if (c == '}' || c == ']') {
            if (stack.empty() || stack.back() != c) return std::string_view::npos;
            stack.pop_back();
            if (stack.empty()) return i + 1;
        }
    }
    return std::string_view::npos;
}

}  // namespace

std::optional<json> extract_json(std::string_view text) {
    if (auto j = try_parse(text)) return j;
    // fenced block, with or without a language tag
    const auto fence = text.find("```");
    if (fence != std::string_view::npos) {
        auto body_start = text.find('\n', fence);
        const auto close = body_start == std::string_view::npos ? body_start : text.find("```", body_start);
        if (close != std::string_view::npos) {
            if (auto j = try_parse(text.substr(body_start + 1, close - body_start - 1))) return j;
        }
    }
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '{' && text[i] != '[') continue;
        const auto end = balanced_end(text, i);
        if (end == std::string_view::npos) continue;
        if (auto j = try_parse(text.substr(i, end - i))) return j;
    }
    return std::nullopt;
}

json complete_structured(LlmProvider& provider, std::vector<ChatMessage> messages, const GenerationParams& params,
                         const std::function<bool(const json&)>& check, CallLog* log) {
    if (params.response_format != ResponseFormat::structured) {
        throw std::invalid_argument("complete_structured needs response_format=structured");
    }
    return complete_validated(
        provider, std::move(messages), params,
        [&](const std::string& text) -> std::optional<json> {
            auto j = extract_json(text);
            if (j && check(*j)) return j;
            return std::nullopt;
        },
        log);
}

bool is_string_list(const json& j) {
    return j.is_array() && std::all_of(j.begin(), j.end(), [](const json& e) { return e.is_string(); });
}

}  // namespace biorag
