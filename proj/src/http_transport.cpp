#include <httplib.h>

#include <fmt/format.h>

#include "biorag/llm.hpp"

namespace biorag {

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // path plus query, at least "/"
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError(fmt::format("not an absolute URL: {}", url));
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

class HttplibTransport : public HttpTransport {
  public:
    explicit HttplibTransport(std::chrono::seconds timeout) : timeout_(timeout) {}

    HttpResponse post(const std::string& url, const std::string& body, const HttpHeaders& headers) override {
        const auto target = split_url(url);
        auto client = make_client(target.origin);
        std::string content_type = "application/json";
        httplib::Headers h;
        for (const auto& [k, v] : headers) {
            if (k == "Content-Type") {
                content_type = v;
            } else {
                h.emplace(k, v);
            }
        }
        return finish(client->Post(target.path, h, body, content_type), url);
    }

    HttpResponse get(const std::string& url, const HttpHeaders& headers) override {
        const auto target = split_url(url);
        auto client = make_client(target.origin);
        httplib::Headers h(headers.begin(), headers.end());
        return finish(client->Get(target.path, h), url);
    }

  private:
    std::chrono::seconds timeout_;

    std::unique_ptr<httplib::Client> make_client(const std::string& origin) const {
        auto client = std::make_unique<httplib::Client>(origin);
        client->set_connection_timeout(timeout_);
        client->set_read_timeout(timeout_);
        client->set_write_timeout(timeout_);
        client->set_follow_location(true);
        return client;
    }

    static HttpResponse finish(const httplib::Result& res, const std::string& url) {
        if (!res) throw TransportError(fmt::format("{}: {}", url, httplib::to_string(res.error())));
        return {res->status, res->body};
    }
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport(std::chrono::seconds timeout) {
    return std::make_unique<HttplibTransport>(timeout);
}

}  // namespace biorag
