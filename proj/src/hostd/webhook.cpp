#include "moss/hostd/webhook.hpp"

#include "moss/core/time.hpp"

#include <httplib.h>

namespace moss::hostd {

namespace {

// Splits "http://host:port/path" into base and path.
std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

WebhookDispatcher::WebhookDispatcher(std::string url, int max_attempts, std::int64_t backoff_ms)
    : url_(std::move(url)), max_attempts_(max_attempts), backoff_ms_(backoff_ms) {}

WebhookResult WebhookDispatcher::fire(const std::string& event, nlohmann::json payload) {
    payload["event"] = event;
    payload["ts"] = Timestamp::now().iso();
    const std::string body = payload.dump();

    auto [base, path] = split_url(url_);
    WebhookResult result;
    for (int attempt = 1; attempt <= max_attempts_; ++attempt) {
        result.attempts = attempt;
        httplib::Client client(base);
        client.set_connection_timeout(2, 0);
        client.set_read_timeout(5, 0);
        auto response = client.Post(path, body, "application/json");
        if (response && response->status >= 200 && response->status < 300) {
            result.delivered = true;
            return result;
        }
        if (attempt < max_attempts_) sleep_ms(backoff_ms_ * attempt);
    }
    return result;
}

} // namespace moss::hostd
