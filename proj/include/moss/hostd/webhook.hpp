#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>

namespace moss::hostd {

struct WebhookResult {
    bool delivered{false};
    int attempts{0};
};

// POSTs {event, run_id, batch_id, status, detail, ts, ...} to the gateway's
// webhook endpoint. Connection failures retry with backoff; a final failure
// is reported, never thrown, so state transitions are never blocked on
// delivery.
class WebhookDispatcher {
public:
    WebhookDispatcher(std::string url, int max_attempts = 3, std::int64_t backoff_ms = 250);

    WebhookResult fire(const std::string& event, nlohmann::json payload);

    const std::string& url() const { return url_; }

private:
    std::string url_;
    int max_attempts_;
    std::int64_t backoff_ms_;
};

} // namespace moss::hostd
