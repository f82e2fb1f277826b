#include "support.hpp"

#include "moss/core/ids.hpp"

#include <httplib.h>

#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fstream>
#include <mutex>
#include <thread>

namespace fs = std::filesystem;

namespace moss::test {

TempDir::TempDir() {
    path_ = fs::temp_directory_path() / ("moss-test-" + moss::new_id());
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

moss::TranscriptEntry TranscriptGen::entry(int turn, moss::Role role, const std::string& content) {
    moss::TranscriptEntry e;
    e.turn_index = turn;
    e.role = role;
    e.content = content;
    e.ts = moss::Timestamp{1700000000000LL + turn * 1000LL};
    return e;
}

std::vector<moss::TranscriptEntry> TranscriptGen::random_session(int max_turns) {
    std::uniform_int_distribution<int> len_dist(0, max_turns);
    std::uniform_int_distribution<int> role_dist(0, 9);
    int n = len_dist(rng);
    std::vector<moss::TranscriptEntry> out;
    for (int i = 0; i < n; ++i) {
        // Bias toward user/agent alternation with occasional tool/system lines.
        moss::Role role;
        int r = role_dist(rng);
        if (r < 4) role = moss::Role::user;
        else if (r < 8) role = moss::Role::agent;
        else if (r < 9) role = moss::Role::tool;
        else role = moss::Role::system;
        out.push_back(entry(i, role, "turn-" + std::to_string(i) + "-" + std::to_string(rng() % 1000)));
    }
    return out;
}

void append_session_lines(const fs::path& file, const std::vector<moss::TranscriptEntry>& entries,
                          const std::string& session_id, const std::string& conversation_id) {
    std::ofstream out(file, std::ios::app);
    for (const auto& e : entries) {
        nlohmann::json line = e.to_json();
        line["session_id"] = session_id;
        line["conversation_id"] = conversation_id;
        out << line.dump() << "\n";
    }
}

struct WebhookSink::Impl {
    httplib::Server server;
    std::thread thread;
    int port{0};
    mutable std::mutex mu;
    std::vector<nlohmann::json> received;
};

WebhookSink::WebhookSink() : impl_(std::make_unique<Impl>()) {
    impl_->server.Post("/hooks/moss", [this](const httplib::Request& req, httplib::Response& res) {
        auto doc = nlohmann::json::parse(req.body, nullptr, false);
        if (!doc.is_discarded()) {
            std::lock_guard<std::mutex> lock(impl_->mu);
            impl_->received.push_back(doc);
        }
        res.set_content("{}", "application/json");
    });
    impl_->port = impl_->server.bind_to_any_port("127.0.0.1");
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

WebhookSink::~WebhookSink() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::string WebhookSink::url() const {
    return "http://127.0.0.1:" + std::to_string(impl_->port) + "/hooks/moss";
}

std::vector<nlohmann::json> WebhookSink::received() const {
    std::lock_guard<std::mutex> lock(impl_->mu);
    return impl_->received;
}

int WebhookSink::count(const std::string& event) const {
    std::lock_guard<std::mutex> lock(impl_->mu);
    int n = 0;
    for (const auto& doc : impl_->received)
        if (doc.value("event", "") == event) n++;
    return n;
}

int free_port() {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    ::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    int port = ntohs(addr.sin_port);
    ::close(fd);
    return port;
}

} // namespace moss::test
