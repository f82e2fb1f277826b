#pragma once

#include <nlohmann/json.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace moss::hostd {

// Newline-delimited JSON over a Unix domain socket.
//   request:  {"id": "...", "op": "family.name", "params": {...}}
//   response: {"id": "...", "ok": true, "result": {...}}
//           | {"id": "...", "ok": false, "error": {"code": "...", "message": "..."}}
// Unknown ops produce an error response and keep the connection open; a
// malformed frame produces an error response and closes it.
class RpcServer {
public:
    using Handler = std::function<nlohmann::json(const nlohmann::json& params)>;

    RpcServer() = default;
    ~RpcServer();
    RpcServer(const RpcServer&) = delete;
    RpcServer& operator=(const RpcServer&) = delete;

    void register_op(const std::string& op, Handler handler);
    void start(const std::filesystem::path& socket_path); // throws io_failure
    void stop();
    bool running() const { return running_; }

    // Ops served so far, in arrival order (transport-partition checks).
    std::vector<std::string> served_ops() const;

private:
    void accept_loop();
    void serve_connection(int fd);
    nlohmann::json dispatch_line(const std::string& line, bool& close_connection);

    std::filesystem::path socket_path_;
    int listen_fd_{-1};
    std::atomic<bool> running_{false};
    std::thread accept_thread_;
    std::vector<std::thread> connection_threads_;
    std::mutex threads_mu_;

    std::map<std::string, Handler> handlers_;
    mutable std::mutex handlers_mu_;

    mutable std::mutex served_mu_;
    std::vector<std::string> served_;
};

class RpcClient {
public:
    explicit RpcClient(std::filesystem::path socket_path);

    // Sends one request and blocks for its response. Throws Error with the
    // server-sent code on {ok:false}, io_failure on transport problems.
    nlohmann::json call(const std::string& op, const nlohmann::json& params);

private:
    std::filesystem::path socket_path_;
};

} // namespace moss::hostd
