#include "moss/hostd/rpc.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/ids.hpp"

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cstring>

namespace fs = std::filesystem;

namespace moss::hostd {

using nlohmann::json;

namespace {

void write_all(int fd, const std::string& data) {
    std::size_t sent = 0;
    while (sent < data.size()) {
        ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
        if (n <= 0) throw Error(ErrorCode::io_failure, "socket write failed");
        sent += static_cast<std::size_t>(n);
    }
}

int connect_unix(const fs::path& path) {
    int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd < 0) throw Error(ErrorCode::io_failure, "socket() failed");
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.string().size() >= sizeof(addr.sun_path)) {
        ::close(fd);
        throw Error(ErrorCode::io_failure, "socket path too long: " + path.string());
    }
    std::strncpy(addr.sun_path, path.c_str(), sizeof(addr.sun_path) - 1);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw Error(ErrorCode::io_failure, "cannot connect to " + path.string());
    }
    return fd;
}

} // namespace

RpcServer::~RpcServer() { stop(); }

void RpcServer::register_op(const std::string& op, Handler handler) {
    std::lock_guard<std::mutex> lock(handlers_mu_);
    handlers_[op] = std::move(handler);
}

void RpcServer::start(const fs::path& socket_path) {
    socket_path_ = socket_path;
    std::error_code ec;
    fs::create_directories(socket_path.parent_path(), ec);
    fs::remove(socket_path, ec);

    listen_fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(ErrorCode::io_failure, "socket() failed");
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (socket_path.string().size() >= sizeof(addr.sun_path))
        throw Error(ErrorCode::io_failure, "socket path too long");
    std::strncpy(addr.sun_path, socket_path.c_str(), sizeof(addr.sun_path) - 1);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
        throw Error(ErrorCode::io_failure, "bind failed on " + socket_path.string());
    if (::listen(listen_fd_, 64) != 0) throw Error(ErrorCode::io_failure, "listen failed");

    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void RpcServer::stop() {
    if (!running_) return;
    running_ = false;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    std::lock_guard<std::mutex> lock(threads_mu_);
    for (auto& t : connection_threads_)
        if (t.joinable()) t.join();
    connection_threads_.clear();
    std::error_code ec;
    fs::remove(socket_path_, ec);
}

void RpcServer::accept_loop() {
    while (running_) {
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (!running_) break;
            continue;
        }
        std::lock_guard<std::mutex> lock(threads_mu_);
        connection_threads_.emplace_back([this, fd] { serve_connection(fd); });
    }
}

void RpcServer::serve_connection(int fd) {
    std::string buffer;
    char chunk[4096];
    bool close_connection = false;
    while (running_ && !close_connection) {
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) break;
        buffer.append(chunk, static_cast<std::size_t>(n));

        std::size_t pos;
        while (!close_connection && (pos = buffer.find('\n')) != std::string::npos) {
            std::string line = buffer.substr(0, pos);
            buffer.erase(0, pos + 1);
            if (line.empty()) continue;
            json response = dispatch_line(line, close_connection);
            try {
                write_all(fd, response.dump() + "\n");
            } catch (const Error&) {
                close_connection = true;
            }
        }
    }
    ::close(fd);
}

json RpcServer::dispatch_line(const std::string& line, bool& close_connection) {
    json request = json::parse(line, nullptr, false);
    if (request.is_discarded() || !request.is_object() || !request.contains("op")) {
        close_connection = true; // malformed frame: error then close
        return {{"id", request.is_object() ? request.value("id", "") : ""},
                {"ok", false},
                {"error", {{"code", "bad_request"}, {"message", "malformed frame"}}}};
    }

    const std::string id = request.value("id", "");
    const std::string op = request["op"].get<std::string>();
    const json params = request.value("params", json::object());

    Handler handler;
    {
        std::lock_guard<std::mutex> lock(handlers_mu_);
        auto it = handlers_.find(op);
        if (it != handlers_.end()) handler = it->second;
    }
    {
        std::lock_guard<std::mutex> lock(served_mu_);
        served_.push_back(op);
    }
    if (!handler)
        return {{"id", id},
                {"ok", false},
                {"error", {{"code", "unknown_op"}, {"message", "no handler for " + op}}}};

    try {
        json result = handler(params);
        return {{"id", id}, {"ok", true}, {"result", result}};
    } catch (const Error& e) {
        return {{"id", id},
                {"ok", false},
                {"error", {{"code", std::string(code_name(e.code()))}, {"message", e.message()}}}};
    } catch (const std::exception& e) {
        return {{"id", id},
                {"ok", false},
                {"error", {{"code", "internal"}, {"message", e.what()}}}};
    }
}

std::vector<std::string> RpcServer::served_ops() const {
    std::lock_guard<std::mutex> lock(served_mu_);
    return served_;
}

RpcClient::RpcClient(fs::path socket_path) : socket_path_(std::move(socket_path)) {}

json RpcClient::call(const std::string& op, const json& params) {
    struct FdGuard {
        int fd;
        ~FdGuard() {
            if (fd >= 0) ::close(fd);
        }
    } guard{connect_unix(socket_path_)};

    const std::string id = new_id();
    write_all(guard.fd, json{{"id", id}, {"op", op}, {"params", params}}.dump() + "\n");

    std::string buffer;
    char chunk[4096];
    while (buffer.find('\n') == std::string::npos) {
        ssize_t n = ::recv(guard.fd, chunk, sizeof(chunk), 0);
        if (n <= 0) throw Error(ErrorCode::io_failure, "connection closed mid-response");
        buffer.append(chunk, static_cast<std::size_t>(n));
    }

    json response = json::parse(buffer.substr(0, buffer.find('\n')));
    if (response.value("id", "") != id)
        throw Error(ErrorCode::io_failure, "response id does not echo request id");
    if (!response.value("ok", false)) {
        const auto& err = response["error"];
        throw Error(code_from_name(err.value("code", "internal")),
                    err.value("message", "rpc error"));
    }
    return response.value("result", json::object());
}

} // namespace moss::hostd
