#include <doctest.h>

#include "support.hpp"

#include "moss/core/errors.hpp"
#include "moss/hostd/rpc.hpp"

#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <atomic>
#include <cstring>
#include <set>
#include <thread>

using namespace moss;
using namespace moss::hostd;

TEST_CASE("rpc round trip, echoed ids, unknown op keeps connection open") {
    test::TempDir tmp;
    RpcServer server;
    server.register_op("math.add", [](const nlohmann::json& params) {
        return nlohmann::json{{"sum", params.at("a").get<int>() + params.at("b").get<int>()}};
    });
    auto socket_path = tmp / "hostd.sock";
    server.start(socket_path);

    RpcClient client(socket_path);
    auto result = client.call("math.add", {{"a", 2}, {"b", 3}});
    CHECK(result["sum"] == 5);

    CHECK_THROWS_AS(client.call("nope.x", {}), Error);
    try {
        client.call("nope.x", {});
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::unknown_op);
    }

    // Connection-level check: unknown op then a valid op on one connection.
    int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, socket_path.c_str(), sizeof(addr.sun_path) - 1);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    std::string two = R"({"id":"x1","op":"nope.y","params":{}})" "\n"
                      R"({"id":"x2","op":"math.add","params":{"a":1,"b":1}})" "\n";
    REQUIRE(::send(fd, two.data(), two.size(), 0) == static_cast<ssize_t>(two.size()));
    std::string buffer;
    char chunk[4096];
    while (std::count(buffer.begin(), buffer.end(), '\n') < 2) {
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        REQUIRE(n > 0);
        buffer.append(chunk, static_cast<std::size_t>(n));
    }
    ::close(fd);
    auto first = nlohmann::json::parse(buffer.substr(0, buffer.find('\n')));
    auto second = nlohmann::json::parse(buffer.substr(buffer.find('\n') + 1));
    CHECK(first["id"] == "x1");
    CHECK_FALSE(first["ok"].get<bool>());
    CHECK(first["error"]["code"] == "unknown_op");
    CHECK(second["id"] == "x2");
    CHECK(second["ok"].get<bool>());

    server.stop();
}

TEST_CASE("rpc malformed frame gets an error response and the connection closes") {
    test::TempDir tmp;
    RpcServer server;
    server.register_op("ping", [](const nlohmann::json&) { return nlohmann::json{{"pong", true}}; });
    auto socket_path = tmp / "hostd.sock";
    server.start(socket_path);

    int fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    std::strncpy(addr.sun_path, socket_path.c_str(), sizeof(addr.sun_path) - 1);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
    std::string bad = "{this is not json\n";
    REQUIRE(::send(fd, bad.data(), bad.size(), 0) == static_cast<ssize_t>(bad.size()));

    std::string buffer;
    char chunk[4096];
    while (true) {
        ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0) break; // server closed after responding
        buffer.append(chunk, static_cast<std::size_t>(n));
    }
    ::close(fd);
    REQUIRE(buffer.find('\n') != std::string::npos);
    auto response = nlohmann::json::parse(buffer.substr(0, buffer.find('\n')));
    CHECK_FALSE(response["ok"].get<bool>());
    CHECK(response["error"]["code"] == "bad_request");

    server.stop();
}

TEST_CASE("rpc serves 50 concurrent requests with bijective ids") {
    test::TempDir tmp;
    RpcServer server;
    std::atomic<int> in_flight{0};
    server.register_op("echo", [&](const nlohmann::json& params) {
        in_flight++;
        sleep_ms(10); // hold connections open so they overlap
        in_flight--;
        return params;
    });
    auto socket_path = tmp / "hostd.sock";
    server.start(socket_path);

    std::vector<std::thread> threads;
    std::mutex results_mu;
    std::set<int> results;
    std::atomic<int> failures{0};
    for (int i = 0; i < 50; ++i) {
        threads.emplace_back([&, i] {
            try {
                RpcClient client(socket_path);
                auto result = client.call("echo", {{"n", i}});
                std::lock_guard<std::mutex> lock(results_mu);
                results.insert(result.at("n").get<int>());
            } catch (const std::exception&) {
                failures++;
            }
        });
    }
    for (auto& t : threads) t.join();
    CHECK(failures == 0);
    CHECK(results.size() == 50); // one response per request, ids bijective

    auto ops = server.served_ops();
    CHECK(ops.size() == 50);
    server.stop();
}
