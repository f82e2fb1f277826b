#include "moss/core/config.hpp"
#include "moss/sandbox/sandbox.hpp"

#include <csignal>
#include <iostream>
#include <string>

namespace {

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: moss-sandbox <config.json> [generate <scenario>]\n";
        return 2;
    }

    try {
        auto config = moss::MossConfig::load(argv[1]);

        if (argc >= 4 && std::string(argv[2]) == "generate") {
            auto report = moss::sandbox::generate_sessions(
                argv[3], config.sessions_dir, config.state_root / "evaluator_sidecar.json");
            std::cout << report.dump(2) << "\n";
            return 0;
        }

        moss::sandbox::SandboxGateway::Config gw;
        gw.pipeline_base = "http://127.0.0.1:" + std::to_string(config.pipeline_port);
        gw.user_state_dir = config.user_state_dir;
        gw.heartbeat_interval_ms = config.heartbeat_interval_ms;
        gw.time_scale = config.time_scale;

        moss::sandbox::SandboxGateway gateway(std::move(gw));
        int port = gateway.start(config.sandbox_port);
        std::cout << "moss-sandbox gateway on port " << port << "\n";

        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        while (!g_stop) moss::sleep_ms(200);
        gateway.stop();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "moss-sandbox: " << e.what() << "\n";
        return 1;
    }
}
