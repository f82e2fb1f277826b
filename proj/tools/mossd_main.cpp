#include "moss/autoscan/autoscan.hpp"
#include "moss/core/config.hpp"
#include "moss/core/errors.hpp"
#include "moss/hostd/hostd.hpp"
#include "moss/hostd/runtime.hpp"
#include "moss/hostd/webhook.hpp"
#include "moss/runners/registry.hpp"

#include <csignal>
#include <iostream>

namespace {

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: mossd <config.json> [--docker]\n";
        return 2;
    }

    try {
        auto config = moss::MossConfig::load(argv[1]);
        moss::StateStore store(config.state_root);

        std::unique_ptr<moss::hostd::ContainerRuntime> runtime;
        bool use_docker = argc > 2 && std::string(argv[2]) == "--docker";
        if (use_docker) {
            runtime = std::make_unique<moss::hostd::DockerRuntime>();
        } else {
            runtime = std::make_unique<moss::hostd::SimulatedRuntime>(config.state_root / "runtime" /
                                                                      "containers.json");
        }

        moss::hostd::ImageRegistry images(store);
        moss::hostd::SimulatedImageBuilder builder(images);
        auto runners = moss::runners::make_registry(config);
        auto evaluator = moss::autoscan::ScriptedEvaluator::load(config.state_root /
                                                                 "evaluator_sidecar.json");
        moss::autoscan::AutoscanEngine autoscan(store, config.sessions_dir, evaluator);
        moss::hostd::WebhookDispatcher webhooks(config.gateway_url + "/hooks/moss");

        moss::hostd::HostDaemon::Deps deps;
        deps.store = &store;
        deps.runtime = runtime.get();
        deps.images = &images;
        deps.builder = &builder;
        deps.runners = runners.get();
        deps.autoscan = &autoscan;
        deps.webhooks = &webhooks;
        deps.config = config;

        moss::hostd::HostDaemon daemon(std::move(deps));
        daemon.start();
        std::cout << "mossd serving rpc at " << config.hostd_socket.string() << "\n";

        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        while (!g_stop) moss::sleep_ms(200);
        daemon.stop();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "mossd: " << e.what() << "\n";
        return 1;
    }
}
