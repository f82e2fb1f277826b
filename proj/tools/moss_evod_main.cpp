#include "moss/core/config.hpp"
#include "moss/hostd/clients.hpp"
#include "moss/hostd/webhook.hpp"
#include "moss/pipeline/engine.hpp"
#include "moss/pipeline/service.hpp"
#include "moss/runners/registry.hpp"
#include "moss/trials/trials.hpp"

#include <csignal>
#include <iostream>

namespace {

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: moss-evod <config.json>\n";
        return 2;
    }

    try {
        auto config = moss::MossConfig::load(argv[1]);
        moss::StateStore store(config.state_root);

        // Deployment wiring: runner, build and trial work route over the
        // host-daemon RPC; only state files are shared directly.
        moss::runners::RunnerRegistry registry;
        registry.add(config.default_provider,
                     std::make_shared<moss::hostd::RpcRunner>(config.hostd_socket,
                                                              config.default_provider));
        for (const auto& [stage, provider] : config.stage_provider_override)
            registry.add(provider,
                         std::make_shared<moss::hostd::RpcRunner>(config.hostd_socket, provider));

        moss::hostd::RpcImageBuilder builder(config.hostd_socket);
        moss::trials::RpcWorkerBackend workers{moss::hostd::RpcClient(config.hostd_socket)};
        moss::hostd::WebhookDispatcher webhooks(config.gateway_url + "/hooks/moss");
        auto workspace = moss::GitWorkspace::open(config.substrate_repo);

        moss::pipeline::EvolutionEngine::Deps deps;
        deps.store = &store;
        deps.registry = &registry;
        deps.default_provider = config.default_provider;
        deps.stage_overrides = config.stage_provider_override;
        deps.builder = &builder;
        deps.workers = &workers;
        deps.webhooks = &webhooks;
        deps.workspace = &workspace;
        deps.runner_timeout_ms = config.runner_timeout_ms;
        deps.trial_timeout_ms = config.trial_timeout_ms;
        deps.time_scale = config.time_scale;
        deps.user_state_dir = config.user_state_dir;

        moss::pipeline::EvolutionEngine engine(std::move(deps));
        moss::pipeline::EvolutionService service(engine);
        int port = service.start(config.pipeline_port);
        service.resume_active(); // crash recovery: pick up the active run
        std::cout << "moss-evod serving /evo on port " << port << "\n";

        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);
        while (!g_stop) moss::sleep_ms(200);
        service.stop();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "moss-evod: " << e.what() << "\n";
        return 1;
    }
}
