#pragma once

#include "moss/autoscan/autoscan.hpp"
#include "moss/core/config.hpp"
#include "moss/core/store.hpp"
#include "moss/hostd/images.hpp"
#include "moss/hostd/rpc.hpp"
#include "moss/hostd/runtime.hpp"
#include "moss/hostd/swap.hpp"
#include "moss/hostd/webhook.hpp"
#include "moss/runners/registry.hpp"
#include "moss/trials/trials.hpp"

#include <atomic>
#include <condition_variable>
#include <memory>
#include <thread>

namespace moss::hostd {

// Host-resident supervisor: local-socket RPC over four op families
// (runner.*, trial.*, image.*, autoscan.*), the image registry/builder, the
// swap supervisor loop, and webhook dispatch.
class HostDaemon {
public:
    struct Deps {
        StateStore* store{nullptr};
        ContainerRuntime* runtime{nullptr};
        ImageRegistry* images{nullptr};
        ImageBuilder* builder{nullptr};
        runners::RunnerRegistry* runners{nullptr};
        autoscan::AutoscanEngine* autoscan{nullptr};
        WebhookDispatcher* webhooks{nullptr};
        MossConfig config;
    };

    explicit HostDaemon(Deps deps);
    ~HostDaemon();

    // Recovery first (trial-worker sweep + swap recovery), then RPC serving
    // and the swap poll loop.
    void start();
    void stop();

    void recover();
    SwapSupervisor& swap() { return *swap_; }
    RpcServer& rpc() { return rpc_; }

    // Exposed for in-process tests; mirrors the RPC surface.
    nlohmann::json handle(const std::string& op, const nlohmann::json& params);

private:
    void register_ops();
    void swap_loop();

    Deps deps_;
    std::unique_ptr<SwapSupervisor> swap_;
    std::unique_ptr<trials::LocalWorkerBackend> worker_backend_;
    RpcServer rpc_;
    std::thread swap_thread_;
    std::atomic<bool> running_{false};
    std::mutex wake_mu_;
    std::condition_variable wake_cv_;

    // Live runner handles, keyed by invocation id.
    std::mutex handles_mu_;
    std::map<std::string, std::pair<std::shared_ptr<runners::Runner>, runners::RunnerHandle>> handles_;
};

} // namespace moss::hostd
