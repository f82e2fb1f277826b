#pragma once

#include "moss/pipeline/engine.hpp"

#include <atomic>
#include <condition_variable>
#include <memory>
#include <string>
#include <thread>

namespace moss::pipeline {

// HTTP face of the evolution service. Routes:
//   POST /evo/start    {batch_id?, depth?}      -> {run_id}
//   POST /evo/stop     {run_id?}                -> {}
//   POST /evo/restart  {run_id}                 -> {run_id}
//   POST /evo/apply    {batch_id?}              -> {request_id, ...}
//   GET  /evo/status   [?run_id=]               -> status report
//   GET  /evo/batches                           -> {batches: [...]}
//   GET  /evo/batch/{id}                        -> batch document
// Domain errors map to HTTP 409 with {error: {code, message}}; malformed
// bodies to 400. A started run executes on a background worker thread.
class EvolutionService {
public:
    EvolutionService(EvolutionEngine& engine, std::string bind_host = "127.0.0.1");
    ~EvolutionService();

    int start(int port = 0); // 0: pick any free port; returns the bound port
    void stop();
    int port() const { return port_; }

    // Schedules drive() for the active run (service restart resume).
    void resume_active();

    EvolutionEngine& engine() { return engine_; }

private:
    void worker_loop();
    void schedule(const std::string& run_id);

    EvolutionEngine& engine_;
    std::string host_;
    int port_{0};

    struct Impl;
    std::unique_ptr<Impl> impl_;

    std::thread worker_;
    std::atomic<bool> running_{false};
    std::mutex queue_mu_;
    std::condition_variable queue_cv_;
    std::vector<std::string> queue_;
};

} // namespace moss::pipeline
