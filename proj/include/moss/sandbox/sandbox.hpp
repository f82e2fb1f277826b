#pragma once

#include "moss/core/config.hpp"
#include "moss/core/time.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace moss::sandbox {

struct SystemMessage {
    Timestamp ts;
    std::string event;
    std::string rendered_text;

    nlohmann::json to_json() const;
};

// Simulated substrate gateway. Hosts the evolution-control endpoint group
// (forwarded to the evolution service), receives MOSS webhooks at /hooks/moss
// and renders them into the system-message log, refreshes the heartbeat file
// while healthy, and exposes admin endpoints:
//   POST /admin/fault    {"freeze_heartbeat": bool}
//   GET  /admin/messages -> {"messages": [...]}
class SandboxGateway {
public:
    struct Config {
        std::string pipeline_base;               // http://127.0.0.1:<port>
        std::filesystem::path user_state_dir;    // heartbeat.json lives here
        std::int64_t heartbeat_interval_ms{10000};
        double time_scale{1.0};
        std::map<std::string, std::string> hook_mapping; // event -> template
        std::string bind_host{"127.0.0.1"};
    };

    explicit SandboxGateway(Config cfg);
    ~SandboxGateway();

    int start(int port = 0);
    void stop();
    int port() const { return port_; }
    std::string base_url() const;
    std::string webhook_url() const { return base_url() + "/hooks/moss"; }

    std::vector<SystemMessage> messages() const;
    int message_count(const std::string& event) const;
    void set_fault(bool freeze_heartbeat, std::int64_t backdate_ms = 0);

    // Every forwarded /evo hit, for transport-partition checks.
    std::vector<std::string> evo_requests() const;

    static std::map<std::string, std::string> default_hook_mapping();

private:
    void heartbeat_loop();
    void write_heartbeat(Timestamp at);
    void append_message(const std::string& event, const nlohmann::json& payload);

    Config cfg_;
    int port_{0};

    struct Impl;
    std::unique_ptr<Impl> impl_;

    std::thread heartbeat_thread_;
    std::atomic<bool> running_{false};
    std::atomic<bool> frozen_{false};
    std::mutex wake_mu_;
    std::condition_variable wake_cv_;

    mutable std::mutex log_mu_;
    std::vector<SystemMessage> log_;
    std::vector<std::string> evo_requests_;
};

// Deterministic session-corpus synthesis. Writes session JSONLs plus the
// scripted-evaluator sidecar keyed by transcript hash. Scenarios:
//   "eight-weak-exchanges"  one conversation, 8 qualifying exchanges + tail
//   "all-strong"            exchanges whose tags never qualify
//   "three-qualifying"      3 qualifying exchanges + tail
//   "case-study"            8 qualifying chunks; the first four carry the
//                           compliance-audit and restock-chain task prompts
nlohmann::json generate_sessions(const std::string& scenario,
                                 const std::filesystem::path& sessions_dir,
                                 const std::filesystem::path& sidecar_path);

// The four case-study task ids, in chunk order.
std::vector<std::string> case_study_task_ids();

// Seeds the inner substrate repository fixture: a git checkout whose
// agent_behavior.json answers the case-study tasks poorly. The improved
// behavior document (what a fix should install) is returned by
// improved_behavior_json().
std::string init_substrate_fixture(const std::filesystem::path& repo_dir);
nlohmann::json baseline_behavior_json();
nlohmann::json improved_behavior_json();

} // namespace moss::sandbox
