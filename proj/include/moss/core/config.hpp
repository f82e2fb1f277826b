#pragma once

#include "moss/core/domain.hpp"
#include "moss/core/time.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace moss {

// Swap-protocol timing and probe configuration. Defaults carry the protocol's
// stated values; `time_scale` on MossConfig compresses them for tests.
struct SwapConfig {
    std::int64_t poll_ms{2000};
    std::int64_t window_ms{90000};
    std::int64_t sample_ms{5000};
    std::int64_t heartbeat_fresh_ms{30000};
    int consecutive_passes{3};
    std::vector<std::string> cli_probe_a{"moss-substrate-status"};
    std::vector<std::string> cli_probe_b{"moss-session-check"};
};

struct RunnerConfigEntry {
    std::string type{"scripted"}; // "scripted" | "subprocess"
    std::filesystem::path script_path;       // scripted
    std::vector<std::string> command;        // subprocess, with {prompt_path} etc.
};

struct MossConfig {
    std::filesystem::path state_root;
    std::filesystem::path sessions_dir;
    std::filesystem::path user_state_dir;
    std::filesystem::path substrate_repo;
    std::filesystem::path hostd_socket;
    std::string gateway_url; // webhook + CLI HTTP base, e.g. http://127.0.0.1:8800
    int pipeline_port{8810};
    int sandbox_port{8800};
    double time_scale{1.0};

    SwapConfig swap;
    std::int64_t runner_timeout_ms{900000};
    std::int64_t trial_timeout_ms{300000};
    std::int64_t heartbeat_interval_ms{10000};
    std::string default_provider{"scripted"};
    std::map<std::string, RunnerConfigEntry> providers;
    std::map<std::string, std::string> stage_provider_override; // stage name -> provider
    std::map<std::string, DepthProfile> depth_overrides;

    std::int64_t scaled(std::int64_t ms) const { return scaled_ms(ms, time_scale); }
    DepthProfile depth(const std::string& name) const;

    static MossConfig from_json(const nlohmann::json& doc);
    static MossConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
};

} // namespace moss
