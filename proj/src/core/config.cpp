#include "moss/core/config.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/store.hpp"

namespace moss {

using nlohmann::json;

DepthProfile MossConfig::depth(const std::string& name) const {
    auto it = depth_overrides.find(name.empty() ? "standard" : name);
    if (it != depth_overrides.end()) return it->second;
    return DepthProfile::named(name.empty() ? "standard" : name);
}

MossConfig MossConfig::from_json(const json& doc) {
    MossConfig cfg;
    cfg.state_root = doc.value("state_root", "");
    cfg.sessions_dir = doc.value("sessions_dir", "");
    cfg.user_state_dir = doc.value("user_state_dir", "");
    cfg.substrate_repo = doc.value("substrate_repo", "");
    cfg.hostd_socket = doc.value("hostd_socket", "");
    cfg.gateway_url = doc.value("gateway_url", "");
    cfg.pipeline_port = doc.value("pipeline_port", 8810);
    cfg.sandbox_port = doc.value("sandbox_port", 8800);
    cfg.time_scale = doc.value("time_scale", 1.0);

    if (doc.contains("swap")) {
        const auto& s = doc["swap"];
        cfg.swap.poll_ms = s.value("poll_ms", cfg.swap.poll_ms);
        cfg.swap.window_ms = s.value("window_ms", cfg.swap.window_ms);
        cfg.swap.sample_ms = s.value("sample_ms", cfg.swap.sample_ms);
        cfg.swap.heartbeat_fresh_ms = s.value("heartbeat_fresh_ms", cfg.swap.heartbeat_fresh_ms);
        cfg.swap.consecutive_passes = s.value("consecutive_passes", cfg.swap.consecutive_passes);
        if (s.contains("cli_probe_a")) cfg.swap.cli_probe_a = s["cli_probe_a"].get<std::vector<std::string>>();
        if (s.contains("cli_probe_b")) cfg.swap.cli_probe_b = s["cli_probe_b"].get<std::vector<std::string>>();
    }

    cfg.runner_timeout_ms = doc.value("runner_timeout_ms", cfg.runner_timeout_ms);
    cfg.trial_timeout_ms = doc.value("trial_timeout_ms", cfg.trial_timeout_ms);
    cfg.heartbeat_interval_ms = doc.value("heartbeat_interval_ms", cfg.heartbeat_interval_ms);
    cfg.default_provider = doc.value("default_provider", cfg.default_provider);

    if (doc.contains("providers")) {
        for (const auto& [name, p] : doc["providers"].items()) {
            RunnerConfigEntry entry;
            entry.type = p.value("type", "scripted");
            entry.script_path = p.value("script_path", "");
            if (p.contains("command")) entry.command = p["command"].get<std::vector<std::string>>();
            cfg.providers[name] = entry;
        }
    }
    if (doc.contains("stage_provider_override"))
        cfg.stage_provider_override =
            doc["stage_provider_override"].get<std::map<std::string, std::string>>();
    if (doc.contains("depth_profiles"))
        for (const auto& [name, d] : doc["depth_profiles"].items())
            cfg.depth_overrides[name] = DepthProfile::from_json(d);

    return cfg;
}

MossConfig MossConfig::load(const std::filesystem::path& path) {
    auto text = read_file(path);
    if (!text) throw Error(ErrorCode::io_failure, "config not found: " + path.string());
    return from_json(json::parse(*text));
}

json MossConfig::to_json() const {
    json providersDoc = json::object();
    for (const auto& [name, p] : providers) {
        providersDoc[name] = {{"type", p.type}};
        if (!p.script_path.empty()) providersDoc[name]["script_path"] = p.script_path.string();
        if (!p.command.empty()) providersDoc[name]["command"] = p.command;
    }
    json depths = json::object();
    for (const auto& [name, d] : depth_overrides) depths[name] = d.to_json();
    return {{"state_root", state_root.string()},
            {"sessions_dir", sessions_dir.string()},
            {"user_state_dir", user_state_dir.string()},
            {"substrate_repo", substrate_repo.string()},
            {"hostd_socket", hostd_socket.string()},
            {"gateway_url", gateway_url},
            {"pipeline_port", pipeline_port},
            {"sandbox_port", sandbox_port},
            {"time_scale", time_scale},
            {"swap",
             {{"poll_ms", swap.poll_ms},
              {"window_ms", swap.window_ms},
              {"sample_ms", swap.sample_ms},
              {"heartbeat_fresh_ms", swap.heartbeat_fresh_ms},
              {"consecutive_passes", swap.consecutive_passes},
              {"cli_probe_a", swap.cli_probe_a},
              {"cli_probe_b", swap.cli_probe_b}}},
            {"runner_timeout_ms", runner_timeout_ms},
            {"trial_timeout_ms", trial_timeout_ms},
            {"heartbeat_interval_ms", heartbeat_interval_ms},
            {"default_provider", default_provider},
            {"providers", providersDoc},
            {"stage_provider_override", stage_provider_override},
            {"depth_profiles", depths}};
}

} // namespace moss
