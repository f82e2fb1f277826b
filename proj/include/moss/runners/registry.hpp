#pragma once

#include "moss/core/config.hpp"
#include "moss/runners/runner.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace moss::runners {

// Provider registry. Adding a provider is one runner implementation plus a
// single add() call; a per-spawn override wins over the configured default.
class RunnerRegistry {
public:
    void add(const std::string& name, std::shared_ptr<Runner> runner);
    std::shared_ptr<Runner> get(const std::string& default_name,
                                const std::optional<std::string>& per_spawn_override = {}) const;
    std::vector<std::string> names() const;

private:
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Runner>> by_name_;
};

// Builds a registry from config: scripted providers load their script, and
// subprocess providers wrap their command template. The four known
// coding-agent CLIs are registered from provider_presets() when not
// explicitly configured.
std::shared_ptr<RunnerRegistry> make_registry(const MossConfig& cfg);

} // namespace moss::runners
