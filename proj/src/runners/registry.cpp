#include "moss/runners/registry.hpp"

#include "moss/core/errors.hpp"
#include "moss/runners/scripted.hpp"
#include "moss/runners/subprocess.hpp"

namespace moss::runners {

void RunnerRegistry::add(const std::string& name, std::shared_ptr<Runner> runner) {
    std::lock_guard<std::mutex> lock(mu_);
    by_name_[name] = std::move(runner);
}

std::shared_ptr<Runner> RunnerRegistry::get(const std::string& default_name,
                                            const std::optional<std::string>& per_spawn_override) const {
    const std::string& name = per_spawn_override ? *per_spawn_override : default_name;
    std::lock_guard<std::mutex> lock(mu_);
    auto it = by_name_.find(name);
    if (it == by_name_.end())
        throw Error(ErrorCode::unknown_provider, "no runner registered as '" + name + "'");
    return it->second;
}

std::vector<std::string> RunnerRegistry::names() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<std::string> out;
    out.reserve(by_name_.size());
    for (const auto& [name, _] : by_name_) out.push_back(name);
    return out;
}

std::shared_ptr<RunnerRegistry> make_registry(const MossConfig& cfg) {
    auto registry = std::make_shared<RunnerRegistry>();
    auto invocations = cfg.state_root / "invocations";

    for (const auto& [name, entry] : cfg.providers) {
        if (entry.type == "scripted") {
            registry->add(name, ScriptedRunner::load(entry.script_path, invocations));
        } else if (entry.type == "subprocess") {
            registry->add(name, std::make_shared<SubprocessRunner>(name, entry.command, invocations));
        } else {
            throw Error(ErrorCode::bad_request, "unknown provider type: " + entry.type);
        }
    }

    for (const auto& [name, command] : provider_presets())
        if (!cfg.providers.count(name))
            registry->add(name, std::make_shared<SubprocessRunner>(name, command, invocations));

    return registry;
}

} // namespace moss::runners
