#pragma once

#include "moss/core/time.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace moss::hostd {

struct MountSpec {
    std::string source;
    std::string target;

    bool operator==(const MountSpec&) const = default;
};

struct StartOptions {
    std::string image_id;
    std::string name;
    std::vector<MountSpec> mounts;
    std::string network{"default"}; // "default" | "isolated"
    std::map<std::string, std::string> labels;
};

struct ContainerInfo {
    std::string container_id;
    std::string image_id;
    std::string name;
    bool running{false};
    std::vector<MountSpec> mounts;
    std::string network;
    std::map<std::string, std::string> labels;
};

struct ExecResult {
    int exit_code{0};
    std::string output;
};

// Container engine seam: start/stop/inspect/exec plus label-filtered listing.
// stop() also removes the container record (ephemeral semantics).
class ContainerRuntime {
public:
    virtual ~ContainerRuntime() = default;
    virtual std::string start(const StartOptions& opts) = 0; // throws runtime_failure
    virtual void stop(const std::string& container_id) = 0;
    virtual std::optional<ContainerInfo> inspect(const std::string& container_id) = 0;
    virtual std::vector<ContainerInfo> list(const std::map<std::string, std::string>& label_filter = {}) = 0;
    virtual ExecResult exec(const std::string& container_id, const std::vector<std::string>& cmd) = 0;
};

// In-process container model, persisted to <dir>/containers.json so a
// restarted daemon sees the same runtime state. Health behavior is
// scriptable: per-image start failures and per-container exec faults.
class SimulatedRuntime final : public ContainerRuntime {
public:
    explicit SimulatedRuntime(std::filesystem::path state_file);

    std::string start(const StartOptions& opts) override;
    void stop(const std::string& container_id) override;
    std::optional<ContainerInfo> inspect(const std::string& container_id) override;
    std::vector<ContainerInfo> list(const std::map<std::string, std::string>& label_filter = {}) override;
    ExecResult exec(const std::string& container_id, const std::vector<std::string>& cmd) override;

    // Fault switches (persisted alongside the containers).
    void set_start_failure(const std::string& image_id, bool fail);
    void set_exec_fault(const std::string& container_id, int exit_code);
    void clear_exec_fault(const std::string& container_id);

private:
    nlohmann::json load() const;
    void save(const nlohmann::json& doc) const;

    std::filesystem::path state_file_;
    mutable std::mutex mu_;
};

// Thin adapter over the `docker` CLI. Same contract as the simulated runtime;
// exercised in tests through a stub docker executable on PATH.
class DockerRuntime final : public ContainerRuntime {
public:
    explicit DockerRuntime(std::string docker_bin = "docker");

    std::string start(const StartOptions& opts) override;
    void stop(const std::string& container_id) override;
    std::optional<ContainerInfo> inspect(const std::string& container_id) override;
    std::vector<ContainerInfo> list(const std::map<std::string, std::string>& label_filter = {}) override;
    ExecResult exec(const std::string& container_id, const std::vector<std::string>& cmd) override;

private:
    std::string docker_bin_;
};

} // namespace moss::hostd
