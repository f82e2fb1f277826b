#pragma once

#include "moss/core/domain.hpp"
#include "moss/hostd/images.hpp"
#include "moss/hostd/rpc.hpp"
#include "moss/hostd/runtime.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moss::trials {

struct TrialTask {
    std::string task_id;
    std::string prompt;

    nlohmann::json to_json() const;
    static TrialTask from_json(const nlohmann::json& doc);
};

struct TrialPlan {
    ImageRef image;
    std::vector<TrialTask> tasks;
    int trials_per_task{1};
    int workers_n{1};
};

enum class TrialOutcome { completed, errored, timed_out };

std::string trial_outcome_name(TrialOutcome o);
std::optional<TrialOutcome> trial_outcome_from_name(const std::string& name);

struct TrialTranscript {
    std::string task_id;
    int trial_index{1}; // 1-based
    std::string worker_id;
    std::vector<TranscriptEntry> entries;
    TrialOutcome outcome{TrialOutcome::completed};

    // JSONL form: one line per entry, then {"outcome": ...}. The worker id is
    // scheduling detail and stays out of the file so transcript bytes are
    // invariant to workers_n.
    std::string to_jsonl() const;
    nlohmann::json to_json() const;
    static TrialTranscript from_json(const nlohmann::json& doc);
};

struct IsolationReport {
    std::string worker_id;
    bool isolated{false};
    std::string detail;
};

// Worker lifecycle seam: local (direct runtime) in tests, RPC to the
// host-daemon in deployment.
class WorkerBackend {
public:
    virtual ~WorkerBackend() = default;
    virtual std::string spawn(const ImageRef& image) = 0; // throws worker_spawn_failed
    virtual TrialTranscript exec(const std::string& worker_id, const TrialTask& task,
                                 int trial_index, std::int64_t timeout_ms) = 0;
    virtual void teardown(const std::string& worker_id) = 0;
};

struct LocalBackendOptions {
    // Test switch: mounting the user-state volume into a worker is an
    // isolation violation the engine must catch.
    std::vector<hostd::MountSpec> extra_mounts;
    std::string network{"isolated"};
    std::filesystem::path user_state_dir;
};

class LocalWorkerBackend final : public WorkerBackend {
public:
    LocalWorkerBackend(hostd::ContainerRuntime& runtime, hostd::ImageRegistry& images,
                       LocalBackendOptions opts = {});

    std::string spawn(const ImageRef& image) override;
    TrialTranscript exec(const std::string& worker_id, const TrialTask& task, int trial_index,
                         std::int64_t timeout_ms) override;
    void teardown(const std::string& worker_id) override;

    hostd::ContainerRuntime& runtime() { return runtime_; }

    static constexpr const char* kWorkerLabel = "moss.role";
    static constexpr const char* kWorkerRole = "trial-worker";

private:
    hostd::ContainerRuntime& runtime_;
    hostd::ImageRegistry& images_;
    LocalBackendOptions opts_;
};

// trial.* RPC family client.
class RpcWorkerBackend final : public WorkerBackend {
public:
    explicit RpcWorkerBackend(hostd::RpcClient client) : client_(std::move(client)) {}

    std::string spawn(const ImageRef& image) override;
    TrialTranscript exec(const std::string& worker_id, const TrialTask& task, int trial_index,
                         std::int64_t timeout_ms) override;
    void teardown(const std::string& worker_id) override;

private:
    hostd::RpcClient client_;
};

struct TrialEngineOptions {
    std::int64_t trial_timeout_ms{300000};
    double time_scale{1.0};
    // When set, every spawned worker is isolation-checked against this
    // user-state directory before any trial executes.
    std::optional<std::filesystem::path> user_state_dir;
    hostd::ContainerRuntime* runtime{nullptr}; // needed for isolation inspection
};

// Schedules tasks x trials across N ephemeral workers, captures transcripts
// under <trials_dir>/<task_id>/<trial_n>.jsonl, and tears every worker down
// before returning, on every path.
class TrialEngine {
public:
    TrialEngine(WorkerBackend& backend, TrialEngineOptions opts = {});

    std::vector<TrialTranscript> run_trials(const TrialPlan& plan,
                                            const std::filesystem::path& trials_dir);

    IsolationReport worker_isolation_check(const std::string& worker_id);

private:
    WorkerBackend& backend_;
    TrialEngineOptions opts_;
};

struct ScoreAggregate {
    std::map<std::string, double> per_task_mean;
    double overall_mean{0.0};
};

// Per-task arithmetic mean, then the mean of per-task means; 4-decimal
// rounding for reporting. Throws empty_scores when a task has no scores.
ScoreAggregate aggregate_scores(const std::map<std::string, std::vector<double>>& per_task_scores);

} // namespace moss::trials
