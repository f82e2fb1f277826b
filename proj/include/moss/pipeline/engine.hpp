#pragma once

#include "moss/core/config.hpp"
#include "moss/core/domain.hpp"
#include "moss/core/store.hpp"
#include "moss/core/workspace.hpp"
#include "moss/hostd/images.hpp"
#include "moss/hostd/webhook.hpp"
#include "moss/runners/registry.hpp"
#include "moss/runners/scripted.hpp"
#include "moss/trials/trials.hpp"

#include <functional>
#include <memory>
#include <mutex>
#include <optional>

namespace moss::pipeline {

enum class GateDecisionKind { approve, reject_off_target, reject_too_narrow, reject };

std::string gate_decision_name(GateDecisionKind k);
std::optional<GateDecisionKind> gate_decision_from_name(const std::string& name);

struct GateDecision {
    GateDecisionKind decision{GateDecisionKind::approve};
    std::string notes;
};

// Thrown by drive() when a test's boundary hook kills the service;
// deliberately not a std::exception so the engine never swallows it.
struct ServiceKill {
    std::string boundary;
};

// The evolution service core: pre-loop baseline, bounded iteration loop,
// seven-stage pipeline with the two gate loops, verdict validation, plateau
// guard, and the lifecycle controls. All run state is persisted after every
// stage, so a restarted service resumes at the first incomplete stage.
class EvolutionEngine {
public:
    struct Deps {
        StateStore* store{nullptr};
        runners::RunnerRegistry* registry{nullptr};
        std::string default_provider{"scripted"};
        std::map<std::string, std::string> stage_overrides; // stage name -> provider
        hostd::ImageBuilder* builder{nullptr};
        trials::WorkerBackend* workers{nullptr};
        hostd::ContainerRuntime* runtime{nullptr}; // isolation inspection (local mode)
        hostd::WebhookDispatcher* webhooks{nullptr};
        Workspace* workspace{nullptr};
        std::int64_t runner_timeout_ms{900000};
        std::int64_t trial_timeout_ms{300000};
        double time_scale{1.0};
        std::optional<std::filesystem::path> user_state_dir;
        std::function<void(const std::string& boundary)> boundary_hook;
    };

    explicit EvolutionEngine(Deps deps);

    // --- lifecycle -----------------------------------------------------
    std::string start_run(std::optional<std::string> batch_id, DepthProfile depth);
    void drive(const std::string& run_id); // runs to a terminal phase or stop
    void stop(const std::string& run_id);
    std::string restart(const std::string& run_id);
    nlohmann::json apply(std::optional<std::string> batch_id); // writes swap/request.json

    // --- queries --------------------------------------------------------
    nlohmann::json status(std::optional<std::string> run_id) const;
    nlohmann::json batches() const;
    nlohmann::json batch(const std::string& batch_id) const;
    std::optional<std::string> active_run_id() const;

private:
    struct StopSignal {};

    // stage machinery
    runners::StageOutput invoke_stage(EvolutionRun& run, IterationRecord* iter, StageName stage,
                                      const std::string& prompt,
                                      const std::vector<std::filesystem::path>& inputs);
    nlohmann::json invoke_json_stage(EvolutionRun& run, IterationRecord* iter, StageName stage,
                                     const std::string& prompt,
                                     const std::vector<std::filesystem::path>& inputs,
                                     const std::function<std::string(const nlohmann::json&)>& check);

    void run_baseline(EvolutionRun& run);
    void run_iteration(EvolutionRun& run);
    void plan_loop(EvolutionRun& run, IterationRecord& iter);
    std::string code_loop(EvolutionRun& run, IterationRecord& iter);
    Verdict validate_verdict(const nlohmann::json& raw, EvolutionRun& run);
    Verdict plateau_guard(EvolutionRun& run, Verdict verdict);
    void finalize(EvolutionRun& run, const Verdict& verdict);
    void fail_run(EvolutionRun& run, const std::string& detail);
    void handle_stop(EvolutionRun& run);

    void boundary(EvolutionRun& run, const std::string& label);
    bool stop_requested(const std::string& run_id) const;
    void persist(EvolutionRun& run);
    void snapshot_runner_state(EvolutionRun& run);
    void restore_runner_state(const EvolutionRun& run);
    std::string provider_for(StageName stage) const;

    // prompt builders (deterministic: no clocks, no ids)
    std::string chunk_evidence(const Batch& batch) const;
    Batch load_batch_or_throw(const std::string& batch_id) const;

    Deps deps_;

    std::mutex current_mu_;
    std::shared_ptr<runners::Runner> current_runner_;
    std::optional<runners::RunnerHandle> current_handle_;
};

// Parses a Task-Evaluate output body. At baseline (`locked` empty) every task
// needs a valid source_chunk_index into the batch; afterwards the
// (task, keypoint) key set must equal the locked one exactly.
struct TaskEvaluateDoc {
    KeypointMatrix matrix;
    std::vector<TaskBinding> bindings; // filled at baseline
    nlohmann::json normalized;
};

TaskEvaluateDoc parse_task_evaluate(const std::string& body, const Batch* batch,
                                    const std::optional<std::set<MatrixKey>>& locked);

} // namespace moss::pipeline
