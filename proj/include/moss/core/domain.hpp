#pragma once

#include "moss/core/level.hpp"
#include "moss/core/matrix.hpp"
#include "moss/core/time.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moss {

enum class Role { user, agent, system, tool };

std::string role_name(Role r);
std::optional<Role> role_from_name(const std::string& name);

// One line of a session JSONL.
struct TranscriptEntry {
    int turn_index{0};
    Role role{Role::user};
    std::string content;
    Timestamp ts;

    nlohmann::json to_json() const;
    static TranscriptEntry from_json(const nlohmann::json& doc);
};

struct KeypointTag {
    std::string keypoint;
    Level level{Level::missing};
};

// One conversational exchange extracted from a session log, with transcript
// and advisory keypoint tags. A chunk admitted to a batch carries at least
// one tag at weak or missing.
struct ChunkRecord {
    std::string chunk_id;
    std::string session_id;
    std::string conversation_id;
    int first_turn_index{0};
    int last_turn_index{0};
    std::vector<TranscriptEntry> transcript;
    std::vector<KeypointTag> keypoint_tags;
    Timestamp captured_at;

    std::string first_user_prompt() const;

    nlohmann::json to_json() const;
    static ChunkRecord from_json(const nlohmann::json& doc);
};

enum class BatchState { open, sealed, evolving, ready_to_apply, applied, failed };

std::string batch_state_name(BatchState s);
std::optional<BatchState> batch_state_from_name(const std::string& name);

bool batch_transition_allowed(BatchState from, BatchState to);

struct Batch {
    std::string batch_id;
    std::string conversation_id;
    BatchState state{BatchState::open};
    std::vector<ChunkRecord> chunks;
    Timestamp created_at;
    std::optional<Timestamp> sealed_at;
    int seal_threshold{8};

    // Throws Error(invalid_transition) for any step the state machine rejects.
    void transition(BatchState to);

    nlohmann::json to_json() const;
    nlohmann::json summary_json() const;
    static Batch from_json(const nlohmann::json& doc);
};

enum class VerdictKind {
    converged,
    need_more_work,
    fundamental_limit_model,
    fundamental_limit_architecture,
};

std::string verdict_kind_name(VerdictKind k); // wire form: "CONVERGED" etc.
std::optional<VerdictKind> verdict_kind_from_name(const std::string& name);

struct Verdict {
    VerdictKind kind{VerdictKind::need_more_work};
    std::string rationale;
    bool forced_by_plateau{false};

    nlohmann::json to_json() const;
    static Verdict from_json(const nlohmann::json& doc);
};

// Evolution-depth dial. The four scaled quantities move together; numbers are
// config-overridable defaults.
struct DepthProfile {
    std::string name{"standard"};
    int max_iterations{4};
    int plan_rounds{3};
    int code_rounds{3};
    int trials_per_task{2};
    int plateau_window{3};
    int trial_workers_n{2};

    static DepthProfile light();
    static DepthProfile standard();
    static DepthProfile deep();
    static DepthProfile named(const std::string& name); // throws bad_request

    nlohmann::json to_json() const;
    static DepthProfile from_json(const nlohmann::json& doc);
};

struct ImageRef {
    std::string image_id;
    std::string built_from_rev;
    Timestamp built_at;

    nlohmann::json to_json() const;
    static ImageRef from_json(const nlohmann::json& doc);
};

// Pipeline stage identifiers, in execution order.
enum class StageName { locate, plan, plan_review, implement, code_review, task_evaluate, verdict };

std::string stage_name_str(StageName s);
std::optional<StageName> stage_from_name(const std::string& name);

struct IterationRecord {
    int index{1}; // 1-based
    std::map<std::string, std::string> stage_artifacts; // stage name -> path
    std::optional<std::string> commit_rev;
    std::optional<ImageRef> image;
    std::optional<KeypointMatrix> matrix;
    std::optional<Verdict> verdict;

    // Resume bookkeeping, persisted after every stage boundary.
    std::vector<std::string> completed_stages;
    int plan_rounds_used{0};
    int code_rounds_used{0};
    int runner_invocations{0};
    std::optional<std::string> loop_start_rev;

    bool stage_done(const std::string& stage) const;

    nlohmann::json to_json() const;
    static IterationRecord from_json(const nlohmann::json& doc);
};

enum class RunPhase {
    baseline,
    iterating,
    converged,
    failed,
    failed_model_limit,
    failed_architecture_limit,
    stopped,
};

std::string run_phase_name(RunPhase p);
std::optional<RunPhase> run_phase_from_name(const std::string& name);

inline bool run_phase_active(RunPhase p) {
    return p == RunPhase::baseline || p == RunPhase::iterating;
}

// Binding of a locked task to the batch chunk that anchors it.
struct TaskBinding {
    std::string task_id;
    std::string chunk_id;
    int source_chunk_index{0};
    std::string prompt;

    nlohmann::json to_json() const;
    static TaskBinding from_json(const nlohmann::json& doc);
};

struct EvolutionRun {
    std::string run_id;
    std::string batch_id;
    DepthProfile depth;
    RunPhase phase{RunPhase::baseline};
    KeypointMatrix baseline_matrix;
    std::vector<TaskBinding> tasks;
    std::vector<IterationRecord> iterations;
    std::optional<ImageRef> candidate_image;
    std::optional<int> peak_iteration;
    std::optional<std::string> current_stage;
    Timestamp started_at;
    nlohmann::json runner_state; // scripted-runner consumption snapshot

    nlohmann::json to_json() const;
    static EvolutionRun from_json(const nlohmann::json& doc);
};

} // namespace moss
