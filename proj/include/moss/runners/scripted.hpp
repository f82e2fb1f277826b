#pragma once

#include "moss/runners/runner.hpp"

#include <condition_variable>
#include <map>
#include <mutex>

namespace moss::runners {

// Deterministic replay runner. The script is a JSON list of
//   {stage, round?, body, exit_status?, delay_ms?}
// entries, consumed FIFO per stage; exhaustion raises launch_failure. A body
// may be a string (markdown stages) or an object (review/matrix/verdict
// stages, serialized). An implement-stage object body may carry
//   {"edits": [{"path","content"}], "remove": ["path"...], "message": "..."}
// which the runner applies to the workspace scope and commits, mirroring what
// a real coding agent does in its checkout. `"commits"` (a list of such
// objects) produces several commits for misbehavior tests.
class ScriptedRunner final : public Runner {
public:
    static std::shared_ptr<ScriptedRunner> load(const std::filesystem::path& script_path,
                                                const std::filesystem::path& invocations_root);
    static std::shared_ptr<ScriptedRunner> from_entries(const nlohmann::json& entries,
                                                        const std::filesystem::path& invocations_root);

    std::string name() const override { return "scripted"; }
    InvocationPlan prepare(const RunnerSpec& spec) override;
    RunnerHandle launch(const InvocationPlan& plan) override;
    StageOutput collect(RunnerHandle& handle) override;
    void cancel(RunnerHandle& handle) override;

    // Consumption counters, snapshotable so a resumed run replays from where
    // it stopped.
    nlohmann::json consumption_state() const;
    void restore_consumption(const nlohmann::json& state);

    int invocation_count() const;
    int invocation_count(StageName stage) const;

private:
    struct Entry {
        StageName stage;
        nlohmann::json body;
        int exit_status{0};
        std::int64_t delay_ms{0};
    };
    struct Pending {
        InvocationPlan plan;
        HandleState state{HandleState::running};
        std::optional<Entry> entry; // nullopt when the script was exhausted
        std::condition_variable cv;
    };

    ScriptedRunner(std::vector<Entry> entries, std::filesystem::path invocations_root);

    void apply_implement_body(const nlohmann::json& body, const std::filesystem::path& workspace);

    std::vector<Entry> entries_;
    std::filesystem::path invocations_root_;
    mutable std::mutex mu_;
    std::map<std::string, std::size_t> consumed_; // stage name -> count
    std::map<std::string, std::shared_ptr<Pending>> pending_;
    int total_invocations_{0};
    std::map<std::string, int> invocations_by_stage_;
};

} // namespace moss::runners
