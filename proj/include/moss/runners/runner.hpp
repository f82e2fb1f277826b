#pragma once

#include "moss/core/domain.hpp"
#include "moss/core/time.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace moss::runners {

// One coding-agent CLI spawn: which stage, what workspace scope, the prompt
// and input artifacts, and how long it may run.
struct RunnerSpec {
    std::string provider;
    StageName stage{StageName::locate};
    std::filesystem::path workspace_scope;
    std::string prompt;
    std::vector<std::filesystem::path> inputs;
    std::int64_t timeout_ms{900000};
    std::vector<std::string> env_allowlist;

    nlohmann::json to_json() const;
    static RunnerSpec from_json(const nlohmann::json& doc);
};

// prepare() stages the prompt and input manifest into an invocation directory:
//   invocations/<id>/{prompt.md, inputs/, output, log}
struct InvocationPlan {
    std::string invocation_id;
    RunnerSpec spec;
    std::filesystem::path dir;

    std::filesystem::path prompt_path() const { return dir / "prompt.md"; }
    std::filesystem::path output_path() const { return dir / "output"; }
    std::filesystem::path log_path() const { return dir / "log"; }

    nlohmann::json to_json() const;
    static InvocationPlan from_json(const nlohmann::json& doc);
};

enum class HandleState { running, finished, cancelled, timed_out };

std::string handle_state_name(HandleState s);
std::optional<HandleState> handle_state_from_name(const std::string& name);

struct RunnerHandle {
    std::string invocation_id;
    std::string provider;
    Timestamp started_at;
    HandleState state{HandleState::running};
    std::optional<int> pid; // subprocess providers only

    nlohmann::json to_json() const;
    static RunnerHandle from_json(const nlohmann::json& doc);
};

struct StageOutput {
    StageName kind{StageName::locate};
    std::string body;
    int exit_status{0};
    std::filesystem::path log_path;
    HandleState final_state{HandleState::finished};

    bool ok() const { return final_state == HandleState::finished && exit_status == 0 && !body.empty(); }

    nlohmann::json to_json() const;
    static StageOutput from_json(const nlohmann::json& doc);
};

// The four-method runner contract. collect() blocks until the invocation
// finishes or times out; cancel() stays callable from another thread and is a
// no-op on terminal handles.
class Runner {
public:
    virtual ~Runner() = default;
    virtual std::string name() const = 0;
    virtual InvocationPlan prepare(const RunnerSpec& spec) = 0;
    virtual RunnerHandle launch(const InvocationPlan& plan) = 0;
    virtual StageOutput collect(RunnerHandle& handle) = 0;
    virtual void cancel(RunnerHandle& handle) = 0;
};

// Shared prepare() implementation: allocates the invocation directory and
// stages prompt + inputs. Runners differ only in how they execute.
InvocationPlan stage_invocation(const std::filesystem::path& invocations_root,
                                const RunnerSpec& spec);

} // namespace moss::runners
