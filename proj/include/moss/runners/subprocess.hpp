#pragma once

#include "moss/core/proc.hpp"
#include "moss/runners/runner.hpp"

#include <map>
#include <mutex>

namespace moss::runners {

// Generic adapter for real coding-agent CLIs. The command template receives
// {prompt_path}, {workspace} and {output_path} placeholders; the contract is
// exit 0 plus a non-empty output file.
class SubprocessRunner final : public Runner {
public:
    SubprocessRunner(std::string name, std::vector<std::string> command_template,
                     std::filesystem::path invocations_root);

    std::string name() const override { return name_; }
    InvocationPlan prepare(const RunnerSpec& spec) override;
    RunnerHandle launch(const InvocationPlan& plan) override;
    StageOutput collect(RunnerHandle& handle) override;
    void cancel(RunnerHandle& handle) override;

private:
    struct Live {
        InvocationPlan plan;
        ChildProcess child;
        HandleState state{HandleState::running};
        bool collecting{false};
    };

    std::string name_;
    std::vector<std::string> command_template_;
    std::filesystem::path invocations_root_;
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<Live>> live_;
};

// Command templates for the four known coding-agent CLIs. Presets only: each
// is a configuration over SubprocessRunner, verified against the provider's
// documented flags, not covered by CI.
std::map<std::string, std::vector<std::string>> provider_presets();

} // namespace moss::runners
