#include "moss/runners/subprocess.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/store.hpp"

#include <signal.h>

namespace fs = std::filesystem;

namespace moss::runners {

namespace {

std::string substitute(std::string text, const std::string& key, const std::string& value) {
    const std::string token = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = text.find(token, pos)) != std::string::npos) {
        text.replace(pos, token.size(), value);
        pos += value.size();
    }
    return text;
}

} // namespace

SubprocessRunner::SubprocessRunner(std::string name, std::vector<std::string> command_template,
                                   fs::path invocations_root)
    : name_(std::move(name)), command_template_(std::move(command_template)),
      invocations_root_(std::move(invocations_root)) {
    if (command_template_.empty())
        throw Error(ErrorCode::bad_request, "subprocess runner needs a command template");
}

InvocationPlan SubprocessRunner::prepare(const RunnerSpec& spec) {
    return stage_invocation(invocations_root_, spec);
}

RunnerHandle SubprocessRunner::launch(const InvocationPlan& plan) {
    std::vector<std::string> argv;
    argv.reserve(command_template_.size());
    for (const auto& part : command_template_) {
        std::string arg = substitute(part, "prompt_path", plan.prompt_path().string());
        arg = substitute(arg, "workspace", plan.spec.workspace_scope.string());
        arg = substitute(arg, "output_path", plan.output_path().string());
        argv.push_back(arg);
    }

    ProcOptions opts;
    opts.cwd = plan.spec.workspace_scope;
    opts.stdout_file = plan.log_path();
    if (!plan.spec.env_allowlist.empty()) opts.env_allowlist = plan.spec.env_allowlist;

    auto live = std::make_shared<Live>();
    live->plan = plan;
    live->child = ChildProcess::spawn(argv, opts); // throws launch_failure

    RunnerHandle handle;
    handle.invocation_id = plan.invocation_id;
    handle.provider = name_;
    handle.started_at = Timestamp::now();
    handle.state = HandleState::running;
    handle.pid = static_cast<int>(live->child.pid());

    std::lock_guard<std::mutex> lock(mu_);
    live_[plan.invocation_id] = live;
    return handle;
}

StageOutput SubprocessRunner::collect(RunnerHandle& handle) {
    std::shared_ptr<Live> live;
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = live_.find(handle.invocation_id);
        if (it == live_.end())
            throw Error(ErrorCode::launch_failure, "unknown invocation " + handle.invocation_id);
        live = it->second;
    }

    StageOutput out;
    out.kind = live->plan.spec.stage;
    out.log_path = live->plan.log_path();

    bool should_wait = false;
    {
        std::lock_guard<std::mutex> lock(mu_);
        if (live->state == HandleState::running) {
            live->collecting = true;
            should_wait = true;
        }
    }
    if (should_wait) {
        auto result = live->child.wait(live->plan.spec.timeout_ms);
        std::lock_guard<std::mutex> lock(mu_);
        live->collecting = false;
        if (live->state == HandleState::running) {
            live->state = result.timed_out ? HandleState::timed_out : HandleState::finished;
            out.exit_status = result.timed_out ? -1 : result.exit_code;
        }
    }

    if (live->state == HandleState::finished) {
        auto body = read_file(live->plan.output_path());
        out.body = body.value_or("");
        // Exit 0 with an empty output file is a provider contract violation;
        // surface it as a nonzero status so callers treat it uniformly.
        if (out.exit_status == 0 && out.body.empty()) out.exit_status = 1;
    } else if (out.exit_status == 0) {
        out.exit_status = -1;
    }

    out.final_state = live->state;
    handle.state = live->state;
    return out;
}

void SubprocessRunner::cancel(RunnerHandle& handle) {
    std::shared_ptr<Live> live;
    bool reap_here = false;
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = live_.find(handle.invocation_id);
        if (it == live_.end()) return;
        live = it->second;
        if (live->state != HandleState::running) { // no-op on terminal handles
            handle.state = live->state;
            return;
        }
        live->state = HandleState::cancelled;
        // When a collect() is blocked in wait(), the signal below makes the
        // child exit and that waiter reaps it; only reap here otherwise.
        reap_here = !live->collecting;
        if (!reap_here) ::kill(live->child.pid(), SIGKILL);
    }
    if (reap_here) live->child.kill_now();
    handle.state = HandleState::cancelled;
}

std::map<std::string, std::vector<std::string>> provider_presets() {
    return {
        {"claude-code",
         {"claude", "-p", "--cwd", "{workspace}", "--input-file", "{prompt_path}",
          "--output-file", "{output_path}"}},
        {"codex",
         {"codex", "exec", "--cd", "{workspace}", "--prompt-file", "{prompt_path}",
          "--output-last-message", "{output_path}"}},
        {"deepseek-tui",
         {"deepseek-tui", "run", "--workdir", "{workspace}", "--prompt", "{prompt_path}",
          "--out", "{output_path}"}},
        {"opencode",
         {"opencode", "run", "--dir", "{workspace}", "--file", "{prompt_path}", "--output",
          "{output_path}"}},
    };
}

} // namespace moss::runners
