#pragma once

#include <sys/types.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace moss {

struct ProcResult {
    int exit_code{-1};
    std::string out;
    std::string err;
    bool timed_out{false};
};

struct ProcOptions {
    std::optional<std::filesystem::path> cwd;
    std::optional<std::int64_t> timeout_ms;
    // When set, the child env is reduced to these names (values from the
    // parent) plus `extra_env`; otherwise the parent env is inherited.
    std::optional<std::vector<std::string>> env_allowlist;
    std::map<std::string, std::string> extra_env;
    std::optional<std::filesystem::path> stdout_file; // append stdout+stderr here instead of capturing
};

// A spawned child with its stdout/stderr captured. Runner adapters need the
// launch/wait split; run_process() wraps it for one-shot callers.
class ChildProcess {
public:
    ChildProcess() = default;
    ChildProcess(const ChildProcess&) = delete;
    ChildProcess& operator=(const ChildProcess&) = delete;
    ChildProcess(ChildProcess&&) noexcept;
    ChildProcess& operator=(ChildProcess&&) noexcept;
    ~ChildProcess();

    static ChildProcess spawn(const std::vector<std::string>& argv, const ProcOptions& opts = {});

    pid_t pid() const { return pid_; }
    bool running();

    // Waits up to timeout_ms (forever when nullopt); drains pipes into the
    // result. Sets timed_out and kills the child when the deadline passes.
    ProcResult wait(std::optional<std::int64_t> timeout_ms);
    void kill_now(); // SIGKILL + reap

private:
    pid_t pid_{-1};
    int out_fd_{-1};
    std::string buffered_;
    bool reaped_{false};
    int exit_code_{-1};
};

ProcResult run_process(const std::vector<std::string>& argv, const ProcOptions& opts = {});

} // namespace moss
