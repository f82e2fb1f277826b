#include "moss/core/proc.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/time.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>

extern char** environ;

namespace moss {

namespace {

[[noreturn]] void child_exec(const std::vector<std::string>& argv, const ProcOptions& opts,
                             int out_write) {
    if (opts.cwd && chdir(opts.cwd->c_str()) != 0) _exit(127);

    if (opts.stdout_file) {
        int fd = open(opts.stdout_file->c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
        if (fd >= 0) {
            dup2(fd, STDOUT_FILENO);
            dup2(fd, STDERR_FILENO);
            close(fd);
        }
    } else {
        dup2(out_write, STDOUT_FILENO);
        dup2(out_write, STDERR_FILENO);
    }
    close(out_write);

    std::vector<std::string> env_storage;
    if (opts.env_allowlist) {
        for (const auto& name : *opts.env_allowlist) {
            const char* v = getenv(name.c_str());
            if (v) env_storage.push_back(name + "=" + v);
        }
        // A child with no PATH cannot exec anything useful.
        bool has_path = false;
        for (const auto& e : env_storage)
            if (e.rfind("PATH=", 0) == 0) has_path = true;
        if (!has_path) {
            const char* v = getenv("PATH");
            env_storage.push_back(std::string("PATH=") + (v ? v : "/usr/bin:/bin"));
        }
    } else {
        for (char** e = environ; *e; ++e) env_storage.push_back(*e);
    }
    for (const auto& [k, v] : opts.extra_env) env_storage.push_back(k + "=" + v);

    std::vector<char*> envp;
    envp.reserve(env_storage.size() + 1);
    for (auto& e : env_storage) envp.push_back(e.data());
    envp.push_back(nullptr);

    std::vector<char*> args;
    args.reserve(argv.size() + 1);
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    execvpe(args[0], args.data(), envp.data());
    _exit(127);
}

} // namespace

ChildProcess::ChildProcess(ChildProcess&& other) noexcept { *this = std::move(other); }

ChildProcess& ChildProcess::operator=(ChildProcess&& other) noexcept {
    if (this != &other) {
        if (pid_ > 0 && !reaped_) kill_now();
        if (out_fd_ >= 0) close(out_fd_);
        pid_ = other.pid_;
        out_fd_ = other.out_fd_;
        buffered_ = std::move(other.buffered_);
        reaped_ = other.reaped_;
        exit_code_ = other.exit_code_;
        other.pid_ = -1;
        other.out_fd_ = -1;
        other.reaped_ = true;
    }
    return *this;
}

ChildProcess::~ChildProcess() {
    if (pid_ > 0 && !reaped_) kill_now();
    if (out_fd_ >= 0) close(out_fd_);
}

ChildProcess ChildProcess::spawn(const std::vector<std::string>& argv, const ProcOptions& opts) {
    if (argv.empty()) throw Error(ErrorCode::launch_failure, "empty argv");
    int pipefd[2] = {-1, -1};
    if (pipe(pipefd) != 0) throw Error(ErrorCode::launch_failure, "pipe() failed");

    pid_t pid = fork();
    if (pid < 0) {
        close(pipefd[0]);
        close(pipefd[1]);
        throw Error(ErrorCode::launch_failure, "fork() failed");
    }
    if (pid == 0) {
        close(pipefd[0]);
        child_exec(argv, opts, pipefd[1]);
    }
    close(pipefd[1]);

    ChildProcess child;
    child.pid_ = pid;
    child.out_fd_ = pipefd[0];
    fcntl(child.out_fd_, F_SETFL, O_NONBLOCK);
    return child;
}

bool ChildProcess::running() {
    if (reaped_ || pid_ <= 0) return false;
    int status = 0;
    pid_t r = waitpid(pid_, &status, WNOHANG);
    if (r == pid_) {
        reaped_ = true;
        exit_code_ = WIFEXITED(status) ? WEXITSTATUS(status) : -WTERMSIG(status);
        return false;
    }
    return r == 0;
}

ProcResult ChildProcess::wait(std::optional<std::int64_t> timeout_ms) {
    ProcResult result;
    auto deadline = timeout_ms ? std::optional<std::int64_t>(Timestamp::now().ms + *timeout_ms)
                               : std::nullopt;

    char buf[4096];
    while (true) {
        // Drain whatever the child has written so far.
        while (out_fd_ >= 0) {
            ssize_t n = read(out_fd_, buf, sizeof(buf));
            if (n > 0) {
                buffered_.append(buf, static_cast<std::size_t>(n));
            } else if (n == 0) {
                close(out_fd_);
                out_fd_ = -1;
            } else {
                break; // EAGAIN
            }
        }

        if (!running()) break;

        if (deadline && Timestamp::now().ms >= *deadline) {
            kill_now();
            result.timed_out = true;
            break;
        }

        struct pollfd pfd{out_fd_, POLLIN, 0};
        poll(out_fd_ >= 0 ? &pfd : nullptr, out_fd_ >= 0 ? 1 : 0, 20);
    }

    // Final drain after exit.
    while (out_fd_ >= 0) {
        ssize_t n = read(out_fd_, buf, sizeof(buf));
        if (n > 0) {
            buffered_.append(buf, static_cast<std::size_t>(n));
        } else {
            close(out_fd_);
            out_fd_ = -1;
        }
    }

    result.exit_code = exit_code_;
    result.out = buffered_;
    return result;
}

void ChildProcess::kill_now() {
    if (pid_ <= 0 || reaped_) return;
    ::kill(pid_, SIGKILL);
    int status = 0;
    waitpid(pid_, &status, 0);
    reaped_ = true;
    exit_code_ = WIFEXITED(status) ? WEXITSTATUS(status) : -WTERMSIG(status);
}

ProcResult run_process(const std::vector<std::string>& argv, const ProcOptions& opts) {
    auto child = ChildProcess::spawn(argv, opts);
    return child.wait(opts.timeout_ms);
}

} // namespace moss
