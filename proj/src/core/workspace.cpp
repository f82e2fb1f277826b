#include "moss/core/workspace.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/proc.hpp"

#include <optional>
#include <vector>

namespace fs = std::filesystem;

namespace moss {

namespace {

std::string trim_newline(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

std::string run_git(const fs::path& dir, const std::vector<std::string>& args, bool trim) {
    std::vector<std::string> argv{"git", "-C", dir.string(),
                                  "-c", "user.name=moss",
                                  "-c", "user.email=moss@localhost"};
    argv.insert(argv.end(), args.begin(), args.end());
    auto result = run_process(argv);
    if (result.exit_code != 0)
        throw Error(ErrorCode::io_failure,
                    "git " + (args.empty() ? "" : args[0]) + " failed in " + dir.string() + ": " +
                        result.out);
    return trim ? trim_newline(result.out) : result.out;
}

} // namespace

GitWorkspace GitWorkspace::init(const fs::path& dir) {
    fs::create_directories(dir);
    run_git(dir, {"init", "-q", "-b", "main"}, true);
    run_git(dir, {"commit", "-q", "--allow-empty", "-m", "init"}, true);
    return GitWorkspace(dir);
}

GitWorkspace GitWorkspace::open(const fs::path& dir) {
    if (!fs::exists(dir / ".git"))
        throw Error(ErrorCode::io_failure, "not a git workspace: " + dir.string());
    return GitWorkspace(dir);
}

GitWorkspace GitWorkspace::clone(const fs::path& src, const fs::path& dst) {
    auto result = run_process({"git", "clone", "-q", src.string(), dst.string()});
    if (result.exit_code != 0)
        throw Error(ErrorCode::io_failure, "git clone failed: " + result.out);
    return GitWorkspace(dst);
}

std::string GitWorkspace::git(const std::vector<std::string>& args, bool trim) {
    return run_git(dir_, args, trim);
}

std::string GitWorkspace::current_rev() { return git({"rev-parse", "HEAD"}); }

std::string GitWorkspace::commit(const std::string& message) {
    git({"add", "-A"});
    git({"commit", "-q", "-m", message});
    return current_rev();
}

void GitWorkspace::reset_hard(const std::string& rev) {
    git({"reset", "--hard", "-q", rev});
    git({"clean", "-fdq"});
}

std::string GitWorkspace::diff(const std::string& rev_a, const std::string& rev_b) {
    return git({"diff", rev_a, rev_b}, false);
}

int GitWorkspace::commit_count(const std::string& from_rev, const std::string& to_rev) {
    auto out = git({"rev-list", "--count", from_rev + ".." + to_rev});
    return std::stoi(out);
}

std::string GitWorkspace::tree_hash(const std::string& rev) {
    return git({"rev-parse", rev + "^{tree}"});
}

std::optional<std::string> GitWorkspace::file_at(const std::string& rev,
                                                 const std::string& rel_path) {
    auto result = run_process({"git", "-C", dir_.string(), "show", rev + ":" + rel_path});
    if (result.exit_code != 0) return std::nullopt;
    return result.out;
}

std::string git_commit_all(const fs::path& dir, const std::string& message) {
    return GitWorkspace::open(dir).commit(message);
}

} // namespace moss
