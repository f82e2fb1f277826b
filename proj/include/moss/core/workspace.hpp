#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace moss {

// Checkout of the inner substrate repository. reset_hard(r) restores the
// working tree byte-identically to the tree at r, untracked files included.
class Workspace {
public:
    virtual ~Workspace() = default;
    virtual std::filesystem::path root() const = 0;
    virtual std::string current_rev() = 0;
    virtual std::string commit(const std::string& message) = 0; // stages everything
    virtual void reset_hard(const std::string& rev) = 0;
    virtual std::string diff(const std::string& rev_a, const std::string& rev_b) = 0;
    virtual int commit_count(const std::string& from_rev, const std::string& to_rev) = 0;
    virtual std::string tree_hash(const std::string& rev) = 0;
};

class GitWorkspace final : public Workspace {
public:
    static GitWorkspace init(const std::filesystem::path& dir); // creates repo + empty root commit
    static GitWorkspace open(const std::filesystem::path& dir);
    static GitWorkspace clone(const std::filesystem::path& src, const std::filesystem::path& dst);

    std::filesystem::path root() const override { return dir_; }
    std::string current_rev() override;
    std::string commit(const std::string& message) override;
    void reset_hard(const std::string& rev) override;
    std::string diff(const std::string& rev_a, const std::string& rev_b) override;
    int commit_count(const std::string& from_rev, const std::string& to_rev) override;
    std::string tree_hash(const std::string& rev) override;

    // Contents of one file at a revision; empty optional when absent.
    std::optional<std::string> file_at(const std::string& rev, const std::string& rel_path);

private:
    explicit GitWorkspace(std::filesystem::path dir) : dir_(std::move(dir)) {}
    std::string git(const std::vector<std::string>& args, bool trim = true);

    std::filesystem::path dir_;
};

// Stage-and-commit everything in `dir` with local identity config; shared by
// workspace fixtures and the scripted runner's implement stage.
std::string git_commit_all(const std::filesystem::path& dir, const std::string& message);

} // namespace moss
