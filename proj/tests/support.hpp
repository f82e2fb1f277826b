#pragma once

#include "moss/core/domain.hpp"
#include "moss/core/store.hpp"
#include "moss/core/workspace.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace moss::test {

// Temp directory removed on scope exit.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& sub) const { return path_ / sub; }

private:
    std::filesystem::path path_;
};

// Deterministic transcript generator for property tests.
struct TranscriptGen {
    std::mt19937 rng;
    explicit TranscriptGen(unsigned seed) : rng(seed) {}

    moss::TranscriptEntry entry(int turn, moss::Role role, const std::string& content);
    std::vector<moss::TranscriptEntry> random_session(int max_turns);
};

// Appends entries as JSONL lines to a session file.
void append_session_lines(const std::filesystem::path& file,
                          const std::vector<moss::TranscriptEntry>& entries,
                          const std::string& session_id, const std::string& conversation_id);

// Picks an unused localhost TCP port.
int free_port();

// Minimal webhook sink: records every JSON body POSTed to /hooks/moss.
class WebhookSink {
public:
    WebhookSink();
    ~WebhookSink();

    std::string url() const; // full endpoint URL
    std::vector<nlohmann::json> received() const;
    int count(const std::string& event) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace moss::test
