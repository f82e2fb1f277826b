#pragma once

#include "moss/core/domain.hpp"
#include "moss/core/store.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace moss::autoscan {

struct SessionCursor {
    std::string session_id;
    std::uint64_t byte_offset{0};
    int last_turn_index{-1};

    nlohmann::json to_json() const;
    static SessionCursor from_json(const std::string& session_id, const nlohmann::json& doc);
};

// Scores a chunk transcript into 4-7 advisory keypoint tags. Deterministic for
// the scripted implementation given identical input.
class ChunkEvaluator {
public:
    virtual ~ChunkEvaluator() = default;
    virtual std::vector<KeypointTag> evaluate(const std::vector<TranscriptEntry>& transcript) = 0;
};

// Stable content key of a chunk transcript (roles + contents, not offsets);
// the scripted evaluator's sidecar and the scenario generator share it.
std::string transcript_hash(const std::vector<TranscriptEntry>& transcript);

// Sidecar-driven evaluator: the sidecar JSON maps transcript_hash to a list of
// [keypoint, level] pairs. Unknown transcripts raise evaluator_failure.
class ScriptedEvaluator final : public ChunkEvaluator {
public:
    static std::shared_ptr<ScriptedEvaluator> load(const std::filesystem::path& sidecar_path);
    explicit ScriptedEvaluator(std::map<std::string, std::vector<KeypointTag>> table)
        : table_(std::move(table)) {}

    std::vector<KeypointTag> evaluate(const std::vector<TranscriptEntry>& transcript) override;

private:
    std::map<std::string, std::vector<KeypointTag>> table_;
};

struct ScanReport {
    int chunks_admitted{0};
    int batches_sealed{0};
    int records_skipped{0};
    int chunks_skipped{0};

    nlohmann::json to_json() const;
};

// A candidate chunk produced by slicing: one user turn through the records
// preceding the next user turn.
struct CandidateChunk {
    std::string conversation_id;
    std::vector<TranscriptEntry> entries;
    std::uint64_t end_offset{0}; // byte offset just past the chunk's last line
};

struct SliceResult {
    std::vector<CandidateChunk> chunks;
    std::uint64_t consumed_end{0}; // cursor advances here; dangling tail held
    int last_turn_index{-1};
    int records_skipped{0};
};

// Raw parsed line with its byte extent; malformed lines keep a null entry.
struct RawRecord {
    std::optional<TranscriptEntry> entry;
    std::string conversation_id;
    std::uint64_t begin{0};
    std::uint64_t end{0};
};

SliceResult slice_records(const std::vector<RawRecord>& records, std::uint64_t scan_start,
                          int prior_last_turn);

struct AdmitDecision {
    bool admitted{false};
    std::vector<KeypointTag> tags;
};

// Evidence curation: scans session JSONLs from per-session cursors, slices
// new content into chunks, tags them, and maintains one open batch per
// conversation, sealing at the configured threshold.
class AutoscanEngine {
public:
    AutoscanEngine(StateStore& store, std::filesystem::path sessions_dir,
                   std::shared_ptr<ChunkEvaluator> evaluator, int seal_threshold = 8);

    ScanReport catch_up();
    ScanReport flag(const std::string& session_id); // throws unknown_session

private:
    ScanReport scan_session(const std::string& session_id);
    AdmitDecision admit_chunk(const CandidateChunk& chunk, const std::string& session_id,
                              ScanReport& report);
    std::mutex& session_mutex(const std::string& session_id);

    StateStore& store_;
    std::filesystem::path sessions_dir_;
    std::shared_ptr<ChunkEvaluator> evaluator_;
    int seal_threshold_;

    std::mutex locks_mu_;
    std::map<std::string, std::unique_ptr<std::mutex>> session_locks_;
    std::mutex batch_mu_; // serializes batch append across conversations
};

} // namespace moss::autoscan
