#pragma once

#include "moss/core/domain.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace moss {

namespace detail {
// Test seam: invoked after the temp file is written, before the rename.
// Throwing here models a writer dying mid-write.
extern std::function<void(const std::filesystem::path& tmp)> atomic_write_hook;
} // namespace detail

// Write-temp-then-rename; readers never observe a partial document.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

std::optional<std::string> read_file(const std::filesystem::path& path);

// Durable JSON-document store over the fixed state-directory layout:
//
//   batches/<conversation_id>/<batch_id>.json
//   cursors/<session_id>.cursor
//   runs/<run_id>/state.json
//   runs/<run_id>/baseline/matrix.json
//   runs/<run_id>/iter-<k>/{locate.md,plan.md,plan_review.json,diff.patch,
//                           code_review.json,matrix.json,verdict.json}
//   runs/<run_id>/iter-<k>/trials/<task_id>/<trial_n>.jsonl
//   swap/request.json
//   swap/last_known_good.json
//   images/registry.json
//
// Each document has exactly one owning component at a time; ownership moves
// with batch/run state transitions. Readers may read concurrently.
class StateStore {
public:
    explicit StateStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }

    void write_doc(const std::filesystem::path& rel, const nlohmann::json& doc);
    std::optional<nlohmann::json> read_doc(const std::filesystem::path& rel) const;
    void remove(const std::filesystem::path& rel);
    bool exists(const std::filesystem::path& rel) const;

    // --- batches ---
    std::filesystem::path batch_rel(const std::string& conversation_id,
                                    const std::string& batch_id) const;
    void save_batch(const Batch& batch);
    std::optional<Batch> load_batch(const std::string& batch_id) const;
    std::vector<Batch> list_batches() const; // sorted by batch_id (ULIDs sort by time)
    std::optional<Batch> find_open_batch(const std::string& conversation_id) const;

    // At most one open batch per conversation; throws Error(invalid_transition)
    // when a reload reveals a violated store.
    void check_open_batch_invariant() const;

    // --- cursors ---
    std::optional<nlohmann::json> load_cursor(const std::string& session_id) const;
    void save_cursor(const std::string& session_id, const nlohmann::json& doc);

    // --- runs ---
    std::filesystem::path run_dir(const std::string& run_id) const;
    std::filesystem::path iter_dir(const std::string& run_id, int index) const;
    void save_run(const EvolutionRun& run);
    std::optional<EvolutionRun> load_run(const std::string& run_id) const;
    std::vector<std::string> list_run_ids() const;
    std::optional<EvolutionRun> find_active_run() const;

    // --- swap ---
    std::filesystem::path swap_request_path() const;
    std::filesystem::path last_known_good_path() const;
    std::filesystem::path swap_archive_dir() const;
    std::filesystem::path fatal_alert_path() const;

private:
    std::filesystem::path root_;
};

} // namespace moss
