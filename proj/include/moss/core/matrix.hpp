#pragma once

#include "moss/core/level.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace moss {

// One (task, keypoint) coordinate in a keypoint matrix.
struct MatrixKey {
    std::string task_id;
    std::string keypoint;

    bool operator==(const MatrixKey&) const = default;
    auto operator<=>(const MatrixKey&) const = default;
    std::string str() const { return task_id + "." + keypoint; }
};

// Per-task keypoint -> level map. The baseline matrix of a run locks the
// (task_id, keypoint_name) key set for every later evaluation.
class KeypointMatrix {
public:
    KeypointMatrix() = default;

    void set(const std::string& task_id, const std::string& keypoint, Level level);
    Level at(const MatrixKey& key) const; // throws key_set_mismatch when absent

    std::vector<std::string> task_ids() const;
    std::set<MatrixKey> key_set() const;
    int keypoint_count(const std::string& task_id) const;
    int score_sum() const;
    bool empty() const { return tasks_.empty(); }

    const std::map<std::string, std::map<std::string, Level>>& tasks() const { return tasks_; }

    // Every task must carry between `min_kp` and `max_kp` keypoints.
    bool shape_ok(int min_kp = 4, int max_kp = 7) const;

    nlohmann::json to_json() const;
    static KeypointMatrix from_json(const nlohmann::json& doc); // throws bad_request

    bool operator==(const KeypointMatrix&) const = default;

private:
    std::map<std::string, std::map<std::string, Level>> tasks_;
};

struct DeltaReport {
    std::vector<MatrixKey> improved_keys;
    std::vector<MatrixKey> regressed_keys;
    bool any_improved{false};
    int score_sum{0}; // sum of the candidate's ordinal values
};

// Compares candidate against baseline over an identical key set; throws
// Error(key_set_mismatch) when the key sets differ (a Task-Evaluate output
// that violated the locked keypoint set).
DeltaReport matrix_delta(const KeypointMatrix& baseline, const KeypointMatrix& candidate);

} // namespace moss
