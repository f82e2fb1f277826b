#include "moss/core/matrix.hpp"

#include "moss/core/errors.hpp"

namespace moss {

void KeypointMatrix::set(const std::string& task_id, const std::string& keypoint, Level level) {
    tasks_[task_id][keypoint] = level;
}

Level KeypointMatrix::at(const MatrixKey& key) const {
    auto t = tasks_.find(key.task_id);
    if (t == tasks_.end()) throw Error(ErrorCode::key_set_mismatch, "unknown task " + key.task_id);
    auto k = t->second.find(key.keypoint);
    if (k == t->second.end())
        throw Error(ErrorCode::key_set_mismatch, "unknown keypoint " + key.str());
    return k->second;
}

std::vector<std::string> KeypointMatrix::task_ids() const {
    std::vector<std::string> out;
    out.reserve(tasks_.size());
    for (const auto& [id, _] : tasks_) out.push_back(id);
    return out;
}

std::set<MatrixKey> KeypointMatrix::key_set() const {
    std::set<MatrixKey> out;
    for (const auto& [task, kps] : tasks_)
        for (const auto& [kp, _] : kps) out.insert(MatrixKey{task, kp});
    return out;
}

int KeypointMatrix::keypoint_count(const std::string& task_id) const {
    auto t = tasks_.find(task_id);
    return t == tasks_.end() ? 0 : static_cast<int>(t->second.size());
}

int KeypointMatrix::score_sum() const {
    int sum = 0;
    for (const auto& [_, kps] : tasks_)
        for (const auto& [_kp, level] : kps) sum += level_value(level);
    return sum;
}

bool KeypointMatrix::shape_ok(int min_kp, int max_kp) const {
    if (tasks_.empty()) return false;
    for (const auto& [_, kps] : tasks_) {
        int n = static_cast<int>(kps.size());
        if (n < min_kp || n > max_kp) return false;
    }
    return true;
}

nlohmann::json KeypointMatrix::to_json() const {
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& [task, kps] : tasks_) {
        nlohmann::json keypoints = nlohmann::json::object();
        for (const auto& [kp, level] : kps) keypoints[kp] = level_name(level);
        tasks.push_back({{"task_id", task}, {"keypoints", keypoints}});
    }
    return {{"version", 1}, {"tasks", tasks}};
}

KeypointMatrix KeypointMatrix::from_json(const nlohmann::json& doc) {
    KeypointMatrix m;
    if (!doc.is_object() || !doc.contains("tasks") || !doc["tasks"].is_array())
        throw Error(ErrorCode::bad_request, "matrix document missing tasks array");
    for (const auto& task : doc["tasks"]) {
        if (!task.contains("task_id") || !task.contains("keypoints"))
            throw Error(ErrorCode::bad_request, "matrix task entry missing task_id/keypoints");
        const std::string id = task["task_id"].get<std::string>();
        for (const auto& [kp, levelName] : task["keypoints"].items()) {
            auto level = level_from_name(levelName.get<std::string>());
            if (!level)
                throw Error(ErrorCode::bad_request,
                            "unknown level '" + levelName.get<std::string>() + "' at " + id + "." + kp);
            m.set(id, kp, *level);
        }
    }
    return m;
}

DeltaReport matrix_delta(const KeypointMatrix& baseline, const KeypointMatrix& candidate) {
    if (baseline.key_set() != candidate.key_set())
        throw Error(ErrorCode::key_set_mismatch,
                    "baseline and candidate matrices disagree on (task, keypoint) keys");

    DeltaReport report;
    for (const auto& key : baseline.key_set()) {
        Level before = baseline.at(key);
        Level after = candidate.at(key);
        switch (level_order(after, before)) {
        case Ordering::greater: report.improved_keys.push_back(key); break;
        case Ordering::less: report.regressed_keys.push_back(key); break;
        case Ordering::equal: break;
        }
    }
    report.any_improved = !report.improved_keys.empty();
    report.score_sum = candidate.score_sum();
    return report;
}

} // namespace moss
