#include "moss/runners/scripted.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/store.hpp"
#include "moss/core/workspace.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>

namespace fs = std::filesystem;

namespace moss::runners {

using nlohmann::json;

std::shared_ptr<ScriptedRunner> ScriptedRunner::load(const fs::path& script_path,
                                                     const fs::path& invocations_root) {
    auto text = read_file(script_path);
    if (!text) throw Error(ErrorCode::malformed_script, "script not found: " + script_path.string());
    json doc;
    try {
        doc = json::parse(*text);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::malformed_script, "script is not valid JSON: " + std::string(e.what()));
    }
    return from_entries(doc, invocations_root);
}

std::shared_ptr<ScriptedRunner> ScriptedRunner::from_entries(const json& entries,
                                                             const fs::path& invocations_root) {
    if (!entries.is_array())
        throw Error(ErrorCode::malformed_script, "script must be a JSON list of entries");
    std::vector<Entry> parsed;
    for (const auto& e : entries) {
        if (!e.is_object() || !e.contains("stage") || !e.contains("body"))
            throw Error(ErrorCode::malformed_script, "script entry needs stage and body");
        auto stage = stage_from_name(e["stage"].get<std::string>());
        if (!stage)
            throw Error(ErrorCode::malformed_script, "unknown stage: " + e["stage"].dump());
        Entry entry;
        entry.stage = *stage;
        entry.body = e["body"];
        entry.exit_status = e.value("exit_status", 0);
        entry.delay_ms = e.value("delay_ms", std::int64_t{0});
        parsed.push_back(std::move(entry));
    }
    return std::shared_ptr<ScriptedRunner>(new ScriptedRunner(std::move(parsed), invocations_root));
}

ScriptedRunner::ScriptedRunner(std::vector<Entry> entries, fs::path invocations_root)
    : entries_(std::move(entries)), invocations_root_(std::move(invocations_root)) {}

InvocationPlan ScriptedRunner::prepare(const RunnerSpec& spec) {
    return stage_invocation(invocations_root_, spec);
}

RunnerHandle ScriptedRunner::launch(const InvocationPlan& plan) {
    std::lock_guard<std::mutex> lock(mu_);
    const std::string stage = stage_name_str(plan.spec.stage);

    // FIFO consumption per stage.
    std::size_t skip = consumed_[stage];
    std::optional<Entry> chosen;
    for (const auto& e : entries_) {
        if (e.stage != plan.spec.stage) continue;
        if (skip == 0) {
            chosen = e;
            break;
        }
        --skip;
    }
    if (!chosen)
        throw Error(ErrorCode::launch_failure,
                    "script exhausted for stage " + stage + " (consumed " +
                        std::to_string(consumed_[stage]) + ")");
    consumed_[stage]++;
    total_invocations_++;
    invocations_by_stage_[stage]++;

    auto pending = std::make_shared<Pending>();
    pending->plan = plan;
    pending->entry = chosen;
    pending_[plan.invocation_id] = pending;

    RunnerHandle handle;
    handle.invocation_id = plan.invocation_id;
    handle.provider = name();
    handle.started_at = Timestamp::now();
    handle.state = HandleState::running;
    return handle;
}

StageOutput ScriptedRunner::collect(RunnerHandle& handle) {
    std::shared_ptr<Pending> pending;
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = pending_.find(handle.invocation_id);
        if (it == pending_.end())
            throw Error(ErrorCode::launch_failure, "unknown invocation " + handle.invocation_id);
        pending = it->second;
    }

    StageOutput out;
    out.kind = pending->plan.spec.stage;
    out.log_path = pending->plan.log_path();

    std::unique_lock<std::mutex> lock(mu_);
    if (pending->state == HandleState::running && pending->entry) {
        const std::int64_t budget = pending->plan.spec.timeout_ms;
        const std::int64_t delay = pending->entry->delay_ms;
        if (delay > 0) {
            // Block for the scripted delay, but never past the timeout budget.
            const std::int64_t wait = std::min(delay, budget);
            bool interrupted = pending->cv.wait_for(lock, std::chrono::milliseconds(wait), [&] {
                return pending->state != HandleState::running;
            });
            if (!interrupted && delay >= budget) pending->state = HandleState::timed_out;
        }
        if (pending->state == HandleState::running) {
            const auto& entry = *pending->entry;
            std::string body = entry.body.is_string() ? entry.body.get<std::string>()
                                                      : entry.body.dump(2);
            lock.unlock();
            if (pending->plan.spec.stage == StageName::implement && entry.body.is_object())
                apply_implement_body(entry.body, pending->plan.spec.workspace_scope);
            atomic_write_file(pending->plan.output_path(), body);
            atomic_write_file(pending->plan.log_path(), "scripted entry replay\n");
            lock.lock();
            pending->state = HandleState::finished;
            out.body = body;
            out.exit_status = entry.exit_status;
        }
    }

    out.final_state = pending->state;
    if (pending->state != HandleState::finished && out.exit_status == 0) out.exit_status = -1;
    handle.state = pending->state;
    return out;
}

void ScriptedRunner::cancel(RunnerHandle& handle) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = pending_.find(handle.invocation_id);
    if (it == pending_.end()) return;
    auto& pending = it->second;
    if (pending->state == HandleState::running) { // terminal states absorb
        pending->state = HandleState::cancelled;
        pending->cv.notify_all();
    }
    handle.state = pending->state;
}

void ScriptedRunner::apply_implement_body(const json& body, const fs::path& workspace) {
    auto apply_one = [&](const json& change) {
        for (const auto& edit : change.value("edits", json::array())) {
            fs::path target = workspace / edit.at("path").get<std::string>();
            std::error_code ec;
            fs::create_directories(target.parent_path(), ec);
            std::ofstream out(target, std::ios::trunc);
            out << edit.at("content").get<std::string>();
        }
        for (const auto& removal : change.value("remove", json::array())) {
            std::error_code ec;
            fs::remove(workspace / removal.get<std::string>(), ec);
        }
        if (change.contains("edits") || change.contains("remove"))
            git_commit_all(workspace, change.value("message", "scripted change"));
    };

    if (body.contains("commits")) {
        for (const auto& change : body["commits"]) apply_one(change);
    } else {
        apply_one(body);
    }
}

json ScriptedRunner::consumption_state() const {
    std::lock_guard<std::mutex> lock(mu_);
    return json(consumed_);
}

void ScriptedRunner::restore_consumption(const json& state) {
    std::lock_guard<std::mutex> lock(mu_);
    consumed_.clear();
    if (state.is_object())
        for (const auto& [stage, count] : state.items())
            consumed_[stage] = count.get<std::size_t>();
}

int ScriptedRunner::invocation_count() const {
    std::lock_guard<std::mutex> lock(mu_);
    return total_invocations_;
}

int ScriptedRunner::invocation_count(StageName stage) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = invocations_by_stage_.find(stage_name_str(stage));
    return it == invocations_by_stage_.end() ? 0 : it->second;
}

} // namespace moss::runners
