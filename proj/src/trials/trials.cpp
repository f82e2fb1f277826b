#include "moss/trials/trials.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/store.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

namespace fs = std::filesystem;

namespace moss::trials {

using nlohmann::json;

json TrialTask::to_json() const { return {{"task_id", task_id}, {"prompt", prompt}}; }

TrialTask TrialTask::from_json(const json& doc) {
    return {doc.at("task_id").get<std::string>(), doc.at("prompt").get<std::string>()};
}

std::string trial_outcome_name(TrialOutcome o) {
    switch (o) {
    case TrialOutcome::completed: return "completed";
    case TrialOutcome::errored: return "errored";
    case TrialOutcome::timed_out: return "timed_out";
    }
    return "completed";
}

std::optional<TrialOutcome> trial_outcome_from_name(const std::string& name) {
    for (auto o : {TrialOutcome::completed, TrialOutcome::errored, TrialOutcome::timed_out})
        if (trial_outcome_name(o) == name) return o;
    return std::nullopt;
}

std::string TrialTranscript::to_jsonl() const {
    std::string out;
    for (const auto& e : entries) out += e.to_json().dump() + "\n";
    out += json{{"outcome", trial_outcome_name(outcome)}}.dump() + "\n";
    return out;
}

json TrialTranscript::to_json() const {
    json entryDocs = json::array();
    for (const auto& e : entries) entryDocs.push_back(e.to_json());
    return {{"task_id", task_id},
            {"trial_index", trial_index},
            {"worker_id", worker_id},
            {"entries", entryDocs},
            {"outcome", trial_outcome_name(outcome)}};
}

TrialTranscript TrialTranscript::from_json(const json& doc) {
    TrialTranscript t;
    t.task_id = doc.at("task_id").get<std::string>();
    t.trial_index = doc.at("trial_index").get<int>();
    t.worker_id = doc.value("worker_id", "");
    for (const auto& e : doc.at("entries")) t.entries.push_back(TranscriptEntry::from_json(e));
    auto outcome = trial_outcome_from_name(doc.at("outcome").get<std::string>());
    if (!outcome) throw Error(ErrorCode::bad_request, "unknown trial outcome");
    t.outcome = *outcome;
    return t;
}

LocalWorkerBackend::LocalWorkerBackend(hostd::ContainerRuntime& runtime,
                                       hostd::ImageRegistry& images, LocalBackendOptions opts)
    : runtime_(runtime), images_(images), opts_(std::move(opts)) {}

std::string LocalWorkerBackend::spawn(const ImageRef& image) {
    hostd::StartOptions start;
    start.image_id = image.image_id;
    start.name = "trial-" + image.image_id.substr(0, 12);
    start.mounts = opts_.extra_mounts; // empty by default: no user-state mount
    start.network = opts_.network;
    start.labels[kWorkerLabel] = kWorkerRole;
    try {
        return runtime_.start(start);
    } catch (const Error& e) {
        throw Error(ErrorCode::worker_spawn_failed, e.message());
    }
}

TrialTranscript LocalWorkerBackend::exec(const std::string& worker_id, const TrialTask& task,
                                         int trial_index, std::int64_t timeout_ms) {
    auto info = runtime_.inspect(worker_id);
    if (!info || !info->running)
        throw Error(ErrorCode::unknown_worker, "worker not running: " + worker_id);

    auto image = images_.get(info->image_id);

    TrialTranscript transcript;
    transcript.task_id = task.task_id;
    transcript.trial_index = trial_index;
    transcript.worker_id = worker_id;

    // Deterministic synthetic timeline: replay output depends only on
    // (image, task), never on the worker or wall clock.
    auto t0 = Timestamp{0};
    transcript.entries.push_back({0, Role::user, task.prompt, t0});

    json behavior;
    if (image && image->behavior.is_object() && image->behavior.contains("tasks")) {
        const auto& tasks = image->behavior["tasks"];
        if (tasks.contains(task.task_id)) behavior = tasks[task.task_id];
        else if (image->behavior.contains("default")) behavior = image->behavior["default"];
    }

    if (behavior.is_null()) {
        transcript.outcome = TrialOutcome::errored;
        transcript.entries.push_back(
            {1, Role::system, "no behavior for task " + task.task_id, Timestamp{1000}});
        return transcript;
    }

    std::int64_t delay = behavior.value("delay_ms", std::int64_t{0});
    if (delay > timeout_ms) {
        transcript.outcome = TrialOutcome::timed_out; // partial transcript kept
        return transcript;
    }

    transcript.entries.push_back({1, Role::agent, behavior.value("response", ""), Timestamp{1000}});
    auto outcome = trial_outcome_from_name(behavior.value("outcome", "completed"));
    transcript.outcome = outcome.value_or(TrialOutcome::completed);
    return transcript;
}

void LocalWorkerBackend::teardown(const std::string& worker_id) { runtime_.stop(worker_id); }

std::string RpcWorkerBackend::spawn(const ImageRef& image) {
    auto result = client_.call("trial.spawn", {{"image_id", image.image_id},
                                               {"image", image.to_json()}});
    return result.at("worker_id").get<std::string>();
}

TrialTranscript RpcWorkerBackend::exec(const std::string& worker_id, const TrialTask& task,
                                       int trial_index, std::int64_t timeout_ms) {
    auto result = client_.call("trial.exec", {{"worker_id", worker_id},
                                              {"task", task.to_json()},
                                              {"trial_index", trial_index},
                                              {"timeout_ms", timeout_ms}});
    return TrialTranscript::from_json(result.at("transcript"));
}

void RpcWorkerBackend::teardown(const std::string& worker_id) {
    client_.call("trial.teardown", {{"worker_id", worker_id}});
}

TrialEngine::TrialEngine(WorkerBackend& backend, TrialEngineOptions opts)
    : backend_(backend), opts_(std::move(opts)) {}

IsolationReport TrialEngine::worker_isolation_check(const std::string& worker_id) {
    IsolationReport report;
    report.worker_id = worker_id;
    if (!opts_.runtime) {
        report.isolated = true; // nothing to inspect against (RPC backend)
        return report;
    }
    auto info = opts_.runtime->inspect(worker_id);
    if (!info) {
        report.detail = "worker not found";
        return report;
    }
    if (opts_.user_state_dir) {
        for (const auto& m : info->mounts) {
            if (m.source == opts_.user_state_dir->string()) {
                report.detail = "user-state volume mounted at " + m.target;
                return report;
            }
        }
    }
    if (info->network != "isolated") {
        report.detail = "network mode is " + info->network;
        return report;
    }
    report.isolated = true;
    return report;
}

std::vector<TrialTranscript> TrialEngine::run_trials(const TrialPlan& plan,
                                                     const fs::path& trials_dir) {
    if (plan.workers_n < 1 || plan.trials_per_task < 1)
        throw Error(ErrorCode::bad_request, "trial plan needs workers_n >= 1 and trials_per_task >= 1");

    std::vector<std::string> workers;
    auto teardown_all = [&] {
        for (const auto& w : workers) {
            try {
                backend_.teardown(w);
            } catch (const std::exception&) {
                // teardown is best effort; the recovery sweep catches strays
            }
        }
        workers.clear();
    };

    try {
        for (int i = 0; i < plan.workers_n; ++i) workers.push_back(backend_.spawn(plan.image));

        for (const auto& w : workers) {
            auto report = worker_isolation_check(w);
            if (!report.isolated)
                throw Error(ErrorCode::isolation_violation,
                            "worker " + w + " not isolated: " + report.detail);
        }

        // Work queue of (task, trial) pairs in deterministic order.
        struct Item {
            std::size_t task_idx;
            int trial;
        };
        std::vector<Item> queue;
        for (std::size_t t = 0; t < plan.tasks.size(); ++t)
            for (int k = 1; k <= plan.trials_per_task; ++k) queue.push_back({t, k});

        std::vector<TrialTranscript> transcripts(queue.size());
        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::string failure;
        std::mutex failure_mu;
        const std::int64_t timeout = scaled_ms(opts_.trial_timeout_ms, opts_.time_scale);

        auto worker_loop = [&](const std::string& worker_id) {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= queue.size() || failed) return;
                const auto& item = queue[i];
                try {
                    transcripts[i] = backend_.exec(worker_id, plan.tasks[item.task_idx], item.trial,
                                                   timeout);
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(failure_mu);
                    failed = true;
                    failure = e.what();
                    return;
                }
            }
        };

        std::vector<std::thread> threads;
        for (const auto& w : workers) threads.emplace_back(worker_loop, w);
        for (auto& t : threads) t.join();
        if (failed) throw Error(ErrorCode::runtime_failure, "trial execution failed: " + failure);

        for (const auto& transcript : transcripts) {
            fs::path file =
                trials_dir / transcript.task_id / (std::to_string(transcript.trial_index) + ".jsonl");
            atomic_write_file(file, transcript.to_jsonl());
        }

        teardown_all(); // every (task, trial) accounted for; workers ephemeral
        return transcripts;
    } catch (...) {
        teardown_all();
        throw;
    }
}

ScoreAggregate aggregate_scores(const std::map<std::string, std::vector<double>>& per_task_scores) {
    if (per_task_scores.empty()) throw Error(ErrorCode::empty_scores, "no tasks to aggregate");

    auto round4 = [](double v) { return std::round(v * 10000.0) / 10000.0; };

    ScoreAggregate agg;
    double total = 0.0;
    for (const auto& [task, scores] : per_task_scores) {
        if (scores.empty()) throw Error(ErrorCode::empty_scores, "task " + task + " has no scores");
        double sum = 0.0;
        for (double s : scores) sum += s;
        double mean = sum / static_cast<double>(scores.size());
        agg.per_task_mean[task] = round4(mean); // rounding is reporting-only
        total += mean;
    }
    agg.overall_mean = round4(total / static_cast<double>(per_task_scores.size()));
    return agg;
}

} // namespace moss::trials
