#include "moss/hostd/hostd.hpp"

#include "moss/core/errors.hpp"

#include <chrono>

namespace moss::hostd {

using nlohmann::json;

HostDaemon::HostDaemon(Deps deps) : deps_(std::move(deps)) {
    SwapSupervisor::Deps swap_deps;
    swap_deps.store = deps_.store;
    swap_deps.runtime = deps_.runtime;
    swap_deps.images = deps_.images;
    swap_deps.webhooks = deps_.webhooks;
    swap_deps.swap = deps_.config.swap;
    swap_deps.time_scale = deps_.config.time_scale;
    swap_deps.user_state_dir = deps_.config.user_state_dir;
    swap_ = std::make_unique<SwapSupervisor>(std::move(swap_deps));

    trials::LocalBackendOptions worker_opts;
    worker_opts.user_state_dir = deps_.config.user_state_dir;
    worker_backend_ =
        std::make_unique<trials::LocalWorkerBackend>(*deps_.runtime, *deps_.images, worker_opts);

    register_ops();
}

HostDaemon::~HostDaemon() { stop(); }

void HostDaemon::start() {
    recover();
    rpc_.start(deps_.config.hostd_socket);
    running_ = true;
    swap_thread_ = std::thread([this] { swap_loop(); });
}

void HostDaemon::stop() {
    if (running_) {
        {
            std::lock_guard<std::mutex> lock(wake_mu_);
            running_ = false;
        }
        wake_cv_.notify_all();
        if (swap_thread_.joinable()) swap_thread_.join();
    }
    rpc_.stop();
}

void HostDaemon::recover() {
    // Teardown-on-recovery sweep: trial workers never outlive the daemon.
    for (const auto& worker : deps_.runtime->list({{trials::LocalWorkerBackend::kWorkerLabel,
                                                    trials::LocalWorkerBackend::kWorkerRole}}))
        deps_.runtime->stop(worker.container_id);
    swap_->recover();
}

void HostDaemon::swap_loop() {
    const auto poll = deps_.config.scaled(deps_.config.swap.poll_ms);
    while (running_) {
        try {
            swap_->tick();
        } catch (const std::exception&) {
            // tick already persisted what it could; keep polling
        }
        std::unique_lock<std::mutex> lock(wake_mu_);
        wake_cv_.wait_for(lock, std::chrono::milliseconds(poll), [this] { return !running_; });
    }
}

json HostDaemon::handle(const std::string& op, const json& params) {
    // runner.* -------------------------------------------------------------
    if (op == "runner.prepare") {
        auto spec = runners::RunnerSpec::from_json(params.at("spec"));
        auto runner = deps_.runners->get(spec.provider);
        return {{"plan", runner->prepare(spec).to_json()}};
    }
    if (op == "runner.launch") {
        auto plan = runners::InvocationPlan::from_json(params.at("plan"));
        auto runner = deps_.runners->get(plan.spec.provider);
        auto handle = runner->launch(plan);
        {
            std::lock_guard<std::mutex> lock(handles_mu_);
            handles_[handle.invocation_id] = {runner, handle};
        }
        return {{"handle", handle.to_json()}};
    }
    if (op == "runner.collect") {
        const std::string id = params.at("invocation_id").get<std::string>();
        std::pair<std::shared_ptr<runners::Runner>, runners::RunnerHandle> entry;
        {
            std::lock_guard<std::mutex> lock(handles_mu_);
            auto it = handles_.find(id);
            if (it == handles_.end())
                throw Error(ErrorCode::launch_failure, "unknown invocation " + id);
            entry = it->second;
        }
        auto output = entry.first->collect(entry.second);
        {
            std::lock_guard<std::mutex> lock(handles_mu_);
            handles_.erase(id); // collect is called at most once per handle
        }
        return {{"output", output.to_json()}};
    }
    if (op == "runner.cancel") {
        const std::string id = params.at("invocation_id").get<std::string>();
        std::pair<std::shared_ptr<runners::Runner>, runners::RunnerHandle> entry;
        {
            std::lock_guard<std::mutex> lock(handles_mu_);
            auto it = handles_.find(id);
            if (it == handles_.end()) return json::object(); // cancel on unknown: no-op
            entry = it->second;
        }
        entry.first->cancel(entry.second);
        return json::object();
    }

    // trial.* --------------------------------------------------------------
    if (op == "trial.spawn") {
        ImageRef image;
        if (params.contains("image")) {
            image = ImageRef::from_json(params["image"]);
        } else {
            auto record = deps_.images->get(params.at("image_id").get<std::string>());
            if (!record) throw Error(ErrorCode::unknown_image, "image not registered");
            image = record->ref;
        }
        return {{"worker_id", worker_backend_->spawn(image)}};
    }
    if (op == "trial.exec") {
        auto task = trials::TrialTask::from_json(params.at("task"));
        auto transcript = worker_backend_->exec(
            params.at("worker_id").get<std::string>(), task, params.value("trial_index", 1),
            params.value("timeout_ms",
                         deps_.config.scaled(deps_.config.trial_timeout_ms)));
        json result{{"transcript", transcript.to_json()}};
        if (params.contains("out_path")) {
            atomic_write_file(params["out_path"].get<std::string>(), transcript.to_jsonl());
            result["path"] = params["out_path"];
        }
        return result;
    }
    if (op == "trial.teardown") {
        worker_backend_->teardown(params.at("worker_id").get<std::string>());
        return json::object();
    }

    // image.* --------------------------------------------------------------
    if (op == "image.build") {
        auto image = deps_.builder->build(params.at("workspace_path").get<std::string>(),
                                          params.at("rev").get<std::string>());
        return {{"image", image.to_json()}};
    }
    if (op == "image.tag") {
        deps_.images->tag(params.at("image_id").get<std::string>(),
                          params.at("tag").get<std::string>());
        return json::object();
    }
    if (op == "image.lkg") {
        if (params.contains("image_id")) { // install/seed path
            auto record = deps_.images->get(params["image_id"].get<std::string>());
            if (!record) throw Error(ErrorCode::unknown_image, "image not registered");
            swap_->install(record->ref);
            return {{"image", record->ref.to_json()}};
        }
        auto lkg = swap_->last_known_good();
        if (!lkg) return json::object();
        return {{"image", lkg->image.to_json()}, {"recorded_at", lkg->recorded_at.iso()}};
    }

    // autoscan.* -----------------------------------------------------------
    if (op == "autoscan.catch_up") return deps_.autoscan->catch_up().to_json();
    if (op == "autoscan.flag")
        return deps_.autoscan->flag(params.at("session_id").get<std::string>()).to_json();

    throw Error(ErrorCode::unknown_op, "no handler for " + op);
}

void HostDaemon::register_ops() {
    for (const char* op :
         {"runner.prepare", "runner.launch", "runner.collect", "runner.cancel", "trial.spawn",
          "trial.exec", "trial.teardown", "image.build", "image.tag", "image.lkg",
          "autoscan.catch_up", "autoscan.flag"}) {
        rpc_.register_op(op, [this, op](const json& params) { return handle(op, params); });
    }
}

} // namespace moss::hostd
