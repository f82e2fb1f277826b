#include "moss/hostd/swap.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/ids.hpp"

namespace fs = std::filesystem;

namespace moss::hostd {

using nlohmann::json;

json SwapRequest::to_json() const {
    return {{"version", 1},
            {"request_id", request_id},
            {"candidate_image", candidate_image.to_json()},
            {"batch_id", batch_id},
            {"run_id", run_id},
            {"requested_at", requested_at.iso()}};
}

SwapRequest SwapRequest::from_json(const json& doc) {
    SwapRequest r;
    r.request_id = doc.at("request_id").get<std::string>();
    r.candidate_image = ImageRef::from_json(doc.at("candidate_image"));
    r.batch_id = doc.value("batch_id", "");
    r.run_id = doc.value("run_id", "");
    r.requested_at = Timestamp::from_iso(doc.at("requested_at").get<std::string>());
    return r;
}

json ProbeReport::to_json() const {
    return {{"sample_index", sample_index},
            {"ts", ts.iso()},
            {"checks",
             {{"heartbeat_fresh", checks.heartbeat_fresh},
              {"container_running", checks.container_running},
              {"cli_probe_a", checks.cli_probe_a},
              {"cli_probe_b", checks.cli_probe_b}}},
            {"pass", pass}};
}

ProbeDecision probe_decision(const std::vector<bool>& samples, int needed) {
    ProbeDecision decision;
    int streak = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        streak = samples[i] ? streak + 1 : 0;
        if (streak >= needed) {
            decision.committed = true;
            decision.commit_index = static_cast<int>(i);
            return decision;
        }
    }
    return decision;
}

std::string swap_checkpoint_name(SwapCheckpoint cp) {
    switch (cp) {
    case SwapCheckpoint::after_request_read: return "after_request_read";
    case SwapCheckpoint::after_stop_old: return "after_stop_old";
    case SwapCheckpoint::after_start_candidate: return "after_start_candidate";
    case SwapCheckpoint::after_probe_decision: return "after_probe_decision";
    case SwapCheckpoint::after_state_commit: return "after_state_commit";
    case SwapCheckpoint::after_archive: return "after_archive";
    }
    return "unknown";
}

json LastKnownGood::to_json() const {
    return {{"version", 1}, {"image", image.to_json()}, {"recorded_at", recorded_at.iso()}};
}

LastKnownGood LastKnownGood::from_json(const json& doc) {
    LastKnownGood lkg;
    lkg.image = ImageRef::from_json(doc.at("image"));
    lkg.recorded_at = Timestamp::from_iso(doc.at("recorded_at").get<std::string>());
    return lkg;
}

SwapSupervisor::SwapSupervisor(Deps deps) : deps_(std::move(deps)) {
    if (!deps_.now) deps_.now = [] { return Timestamp::now(); };
}

void SwapSupervisor::checkpoint(SwapCheckpoint cp) {
    if (deps_.checkpoint_hook) deps_.checkpoint_hook(cp);
}

std::optional<LastKnownGood> SwapSupervisor::last_known_good() const {
    auto doc = deps_.store->read_doc("swap/last_known_good.json");
    if (!doc) return std::nullopt;
    return LastKnownGood::from_json(*doc);
}

bool SwapSupervisor::fatal_alert() const { return deps_.store->exists("swap/fatal_alert.json"); }

void SwapSupervisor::clear_fatal_alert() { deps_.store->remove("swap/fatal_alert.json"); }

void SwapSupervisor::enter_fatal_alert(const std::string& reason) {
    deps_.store->write_doc("swap/fatal_alert.json",
                           json{{"reason", reason}, {"ts", deps_.now().iso()}});
}

std::optional<ContainerInfo> SwapSupervisor::live_substrate_container() {
    auto containers = deps_.runtime->list({{kSubstrateLabel, kSubstrateRole}});
    for (const auto& c : containers)
        if (c.running) return c;
    return std::nullopt;
}

std::string SwapSupervisor::start_substrate(const std::string& image_id) {
    StartOptions opts;
    opts.image_id = image_id;
    opts.name = "moss-gateway";
    opts.mounts = {{deps_.user_state_dir.string(), "/data/user-state"}};
    opts.network = "default";
    opts.labels[kSubstrateLabel] = kSubstrateRole;
    return deps_.runtime->start(opts);
}

std::string SwapSupervisor::install(const ImageRef& image) {
    auto container = start_substrate(image.image_id);
    write_lkg(image);
    return container;
}

void SwapSupervisor::write_lkg(const ImageRef& image) {
    LastKnownGood lkg;
    lkg.image = image;
    lkg.recorded_at = deps_.now();
    deps_.store->write_doc("swap/last_known_good.json", lkg.to_json());
}

ProbeReport SwapSupervisor::health_probe(const std::string& container_id, int sample_index) {
    ProbeReport report;
    report.sample_index = sample_index;
    report.ts = deps_.now();

    // Heartbeat freshness from the embedded timestamp, not file mtime. An
    // unreadable file counts as stale.
    auto hb = read_file(deps_.user_state_dir / "heartbeat.json");
    if (hb) {
        auto doc = json::parse(*hb, nullptr, false);
        if (!doc.is_discarded() && doc.contains("ts")) {
            try {
                auto ts = Timestamp::from_iso(doc["ts"].get<std::string>());
                report.checks.heartbeat_fresh =
                    (report.ts.ms - ts.ms) <= scaled(deps_.swap.heartbeat_fresh_ms);
            } catch (const Error&) {
                report.checks.heartbeat_fresh = false;
            }
        }
    }

    auto info = deps_.runtime->inspect(container_id);
    report.checks.container_running = info && info->running;

    if (report.checks.container_running) {
        try {
            report.checks.cli_probe_a = deps_.runtime->exec(container_id, deps_.swap.cli_probe_a).exit_code == 0;
            report.checks.cli_probe_b = deps_.runtime->exec(container_id, deps_.swap.cli_probe_b).exit_code == 0;
        } catch (const Error&) {
            report.checks.cli_probe_a = false;
            report.checks.cli_probe_b = false;
        }
    }

    report.pass = report.checks.pass();
    return report;
}

ProbeWindowResult SwapSupervisor::run_probe_window(const std::string& container_id) {
    ProbeWindowResult result;
    const std::int64_t window = scaled(deps_.swap.window_ms);
    const std::int64_t sample_every = scaled(deps_.swap.sample_ms);
    const int max_samples = static_cast<int>(window / sample_every);

    int streak = 0;
    for (int i = 0; i < max_samples; ++i) {
        if (i > 0) sleep_ms(sample_every);
        auto report = health_probe(container_id, i);
        result.samples.push_back(report);
        streak = report.pass ? streak + 1 : 0;
        if (streak >= deps_.swap.consecutive_passes) {
            result.committed = true; // first sample completing the run commits
            return result;
        }
    }
    result.committed = false; // window exhausted
    return result;
}

std::optional<SwapOutcome> SwapSupervisor::tick() {
    if (fatal_alert()) return std::nullopt;
    auto doc = deps_.store->read_doc("swap/request.json");
    if (!doc) return std::nullopt;
    auto request = SwapRequest::from_json(*doc);
    return execute_swap(request);
}

SwapOutcome SwapSupervisor::execute_swap(const SwapRequest& request) {
    checkpoint(SwapCheckpoint::after_request_read);

    // A stale request pointing at an unknown image cannot trap the system:
    // the rollback target always comes from last-known-good.
    if (!deps_.images->exists(request.candidate_image.image_id))
        return rollback(request, "", "candidate image not in registry", {});

    auto old_container = live_substrate_container();
    if (old_container) deps_.runtime->stop(old_container->container_id);
    checkpoint(SwapCheckpoint::after_stop_old);

    std::string candidate_container;
    try {
        candidate_container = start_substrate(request.candidate_image.image_id);
    } catch (const Error& e) {
        checkpoint(SwapCheckpoint::after_start_candidate);
        return rollback(request, "", std::string("candidate start failed: ") + e.message(), {});
    }
    checkpoint(SwapCheckpoint::after_start_candidate);

    ProbeWindowResult window;
    try {
        window = run_probe_window(candidate_container);
    } catch (const Error& e) {
        // Runtime failure during probing is a probe failure, not a crash.
        checkpoint(SwapCheckpoint::after_probe_decision);
        return rollback(request, candidate_container,
                        std::string("runtime failure during probe: ") + e.message(),
                        std::move(window.samples));
    }
    checkpoint(SwapCheckpoint::after_probe_decision);

    if (!window.committed)
        return rollback(request, candidate_container, "probe window exhausted without 3 consecutive passes",
                        std::move(window.samples));

    // Commit: last-known-good moves only here, after a full probe commit.
    write_lkg(request.candidate_image);
    mark_batch_applied(request);

    SwapOutcome outcome;
    outcome.kind = SwapOutcomeKind::committed;
    outcome.request_id = request.request_id;
    outcome.detail = "candidate committed after probe window";
    checkpoint(SwapCheckpoint::after_state_commit);

    finish(request, outcome, window.samples);
    return outcome;
}

SwapOutcome SwapSupervisor::rollback(const SwapRequest& request,
                                     const std::string& candidate_container,
                                     const std::string& detail, std::vector<ProbeReport> samples) {
    if (!candidate_container.empty()) deps_.runtime->stop(candidate_container);

    auto lkg = last_known_good();
    if (!lkg) {
        enter_fatal_alert("rollback with no last-known-good image");
        throw Error(ErrorCode::fatal_alert, "no last-known-good image to roll back to");
    }

    if (!live_substrate_container()) {
        try {
            start_substrate(lkg->image.image_id);
        } catch (const Error& e) {
            // Double failure: refuse further automatic action until cleared.
            enter_fatal_alert("rollback start failed: " + e.message());
            throw Error(ErrorCode::fatal_alert, "rollback start failed: " + e.message());
        }
    }

    SwapOutcome outcome;
    outcome.kind = SwapOutcomeKind::rolled_back;
    outcome.request_id = request.request_id;
    outcome.detail = detail;
    checkpoint(SwapCheckpoint::after_state_commit);

    finish(request, outcome, samples);
    return outcome;
}

void SwapSupervisor::finish(const SwapRequest& request, const SwapOutcome& outcome,
                            const std::vector<ProbeReport>& samples) {
    // Archive (with webhook_delivered=false) before removing the request and
    // before firing, so a crash replays at most the webhook, keyed by
    // request_id.
    archive_request(request, outcome, samples);
    deps_.store->remove("swap/request.json");
    checkpoint(SwapCheckpoint::after_archive);

    fire_apply_complete(request, outcome);
}

void SwapSupervisor::archive_request(const SwapRequest& request, const SwapOutcome& outcome,
                                     const std::vector<ProbeReport>& samples) {
    json sampleDocs = json::array();
    for (const auto& s : samples) sampleDocs.push_back(s.to_json());
    json doc{{"request", request.to_json()},
             {"outcome", outcome.kind == SwapOutcomeKind::committed ? "success" : "rolled-back"},
             {"detail", outcome.detail},
             {"decided_at", deps_.now().iso()},
             {"samples", sampleDocs},
             {"webhook_delivered", false}};
    deps_.store->write_doc(fs::path("swap/archive") / (request.request_id + ".json"), doc);
}

void SwapSupervisor::fire_apply_complete(const SwapRequest& request, const SwapOutcome& outcome) {
    const std::string status =
        outcome.kind == SwapOutcomeKind::committed ? "success" : "rolled-back";
    auto result = deps_.webhooks->fire("apply-complete", {{"run_id", request.run_id},
                                                          {"batch_id", request.batch_id},
                                                          {"request_id", request.request_id},
                                                          {"status", status},
                                                          {"detail", outcome.detail}});
    if (result.delivered) {
        auto rel = fs::path("swap/archive") / (request.request_id + ".json");
        if (auto doc = deps_.store->read_doc(rel)) {
            (*doc)["webhook_delivered"] = true;
            deps_.store->write_doc(rel, *doc);
        }
    }
}

void SwapSupervisor::mark_batch_applied(const SwapRequest& request) {
    if (request.batch_id.empty()) return;
    auto batch = deps_.store->load_batch(request.batch_id);
    if (!batch || batch->state != BatchState::ready_to_apply) return;
    batch->transition(BatchState::applied);
    deps_.store->save_batch(*batch);
}

void SwapSupervisor::recover() {
    // Sweep dead records first: containers labeled substrate but not running
    // are just noise in the simulated runtime.
    auto request_doc = deps_.store->read_doc("swap/request.json");
    auto lkg = last_known_good();

    if (request_doc) {
        auto request = SwapRequest::from_json(*request_doc);
        if (lkg && lkg->image.image_id == request.candidate_image.image_id) {
            // The swap committed before the crash; the candidate is the
            // designated image now.
            bool candidate_live = false;
            for (const auto& c : deps_.runtime->list({{kSubstrateLabel, kSubstrateRole}}))
                if (c.running && c.image_id == request.candidate_image.image_id) candidate_live = true;
            if (!candidate_live) start_substrate(request.candidate_image.image_id);
            for (const auto& c : deps_.runtime->list({{kSubstrateLabel, kSubstrateRole}}))
                if (c.running && c.image_id != request.candidate_image.image_id)
                    deps_.runtime->stop(c.container_id);

            mark_batch_applied(request);
            SwapOutcome outcome;
            outcome.kind = SwapOutcomeKind::committed;
            outcome.request_id = request.request_id;
            outcome.detail = "commit recovered after interruption";
            archive_request(request, outcome, {});
            deps_.store->remove("swap/request.json");
            fire_apply_complete(request, outcome);
        } else {
            // Interrupted before commit: unwind to last-known-good.
            for (const auto& c : deps_.runtime->list({{kSubstrateLabel, kSubstrateRole}}))
                if (c.image_id == request.candidate_image.image_id) deps_.runtime->stop(c.container_id);
            if (lkg && !live_substrate_container()) {
                try {
                    start_substrate(lkg->image.image_id);
                } catch (const Error& e) {
                    enter_fatal_alert("recovery rollback start failed: " + e.message());
                    return;
                }
            }
            SwapOutcome outcome;
            outcome.kind = SwapOutcomeKind::rolled_back;
            outcome.request_id = request.request_id;
            outcome.detail = "swap interrupted; rolled back during recovery";
            archive_request(request, outcome, {});
            deps_.store->remove("swap/request.json");
            fire_apply_complete(request, outcome);
        }
        return;
    }

    // No pending request: re-fire undelivered webhooks (suppressed by
    // request_id once marked delivered), then ensure exactly one designated
    // container on the last-known-good image.
    auto archive_dir = deps_.store->swap_archive_dir();
    if (fs::exists(archive_dir)) {
        for (const auto& f : fs::directory_iterator(archive_dir)) {
            if (f.path().extension() != ".json") continue;
            auto rel = fs::path("swap/archive") / f.path().filename();
            auto doc = deps_.store->read_doc(rel);
            if (!doc || doc->value("webhook_delivered", true)) continue;
            auto request = SwapRequest::from_json(doc->at("request"));
            SwapOutcome outcome;
            outcome.kind = doc->value("outcome", "") == "success" ? SwapOutcomeKind::committed
                                                                  : SwapOutcomeKind::rolled_back;
            outcome.request_id = request.request_id;
            outcome.detail = doc->value("detail", "");
            fire_apply_complete(request, outcome);
        }
    }

    if (lkg) {
        bool lkg_live = false;
        for (const auto& c : deps_.runtime->list({{kSubstrateLabel, kSubstrateRole}})) {
            if (!c.running) continue;
            if (c.image_id == lkg->image.image_id && !lkg_live) {
                lkg_live = true;
            } else {
                deps_.runtime->stop(c.container_id); // never-committed stragglers
            }
        }
        if (!lkg_live) {
            try {
                start_substrate(lkg->image.image_id);
            } catch (const Error& e) {
                enter_fatal_alert("recovery start failed: " + e.message());
            }
        }
    }
}

} // namespace moss::hostd
