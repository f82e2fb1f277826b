#include "moss/core/domain.hpp"

#include "moss/core/errors.hpp"

namespace moss {

using nlohmann::json;

std::string role_name(Role r) {
    switch (r) {
    case Role::user: return "user";
    case Role::agent: return "agent";
    case Role::system: return "system";
    case Role::tool: return "tool";
    }
    return "user";
}

std::optional<Role> role_from_name(const std::string& name) {
    if (name == "user") return Role::user;
    if (name == "agent") return Role::agent;
    if (name == "system") return Role::system;
    if (name == "tool") return Role::tool;
    return std::nullopt;
}

json TranscriptEntry::to_json() const {
    return {{"turn_index", turn_index}, {"role", role_name(role)}, {"content", content},
            {"ts", ts.iso()}};
}

TranscriptEntry TranscriptEntry::from_json(const json& doc) {
    TranscriptEntry e;
    e.turn_index = doc.at("turn_index").get<int>();
    auto role = role_from_name(doc.at("role").get<std::string>());
    if (!role) throw Error(ErrorCode::bad_request, "unknown role: " + doc["role"].dump());
    e.role = *role;
    e.content = doc.at("content").get<std::string>();
    e.ts = Timestamp::from_iso(doc.at("ts").get<std::string>());
    return e;
}

std::string ChunkRecord::first_user_prompt() const {
    for (const auto& entry : transcript)
        if (entry.role == Role::user) return entry.content;
    return {};
}

json ChunkRecord::to_json() const {
    json entries = json::array();
    for (const auto& e : transcript) entries.push_back(e.to_json());
    json tags = json::array();
    for (const auto& t : keypoint_tags) tags.push_back({t.keypoint, level_name(t.level)});
    return {{"chunk_id", chunk_id},
            {"session_id", session_id},
            {"conversation_id", conversation_id},
            {"turn_span", {first_turn_index, last_turn_index}},
            {"transcript", entries},
            {"keypoint_tags", tags},
            {"captured_at", captured_at.iso()}};
}

ChunkRecord ChunkRecord::from_json(const json& doc) {
    ChunkRecord c;
    c.chunk_id = doc.at("chunk_id").get<std::string>();
    c.session_id = doc.at("session_id").get<std::string>();
    c.conversation_id = doc.at("conversation_id").get<std::string>();
    c.first_turn_index = doc.at("turn_span").at(0).get<int>();
    c.last_turn_index = doc.at("turn_span").at(1).get<int>();
    for (const auto& e : doc.at("transcript")) c.transcript.push_back(TranscriptEntry::from_json(e));
    for (const auto& t : doc.at("keypoint_tags")) {
        auto level = level_from_name(t.at(1).get<std::string>());
        if (!level) throw Error(ErrorCode::bad_request, "unknown tag level in chunk doc");
        c.keypoint_tags.push_back({t.at(0).get<std::string>(), *level});
    }
    c.captured_at = Timestamp::from_iso(doc.at("captured_at").get<std::string>());
    return c;
}

std::string batch_state_name(BatchState s) {
    switch (s) {
    case BatchState::open: return "open";
    case BatchState::sealed: return "sealed";
    case BatchState::evolving: return "evolving";
    case BatchState::ready_to_apply: return "ready_to_apply";
    case BatchState::applied: return "applied";
    case BatchState::failed: return "failed";
    }
    return "open";
}

std::optional<BatchState> batch_state_from_name(const std::string& name) {
    for (auto s : {BatchState::open, BatchState::sealed, BatchState::evolving,
                   BatchState::ready_to_apply, BatchState::applied, BatchState::failed})
        if (batch_state_name(s) == name) return s;
    return std::nullopt;
}

bool batch_transition_allowed(BatchState from, BatchState to) {
    switch (from) {
    case BatchState::open: return to == BatchState::sealed;
    case BatchState::sealed: return to == BatchState::evolving;
    case BatchState::evolving:
        // A stopped run hands the batch back as sealed.
        return to == BatchState::ready_to_apply || to == BatchState::failed ||
               to == BatchState::sealed;
    case BatchState::ready_to_apply: return to == BatchState::applied;
    case BatchState::failed: return to == BatchState::evolving; // restart
    case BatchState::applied: return false;
    }
    return false;
}

void Batch::transition(BatchState to) {
    if (!batch_transition_allowed(state, to))
        throw Error(ErrorCode::invalid_transition,
                    "batch " + batch_id + ": " + batch_state_name(state) + " -> " +
                        batch_state_name(to));
    state = to;
    if (to == BatchState::sealed && !sealed_at) sealed_at = Timestamp::now();
}

json Batch::to_json() const {
    json chunkDocs = json::array();
    for (const auto& c : chunks) chunkDocs.push_back(c.to_json());
    json doc{{"version", 1},
             {"batch_id", batch_id},
             {"conversation_id", conversation_id},
             {"state", batch_state_name(state)},
             {"chunks", chunkDocs},
             {"created_at", created_at.iso()},
             {"seal_threshold", seal_threshold}};
    if (sealed_at) doc["sealed_at"] = sealed_at->iso();
    return doc;
}

json Batch::summary_json() const {
    return {{"batch_id", batch_id},
            {"conversation_id", conversation_id},
            {"state", batch_state_name(state)},
            {"chunk_count", chunks.size()},
            {"seal_threshold", seal_threshold},
            {"created_at", created_at.iso()}};
}

Batch Batch::from_json(const json& doc) {
    Batch b;
    b.batch_id = doc.at("batch_id").get<std::string>();
    b.conversation_id = doc.at("conversation_id").get<std::string>();
    auto state = batch_state_from_name(doc.at("state").get<std::string>());
    if (!state) throw Error(ErrorCode::bad_request, "unknown batch state");
    b.state = *state;
    for (const auto& c : doc.at("chunks")) b.chunks.push_back(ChunkRecord::from_json(c));
    b.created_at = Timestamp::from_iso(doc.at("created_at").get<std::string>());
    if (doc.contains("sealed_at")) b.sealed_at = Timestamp::from_iso(doc["sealed_at"].get<std::string>());
    b.seal_threshold = doc.at("seal_threshold").get<int>();
    return b;
}

std::string verdict_kind_name(VerdictKind k) {
    switch (k) {
    case VerdictKind::converged: return "CONVERGED";
    case VerdictKind::need_more_work: return "NEED_MORE_WORK";
    case VerdictKind::fundamental_limit_model: return "FUNDAMENTAL_LIMIT_MODEL";
    case VerdictKind::fundamental_limit_architecture: return "FUNDAMENTAL_LIMIT_ARCHITECTURE";
    }
    return "NEED_MORE_WORK";
}

std::optional<VerdictKind> verdict_kind_from_name(const std::string& name) {
    for (auto k : {VerdictKind::converged, VerdictKind::need_more_work,
                   VerdictKind::fundamental_limit_model, VerdictKind::fundamental_limit_architecture})
        if (verdict_kind_name(k) == name) return k;
    return std::nullopt;
}

json Verdict::to_json() const {
    return {{"kind", verdict_kind_name(kind)},
            {"rationale", rationale},
            {"forced_by_plateau", forced_by_plateau}};
}

Verdict Verdict::from_json(const json& doc) {
    Verdict v;
    auto kind = verdict_kind_from_name(doc.at("kind").get<std::string>());
    if (!kind) throw Error(ErrorCode::bad_request, "unknown verdict kind");
    v.kind = *kind;
    v.rationale = doc.value("rationale", "");
    v.forced_by_plateau = doc.value("forced_by_plateau", false);
    if (v.forced_by_plateau && v.kind != VerdictKind::converged)
        throw Error(ErrorCode::bad_request, "forced_by_plateau requires CONVERGED");
    return v;
}

DepthProfile DepthProfile::light() { return {"light", 2, 2, 2, 1, 2, 1}; }
DepthProfile DepthProfile::standard() { return {"standard", 4, 3, 3, 2, 3, 2}; }
DepthProfile DepthProfile::deep() { return {"deep", 8, 5, 5, 3, 4, 3}; }

DepthProfile DepthProfile::named(const std::string& name) {
    if (name == "light") return light();
    if (name == "standard" || name.empty()) return standard();
    if (name == "deep") return deep();
    throw Error(ErrorCode::bad_request, "unknown depth profile: " + name);
}

json DepthProfile::to_json() const {
    return {{"name", name},
            {"max_iterations", max_iterations},
            {"plan_rounds", plan_rounds},
            {"code_rounds", code_rounds},
            {"trials_per_task", trials_per_task},
            {"plateau_window", plateau_window},
            {"trial_workers_n", trial_workers_n}};
}

DepthProfile DepthProfile::from_json(const json& doc) {
    DepthProfile d;
    d.name = doc.value("name", "standard");
    d.max_iterations = doc.at("max_iterations").get<int>();
    d.plan_rounds = doc.at("plan_rounds").get<int>();
    d.code_rounds = doc.at("code_rounds").get<int>();
    d.trials_per_task = doc.at("trials_per_task").get<int>();
    d.plateau_window = doc.at("plateau_window").get<int>();
    d.trial_workers_n = doc.at("trial_workers_n").get<int>();
    if (d.max_iterations < 1 || d.plan_rounds < 1 || d.code_rounds < 1 || d.trials_per_task < 1 ||
        d.plateau_window < 1 || d.trial_workers_n < 1 || d.plateau_window > d.max_iterations)
        throw Error(ErrorCode::bad_request, "invalid depth profile");
    return d;
}

json ImageRef::to_json() const {
    return {{"image_id", image_id}, {"built_from_rev", built_from_rev}, {"built_at", built_at.iso()}};
}

ImageRef ImageRef::from_json(const json& doc) {
    ImageRef r;
    r.image_id = doc.at("image_id").get<std::string>();
    r.built_from_rev = doc.at("built_from_rev").get<std::string>();
    r.built_at = Timestamp::from_iso(doc.at("built_at").get<std::string>());
    return r;
}

std::string stage_name_str(StageName s) {
    switch (s) {
    case StageName::locate: return "locate";
    case StageName::plan: return "plan";
    case StageName::plan_review: return "plan_review";
    case StageName::implement: return "implement";
    case StageName::code_review: return "code_review";
    case StageName::task_evaluate: return "task_evaluate";
    case StageName::verdict: return "verdict";
    }
    return "locate";
}

std::optional<StageName> stage_from_name(const std::string& name) {
    for (auto s : {StageName::locate, StageName::plan, StageName::plan_review, StageName::implement,
                   StageName::code_review, StageName::task_evaluate, StageName::verdict})
        if (stage_name_str(s) == name) return s;
    return std::nullopt;
}

bool IterationRecord::stage_done(const std::string& stage) const {
    for (const auto& s : completed_stages)
        if (s == stage) return true;
    return false;
}

json IterationRecord::to_json() const {
    json doc{{"index", index},
             {"stage_artifacts", stage_artifacts},
             {"completed_stages", completed_stages},
             {"plan_rounds_used", plan_rounds_used},
             {"code_rounds_used", code_rounds_used},
             {"runner_invocations", runner_invocations}};
    if (commit_rev) doc["commit_rev"] = *commit_rev;
    if (image) doc["image"] = image->to_json();
    if (matrix) doc["matrix"] = matrix->to_json();
    if (verdict) doc["verdict"] = verdict->to_json();
    if (loop_start_rev) doc["loop_start_rev"] = *loop_start_rev;
    return doc;
}

IterationRecord IterationRecord::from_json(const json& doc) {
    IterationRecord r;
    r.index = doc.at("index").get<int>();
    if (doc.contains("stage_artifacts"))
        r.stage_artifacts = doc["stage_artifacts"].get<std::map<std::string, std::string>>();
    if (doc.contains("completed_stages"))
        r.completed_stages = doc["completed_stages"].get<std::vector<std::string>>();
    r.plan_rounds_used = doc.value("plan_rounds_used", 0);
    r.code_rounds_used = doc.value("code_rounds_used", 0);
    r.runner_invocations = doc.value("runner_invocations", 0);
    if (doc.contains("commit_rev")) r.commit_rev = doc["commit_rev"].get<std::string>();
    if (doc.contains("image")) r.image = ImageRef::from_json(doc["image"]);
    if (doc.contains("matrix")) r.matrix = KeypointMatrix::from_json(doc["matrix"]);
    if (doc.contains("verdict")) r.verdict = Verdict::from_json(doc["verdict"]);
    if (doc.contains("loop_start_rev")) r.loop_start_rev = doc["loop_start_rev"].get<std::string>();
    return r;
}

std::string run_phase_name(RunPhase p) {
    switch (p) {
    case RunPhase::baseline: return "baseline";
    case RunPhase::iterating: return "iterating";
    case RunPhase::converged: return "converged";
    case RunPhase::failed: return "failed";
    case RunPhase::failed_model_limit: return "failed_model_limit";
    case RunPhase::failed_architecture_limit: return "failed_architecture_limit";
    case RunPhase::stopped: return "stopped";
    }
    return "baseline";
}

std::optional<RunPhase> run_phase_from_name(const std::string& name) {
    for (auto p : {RunPhase::baseline, RunPhase::iterating, RunPhase::converged, RunPhase::failed,
                   RunPhase::failed_model_limit, RunPhase::failed_architecture_limit,
                   RunPhase::stopped})
        if (run_phase_name(p) == name) return p;
    return std::nullopt;
}

json TaskBinding::to_json() const {
    return {{"task_id", task_id},
            {"chunk_id", chunk_id},
            {"source_chunk_index", source_chunk_index},
            {"prompt", prompt}};
}

TaskBinding TaskBinding::from_json(const json& doc) {
    TaskBinding b;
    b.task_id = doc.at("task_id").get<std::string>();
    b.chunk_id = doc.at("chunk_id").get<std::string>();
    b.source_chunk_index = doc.at("source_chunk_index").get<int>();
    b.prompt = doc.at("prompt").get<std::string>();
    return b;
}

json EvolutionRun::to_json() const {
    json iters = json::array();
    for (const auto& it : iterations) iters.push_back(it.to_json());
    json taskDocs = json::array();
    for (const auto& t : tasks) taskDocs.push_back(t.to_json());
    json doc{{"version", 1},
             {"run_id", run_id},
             {"batch_id", batch_id},
             {"depth", depth.to_json()},
             {"phase", run_phase_name(phase)},
             {"tasks", taskDocs},
             {"iterations", iters},
             {"started_at", started_at.iso()}};
    if (!baseline_matrix.empty()) doc["baseline_matrix"] = baseline_matrix.to_json();
    if (candidate_image) doc["candidate_image"] = candidate_image->to_json();
    if (peak_iteration) doc["peak_iteration"] = *peak_iteration;
    if (current_stage) doc["current_stage"] = *current_stage;
    if (!runner_state.is_null()) doc["runner_state"] = runner_state;
    return doc;
}

EvolutionRun EvolutionRun::from_json(const json& doc) {
    EvolutionRun r;
    r.run_id = doc.at("run_id").get<std::string>();
    r.batch_id = doc.at("batch_id").get<std::string>();
    r.depth = DepthProfile::from_json(doc.at("depth"));
    auto phase = run_phase_from_name(doc.at("phase").get<std::string>());
    if (!phase) throw Error(ErrorCode::bad_request, "unknown run phase");
    r.phase = *phase;
    if (doc.contains("baseline_matrix"))
        r.baseline_matrix = KeypointMatrix::from_json(doc["baseline_matrix"]);
    for (const auto& t : doc.at("tasks")) r.tasks.push_back(TaskBinding::from_json(t));
    for (const auto& it : doc.at("iterations")) r.iterations.push_back(IterationRecord::from_json(it));
    if (doc.contains("candidate_image")) r.candidate_image = ImageRef::from_json(doc["candidate_image"]);
    if (doc.contains("peak_iteration")) r.peak_iteration = doc["peak_iteration"].get<int>();
    if (doc.contains("current_stage")) r.current_stage = doc["current_stage"].get<std::string>();
    r.started_at = Timestamp::from_iso(doc.at("started_at").get<std::string>());
    if (doc.contains("runner_state")) r.runner_state = doc["runner_state"];
    return r;
}

} // namespace moss
