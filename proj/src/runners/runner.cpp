#include "moss/runners/runner.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/ids.hpp"
#include "moss/core/store.hpp"

#include <filesystem>

namespace fs = std::filesystem;

namespace moss::runners {

using nlohmann::json;

json RunnerSpec::to_json() const {
    json in = json::array();
    for (const auto& p : inputs) in.push_back(p.string());
    return {{"provider", provider},
            {"stage", stage_name_str(stage)},
            {"workspace_scope", workspace_scope.string()},
            {"prompt", prompt},
            {"inputs", in},
            {"timeout_ms", timeout_ms},
            {"env_allowlist", env_allowlist}};
}

RunnerSpec RunnerSpec::from_json(const json& doc) {
    RunnerSpec s;
    s.provider = doc.value("provider", "");
    auto stage = stage_from_name(doc.at("stage").get<std::string>());
    if (!stage) throw Error(ErrorCode::bad_request, "unknown stage in runner spec");
    s.stage = *stage;
    s.workspace_scope = doc.at("workspace_scope").get<std::string>();
    s.prompt = doc.at("prompt").get<std::string>();
    for (const auto& p : doc.value("inputs", json::array())) s.inputs.push_back(p.get<std::string>());
    s.timeout_ms = doc.value("timeout_ms", std::int64_t{900000});
    if (doc.contains("env_allowlist"))
        s.env_allowlist = doc["env_allowlist"].get<std::vector<std::string>>();
    return s;
}

json InvocationPlan::to_json() const {
    return {{"invocation_id", invocation_id}, {"spec", spec.to_json()}, {"dir", dir.string()}};
}

InvocationPlan InvocationPlan::from_json(const json& doc) {
    InvocationPlan p;
    p.invocation_id = doc.at("invocation_id").get<std::string>();
    p.spec = RunnerSpec::from_json(doc.at("spec"));
    p.dir = doc.at("dir").get<std::string>();
    return p;
}

std::string handle_state_name(HandleState s) {
    switch (s) {
    case HandleState::running: return "running";
    case HandleState::finished: return "finished";
    case HandleState::cancelled: return "cancelled";
    case HandleState::timed_out: return "timed_out";
    }
    return "running";
}

std::optional<HandleState> handle_state_from_name(const std::string& name) {
    for (auto s : {HandleState::running, HandleState::finished, HandleState::cancelled,
                   HandleState::timed_out})
        if (handle_state_name(s) == name) return s;
    return std::nullopt;
}

json RunnerHandle::to_json() const {
    json doc{{"invocation_id", invocation_id},
             {"provider", provider},
             {"started_at", started_at.iso()},
             {"state", handle_state_name(state)}};
    if (pid) doc["pid"] = *pid;
    return doc;
}

RunnerHandle RunnerHandle::from_json(const json& doc) {
    RunnerHandle h;
    h.invocation_id = doc.at("invocation_id").get<std::string>();
    h.provider = doc.value("provider", "");
    h.started_at = Timestamp::from_iso(doc.at("started_at").get<std::string>());
    auto state = handle_state_from_name(doc.at("state").get<std::string>());
    if (!state) throw Error(ErrorCode::bad_request, "unknown handle state");
    h.state = *state;
    if (doc.contains("pid")) h.pid = doc["pid"].get<int>();
    return h;
}

json StageOutput::to_json() const {
    return {{"kind", stage_name_str(kind)},
            {"body", body},
            {"exit_status", exit_status},
            {"log_path", log_path.string()},
            {"final_state", handle_state_name(final_state)}};
}

StageOutput StageOutput::from_json(const json& doc) {
    StageOutput o;
    auto stage = stage_from_name(doc.at("kind").get<std::string>());
    if (!stage) throw Error(ErrorCode::bad_request, "unknown stage in stage output");
    o.kind = *stage;
    o.body = doc.at("body").get<std::string>();
    o.exit_status = doc.at("exit_status").get<int>();
    o.log_path = doc.value("log_path", "");
    auto state = handle_state_from_name(doc.at("final_state").get<std::string>());
    if (!state) throw Error(ErrorCode::bad_request, "unknown final state");
    o.final_state = *state;
    return o;
}

InvocationPlan stage_invocation(const fs::path& invocations_root, const RunnerSpec& spec) {
    InvocationPlan plan;
    plan.invocation_id = prefixed_id("inv");
    plan.spec = spec;
    plan.dir = invocations_root / plan.invocation_id;

    std::error_code ec;
    fs::create_directories(plan.dir / "inputs", ec);
    atomic_write_file(plan.prompt_path(), spec.prompt);

    json manifest = json::array();
    for (const auto& input : spec.inputs) {
        fs::path staged = plan.dir / "inputs" / input.filename();
        if (fs::exists(input)) fs::copy_file(input, staged, fs::copy_options::overwrite_existing);
        manifest.push_back({{"source", input.string()}, {"staged", staged.string()}});
    }
    atomic_write_file(plan.dir / "meta.json",
                      json{{"invocation_id", plan.invocation_id},
                           {"provider", spec.provider},
                           {"stage", stage_name_str(spec.stage)},
                           {"inputs", manifest}}
                          .dump(2));
    return plan;
}

} // namespace moss::runners
