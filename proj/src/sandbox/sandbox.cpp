#include "moss/sandbox/sandbox.hpp"

#include "moss/autoscan/autoscan.hpp"
#include "moss/core/errors.hpp"
#include "moss/core/store.hpp"
#include "moss/core/workspace.hpp"

#include <httplib.h>

#include <fstream>

namespace fs = std::filesystem;

namespace moss::sandbox {

using nlohmann::json;

json SystemMessage::to_json() const {
    return {{"ts", ts.iso()}, {"event", event}, {"text", rendered_text}};
}

struct SandboxGateway::Impl {
    httplib::Server server;
    std::thread listener;
};

std::map<std::string, std::string> SandboxGateway::default_hook_mapping() {
    return {
        {"evolution-converged",
         "Evolution run {run_id} converged; candidate {image_id} is ready to apply."},
        {"evolution-failed", "Evolution run {run_id} failed: {detail}"},
        {"apply-complete", "Apply finished with status {status} for batch {batch_id}."},
    };
}

namespace {

std::string render_template(std::string tmpl, const json& payload) {
    for (const auto& [key, value] : payload.items()) {
        const std::string token = "{" + key + "}";
        std::string text = value.is_string() ? value.get<std::string>() : value.dump();
        std::size_t pos = 0;
        while ((pos = tmpl.find(token, pos)) != std::string::npos) {
            tmpl.replace(pos, token.size(), text);
            pos += text.size();
        }
    }
    return tmpl;
}

} // namespace

SandboxGateway::SandboxGateway(Config cfg) : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>()) {
    if (cfg_.hook_mapping.empty()) cfg_.hook_mapping = default_hook_mapping();
}

SandboxGateway::~SandboxGateway() { stop(); }

std::string SandboxGateway::base_url() const {
    return "http://" + cfg_.bind_host + ":" + std::to_string(port_);
}

int SandboxGateway::start(int port) {
    auto& server = impl_->server;

    // Forward the evolution-control endpoint group to the in-container
    // evolution service.
    auto forward = [this](const httplib::Request& req, httplib::Response& res) {
        {
            std::lock_guard<std::mutex> lock(log_mu_);
            evo_requests_.push_back(req.method + " " + req.path);
        }
        httplib::Client upstream(cfg_.pipeline_base);
        upstream.set_connection_timeout(5, 0);
        upstream.set_read_timeout(60, 0);
        httplib::Result result;
        std::string target = req.path;
        if (!req.params.empty()) {
            target += "?";
            bool first = true;
            for (const auto& [k, v] : req.params) {
                if (!first) target += "&";
                target += k + "=" + v;
                first = false;
            }
        }
        if (req.method == "POST") {
            result = upstream.Post(target, req.body, "application/json");
        } else {
            result = upstream.Get(target);
        }
        if (!result) {
            res.status = 502;
            res.set_content(R"({"error": {"code": "io_failure", "message": "evolution service unreachable"}})",
                            "application/json");
            return;
        }
        res.status = result->status;
        res.set_content(result->body, "application/json");
    };
    server.Post(R"(/evo/.*)", forward);
    server.Get(R"(/evo/.*)", forward);

    server.Post("/hooks/moss", [this](const httplib::Request& req, httplib::Response& res) {
        json payload = json::parse(req.body, nullptr, false);
        if (payload.is_discarded() || !payload.is_object() || !payload.contains("event")) {
            res.status = 400;
            res.set_content(R"({"error": {"code": "bad_request", "message": "malformed webhook"}})",
                            "application/json");
            return;
        }
        append_message(payload["event"].get<std::string>(), payload);
        res.set_content("{}", "application/json");
    });

    server.Post("/admin/fault", [this](const httplib::Request& req, httplib::Response& res) {
        json body = json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) {
            res.status = 400;
            res.set_content(R"({"error": {"code": "bad_request", "message": "malformed body"}})",
                            "application/json");
            return;
        }
        set_fault(body.value("freeze_heartbeat", false), body.value("backdate_ms", std::int64_t{0}));
        res.set_content("{}", "application/json");
    });

    server.Get("/admin/messages", [this](const httplib::Request&, httplib::Response& res) {
        json docs = json::array();
        for (const auto& m : messages()) docs.push_back(m.to_json());
        res.set_content(json{{"messages", docs}}.dump(2) + "\n", "application/json");
    });

    if (port == 0) {
        port_ = server.bind_to_any_port(cfg_.bind_host);
    } else {
        if (!server.bind_to_port(cfg_.bind_host, port))
            throw Error(ErrorCode::io_failure, "cannot bind sandbox port");
        port_ = port;
    }

    running_ = true;
    write_heartbeat(Timestamp::now());
    heartbeat_thread_ = std::thread([this] { heartbeat_loop(); });
    impl_->listener = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return port_;
}

void SandboxGateway::stop() {
    if (!running_) return;
    {
        std::lock_guard<std::mutex> lock(wake_mu_);
        running_ = false;
    }
    wake_cv_.notify_all();
    impl_->server.stop();
    if (heartbeat_thread_.joinable()) heartbeat_thread_.join();
    if (impl_->listener.joinable()) impl_->listener.join();
}

void SandboxGateway::heartbeat_loop() {
    const auto interval = scaled_ms(cfg_.heartbeat_interval_ms, cfg_.time_scale);
    while (running_) {
        if (!frozen_) write_heartbeat(Timestamp::now());
        std::unique_lock<std::mutex> lock(wake_mu_);
        wake_cv_.wait_for(lock, std::chrono::milliseconds(interval), [this] { return !running_.load(); });
    }
}

void SandboxGateway::write_heartbeat(Timestamp at) {
    atomic_write_file(cfg_.user_state_dir / "heartbeat.json", json{{"ts", at.iso()}}.dump());
}

void SandboxGateway::set_fault(bool freeze_heartbeat, std::int64_t backdate_ms) {
    frozen_ = freeze_heartbeat;
    if (freeze_heartbeat && backdate_ms > 0)
        write_heartbeat(Timestamp{Timestamp::now().ms - backdate_ms});
}

void SandboxGateway::append_message(const std::string& event, const json& payload) {
    SystemMessage message;
    message.ts = Timestamp::now();
    message.event = event;
    auto it = cfg_.hook_mapping.find(event);
    message.rendered_text =
        it == cfg_.hook_mapping.end() ? payload.dump() : render_template(it->second, payload);
    std::lock_guard<std::mutex> lock(log_mu_);
    log_.push_back(std::move(message)); // append-only, one entry per delivery
}

std::vector<SystemMessage> SandboxGateway::messages() const {
    std::lock_guard<std::mutex> lock(log_mu_);
    return log_;
}

int SandboxGateway::message_count(const std::string& event) const {
    std::lock_guard<std::mutex> lock(log_mu_);
    int n = 0;
    for (const auto& m : log_)
        if (m.event == event) n++;
    return n;
}

std::vector<std::string> SandboxGateway::evo_requests() const {
    std::lock_guard<std::mutex> lock(log_mu_);
    return evo_requests_;
}

// --- scenario generation -----------------------------------------------

namespace {

struct Exchange {
    std::string question;
    std::string answer;
    bool qualifying; // tagged weak/missing by the sidecar
};

TranscriptEntry entry(int turn, Role role, const std::string& content) {
    TranscriptEntry e;
    e.turn_index = turn;
    e.role = role;
    e.content = content;
    e.ts = Timestamp{1754000000000LL + turn * 1000LL};
    return e;
}

json qualifying_tags() {
    return json::array({{"tool_sequencing", "weak"},
                        {"information_extraction", "missing"},
                        {"result_reporting", "weak"},
                        {"task_completion", "weak"}});
}

json strong_tags() {
    return json::array({{"tool_sequencing", "strong"},
                        {"information_extraction", "adequate"},
                        {"result_reporting", "strong"},
                        {"task_completion", "strong"}});
}

json write_scenario(const std::vector<Exchange>& exchanges, const fs::path& sessions_dir,
                    const fs::path& sidecar_path, const std::string& session_id,
                    const std::string& conversation_id) {
    fs::create_directories(sessions_dir);
    std::ofstream out(sessions_dir / (session_id + ".jsonl"), std::ios::trunc);
    json sidecar = json::object();
    if (auto existing = read_file(sidecar_path)) {
        auto parsed = json::parse(*existing, nullptr, false);
        if (parsed.is_object()) sidecar = parsed;
    }

    int turn = 0;
    int qualifying = 0;
    for (const auto& exchange : exchanges) {
        auto user = entry(turn, Role::user, exchange.question);
        auto agent = entry(turn + 1, Role::agent, exchange.answer);
        turn += 2;
        for (const auto& e : {user, agent}) {
            json line = e.to_json();
            line["session_id"] = session_id;
            line["conversation_id"] = conversation_id;
            out << line.dump() << "\n";
        }
        auto hash = autoscan::transcript_hash({user, agent});
        sidecar[hash] = exchange.qualifying ? qualifying_tags() : strong_tags();
        if (exchange.qualifying) qualifying++;
    }
    // Trailing user turn terminates the final exchange and stays dangling.
    json tail = entry(turn, Role::user, "thanks, that is all for now").to_json();
    tail["session_id"] = session_id;
    tail["conversation_id"] = conversation_id;
    out << tail.dump() << "\n";

    atomic_write_file(sidecar_path, sidecar.dump(2) + "\n");
    return {{"session_id", session_id},
            {"conversation_id", conversation_id},
            {"exchanges", exchanges.size()},
            {"qualifying", qualifying}};
}

std::vector<std::string> case_study_prompts() {
    return {
        "Audit SLA compliance for all P1 violation tickets against the tiered rules "
        "(zh variant). List each ticket and its compliance status.",
        "Audit SLA compliance for all P1 violation tickets against the tiered rules. "
        "List each ticket and its compliance status.",
        "Trace the restock chain across scheduler jobs, integration configs and inventory "
        "levels (zh variant). Report failing jobs, the broken integration, and short inventory.",
        "Trace the restock chain across scheduler jobs, integration configs and inventory "
        "levels. Report failing jobs, the broken integration, and short inventory.",
    };
}

} // namespace

std::vector<std::string> case_study_task_ids() {
    return {"T141zh_sla_compliance_audit", "T142_sla_compliance_audit",
            "T137zh_restock_chain_check", "T138_restock_chain_check"};
}

json generate_sessions(const std::string& scenario, const fs::path& sessions_dir,
                       const fs::path& sidecar_path) {
    if (scenario == "eight-weak-exchanges") {
        std::vector<Exchange> exchanges;
        for (int i = 0; i < 8; ++i)
            exchanges.push_back({"please check service item " + std::to_string(i),
                                 "checked a few of them, response data incomplete", true});
        return write_scenario(exchanges, sessions_dir, sidecar_path, "S1", "C1");
    }
    if (scenario == "all-strong") {
        std::vector<Exchange> exchanges;
        for (int i = 0; i < 4; ++i)
            exchanges.push_back({"summarize note " + std::to_string(i),
                                 "complete summary with all entities resolved", false});
        return write_scenario(exchanges, sessions_dir, sidecar_path, "S1", "C1");
    }
    if (scenario == "three-qualifying") {
        std::vector<Exchange> exchanges;
        for (int i = 0; i < 3; ++i)
            exchanges.push_back({"investigate alert " + std::to_string(i),
                                 "partial findings, several checks skipped", true});
        return write_scenario(exchanges, sessions_dir, sidecar_path, "S1", "C1");
    }
    if (scenario == "case-study") {
        // Four task prompts, each hit twice (the user retried), so the
        // sealed batch holds 8 chunks spanning 4 tasks.
        std::vector<Exchange> exchanges;
        auto prompts = case_study_prompts();
        for (int pass = 0; pass < 2; ++pass)
            for (std::size_t i = 0; i < prompts.size(); ++i)
                exchanges.push_back({prompts[i],
                                     pass == 0
                                         ? "listed only some tickets; compliance status indeterminate"
                                         : "partial chains; could not attribute all entities",
                                     true});
        return write_scenario(exchanges, sessions_dir, sidecar_path, "S1", "C1");
    }
    throw Error(ErrorCode::unknown_scenario, "no scenario named '" + scenario + "'");
}

json baseline_behavior_json() {
    json tasks = json::object();
    for (const auto& task : case_study_task_ids())
        tasks[task] = {{"response", "response data incomplete, compliance status indeterminate"}};
    return {{"tasks", tasks}};
}

json improved_behavior_json() {
    json tasks = json::object();
    tasks["T141zh_sla_compliance_audit"] = {
        {"response", "2 of 6 P1 tickets violated SLA, affecting Customer B and Customer D, "
                     "mean overrun 2.3h (zh)"}};
    tasks["T142_sla_compliance_audit"] = {
        {"response",
         "2 of 6 P1 tickets violated SLA, affecting Customer B and Customer D, mean overrun 2.3h"}};
    tasks["T137zh_restock_chain_check"] = {
        {"response", "complete chain: job restock-7 failing, integration vendor-sync broken, "
                     "inventory SKU-12 short (zh)"}};
    tasks["T138_restock_chain_check"] = {
        {"response", "complete chain: job restock-7 failing, integration vendor-sync broken, "
                     "inventory SKU-12 short"}};
    return {{"tasks", tasks}};
}

std::string init_substrate_fixture(const fs::path& repo_dir) {
    auto ws = GitWorkspace::init(repo_dir);
    std::ofstream(repo_dir / "README.md") << "inner substrate fixture\n";
    fs::create_directories(repo_dir / "src");
    std::ofstream(repo_dir / "src" / "mediator.txt")
        << "tool-result mediator: no annotation branch for generic execution paths\n";
    std::ofstream(repo_dir / "agent_behavior.json") << baseline_behavior_json().dump(2) << "\n";
    return ws.commit("substrate fixture baseline");
}

} // namespace moss::sandbox
