#include "moss/cli/cli.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/store.hpp"
#include "moss/hostd/rpc.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <cstdlib>
#include <ostream>
#include <sstream>

namespace moss::cli {

using nlohmann::json;

CliConfig config_from_env() {
    CliConfig config;
    if (const char* path = std::getenv("MOSS_CONFIG")) {
        if (auto text = read_file(path)) {
            auto doc = json::parse(*text, nullptr, false);
            if (doc.is_object()) {
                config.gateway_http_base = doc.value("gateway_url", "");
                config.hostd_socket = doc.value("hostd_socket", "");
            }
        }
    }
    if (const char* url = std::getenv("MOSS_GATEWAY_URL")) config.gateway_http_base = url;
    if (const char* socket = std::getenv("MOSS_HOSTD_SOCKET")) config.hostd_socket = socket;
    return config;
}

namespace {

struct TransportFailure {
    std::string endpoint;
};

struct DomainFailure {
    json error; // {code, message}
};

json http_call(const CliConfig& config, const std::string& method, const std::string& path,
               const json& body) {
    if (config.gateway_http_base.empty()) throw TransportFailure{"(gateway url not configured)"};
    httplib::Client client(config.gateway_http_base);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(120, 0);
    httplib::Result result = method == "GET" ? client.Get(path)
                                             : client.Post(path, body.dump(), "application/json");
    if (!result) throw TransportFailure{config.gateway_http_base + path};
    json doc = json::parse(result->body, nullptr, false);
    if (doc.is_discarded()) throw TransportFailure{config.gateway_http_base + path};
    if (result->status >= 400) throw DomainFailure{doc.value("error", json{{"code", "internal"}})};
    return doc;
}

json rpc_call(const CliConfig& config, const std::string& op, const json& params) {
    if (config.hostd_socket.empty()) throw TransportFailure{"(hostd socket not configured)"};
    try {
        hostd::RpcClient client(config.hostd_socket);
        return client.call(op, params);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::io_failure)
            throw TransportFailure{config.hostd_socket.string() + " op " + op};
        throw DomainFailure{
            {{"code", std::string(code_name(e.code()))}, {"message", e.message()}}};
    }
}

std::string pad(const std::string& text, std::size_t width) {
    return text.size() >= width ? text : text + std::string(width - text.size(), ' ');
}

} // namespace

std::string render(const json& report, const std::string& kind, OutputMode mode) {
    if (mode == OutputMode::json_mode) return report.dump(2) + "\n";

    std::ostringstream out;
    if (kind == "status") {
        out << "run        " << report.value("run_id", "") << "\n";
        out << "batch      " << report.value("batch_id", "") << "\n";
        out << "phase      " << report.value("phase", "") << "\n";
        out << "depth      " << report.value("depth", "") << "\n";
        if (report.contains("current_stage"))
            out << "stage      " << report["current_stage"].get<std::string>() << "\n";
        if (report.contains("baseline_score_sum"))
            out << "baseline   score_sum " << report["baseline_score_sum"].get<int>() << "\n";
        for (const auto& iter : report.value("iterations", json::array())) {
            out << "iteration " << iter.value("index", 0);
            if (iter.contains("score_sum")) out << "  score_sum " << iter["score_sum"].get<int>();
            if (iter.contains("verdict")) out << "  verdict " << iter["verdict"].get<std::string>();
            out << "\n";
        }
        if (report.contains("candidate_image"))
            out << "candidate  " << report["candidate_image"].get<std::string>() << "\n";
        if (report.contains("peak_iteration"))
            out << "peak       iteration " << report["peak_iteration"].get<int>() << "\n";
    } else if (kind == "batches") {
        out << pad("BATCH", 34) << pad("CONVERSATION", 16) << pad("STATE", 16) << "CHUNKS\n";
        for (const auto& batch : report.value("batches", json::array()))
            out << pad(batch.value("batch_id", ""), 34) << pad(batch.value("conversation_id", ""), 16)
                << pad(batch.value("state", ""), 16) << batch.value("chunk_count", 0) << "\n";
    } else if (kind == "batch") {
        out << "batch      " << report.value("batch_id", "") << "\n";
        out << "state      " << report.value("state", "") << "\n";
        out << "chunks     " << report.value("chunks", json::array()).size() << "\n";
        for (const auto& chunk : report.value("chunks", json::array()))
            out << "  - " << chunk.value("chunk_id", "") << " turns "
                << chunk["turn_span"][0].get<int>() << ".." << chunk["turn_span"][1].get<int>()
                << "\n";
    } else if (kind == "scan") {
        out << "chunks admitted  " << report.value("chunks_admitted", 0) << "\n";
        out << "batches sealed   " << report.value("batches_sealed", 0) << "\n";
    } else if (kind == "start" || kind == "restart") {
        out << "run " << report.value("run_id", "") << " started\n";
    } else if (kind == "stop") {
        out << "stop requested for run " << report.value("run_id", "") << "\n";
    } else if (kind == "apply") {
        out << "swap requested " << report.value("request_id", "") << " (image "
            << report.value("image_id", "") << ")\n";
    } else {
        out << report.dump(2) << "\n";
    }
    return out.str();
}

int dispatch(const std::vector<std::string>& args, const CliConfig& config, std::ostream& out,
             std::ostream& err) {
    CLI::App app{"moss - self-evolution control"};
    app.require_subcommand(1);

    auto* evo = app.add_subcommand("evo", "evolution lifecycle");
    evo->require_subcommand(1);

    bool json_flag = false;
    evo->add_flag("--json", json_flag, "emit the raw response document");

    std::string depth{"standard"}, session_id, batch_id, run_id;

    auto* cmd_status = evo->add_subcommand("status", "show the current run");
    cmd_status->add_option("--run", run_id, "run id");
    auto* cmd_batches = evo->add_subcommand("batches", "list evidence batches");
    auto* cmd_batch = evo->add_subcommand("batch", "show one batch by id");
    cmd_batch->add_option("--batch", batch_id, "batch id");
    cmd_batch->add_option("id", batch_id, "batch id");
    auto* cmd_start = evo->add_subcommand("start", "start an evolution run");
    cmd_start->add_option("--depth", depth, "light|standard|deep");
    cmd_start->add_option("--batch", batch_id, "batch id");
    auto* cmd_stop = evo->add_subcommand("stop", "stop the active run");
    cmd_stop->add_option("--run", run_id, "run id");
    auto* cmd_restart = evo->add_subcommand("restart", "restart a stopped or failed run");
    cmd_restart->add_option("--run", run_id, "run id");
    auto* cmd_apply = evo->add_subcommand("apply", "authorize the container swap");
    cmd_apply->add_option("--batch", batch_id, "batch id");
    auto* cmd_flag = evo->add_subcommand("flag", "scan one session for new evidence");
    cmd_flag->add_option("--session", session_id, "session id")->required();
    auto* cmd_catch_up = evo->add_subcommand("catch-up", "scan every session for new evidence");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) { // --help
            out << app.help() << "\n";
            return kExitOk;
        }
        err << "usage error: " << e.what() << "\n" << app.help() << "\n";
        return kExitUsage;
    }

    const OutputMode mode = json_flag ? OutputMode::json_mode : OutputMode::human;
    try {
        json report;
        std::string kind;

        // status/batches/batch/start/stop/restart/apply ride HTTP to the
        // gateway; flag and catch-up ride the hostd local socket.
        if (cmd_status->parsed()) {
            kind = "status";
            report = http_call(config, "GET",
                               run_id.empty() ? "/evo/status" : "/evo/status?run_id=" + run_id, {});
        } else if (cmd_batches->parsed()) {
            kind = "batches";
            report = http_call(config, "GET", "/evo/batches", {});
        } else if (cmd_batch->parsed()) {
            if (batch_id.empty()) {
                err << "usage error: batch needs an id\n";
                return kExitUsage;
            }
            kind = "batch";
            report = http_call(config, "GET", "/evo/batch/" + batch_id, {});
        } else if (cmd_start->parsed()) {
            kind = "start";
            json body{{"depth", depth}};
            if (!batch_id.empty()) body["batch_id"] = batch_id;
            report = http_call(config, "POST", "/evo/start", body);
        } else if (cmd_stop->parsed()) {
            kind = "stop";
            json body = json::object();
            if (!run_id.empty()) body["run_id"] = run_id;
            report = http_call(config, "POST", "/evo/stop", body);
        } else if (cmd_restart->parsed()) {
            kind = "restart";
            if (run_id.empty()) {
                err << "usage error: restart needs --run\n";
                return kExitUsage;
            }
            report = http_call(config, "POST", "/evo/restart", {{"run_id", run_id}});
        } else if (cmd_apply->parsed()) {
            kind = "apply";
            json body = json::object();
            if (!batch_id.empty()) body["batch_id"] = batch_id;
            report = http_call(config, "POST", "/evo/apply", body);
        } else if (cmd_flag->parsed()) {
            kind = "scan";
            report = rpc_call(config, "autoscan.flag", {{"session_id", session_id}});
        } else if (cmd_catch_up->parsed()) {
            kind = "scan";
            report = rpc_call(config, "autoscan.catch_up", json::object());
        }

        out << render(report, kind, mode);
        return kExitOk;
    } catch (const DomainFailure& failure) {
        if (mode == OutputMode::json_mode) {
            out << json{{"error", failure.error}}.dump(2) << "\n";
        } else {
            err << "error [" << failure.error.value("code", "internal")
                << "]: " << failure.error.value("message", "") << "\n";
        }
        return kExitDomain;
    } catch (const TransportFailure& failure) {
        err << "transport failure reaching " << failure.endpoint << "\n";
        return kExitTransport;
    }
}

} // namespace moss::cli
