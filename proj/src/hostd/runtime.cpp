#include "moss/hostd/runtime.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/ids.hpp"
#include "moss/core/proc.hpp"
#include "moss/core/store.hpp"

#include <algorithm>

namespace fs = std::filesystem;

namespace moss::hostd {

using nlohmann::json;

namespace {

json to_doc(const ContainerInfo& info) {
    json mounts = json::array();
    for (const auto& m : info.mounts) mounts.push_back({{"source", m.source}, {"target", m.target}});
    return {{"container_id", info.container_id}, {"image_id", info.image_id},
            {"name", info.name},                 {"running", info.running},
            {"mounts", mounts},                  {"network", info.network},
            {"labels", info.labels}};
}

ContainerInfo from_doc(const json& doc) {
    ContainerInfo info;
    info.container_id = doc.at("container_id").get<std::string>();
    info.image_id = doc.at("image_id").get<std::string>();
    info.name = doc.value("name", "");
    info.running = doc.value("running", false);
    for (const auto& m : doc.value("mounts", json::array()))
        info.mounts.push_back({m.at("source").get<std::string>(), m.at("target").get<std::string>()});
    info.network = doc.value("network", "default");
    if (doc.contains("labels")) info.labels = doc["labels"].get<std::map<std::string, std::string>>();
    return info;
}

bool labels_match(const ContainerInfo& info, const std::map<std::string, std::string>& filter) {
    for (const auto& [k, v] : filter) {
        auto it = info.labels.find(k);
        if (it == info.labels.end() || it->second != v) return false;
    }
    return true;
}

} // namespace

SimulatedRuntime::SimulatedRuntime(fs::path state_file) : state_file_(std::move(state_file)) {}

json SimulatedRuntime::load() const {
    auto text = read_file(state_file_);
    if (!text) return {{"containers", json::array()}, {"start_failures", json::object()},
                       {"exec_faults", json::object()}};
    return json::parse(*text);
}

void SimulatedRuntime::save(const json& doc) const {
    atomic_write_file(state_file_, doc.dump(2));
}

std::string SimulatedRuntime::start(const StartOptions& opts) {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    if (doc["start_failures"].value(opts.image_id, false))
        throw Error(ErrorCode::runtime_failure, "start failure injected for image " + opts.image_id);

    ContainerInfo info;
    info.container_id = prefixed_id("ctr");
    info.image_id = opts.image_id;
    info.name = opts.name;
    info.running = true;
    info.mounts = opts.mounts;
    info.network = opts.network;
    info.labels = opts.labels;
    doc["containers"].push_back(to_doc(info));
    save(doc);
    return info.container_id;
}

void SimulatedRuntime::stop(const std::string& container_id) {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    auto& list = doc["containers"];
    for (auto it = list.begin(); it != list.end(); ++it) {
        if ((*it)["container_id"] == container_id) {
            list.erase(it);
            save(doc);
            return;
        }
    }
    // Stopping a gone container is not an error; swap recovery relies on it.
}

std::optional<ContainerInfo> SimulatedRuntime::inspect(const std::string& container_id) {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    for (const auto& c : doc["containers"])
        if (c["container_id"] == container_id) return from_doc(c);
    return std::nullopt;
}

std::vector<ContainerInfo> SimulatedRuntime::list(const std::map<std::string, std::string>& filter) {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    std::vector<ContainerInfo> out;
    for (const auto& c : doc["containers"]) {
        auto info = from_doc(c);
        if (labels_match(info, filter)) out.push_back(std::move(info));
    }
    return out;
}

ExecResult SimulatedRuntime::exec(const std::string& container_id,
                                  const std::vector<std::string>& cmd) {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    bool found = false;
    for (const auto& c : doc["containers"])
        if (c["container_id"] == container_id && c.value("running", false)) found = true;
    if (!found)
        throw Error(ErrorCode::runtime_failure, "exec in unknown container " + container_id);

    int code = 0;
    if (doc["exec_faults"].contains(container_id)) code = doc["exec_faults"][container_id].get<int>();
    std::string joined;
    for (const auto& c : cmd) joined += c + " ";
    return {code, "simulated exec: " + joined};
}

void SimulatedRuntime::set_start_failure(const std::string& image_id, bool fail) {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    if (fail) doc["start_failures"][image_id] = true;
    else doc["start_failures"].erase(image_id);
    save(doc);
}

void SimulatedRuntime::set_exec_fault(const std::string& container_id, int exit_code) {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    doc["exec_faults"][container_id] = exit_code;
    save(doc);
}

void SimulatedRuntime::clear_exec_fault(const std::string& container_id) {
    std::lock_guard<std::mutex> lock(mu_);
    auto doc = load();
    doc["exec_faults"].erase(container_id);
    save(doc);
}

// --- DockerRuntime ---------------------------------------------------------

DockerRuntime::DockerRuntime(std::string docker_bin) : docker_bin_(std::move(docker_bin)) {}

std::string DockerRuntime::start(const StartOptions& opts) {
    std::vector<std::string> argv{docker_bin_, "run", "-d"};
    if (!opts.name.empty()) {
        argv.push_back("--name");
        argv.push_back(opts.name);
    }
    for (const auto& m : opts.mounts) {
        argv.push_back("-v");
        argv.push_back(m.source + ":" + m.target);
    }
    if (opts.network == "isolated") {
        argv.push_back("--network");
        argv.push_back("none");
    }
    for (const auto& [k, v] : opts.labels) {
        argv.push_back("--label");
        argv.push_back(k + "=" + v);
    }
    argv.push_back(opts.image_id);
    auto result = run_process(argv);
    if (result.exit_code != 0)
        throw Error(ErrorCode::runtime_failure, "docker run failed: " + result.out);
    std::string id = result.out;
    while (!id.empty() && (id.back() == '\n' || id.back() == '\r')) id.pop_back();
    return id;
}

void DockerRuntime::stop(const std::string& container_id) {
    run_process({docker_bin_, "rm", "-f", container_id});
}

std::optional<ContainerInfo> DockerRuntime::inspect(const std::string& container_id) {
    auto result = run_process({docker_bin_, "inspect", container_id});
    if (result.exit_code != 0) return std::nullopt;
    auto parsed = json::parse(result.out, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_array() || parsed.empty()) return std::nullopt;
    const auto& doc = parsed[0];

    ContainerInfo info;
    info.container_id = container_id;
    info.image_id = doc.value("/Config/Image"_json_pointer, std::string{});
    info.name = doc.value("/Name"_json_pointer, std::string{});
    info.running = doc.value("/State/Running"_json_pointer, false);
    if (doc.contains("Mounts"))
        for (const auto& m : doc["Mounts"])
            info.mounts.push_back({m.value("Source", ""), m.value("Destination", "")});
    info.network = doc.value("/HostConfig/NetworkMode"_json_pointer, std::string{"default"});
    if (doc.contains(json::json_pointer("/Config/Labels")) &&
        doc["Config"]["Labels"].is_object())
        info.labels = doc["Config"]["Labels"].get<std::map<std::string, std::string>>();
    return info;
}

std::vector<ContainerInfo> DockerRuntime::list(const std::map<std::string, std::string>& filter) {
    std::vector<std::string> argv{docker_bin_, "ps", "-q"};
    for (const auto& [k, v] : filter) {
        argv.push_back("--filter");
        argv.push_back("label=" + k + "=" + v);
    }
    auto result = run_process(argv);
    if (result.exit_code != 0) return {};
    std::vector<ContainerInfo> out;
    std::size_t pos = 0;
    while (pos < result.out.size()) {
        auto nl = result.out.find('\n', pos);
        if (nl == std::string::npos) nl = result.out.size();
        std::string id = result.out.substr(pos, nl - pos);
        pos = nl + 1;
        if (id.empty()) continue;
        if (auto info = inspect(id)) out.push_back(std::move(*info));
    }
    return out;
}

ExecResult DockerRuntime::exec(const std::string& container_id, const std::vector<std::string>& cmd) {
    std::vector<std::string> argv{docker_bin_, "exec", container_id};
    argv.insert(argv.end(), cmd.begin(), cmd.end());
    auto result = run_process(argv);
    return {result.exit_code, result.out};
}

} // namespace moss::hostd
