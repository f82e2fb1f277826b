#include "moss/core/store.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/ids.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <system_error>

namespace fs = std::filesystem;

namespace moss {

namespace detail {
std::function<void(const fs::path&)> atomic_write_hook;
} // namespace detail

void atomic_write_file(const fs::path& path, std::string_view content) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    fs::path tmp = path;
    tmp += ".tmp." + new_id();
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::io_failure, "cannot open " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw Error(ErrorCode::io_failure, "short write to " + tmp.string());
    }
    if (detail::atomic_write_hook) detail::atomic_write_hook(tmp);
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorCode::io_failure, "rename failed for " + path.string());
    }
}

std::optional<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

StateStore::StateStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    for (const char* sub : {"batches", "cursors", "runs", "swap", "images", "invocations"})
        fs::create_directories(root_ / sub, ec);
}

void StateStore::write_doc(const fs::path& rel, const nlohmann::json& doc) {
    atomic_write_file(root_ / rel, doc.dump(2) + "\n");
}

std::optional<nlohmann::json> StateStore::read_doc(const fs::path& rel) const {
    auto text = read_file(root_ / rel);
    if (!text) return std::nullopt;
    try {
        return nlohmann::json::parse(*text);
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::io_failure, "corrupt document: " + (root_ / rel).string());
    }
}

void StateStore::remove(const fs::path& rel) {
    std::error_code ec;
    fs::remove(root_ / rel, ec);
}

bool StateStore::exists(const fs::path& rel) const {
    return fs::exists(root_ / rel);
}

fs::path StateStore::batch_rel(const std::string& conversation_id,
                               const std::string& batch_id) const {
    return fs::path("batches") / conversation_id / (batch_id + ".json");
}

void StateStore::save_batch(const Batch& batch) {
    write_doc(batch_rel(batch.conversation_id, batch.batch_id), batch.to_json());
}

std::optional<Batch> StateStore::load_batch(const std::string& batch_id) const {
    for (const auto& b : list_batches())
        if (b.batch_id == batch_id) return b;
    return std::nullopt;
}

std::vector<Batch> StateStore::list_batches() const {
    std::vector<Batch> out;
    fs::path dir = root_ / "batches";
    if (!fs::exists(dir)) return out;
    for (const auto& conv : fs::directory_iterator(dir)) {
        if (!conv.is_directory()) continue;
        for (const auto& f : fs::directory_iterator(conv.path())) {
            if (f.path().extension() != ".json") continue;
            auto text = read_file(f.path());
            if (!text) continue;
            out.push_back(Batch::from_json(nlohmann::json::parse(*text)));
        }
    }
    std::sort(out.begin(), out.end(),
              [](const Batch& a, const Batch& b) { return a.batch_id < b.batch_id; });
    return out;
}

std::optional<Batch> StateStore::find_open_batch(const std::string& conversation_id) const {
    for (const auto& b : list_batches())
        if (b.conversation_id == conversation_id && b.state == BatchState::open) return b;
    return std::nullopt;
}

void StateStore::check_open_batch_invariant() const {
    std::map<std::string, int> open_count;
    for (const auto& b : list_batches())
        if (b.state == BatchState::open) open_count[b.conversation_id]++;
    for (const auto& [conv, n] : open_count)
        if (n > 1)
            throw Error(ErrorCode::invalid_transition,
                        "conversation " + conv + " has " + std::to_string(n) + " open batches");
}

std::optional<nlohmann::json> StateStore::load_cursor(const std::string& session_id) const {
    return read_doc(fs::path("cursors") / (session_id + ".cursor"));
}

void StateStore::save_cursor(const std::string& session_id, const nlohmann::json& doc) {
    write_doc(fs::path("cursors") / (session_id + ".cursor"), doc);
}

fs::path StateStore::run_dir(const std::string& run_id) const {
    return root_ / "runs" / run_id;
}

fs::path StateStore::iter_dir(const std::string& run_id, int index) const {
    return run_dir(run_id) / ("iter-" + std::to_string(index));
}

void StateStore::save_run(const EvolutionRun& run) {
    write_doc(fs::path("runs") / run.run_id / "state.json", run.to_json());
}

std::optional<EvolutionRun> StateStore::load_run(const std::string& run_id) const {
    auto doc = read_doc(fs::path("runs") / run_id / "state.json");
    if (!doc) return std::nullopt;
    return EvolutionRun::from_json(*doc);
}

std::vector<std::string> StateStore::list_run_ids() const {
    std::vector<std::string> out;
    fs::path dir = root_ / "runs";
    if (!fs::exists(dir)) return out;
    for (const auto& d : fs::directory_iterator(dir))
        if (d.is_directory() && fs::exists(d.path() / "state.json"))
            out.push_back(d.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

std::optional<EvolutionRun> StateStore::find_active_run() const {
    for (const auto& id : list_run_ids()) {
        auto run = load_run(id);
        if (run && run_phase_active(run->phase)) return run;
    }
    return std::nullopt;
}

fs::path StateStore::swap_request_path() const { return root_ / "swap" / "request.json"; }
fs::path StateStore::last_known_good_path() const { return root_ / "swap" / "last_known_good.json"; }
fs::path StateStore::swap_archive_dir() const { return root_ / "swap" / "archive"; }
fs::path StateStore::fatal_alert_path() const { return root_ / "swap" / "fatal_alert.json"; }

} // namespace moss
