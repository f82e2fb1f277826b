#pragma once

#include "moss/core/config.hpp"
#include "moss/core/store.hpp"
#include "moss/hostd/images.hpp"
#include "moss/hostd/runtime.hpp"
#include "moss/hostd/webhook.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace moss::hostd {

struct SwapRequest {
    std::string request_id;
    ImageRef candidate_image;
    std::string batch_id;
    std::string run_id;
    Timestamp requested_at;

    nlohmann::json to_json() const;
    static SwapRequest from_json(const nlohmann::json& doc);
};

struct ProbeChecks {
    bool heartbeat_fresh{false};
    bool container_running{false};
    bool cli_probe_a{false};
    bool cli_probe_b{false};

    bool pass() const { return heartbeat_fresh && container_running && cli_probe_a && cli_probe_b; }
};

struct ProbeReport {
    int sample_index{0};
    Timestamp ts;
    ProbeChecks checks;
    bool pass{false};

    nlohmann::json to_json() const;
};

struct ProbeDecision {
    bool committed{false};
    int commit_index{-1}; // first sample completing the consecutive-pass run
};

// Pure decision core: commit at the first index completing `needed`
// consecutive passes, else rollback. The timed window delegates here.
ProbeDecision probe_decision(const std::vector<bool>& samples, int needed = 3);

struct ProbeWindowResult {
    bool committed{false};
    std::vector<ProbeReport> samples;
};

enum class SwapOutcomeKind { committed, rolled_back };

struct SwapOutcome {
    SwapOutcomeKind kind{SwapOutcomeKind::rolled_back};
    std::string request_id;
    std::string detail;
};

// Instrumented checkpoints for crash-tolerance tests; the hook may throw to
// model the daemon dying at that point.
enum class SwapCheckpoint {
    after_request_read,
    after_stop_old,
    after_start_candidate,
    after_probe_decision,
    after_state_commit,
    after_archive,
};

std::string swap_checkpoint_name(SwapCheckpoint cp);

struct LastKnownGood {
    ImageRef image;
    Timestamp recorded_at;

    nlohmann::json to_json() const;
    static LastKnownGood from_json(const nlohmann::json& doc);
};

// File-polls swap/request.json; on detection stops the live substrate
// container, starts the candidate with the user-state volume mounted, runs
// the probe window, and commits or rolls back to the last-known-good image.
// Crash recovery re-derives a safe state from request file + runtime +
// last-known-good.
class SwapSupervisor {
public:
    struct Deps {
        StateStore* store{nullptr};
        ContainerRuntime* runtime{nullptr};
        ImageRegistry* images{nullptr};
        WebhookDispatcher* webhooks{nullptr};
        SwapConfig swap;
        double time_scale{1.0};
        std::filesystem::path user_state_dir;
        ClockFn now; // injectable for freshness boundary tests
        std::function<void(SwapCheckpoint)> checkpoint_hook;
    };

    explicit SwapSupervisor(Deps deps);

    // One poll cycle; executes a swap when a request is pending. Returns the
    // outcome when a swap ran. No-ops while the fatal alert is set.
    std::optional<SwapOutcome> tick();

    // Startup scan: finishes or unwinds an interrupted swap, re-fires
    // undelivered webhooks, and guarantees exactly one designated container.
    void recover();

    // Seeds the initial deployment: starts the substrate container from
    // `image` and records it as last-known-good.
    std::string install(const ImageRef& image);

    ProbeReport health_probe(const std::string& container_id, int sample_index = 0);
    ProbeWindowResult run_probe_window(const std::string& container_id);

    std::optional<LastKnownGood> last_known_good() const;
    bool fatal_alert() const;
    void clear_fatal_alert();

    std::optional<ContainerInfo> live_substrate_container();

    static constexpr const char* kSubstrateLabel = "moss.role";
    static constexpr const char* kSubstrateRole = "substrate";

private:
    SwapOutcome execute_swap(const SwapRequest& request);
    SwapOutcome rollback(const SwapRequest& request, const std::string& candidate_container,
                         const std::string& detail, std::vector<ProbeReport> samples);
    void finish(const SwapRequest& request, const SwapOutcome& outcome,
                const std::vector<ProbeReport>& samples);
    std::string start_substrate(const std::string& image_id);
    void write_lkg(const ImageRef& image);
    void archive_request(const SwapRequest& request, const SwapOutcome& outcome,
                         const std::vector<ProbeReport>& samples);
    void fire_apply_complete(const SwapRequest& request, const SwapOutcome& outcome);
    void mark_batch_applied(const SwapRequest& request);
    void enter_fatal_alert(const std::string& reason);
    void checkpoint(SwapCheckpoint cp);
    std::int64_t scaled(std::int64_t ms) const { return scaled_ms(ms, deps_.time_scale); }

    Deps deps_;
};

} // namespace moss::hostd
