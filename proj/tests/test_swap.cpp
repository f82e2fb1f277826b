#include <doctest.h>

#include "support.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/ids.hpp"
#include "moss/hostd/swap.hpp"

#include <random>

using namespace moss;
using namespace moss::hostd;
namespace fs = std::filesystem;

namespace {

// Brute-force predicate: committed iff three consecutive passes exist; the
// commit index is the first sample completing such a run.
ProbeDecision oracle_decision(const std::vector<bool>& samples, int needed) {
    for (std::size_t i = 0; i + needed <= samples.size() + 0u; ++i) {
        bool all = true;
        for (int k = 0; k < needed; ++k)
            if (!samples[i + static_cast<std::size_t>(k)]) all = false;
        if (all) return {true, static_cast<int>(i) + needed - 1};
    }
    return {false, -1};
}

struct SwapHarness {
    test::TempDir tmp;
    StateStore store;
    SimulatedRuntime runtime;
    ImageRegistry images;
    test::WebhookSink sink;
    WebhookDispatcher webhooks;
    ImageRef old_image{"img-old", "rev-old", Timestamp{1000}};
    ImageRef new_image{"img-new", "rev-new", Timestamp{2000}};

    SwapHarness()
        : store(tmp / "state"), runtime(tmp.path() / "state" / "runtime" / "containers.json"),
          images(store), webhooks(sink.url(), 3, 10) {
        images.put({old_image, {}, {}});
        images.put({new_image, {}, {}});
        fs::create_directories(tmp / "user-state");
    }

    SwapSupervisor::Deps deps(double scale = 50.0) {
        SwapSupervisor::Deps d;
        d.store = &store;
        d.runtime = &runtime;
        d.images = &images;
        d.webhooks = &webhooks;
        d.swap = SwapConfig{};
        d.time_scale = scale; // 90s window -> 1.8s in unit tests
        d.user_state_dir = tmp / "user-state";
        return d;
    }

    void fresh_heartbeat(Timestamp at = Timestamp::now()) {
        atomic_write_file(tmp.path() / "user-state" / "heartbeat.json",
                          nlohmann::json{{"ts", at.iso()}}.dump());
    }

    void write_request(const ImageRef& image, const std::string& request_id = prefixed_id("swap")) {
        SwapRequest request;
        request.request_id = request_id;
        request.candidate_image = image;
        request.batch_id = "b1";
        request.run_id = "r1";
        request.requested_at = Timestamp::now();
        atomic_write_file(store.swap_request_path(), request.to_json().dump());
    }
};

} // namespace

TEST_CASE("probe_decision trivial sequences") {
    CHECK(probe_decision({true, true, true}).committed);
    CHECK(probe_decision({true, true, true}).commit_index == 2);
    auto late = probe_decision({false, false, true, true, true});
    CHECK(late.committed);
    CHECK(late.commit_index == 4);
    std::vector<bool> alternating;
    for (int i = 0; i < 18; ++i) alternating.push_back(i % 2 == 0);
    CHECK_FALSE(probe_decision(alternating).committed);
}

TEST_CASE("probe_decision equals the brute-force oracle for every length-<=12 sequence") {
    for (int len = 0; len <= 12; ++len) {
        for (unsigned mask = 0; mask < (1u << len); ++mask) {
            std::vector<bool> samples;
            for (int i = 0; i < len; ++i) samples.push_back((mask >> i) & 1);
            auto got = probe_decision(samples, 3);
            auto expect = oracle_decision(samples, 3);
            REQUIRE(got.committed == expect.committed);
            REQUIRE(got.commit_index == expect.commit_index);
        }
    }
}

TEST_CASE("health probe: heartbeat freshness boundary is inclusive at 30s") {
    SwapHarness hx;
    auto deps = hx.deps(1.0); // unscaled: the 30s bound itself is under test
    Timestamp heartbeat_at{1754736000000LL};
    hx.fresh_heartbeat(heartbeat_at);

    auto container = SwapSupervisor(std::move(deps)).install(hx.old_image);

    auto probe_at = [&](std::int64_t offset_ms) {
        auto d = hx.deps(1.0);
        d.now = [&, offset_ms] { return Timestamp{heartbeat_at.ms + offset_ms}; };
        SwapSupervisor supervisor(std::move(d));
        return supervisor.health_probe(container);
    };

    auto fresh = probe_at(10000);
    CHECK(fresh.checks.heartbeat_fresh);
    CHECK(fresh.checks.container_running);
    CHECK(fresh.pass);

    CHECK(probe_at(30000).pass);        // exactly 30s: <= is inclusive
    CHECK_FALSE(probe_at(31000).pass);  // 31s: stale
    CHECK_FALSE(probe_at(31000).checks.heartbeat_fresh);
}

TEST_CASE("health probe: unreadable heartbeat counts as stale; probes gate on exec") {
    SwapHarness hx;
    SwapSupervisor supervisor(hx.deps());
    auto container = supervisor.install(hx.old_image);

    auto report = supervisor.health_probe(container);
    CHECK_FALSE(report.checks.heartbeat_fresh); // no heartbeat file at all
    CHECK(report.checks.container_running);

    hx.fresh_heartbeat();
    CHECK(supervisor.health_probe(container).pass);

    hx.runtime.set_exec_fault(container, 2);
    auto faulted = supervisor.health_probe(container);
    CHECK_FALSE(faulted.pass);
    CHECK_FALSE(faulted.checks.cli_probe_a);
}

TEST_CASE("swap commits on a healthy candidate and moves last-known-good") {
    SwapHarness hx;
    SwapSupervisor supervisor(hx.deps());
    supervisor.install(hx.old_image);
    hx.fresh_heartbeat();
    hx.write_request(hx.new_image);

    auto outcome = supervisor.tick();
    REQUIRE(outcome);
    CHECK(outcome->kind == SwapOutcomeKind::committed);

    auto live = supervisor.live_substrate_container();
    REQUIRE(live);
    CHECK(live->image_id == "img-new");
    CHECK(supervisor.last_known_good()->image.image_id == "img-new");
    CHECK_FALSE(hx.store.exists("swap/request.json"));
    CHECK(hx.sink.count("apply-complete") == 1);
    CHECK(hx.sink.received().back()["status"] == "success");

    CHECK_FALSE(supervisor.tick().has_value()); // request consumed
}

TEST_CASE("swap rolls back when the heartbeat goes stale") {
    SwapHarness hx;
    SwapSupervisor supervisor(hx.deps());
    supervisor.install(hx.old_image);
    hx.fresh_heartbeat(Timestamp{Timestamp::now().ms - 3600000}); // an hour old
    hx.write_request(hx.new_image);

    auto outcome = supervisor.tick();
    REQUIRE(outcome);
    CHECK(outcome->kind == SwapOutcomeKind::rolled_back);

    auto live = supervisor.live_substrate_container();
    REQUIRE(live);
    CHECK(live->image_id == "img-old"); // restarted from last-known-good
    CHECK(supervisor.last_known_good()->image.image_id == "img-old");
    CHECK(hx.sink.count("apply-complete") == 1);
    CHECK(hx.sink.received().back()["status"] == "rolled-back");

    // Rollback keeps the request consumable exactly once: archived with outcome.
    CHECK_FALSE(hx.store.exists("swap/request.json"));
    CHECK(fs::exists(hx.store.swap_archive_dir()));
}

TEST_CASE("stale request naming a deleted image rolls back from last-known-good") {
    SwapHarness hx;
    SwapSupervisor supervisor(hx.deps());
    supervisor.install(hx.old_image);
    hx.fresh_heartbeat();
    ImageRef ghost{"img-ghost", "rev-ghost", Timestamp{3000}};
    hx.write_request(ghost); // never registered

    auto outcome = supervisor.tick();
    REQUIRE(outcome);
    CHECK(outcome->kind == SwapOutcomeKind::rolled_back);
    auto live = supervisor.live_substrate_container();
    REQUIRE(live);
    CHECK(live->image_id == "img-old");
    CHECK(supervisor.last_known_good()->image.image_id == "img-old");
}

TEST_CASE("rollback-start failure escalates to the fatal alert state") {
    SwapHarness hx;
    SwapSupervisor supervisor(hx.deps());
    supervisor.install(hx.old_image);
    // Stale heartbeat forces rollback; old image start failure breaks it.
    hx.fresh_heartbeat(Timestamp{Timestamp::now().ms - 3600000});
    hx.runtime.set_start_failure("img-old", true);
    hx.write_request(hx.new_image);

    CHECK_THROWS_AS(supervisor.tick(), Error);
    CHECK(supervisor.fatal_alert());
    // No further swap attempts until the operator clears the alert.
    hx.write_request(hx.new_image, prefixed_id("swap2"));
    CHECK_FALSE(supervisor.tick().has_value());
    supervisor.clear_fatal_alert();
    hx.runtime.set_start_failure("img-old", false);
    hx.fresh_heartbeat();
    CHECK(supervisor.tick().has_value());
}

TEST_CASE("probe window samples on the configured grid and exits early on commit") {
    SwapHarness hx;
    SwapSupervisor supervisor(hx.deps(50.0)); // 1.8s window / 100ms samples
    auto container = supervisor.install(hx.old_image);
    hx.fresh_heartbeat();

    auto window = supervisor.run_probe_window(container);
    CHECK(window.committed);
    CHECK(window.samples.size() == 3); // first run of 3 passes commits at sample 2

    // All-fail path exhausts the full 18-sample window.
    hx.runtime.set_exec_fault(container, 1);
    auto exhausted = supervisor.run_probe_window(container);
    CHECK_FALSE(exhausted.committed);
    CHECK(exhausted.samples.size() == 18);
}

TEST_CASE("webhook retries against a dead listener then reports failure") {
    int dead_port = test::free_port();
    WebhookDispatcher dispatcher("http://127.0.0.1:" + std::to_string(dead_port) + "/hooks/moss", 3,
                                 5);
    auto result = dispatcher.fire("apply-complete", {{"status", "success"}});
    CHECK_FALSE(result.delivered);
    CHECK(result.attempts == 3);
}

TEST_CASE("crash at every checkpoint leaves exactly one designated container") {
    struct CrashInjected {
        SwapCheckpoint at;
    };
    for (SwapCheckpoint cp :
         {SwapCheckpoint::after_request_read, SwapCheckpoint::after_stop_old,
          SwapCheckpoint::after_start_candidate, SwapCheckpoint::after_probe_decision,
          SwapCheckpoint::after_state_commit, SwapCheckpoint::after_archive}) {
        CAPTURE(swap_checkpoint_name(cp));
        SwapHarness hx;
        const std::string request_id = prefixed_id("swap");
        {
            auto deps = hx.deps();
            deps.checkpoint_hook = [cp](SwapCheckpoint seen) {
                if (seen == cp) throw CrashInjected{seen};
            };
            SwapSupervisor supervisor(std::move(deps));
            supervisor.install(hx.old_image);
            hx.fresh_heartbeat();
            hx.write_request(hx.new_image, request_id);
            CHECK_THROWS_AS(supervisor.tick(), CrashInjected);
        }

        // Restarted daemon: recovery must designate exactly one container,
        // running either the old or the new image, and deliver apply-complete
        // exactly once for the request.
        SwapSupervisor recovered(hx.deps());
        recovered.recover();

        auto substrate = hx.runtime.list({{"moss.role", "substrate"}});
        int running = 0;
        for (const auto& c : substrate)
            if (c.running) {
                running++;
                CHECK((c.image_id == "img-old" || c.image_id == "img-new"));
            }
        CHECK(running == 1);
        CHECK_FALSE(hx.store.exists("swap/request.json"));

        int applied = 0;
        for (const auto& doc : hx.sink.received())
            if (doc.value("event", "") == "apply-complete" &&
                doc.value("request_id", "") == request_id)
                applied++;
        CHECK(applied == 1);

        // Idempotent: recovering again re-fires nothing.
        SwapSupervisor again(hx.deps());
        again.recover();
        int applied_after = 0;
        for (const auto& doc : hx.sink.received())
            if (doc.value("event", "") == "apply-complete" &&
                doc.value("request_id", "") == request_id)
                applied_after++;
        CHECK(applied_after == 1);
    }
}
