#include <doctest.h>

#include "pipeline_harness.hpp"

#include "moss/core/errors.hpp"
#include "moss/hostd/swap.hpp"

#include <fstream>
#include <set>

using namespace moss;
using namespace moss::test;
using moss::pipeline::EvolutionEngine;
namespace fs = std::filesystem;

TEST_CASE("happy path: baseline, one iteration, converged, webhook, artifacts") {
    PipelineHarness hx;
    hx.load_script(happy_script());
    EvolutionEngine engine(hx.deps());

    auto run_id = engine.start_run(std::nullopt, tiny_depth());
    auto batch_after_start = hx.store.load_batch(hx.batch_id);
    CHECK(batch_after_start->state == BatchState::evolving);

    engine.drive(run_id);

    auto run = hx.store.load_run(run_id);
    REQUIRE(run);
    CHECK(run->phase == RunPhase::converged);
    REQUIRE(run->candidate_image);
    REQUIRE(run->iterations.size() == 1);
    const auto& iter = run->iterations[0];
    CHECK(iter.commit_rev);
    CHECK(iter.matrix);
    CHECK(iter.verdict);
    CHECK(iter.verdict->kind == VerdictKind::converged);
    CHECK_FALSE(iter.verdict->forced_by_plateau);

    // All seven stage artifacts plus trial transcripts.
    auto iter_dir = hx.store.iter_dir(run_id, 1);
    for (const char* artifact : {"locate.md", "plan.md", "plan_review.json", "diff.patch",
                                 "code_review.json", "matrix.json", "verdict.json"})
        CHECK(fs::exists(iter_dir / artifact));
    int transcript_files = 0;
    for (const auto& task_dir : fs::directory_iterator(iter_dir / "trials"))
        for ([[maybe_unused]] const auto& f : fs::directory_iterator(task_dir.path()))
            transcript_files++;
    CHECK(transcript_files == 4); // 4 tasks x 1 trial

    // Artifact mtimes respect stage order.
    auto mtime = [&](const char* name) { return fs::last_write_time(iter_dir / name); };
    CHECK(mtime("locate.md") <= mtime("plan.md"));
    CHECK(mtime("plan.md") <= mtime("plan_review.json"));
    CHECK(mtime("plan_review.json") <= mtime("code_review.json"));
    CHECK(mtime("code_review.json") <= mtime("matrix.json"));
    CHECK(mtime("matrix.json") <= mtime("verdict.json"));

    CHECK(hx.store.load_batch(hx.batch_id)->state == BatchState::ready_to_apply);
    CHECK(hx.sink.count("evolution-converged") == 1);
    CHECK(hx.sink.count("evolution-failed") == 0);

    // Baseline matrix persisted and locked.
    CHECK(fs::exists(hx.store.run_dir(run_id) / "baseline" / "matrix.json"));
    CHECK(run->baseline_matrix.key_set() == iter.matrix->key_set());
    CHECK(run->baseline_matrix.shape_ok());

    // Loop bound: 1 + 2p + 2c + 2 with one round each = 7 invocations.
    CHECK(iter.runner_invocations == 7);
}

TEST_CASE("start_run selection rules") {
    PipelineHarness hx;
    hx.load_script(happy_script());
    EvolutionEngine engine(hx.deps());

    SUBCASE("selector naming an empty batch is rejected") {
        auto empty = hx.make_batch(0, "C2", BatchState::open);
        CHECK_THROWS_AS(engine.start_run(empty, tiny_depth()), Error);
        try {
            engine.start_run(empty, tiny_depth());
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::no_eligible_batch);
        }
    }

    SUBCASE("no selector seals the latest non-empty open batch first") {
        sleep_ms(2);
        auto open_id = hx.make_batch(3, "C2", BatchState::open);
        auto run_id = engine.start_run(std::nullopt, tiny_depth());
        auto batch = hx.store.load_batch(open_id);
        REQUIRE(batch);
        CHECK(batch->state == BatchState::evolving);
        CHECK(batch->sealed_at.has_value());
        CHECK(hx.store.load_run(run_id)->batch_id == open_id);
    }

    SUBCASE("a second start while one run is active is rejected") {
        engine.start_run(std::nullopt, tiny_depth());
        CHECK_THROWS_AS(engine.start_run(std::nullopt, tiny_depth()), Error);
        try {
            engine.start_run(std::nullopt, tiny_depth());
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::run_already_active);
        }
    }
}

TEST_CASE("baseline keypoint bounds are enforced with one re-invoke") {
    PipelineHarness hx;
    ScriptBuilder sb;
    // Three keypoints: invalid; valid on the re-invoke.
    sb.task_evaluate(nlohmann::json{
        {"tasks", nlohmann::json::array({{{"task_id", "T1"},
                                          {"source_chunk_index", 0},
                                          {"keypoints",
                                           {{"k1", "weak"}, {"k2", "weak"}, {"k3", "weak"}}}}})}});
    sb.task_evaluate(te_uniform(2, "weak", true));
    sb.locate().plan().plan_review("approve").implement("f.txt", "x\n").code_review("approve");
    sb.task_evaluate(te_uniform(2, "strong", false)).verdict("CONVERGED");
    hx.load_script(sb.entries);

    EvolutionEngine engine(hx.deps());
    auto run_id = engine.start_run(std::nullopt, tiny_depth());
    engine.drive(run_id);
    auto run = hx.store.load_run(run_id);
    CHECK(run->phase == RunPhase::converged); // recovered via the retry
    CHECK(run->baseline_matrix.task_ids() == std::vector<std::string>{"T1", "T2"});
}

TEST_CASE("baseline failing twice fails the run and fires evolution-failed") {
    PipelineHarness hx;
    ScriptBuilder sb;
    for (int i = 0; i < 2; ++i)
        sb.task_evaluate(nlohmann::json{{"tasks", nlohmann::json::array(
                                                      {{{"task_id", "T1"},
                                                        {"source_chunk_index", 0},
                                                        {"keypoints", {{"k1", "weak"}}}}})}});
    hx.load_script(sb.entries);

    EvolutionEngine engine(hx.deps());
    auto run_id = engine.start_run(std::nullopt, tiny_depth());
    engine.drive(run_id);
    auto run = hx.store.load_run(run_id);
    CHECK(run->phase == RunPhase::failed);
    CHECK(hx.store.load_batch(hx.batch_id)->state == BatchState::failed);
    CHECK(hx.sink.count("evolution-failed") == 1);
}

TEST_CASE("plan loop consumes min(first-approve round, plan_rounds) rounds") {
    // Decision sequences with the approval at positions 1..5, plus all-reject;
    // reject kinds alternate to cover both rejection variants.
    for (int approve_at = 1; approve_at <= 6; ++approve_at) {
        CAPTURE(approve_at);
        const int plan_rounds = 5;
        PipelineHarness hx;
        ScriptBuilder sb;
        sb.task_evaluate(te_uniform(1, "weak", true));
        sb.locate();
        for (int round = 1; round <= std::min(approve_at, plan_rounds); ++round) {
            sb.plan("plan round " + std::to_string(round));
            if (round == approve_at) sb.plan_review("approve");
            else sb.plan_review(round % 2 ? "reject_off_target" : "reject_too_narrow");
        }
        sb.implement("f.txt", "x\n").code_review("approve");
        sb.task_evaluate(te_uniform(1, "strong", false)).verdict("CONVERGED");
        hx.load_script(sb.entries);

        DepthProfile depth = tiny_depth();
        depth.plan_rounds = plan_rounds;

        EvolutionEngine engine(hx.deps());
        auto run_id = engine.start_run(std::nullopt, depth);
        engine.drive(run_id);
        auto run = hx.store.load_run(run_id);
        REQUIRE(run->iterations.size() >= 1);

        const int expected_rounds = std::min(approve_at, plan_rounds);
        CHECK(run->iterations[0].plan_rounds_used == expected_rounds);
        CHECK(hx.scripted()->invocation_count(StageName::plan) == expected_rounds);
        CHECK(hx.scripted()->invocation_count(StageName::plan_review) == expected_rounds);

        if (approve_at <= plan_rounds) {
            CHECK(run->phase == RunPhase::converged);
        } else {
            // Budget exhausted: run fails, webhook delivered once.
            CHECK(run->phase == RunPhase::failed);
            CHECK(hx.sink.count("evolution-failed") == 1);
            CHECK(hx.store.load_batch(hx.batch_id)->state == BatchState::failed);
        }
    }
}

TEST_CASE("code loop hard-resets between rounds") {
    SUBCASE("reject then approve leaves only round-2 changes") {
        PipelineHarness hx;
        ScriptBuilder sb;
        sb.task_evaluate(te_uniform(1, "weak", true));
        sb.locate().plan().plan_review("approve");
        sb.implement("round1.txt", "first attempt\n").code_review("reject", "wrong file");
        sb.implement("round2.txt", "second attempt\n").code_review("approve");
        sb.task_evaluate(te_uniform(1, "strong", false)).verdict("CONVERGED");
        hx.load_script(sb.entries);

        DepthProfile depth = tiny_depth();
        depth.code_rounds = 3;

        // Expected tree: apply only round 2 on a parallel clone.
        auto r0 = hx.workspace->current_rev();
        auto expected = GitWorkspace::clone(hx.tmp / "substrate", hx.tmp / "expected");
        std::ofstream(hx.tmp.path() / "expected" / "round2.txt") << "second attempt\n";
        auto expected_tree = expected.tree_hash(expected.commit("apply round2.txt"));

        EvolutionEngine engine(hx.deps());
        auto run_id = engine.start_run(std::nullopt, depth);
        engine.drive(run_id);

        auto run = hx.store.load_run(run_id);
        REQUIRE(run->phase == RunPhase::converged);
        REQUIRE(run->iterations[0].commit_rev);
        auto head = *run->iterations[0].commit_rev;
        CHECK(hx.workspace->commit_count(r0, head) == 1);
        CHECK(hx.workspace->tree_hash(head) == expected_tree); // byte-exact tree
        CHECK_FALSE(fs::exists(hx.tmp.path() / "substrate" / "round1.txt"));
        CHECK(run->iterations[0].code_rounds_used == 2);
    }

    SUBCASE("all rounds rejected leaves the tree byte-identical to loop start") {
        PipelineHarness hx;
        ScriptBuilder sb;
        sb.task_evaluate(te_uniform(1, "weak", true));
        sb.locate().plan().plan_review("approve");
        for (int round = 1; round <= 2; ++round)
            sb.implement("round" + std::to_string(round) + ".txt", "attempt\n")
                .code_review("reject");
        hx.load_script(sb.entries);

        DepthProfile depth = tiny_depth();
        depth.code_rounds = 2;

        auto r0 = hx.workspace->current_rev();
        auto tree0 = hx.workspace->tree_hash(r0);

        EvolutionEngine engine(hx.deps());
        auto run_id = engine.start_run(std::nullopt, depth);
        engine.drive(run_id);

        auto run = hx.store.load_run(run_id);
        CHECK(run->phase == RunPhase::failed); // BudgetExhausted
        CHECK(hx.workspace->current_rev() == r0);
        CHECK(hx.workspace->tree_hash(hx.workspace->current_rev()) == tree0);
        CHECK(hx.sink.count("evolution-failed") == 1);
    }

    SUBCASE("implement without a commit is treated as a rejected round") {
        PipelineHarness hx;
        ScriptBuilder sb;
        sb.task_evaluate(te_uniform(1, "weak", true));
        sb.locate().plan().plan_review("approve");
        sb.implement_noop(); // no commit: round consumed, no code_review spawn
        sb.implement("fix.txt", "works\n").code_review("approve");
        sb.task_evaluate(te_uniform(1, "strong", false)).verdict("CONVERGED");
        hx.load_script(sb.entries);

        DepthProfile depth = tiny_depth();
        depth.code_rounds = 2;

        EvolutionEngine engine(hx.deps());
        auto run_id = engine.start_run(std::nullopt, depth);
        engine.drive(run_id);
        auto run = hx.store.load_run(run_id);
        CHECK(run->phase == RunPhase::converged);
        CHECK(run->iterations[0].code_rounds_used == 2);
        CHECK(hx.scripted()->invocation_count(StageName::code_review) == 1);
    }
}

TEST_CASE("verdict validation: unknown kinds fail after one re-invoke") {
    PipelineHarness hx;
    ScriptBuilder sb;
    sb.task_evaluate(te_uniform(1, "weak", true));
    sb.locate().plan().plan_review("approve").implement("f.txt", "x\n").code_review("approve");
    sb.task_evaluate(te_uniform(1, "weak", false));
    sb.add("verdict", nlohmann::json{{"kind", "PARTIAL"}});
    sb.add("verdict", nlohmann::json{{"kind", "ALSO_WRONG"}});
    hx.load_script(sb.entries);

    EvolutionEngine engine(hx.deps());
    auto run_id = engine.start_run(std::nullopt, tiny_depth());
    engine.drive(run_id);
    CHECK(hx.store.load_run(run_id)->phase == RunPhase::failed);
    CHECK(hx.sink.count("evolution-failed") == 1);
}

TEST_CASE("fundamental-limit verdicts set their failure phases") {
    for (const auto& [kind, phase] :
         std::vector<std::pair<std::string, RunPhase>>{
             {"FUNDAMENTAL_LIMIT_MODEL", RunPhase::failed_model_limit},
             {"FUNDAMENTAL_LIMIT_ARCHITECTURE", RunPhase::failed_architecture_limit}}) {
        PipelineHarness hx;
        ScriptBuilder sb;
        sb.task_evaluate(te_uniform(1, "weak", true));
        sb.locate().plan().plan_review("approve").implement("f.txt", "x\n").code_review("approve");
        sb.task_evaluate(te_uniform(1, "weak", false)).verdict(kind, "stuck");
        hx.load_script(sb.entries);

        EvolutionEngine engine(hx.deps());
        auto run_id = engine.start_run(std::nullopt, tiny_depth());
        engine.drive(run_id);
        CHECK(hx.store.load_run(run_id)->phase == phase);
        CHECK(hx.sink.count("evolution-failed") == 1);
        CHECK(hx.store.load_batch(hx.batch_id)->state == BatchState::failed);
    }
}

TEST_CASE("task-evaluate output violating the locked keypoint set fails the run") {
    PipelineHarness hx;
    ScriptBuilder sb;
    sb.task_evaluate(te_uniform(2, "weak", true)); // locks T1,T2 x k1..k4
    sb.locate().plan().plan_review("approve").implement("f.txt", "x\n").code_review("approve");
    sb.task_evaluate(te_uniform(3, "weak", false)); // extra task: violation
    sb.task_evaluate(te_uniform(1, "weak", false)); // missing task: still violated
    hx.load_script(sb.entries);

    EvolutionEngine engine(hx.deps());
    auto run_id = engine.start_run(std::nullopt, tiny_depth());
    engine.drive(run_id);
    CHECK(hx.store.load_run(run_id)->phase == RunPhase::failed);
}

TEST_CASE("plateau guard forces convergence and picks the earliest peak") {
    SUBCASE("unchanging matrices force at exactly the plateau window") {
        // Standard window of 3 with room for 4 iterations: forcing must land
        // exactly at iteration 3.
        PipelineHarness hx;
        ScriptBuilder sb;
        sb.task_evaluate(te_uniform(1, "weak", true));
        for (int i = 1; i <= 4; ++i) {
            sb.locate().plan().plan_review("approve");
            sb.implement("iter" + std::to_string(i) + ".txt", "change " + std::to_string(i) + "\n");
            sb.code_review("approve");
            sb.task_evaluate(te_uniform(1, "weak", false)); // never improves
            sb.verdict("NEED_MORE_WORK", "still weak");
        }
        hx.load_script(sb.entries);

        DepthProfile depth = tiny_depth(4, 3);

        EvolutionEngine engine(hx.deps());
        auto run_id = engine.start_run(std::nullopt, depth);
        engine.drive(run_id);

        auto run = hx.store.load_run(run_id);
        REQUIRE(run->phase == RunPhase::converged);
        CHECK(run->iterations.size() == 3); // forced exactly at the window
        const auto& verdict = run->iterations[2].verdict;
        REQUIRE(verdict);
        CHECK(verdict->kind == VerdictKind::converged);
        CHECK(verdict->forced_by_plateau);
        REQUIRE(run->peak_iteration);
        CHECK(*run->peak_iteration == 1); // equal scores: earliest wins
        CHECK(run->candidate_image->image_id == run->iterations[0].image->image_id);
        CHECK(hx.store.load_batch(hx.batch_id)->state == BatchState::ready_to_apply);
        CHECK(hx.sink.count("evolution-converged") == 1);
    }

    SUBCASE("scores 5,7,7,7 with window 2 force at iteration 4 with peak 2") {
        PipelineHarness hx;
        std::vector<std::vector<std::string>> score5{{"adequate", "weak", "weak", "weak"}};   // 5
        std::vector<std::vector<std::string>> score7{{"adequate", "adequate", "adequate", "weak"}}; // 7
        ScriptBuilder sb;
        sb.task_evaluate(te_body(score5, true)); // baseline score 5
        for (int i = 1; i <= 4; ++i) {
            sb.locate().plan().plan_review("approve");
            sb.implement("iter" + std::to_string(i) + ".txt", "c" + std::to_string(i) + "\n");
            sb.code_review("approve");
            sb.task_evaluate(te_body(i == 1 ? score5 : score7, false));
            sb.verdict("NEED_MORE_WORK");
        }
        hx.load_script(sb.entries);

        DepthProfile depth = tiny_depth(4, 2);

        EvolutionEngine engine(hx.deps());
        auto run_id = engine.start_run(std::nullopt, depth);
        engine.drive(run_id);

        auto run = hx.store.load_run(run_id);
        // Iteration scores: 5,7,7,7. Improvement at 2 blocks the window until
        // iterations 3..4 both show none.
        REQUIRE(run->phase == RunPhase::converged);
        CHECK(run->iterations.size() == 4);
        REQUIRE(run->peak_iteration);
        CHECK(*run->peak_iteration == 2); // brute-force argmax, earliest tie
        CHECK(run->candidate_image->image_id == run->iterations[1].image->image_id);
    }

    SUBCASE("improvement inside the window blocks the downgrade") {
        PipelineHarness hx;
        ScriptBuilder sb;
        sb.task_evaluate(te_uniform(1, "missing", true));
        for (int i = 1; i <= 3; ++i) {
            sb.locate().plan().plan_review("approve");
            sb.implement("i" + std::to_string(i) + ".txt", "c\n").code_review("approve");
            // Third iteration improves; no forcing despite window=3.
            sb.task_evaluate(te_uniform(1, i == 3 ? "weak" : "missing", false));
            sb.verdict("NEED_MORE_WORK");
        }
        hx.load_script(sb.entries);

        DepthProfile depth = tiny_depth(3, 3);

        EvolutionEngine engine(hx.deps());
        auto run_id = engine.start_run(std::nullopt, depth);
        engine.drive(run_id);
        auto run = hx.store.load_run(run_id);
        // Budget exhausted with NEED_MORE_WORK at max_iterations: failed.
        CHECK(run->phase == RunPhase::failed);
        for (const auto& iter : run->iterations)
            if (iter.verdict) CHECK_FALSE(iter.verdict->forced_by_plateau);
    }
}

TEST_CASE("stop is honored at every stage boundary") {
    // Collect boundary labels from a clean run first.
    std::vector<std::string> labels;
    {
        PipelineHarness hx;
        hx.load_script(happy_script());
        auto deps = hx.deps();
        deps.boundary_hook = [&](const std::string& label) { labels.push_back(label); };
        EvolutionEngine engine(std::move(deps));
        engine.drive(engine.start_run(std::nullopt, tiny_depth()));
    }
    REQUIRE(labels.size() >= 7);

    for (const auto& target : labels) {
        CAPTURE(target);
        PipelineHarness hx;
        hx.load_script(happy_script());
        auto deps = hx.deps();
        StateStore* store = &hx.store;
        std::string run_id_slot;
        deps.boundary_hook = [&, store](const std::string& label) {
            if (label == target)
                store->write_doc(fs::path("runs") / run_id_slot / "control.json",
                                 {{"stop_requested", true}});
        };
        EvolutionEngine engine(std::move(deps));
        run_id_slot = engine.start_run(std::nullopt, tiny_depth());
        engine.drive(run_id_slot);

        auto run = hx.store.load_run(run_id_slot);
        CHECK(run->phase == RunPhase::stopped); // every injection point stops
        CHECK(hx.store.load_batch(hx.batch_id)->state == BatchState::sealed);
        CHECK(hx.sink.count("evolution-failed") == 0);
    }
}

TEST_CASE("stop rejects inactive runs; restart reuses the baseline") {
    PipelineHarness hx;
    // Script: run 1 stopped after baseline; run 2 completes an iteration.
    ScriptBuilder sb;
    sb.task_evaluate(te_uniform(2, "weak", true));
    sb.locate().plan().plan_review("approve").implement("f.txt", "x\n").code_review("approve");
    sb.task_evaluate(te_uniform(2, "strong", false)).verdict("CONVERGED");
    hx.load_script(sb.entries);

    auto deps = hx.deps();
    std::string run_id;
    StateStore* store = &hx.store;
    deps.boundary_hook = [&, store](const std::string& label) {
        if (label.rfind("iter1:locate", 0) == 0)
            store->write_doc(fs::path("runs") / run_id / "control.json",
                             {{"stop_requested", true}});
    };
    EvolutionEngine engine(std::move(deps));
    run_id = engine.start_run(std::nullopt, tiny_depth());
    engine.drive(run_id);

    auto stopped = hx.store.load_run(run_id);
    REQUIRE(stopped->phase == RunPhase::stopped);
    CHECK_FALSE(stopped->baseline_matrix.empty());
    CHECK(hx.store.load_batch(hx.batch_id)->state == BatchState::sealed);

    CHECK_THROWS_AS(engine.stop(run_id), Error); // not active anymore

    auto new_run_id = engine.restart(run_id);
    CHECK(new_run_id != run_id);
    auto resumed = hx.store.load_run(new_run_id);
    CHECK(resumed->batch_id == stopped->batch_id);
    CHECK(resumed->phase == RunPhase::iterating); // baseline reused
    CHECK(resumed->baseline_matrix == stopped->baseline_matrix);
    CHECK(hx.store.load_batch(hx.batch_id)->state == BatchState::evolving);

    EvolutionEngine engine2(hx.deps());
    engine2.drive(new_run_id);
    auto finished = hx.store.load_run(new_run_id);
    CHECK(finished->phase == RunPhase::converged);
    // Exactly one baseline task_evaluate across both runs (reuse, not recompute):
    // the script held one baseline entry and one iteration entry, both consumed.
    CHECK_THROWS_AS(engine2.restart(new_run_id), Error); // converged: nothing to restart
}

TEST_CASE("status reflects the persisted run and survives a service restart") {
    PipelineHarness hx;
    hx.load_script(happy_script());
    EvolutionEngine engine(hx.deps());
    auto run_id = engine.start_run(std::nullopt, tiny_depth());

    std::vector<nlohmann::json> mid_run_status;
    auto deps = hx.deps();
    deps.boundary_hook = [&](const std::string& label) {
        if (label == "iter1:task_evaluate") mid_run_status.push_back(engine.status(run_id));
    };
    EvolutionEngine driver(std::move(deps));
    driver.drive(run_id);
    REQUIRE(mid_run_status.size() == 1);
    CHECK(mid_run_status[0]["phase"] == "iterating");

    auto before = engine.status(run_id);
    // A fresh engine over the same store (daemon restart) reports identically.
    auto restarted = hx.fresh_engine();
    auto after = restarted.status(run_id);
    CHECK(before.dump() == after.dump());
    CHECK(after["phase"] == "converged");
    CHECK(after.contains("candidate_image"));

    CHECK_THROWS_AS(engine.status(std::optional<std::string>("run-nope")), Error);
}

TEST_CASE("apply writes the swap request for the converged candidate") {
    PipelineHarness hx;
    hx.load_script(happy_script());
    EvolutionEngine engine(hx.deps());
    auto run_id = engine.start_run(std::nullopt, tiny_depth());
    engine.drive(run_id);

    auto response = engine.apply(std::nullopt);
    CHECK(response["batch_id"] == hx.batch_id);
    CHECK(response["run_id"] == run_id);

    auto request_doc = hx.store.read_doc("swap/request.json");
    REQUIRE(request_doc);
    auto request = hostd::SwapRequest::from_json(*request_doc);
    CHECK(request.candidate_image.image_id ==
          hx.store.load_run(run_id)->candidate_image->image_id);
    CHECK(request.batch_id == hx.batch_id);

    // Batch not yet applied: promotion belongs to the host-daemon.
    CHECK(hx.store.load_batch(hx.batch_id)->state == BatchState::ready_to_apply);
}

TEST_CASE("apply without a ready batch is rejected") {
    PipelineHarness hx;
    hx.load_script(happy_script());
    EvolutionEngine engine(hx.deps());
    CHECK_THROWS_AS(engine.apply(std::nullopt), Error);
}

TEST_CASE("crash at any boundary resumes at the same iteration without duplicate artifacts") {
    std::vector<std::string> labels;
    {
        PipelineHarness hx;
        hx.load_script(happy_script());
        auto deps = hx.deps();
        deps.boundary_hook = [&](const std::string& label) { labels.push_back(label); };
        EvolutionEngine engine(std::move(deps));
        engine.drive(engine.start_run(std::nullopt, tiny_depth()));
    }

    for (const auto& target : labels) {
        CAPTURE(target);
        PipelineHarness hx;
        hx.load_script(happy_script());
        auto deps = hx.deps();
        deps.boundary_hook = [&](const std::string& label) {
            if (label == target) throw pipeline::ServiceKill{label};
        };
        EvolutionEngine engine(std::move(deps));
        auto run_id = engine.start_run(std::nullopt, tiny_depth());
        bool killed = false;
        try {
            engine.drive(run_id);
        } catch (const pipeline::ServiceKill&) {
            killed = true;
        }
        CHECK(killed);

        // Service restart: fresh engine, fresh scripted runner, same script.
        auto resumed = hx.fresh_engine();
        resumed.drive(run_id);

        auto run = hx.store.load_run(run_id);
        REQUIRE(run->phase == RunPhase::converged);
        REQUIRE(run->iterations.size() == 1);

        auto iter_dir = hx.store.iter_dir(run_id, 1);
        std::set<std::string> files;
        for (const auto& f : fs::directory_iterator(iter_dir))
            if (f.is_regular_file()) files.insert(f.path().filename().string());
        CHECK(files == std::set<std::string>{"locate.md", "plan.md", "plan_review.json",
                                             "diff.patch", "code_review.json", "matrix.json",
                                             "verdict.json"});
        CHECK(hx.sink.count("evolution-converged") == 1);
    }
}

TEST_CASE("two executions from the same batch produce byte-identical stage artifacts") {
    auto run_once = [](std::map<std::string, std::string>& artifacts) {
        PipelineHarness hx;
        hx.load_script(happy_script());
        EvolutionEngine engine(hx.deps());
        auto run_id = engine.start_run(std::nullopt, tiny_depth());
        engine.drive(run_id);
        REQUIRE(hx.store.load_run(run_id)->phase == RunPhase::converged);
        auto iter_dir = hx.store.iter_dir(run_id, 1);
        for (const char* name : {"locate.md", "plan.md", "plan_review.json", "diff.patch",
                                 "code_review.json", "matrix.json", "verdict.json"})
            artifacts[name] = *read_file(iter_dir / name);
        for (const auto& task_dir : fs::directory_iterator(iter_dir / "trials"))
            for (const auto& f : fs::directory_iterator(task_dir.path()))
                artifacts["trials/" + task_dir.path().filename().string() + "/" +
                          f.path().filename().string()] = *read_file(f.path());
    };

    std::map<std::string, std::string> first, second;
    run_once(first);
    run_once(second);
    CHECK(first == second);
}
