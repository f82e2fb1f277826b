#include "moss/pipeline/engine.hpp"

#include "moss/core/errors.hpp"
#include "moss/core/ids.hpp"
#include "moss/hostd/swap.hpp"

#include <algorithm>

namespace fs = std::filesystem;

namespace moss::pipeline {

using nlohmann::json;

std::string gate_decision_name(GateDecisionKind k) {
    switch (k) {
    case GateDecisionKind::approve: return "approve";
    case GateDecisionKind::reject_off_target: return "reject_off_target";
    case GateDecisionKind::reject_too_narrow: return "reject_too_narrow";
    case GateDecisionKind::reject: return "reject";
    }
    return "approve";
}

std::optional<GateDecisionKind> gate_decision_from_name(const std::string& name) {
    for (auto k : {GateDecisionKind::approve, GateDecisionKind::reject_off_target,
                   GateDecisionKind::reject_too_narrow, GateDecisionKind::reject})
        if (gate_decision_name(k) == name) return k;
    return std::nullopt;
}

TaskEvaluateDoc parse_task_evaluate(const std::string& body, const Batch* batch,
                                    const std::optional<std::set<MatrixKey>>& locked) {
    json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object() || !doc.contains("tasks") || !doc["tasks"].is_array() ||
        doc["tasks"].empty())
        throw Error(ErrorCode::stage_output_invalid, "task_evaluate output is not a task document");

    TaskEvaluateDoc parsed;
    json normalized_tasks = json::array();
    std::set<std::string> seen;
    for (const auto& task : doc["tasks"]) {
        if (!task.contains("task_id") || !task.contains("keypoints") || !task["keypoints"].is_object())
            throw Error(ErrorCode::stage_output_invalid, "task entry missing task_id/keypoints");
        const std::string task_id = task["task_id"].get<std::string>();
        if (!seen.insert(task_id).second)
            throw Error(ErrorCode::stage_output_invalid, "duplicate task id " + task_id);

        int kp_count = static_cast<int>(task["keypoints"].size());
        if (kp_count < 4 || kp_count > 7)
            throw Error(ErrorCode::stage_output_invalid,
                        "task " + task_id + " has " + std::to_string(kp_count) +
                            " keypoints (4..7 required)");

        json normalized_kps = json::object();
        for (const auto& [kp, level_name] : task["keypoints"].items()) {
            if (!level_name.is_string() || !level_from_name(level_name.get<std::string>()))
                throw Error(ErrorCode::stage_output_invalid,
                            "bad level for " + task_id + "." + kp + ": " + level_name.dump());
            parsed.matrix.set(task_id, kp, *level_from_name(level_name.get<std::string>()));
            normalized_kps[kp] = level_name;
        }

        json normalized{{"task_id", task_id}, {"keypoints", normalized_kps}};
        if (!locked) {
            // Baseline: bind every task to its source chunk.
            if (!batch || !task.contains("source_chunk_index"))
                throw Error(ErrorCode::stage_output_invalid,
                            "baseline task " + task_id + " missing source_chunk_index");
            int idx = task["source_chunk_index"].get<int>();
            if (idx < 0 || idx >= static_cast<int>(batch->chunks.size()))
                throw Error(ErrorCode::stage_output_invalid,
                            "source_chunk_index " + std::to_string(idx) + " out of range");
            TaskBinding binding;
            binding.task_id = task_id;
            binding.chunk_id = batch->chunks[static_cast<std::size_t>(idx)].chunk_id;
            binding.source_chunk_index = idx;
            binding.prompt = batch->chunks[static_cast<std::size_t>(idx)].first_user_prompt();
            parsed.bindings.push_back(std::move(binding));
            normalized["source_chunk_index"] = idx;
        }
        normalized_tasks.push_back(std::move(normalized));
    }

    if (locked && parsed.matrix.key_set() != *locked)
        throw Error(ErrorCode::stage_output_invalid,
                    "task_evaluate output violates the locked keypoint set");

    parsed.normalized = {{"version", 1}, {"tasks", normalized_tasks}};
    return parsed;
}

EvolutionEngine::EvolutionEngine(Deps deps) : deps_(std::move(deps)) {}

std::string EvolutionEngine::provider_for(StageName stage) const {
    auto it = deps_.stage_overrides.find(stage_name_str(stage));
    return it == deps_.stage_overrides.end() ? deps_.default_provider : it->second;
}

Batch EvolutionEngine::load_batch_or_throw(const std::string& batch_id) const {
    auto batch = deps_.store->load_batch(batch_id);
    if (!batch) throw Error(ErrorCode::unknown_batch, "no batch " + batch_id);
    return *batch;
}

std::optional<std::string> EvolutionEngine::active_run_id() const {
    auto run = deps_.store->find_active_run();
    if (!run) return std::nullopt;
    return run->run_id;
}

std::string EvolutionEngine::start_run(std::optional<std::string> batch_id, DepthProfile depth) {
    if (auto active = deps_.store->find_active_run())
        throw Error(ErrorCode::run_already_active, "run " + active->run_id + " is active");

    Batch batch;
    if (batch_id) {
        batch = load_batch_or_throw(*batch_id);
        if (batch.chunks.empty())
            throw Error(ErrorCode::no_eligible_batch, "batch " + *batch_id + " is empty");
        if (batch.state != BatchState::open && batch.state != BatchState::sealed &&
            batch.state != BatchState::failed)
            throw Error(ErrorCode::no_eligible_batch,
                        "batch " + *batch_id + " is " + batch_state_name(batch.state));
    } else {
        // Latest non-empty batch; ULID ids sort by creation time.
        auto all = deps_.store->list_batches();
        bool found = false;
        for (auto it = all.rbegin(); it != all.rend(); ++it) {
            if (!it->chunks.empty() &&
                (it->state == BatchState::open || it->state == BatchState::sealed)) {
                batch = *it;
                found = true;
                break;
            }
        }
        if (!found) throw Error(ErrorCode::no_eligible_batch, "no non-empty batch to evolve");
    }

    if (batch.state == BatchState::open) batch.transition(BatchState::sealed);
    batch.transition(BatchState::evolving);
    deps_.store->save_batch(batch);

    EvolutionRun run;
    run.run_id = prefixed_id("run");
    run.batch_id = batch.batch_id;
    run.depth = depth;
    run.phase = RunPhase::baseline;
    run.started_at = Timestamp::now();
    persist(run);
    return run.run_id;
}

void EvolutionEngine::drive(const std::string& run_id) {
    auto loaded = deps_.store->load_run(run_id);
    if (!loaded) throw Error(ErrorCode::unknown_run, "no run " + run_id);
    EvolutionRun run = *loaded;
    restore_runner_state(run);

    try {
        while (run_phase_active(run.phase)) {
            if (stop_requested(run.run_id)) throw StopSignal{};
            if (run.phase == RunPhase::baseline) {
                run_baseline(run);
            } else {
                run_iteration(run);
            }
        }
    } catch (const StopSignal&) {
        handle_stop(run);
    } catch (const Error& e) {
        fail_run(run, e.message());
    } catch (const std::exception& e) {
        fail_run(run, std::string("unexpected failure: ") + e.what());
    }
}

void EvolutionEngine::run_baseline(EvolutionRun& run) {
    boundary(run, "baseline");
    auto batch = load_batch_or_throw(run.batch_id);

    std::string prompt =
        "stage: task_evaluate\n"
        "mode: baseline\n"
        "Score the original transcripts attached to each batch chunk.\n"
        "Choose 4-7 keypoints per task on the scale missing/weak/adequate/strong.\n"
        "Output JSON: {\"tasks\": [{\"task_id\", \"source_chunk_index\", \"keypoints\": {name: level}}]}\n\n" +
        chunk_evidence(batch);
    std::vector<fs::path> inputs = {deps_.store->root() / deps_.store->batch_rel(batch.conversation_id,
                                                                                 batch.batch_id)};

    TaskEvaluateDoc parsed;
    std::string problem;
    bool ok = false;
    for (int attempt = 0; attempt < 2 && !ok; ++attempt) { // one re-invoke, then fail
        auto output = invoke_stage(run, nullptr, StageName::task_evaluate, prompt, inputs);
        if (!output.ok()) {
            problem = "task_evaluate produced no usable output";
            continue;
        }
        try {
            parsed = parse_task_evaluate(output.body, &batch, std::nullopt);
            ok = true;
        } catch (const Error& e) {
            problem = e.message();
        }
    }
    if (!ok) throw Error(ErrorCode::stage_output_invalid, "baseline: " + problem);

    atomic_write_file(deps_.store->run_dir(run.run_id) / "baseline" / "matrix.json",
                      parsed.normalized.dump(2) + "\n");
    run.baseline_matrix = parsed.matrix;
    run.tasks = parsed.bindings;
    run.phase = RunPhase::iterating;
    run.current_stage.reset();
    snapshot_runner_state(run); // consumption and progress move together
    persist(run); // keypoint set locked from here on
}

void EvolutionEngine::run_iteration(EvolutionRun& run) {
    // Resume the last iteration when it never reached a verdict; otherwise
    // open the next one.
    if (run.iterations.empty() || run.iterations.back().verdict.has_value()) {
        if (static_cast<int>(run.iterations.size()) >= run.depth.max_iterations)
            throw Error(ErrorCode::budget_exhausted, "iteration budget exhausted");
        IterationRecord iter;
        iter.index = static_cast<int>(run.iterations.size()) + 1;
        run.iterations.push_back(iter);
        persist(run);
    }
    IterationRecord& iter = run.iterations.back();
    const fs::path iter_dir = deps_.store->iter_dir(run.run_id, iter.index);
    const std::string tag = "iter" + std::to_string(iter.index);
    auto batch = load_batch_or_throw(run.batch_id);

    // 1. Locate
    if (!iter.stage_done("locate")) {
        boundary(run, tag + ":locate");
        std::string prompt = "stage: locate\n"
                             "Read the baseline traces and batch failures; write a diagnosis "
                             "without proposing fixes.\n\n" +
                             chunk_evidence(batch);
        if (iter.index > 1 && run.iterations[iter.index - 2].matrix)
            prompt += "\nPrior iteration matrix:\n" +
                      run.iterations[iter.index - 2].matrix->to_json().dump(2) + "\n";
        auto output = invoke_stage(run, &iter, StageName::locate, prompt, {});
        if (!output.ok())
            throw Error(ErrorCode::stage_output_invalid, "locate produced no usable output");
        atomic_write_file(iter_dir / "locate.md", output.body);
        iter.stage_artifacts["locate"] = (iter_dir / "locate.md").string();
        iter.completed_stages.push_back("locate");
        snapshot_runner_state(run);
        persist(run);
    }

    // 2+3. Plan loop
    if (!iter.stage_done("plan_loop")) {
        plan_loop(run, iter);
        iter.completed_stages.push_back("plan_loop");
        persist(run);
    }

    // 4+5. Implement / code-review loop
    if (!iter.stage_done("code_loop")) {
        code_loop(run, iter);
        iter.completed_stages.push_back("code_loop");
        persist(run);
    }

    // Build (runtime affordance around Task-Evaluate, not a reasoning stage)
    if (!iter.stage_done("build")) {
        boundary(run, tag + ":build");
        run.current_stage = "build";
        persist(run);
        auto image = deps_.builder->build(deps_.workspace->root(), *iter.commit_rev);
        iter.image = image;
        iter.completed_stages.push_back("build");
        run.current_stage.reset();
        persist(run);
    }

    // Trials
    if (!iter.stage_done("trials")) {
        boundary(run, tag + ":trials");
        run.current_stage = "trials";
        persist(run);
        trials::TrialPlan plan;
        plan.image = *iter.image;
        for (const auto& binding : run.tasks) plan.tasks.push_back({binding.task_id, binding.prompt});
        plan.trials_per_task = run.depth.trials_per_task;
        plan.workers_n = run.depth.trial_workers_n;

        trials::TrialEngineOptions opts;
        opts.trial_timeout_ms = deps_.trial_timeout_ms;
        opts.time_scale = deps_.time_scale;
        opts.runtime = deps_.runtime;
        opts.user_state_dir = deps_.user_state_dir;
        trials::TrialEngine trial_engine(*deps_.workers, opts);
        trial_engine.run_trials(plan, iter_dir / "trials");
        iter.completed_stages.push_back("trials");
        run.current_stage.reset();
        persist(run);
    }

    // 6. Task-Evaluate over the trial transcripts
    if (!iter.stage_done("task_evaluate")) {
        boundary(run, tag + ":task_evaluate");
        std::string prompt =
            "stage: task_evaluate\n"
            "mode: iteration\n"
            "Score the trial transcripts against the locked keypoint set.\n"
            "Output JSON with exactly the baseline's tasks and keypoints.\n";
        std::vector<fs::path> inputs = {deps_.store->run_dir(run.run_id) / "baseline" /
                                        "matrix.json"};
        auto locked = run.baseline_matrix.key_set();

        TaskEvaluateDoc parsed;
        std::string problem;
        bool ok = false;
        for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
            auto output = invoke_stage(run, &iter, StageName::task_evaluate, prompt, inputs);
            if (!output.ok()) {
                problem = "task_evaluate produced no usable output";
                continue;
            }
            try {
                parsed = parse_task_evaluate(output.body, nullptr, locked);
                ok = true;
            } catch (const Error& e) {
                problem = e.message();
            }
        }
        if (!ok) throw Error(ErrorCode::stage_output_invalid, tag + ": " + problem);

        atomic_write_file(iter_dir / "matrix.json", parsed.normalized.dump(2) + "\n");
        iter.stage_artifacts["task_evaluate"] = (iter_dir / "matrix.json").string();
        iter.matrix = parsed.matrix;
        iter.completed_stages.push_back("task_evaluate");
        snapshot_runner_state(run);
        persist(run);
    }

    // 7. Verdict
    boundary(run, tag + ":verdict");
    std::string verdict_prompt =
        "stage: verdict\n"
        "Synthesize the per-task evaluations and the cross-iteration keypoint matrix "
        "into one of CONVERGED / NEED_MORE_WORK / FUNDAMENTAL_LIMIT_MODEL / "
        "FUNDAMENTAL_LIMIT_ARCHITECTURE.\n"
        "Output JSON: {\"kind\", \"rationale\"}\n";
    std::vector<fs::path> verdict_inputs = {iter_dir / "matrix.json",
                                            deps_.store->run_dir(run.run_id) / "baseline" /
                                                "matrix.json"};

    Verdict verdict;
    std::string problem;
    bool ok = false;
    for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
        auto output = invoke_stage(run, &iter, StageName::verdict, verdict_prompt, verdict_inputs);
        if (!output.ok()) {
            problem = "verdict produced no usable output";
            continue;
        }
        json raw = json::parse(output.body, nullptr, false);
        if (raw.is_discarded()) {
            problem = "verdict output is not JSON";
            continue;
        }
        try {
            verdict = validate_verdict(raw, run);
            ok = true;
        } catch (const Error& e) {
            problem = e.message();
        }
    }
    if (!ok) throw Error(ErrorCode::stage_output_invalid, tag + ": " + problem);

    verdict = plateau_guard(run, verdict);
    atomic_write_file(iter_dir / "verdict.json", verdict.to_json().dump(2) + "\n");
    iter.stage_artifacts["verdict"] = (iter_dir / "verdict.json").string();
    iter.verdict = verdict;
    iter.completed_stages.push_back("verdict");
    snapshot_runner_state(run);
    persist(run);

    finalize(run, verdict);
}

void EvolutionEngine::plan_loop(EvolutionRun& run, IterationRecord& iter) {
    const fs::path iter_dir = deps_.store->iter_dir(run.run_id, iter.index);
    const std::string tag = "iter" + std::to_string(iter.index);
    const fs::path locate_path = iter_dir / "locate.md";

    // A crash mid-round replays the whole round; rounds_used moves only at
    // round completion, together with the runner consumption snapshot.
    for (int round = iter.plan_rounds_used + 1; round <= run.depth.plan_rounds; ++round) {
        boundary(run, tag + ":plan:round" + std::to_string(round));
        std::string plan_prompt = "stage: plan\nround: " + std::to_string(round) +
                                  "\nIdentify root cause and specify the fix: which files change, "
                                  "what logic is added, what is left alone.\n";
        auto plan_output = invoke_stage(run, &iter, StageName::plan, plan_prompt, {locate_path});
        if (!plan_output.ok())
            throw Error(ErrorCode::stage_output_invalid, "plan produced no usable output");
        atomic_write_file(iter_dir / "plan.md", plan_output.body);
        iter.stage_artifacts["plan"] = (iter_dir / "plan.md").string();

        std::string review_prompt =
            "stage: plan_review\nround: " + std::to_string(round) +
            "\nApprove, reject as architecturally off-target, or reject as too narrow.\n"
            "Output JSON: {\"decision\": \"approve|reject_off_target|reject_too_narrow\", "
            "\"notes\"}\n";
        auto review = invoke_json_stage(
            run, &iter, StageName::plan_review, review_prompt, {iter_dir / "plan.md"},
            [](const json& doc) -> std::string {
                auto kind = gate_decision_from_name(doc.value("decision", ""));
                if (!kind || *kind == GateDecisionKind::reject)
                    return "plan_review decision must be approve|reject_off_target|reject_too_narrow";
                return {};
            });

        auto decision = *gate_decision_from_name(review.value("decision", ""));
        json review_doc{{"round", round},
                        {"decision", gate_decision_name(decision)},
                        {"notes", review.value("notes", "")}};
        atomic_write_file(iter_dir / "plan_review.json", review_doc.dump(2) + "\n");
        iter.stage_artifacts["plan_review"] = (iter_dir / "plan_review.json").string();
        iter.plan_rounds_used = round;
        snapshot_runner_state(run);
        persist(run);

        if (decision == GateDecisionKind::approve) return;
    }
    throw Error(ErrorCode::budget_exhausted,
                "plan_review rejected " + std::to_string(run.depth.plan_rounds) + " rounds");
}

std::string EvolutionEngine::code_loop(EvolutionRun& run, IterationRecord& iter) {
    const fs::path iter_dir = deps_.store->iter_dir(run.run_id, iter.index);
    const std::string tag = "iter" + std::to_string(iter.index);

    if (!iter.loop_start_rev) {
        iter.loop_start_rev = deps_.workspace->current_rev();
        persist(run);
    } else {
        // Resuming a dead round: clear any half-done edits first.
        deps_.workspace->reset_hard(*iter.loop_start_rev);
    }
    const std::string r0 = *iter.loop_start_rev;

    for (int round = iter.code_rounds_used + 1; round <= run.depth.code_rounds; ++round) {
        boundary(run, tag + ":implement:round" + std::to_string(round));
        std::string implement_prompt =
            "stage: implement\nround: " + std::to_string(round) +
            "\nWrite the approved change in the workspace as a single git commit.\n";
        auto implement_output = invoke_stage(run, &iter, StageName::implement, implement_prompt,
                                             {iter_dir / "plan.md"});

        std::string head = deps_.workspace->current_rev();
        int commits = head == r0 ? 0 : deps_.workspace->commit_count(r0, head);
        if (!implement_output.ok() || commits != 1) {
            // ImplementNoCommit (or a multi-commit violation): treated as a
            // rejected round; the tree goes back to the loop start.
            deps_.workspace->reset_hard(r0);
            json review_doc{{"round", round},
                            {"decision", "reject"},
                            {"notes", "implement produced " + std::to_string(commits) +
                                          " commits (exactly 1 required)"}};
            atomic_write_file(iter_dir / "code_review.json", review_doc.dump(2) + "\n");
            iter.stage_artifacts["code_review"] = (iter_dir / "code_review.json").string();
            iter.code_rounds_used = round;
            snapshot_runner_state(run);
            persist(run);
            continue;
        }

        std::string diff = deps_.workspace->diff(r0, head);
        boundary(run, tag + ":code_review:round" + std::to_string(round));
        std::string review_prompt = "stage: code_review\nround: " + std::to_string(round) +
                                    "\nReview the diff against the plan; approve or reject.\n"
                                    "Output JSON: {\"decision\": \"approve|reject\", \"notes\"}\n\n" +
                                    diff;
        auto review = invoke_json_stage(
            run, &iter, StageName::code_review, review_prompt, {iter_dir / "plan.md"},
            [](const json& doc) -> std::string {
                auto kind = gate_decision_from_name(doc.value("decision", ""));
                if (!kind ||
                    (*kind != GateDecisionKind::approve && *kind != GateDecisionKind::reject))
                    return "code_review decision must be approve|reject";
                return {};
            });

        auto decision = *gate_decision_from_name(review.value("decision", ""));
        json review_doc{{"round", round},
                        {"decision", gate_decision_name(decision)},
                        {"notes", review.value("notes", "")}};
        atomic_write_file(iter_dir / "code_review.json", review_doc.dump(2) + "\n");
        iter.stage_artifacts["code_review"] = (iter_dir / "code_review.json").string();
        iter.code_rounds_used = round;
        snapshot_runner_state(run);

        if (decision == GateDecisionKind::approve) {
            iter.commit_rev = head;
            atomic_write_file(iter_dir / "diff.patch", diff);
            iter.stage_artifacts["implement"] = (iter_dir / "diff.patch").string();
            persist(run);
            return head;
        }
        deps_.workspace->reset_hard(r0); // reject: hard reset between rounds
        persist(run);
    }
    throw Error(ErrorCode::budget_exhausted,
                "code_review rejected " + std::to_string(run.depth.code_rounds) +
                    " rounds; workspace left at loop start");
}

Verdict EvolutionEngine::validate_verdict(const json& raw, EvolutionRun& run) {
    if (!raw.is_object() || !raw.contains("kind"))
        throw Error(ErrorCode::stage_output_invalid, "verdict output missing kind");
    auto kind = verdict_kind_from_name(raw["kind"].get<std::string>());
    if (!kind)
        throw Error(ErrorCode::stage_output_invalid, "unknown verdict kind " + raw["kind"].dump());
    Verdict verdict;
    verdict.kind = *kind;
    verdict.rationale = raw.value("rationale", "");
    verdict.forced_by_plateau = false; // only the plateau guard may set this
    (void)run;
    return verdict;
}

Verdict EvolutionEngine::plateau_guard(EvolutionRun& run, Verdict verdict) {
    // Downgrade applies to NEED_MORE_WORK only; FUNDAMENTAL_LIMIT verdicts are
    // never overridden.
    if (verdict.kind != VerdictKind::need_more_work) return verdict;

    const int window = run.depth.plateau_window;
    const int n = static_cast<int>(run.iterations.size());
    if (n < window) return verdict;

    // The last `window` iterations must each show no improvement over their
    // immediate predecessor (iteration 1 compares against the baseline).
    for (int i = n - window; i < n; ++i) {
        const auto& current = run.iterations[static_cast<std::size_t>(i)].matrix;
        if (!current) return verdict;
        const KeypointMatrix& prior =
            i == 0 ? run.baseline_matrix : *run.iterations[static_cast<std::size_t>(i - 1)].matrix;
        if (matrix_delta(prior, *current).any_improved) return verdict;
    }

    // Forced convergence at the current peak: max score_sum, earliest tie.
    int peak = 1;
    int best = -1;
    for (int i = 0; i < n; ++i) {
        const auto& matrix = run.iterations[static_cast<std::size_t>(i)].matrix;
        if (!matrix) continue;
        int score = matrix->score_sum();
        if (score > best) {
            best = score;
            peak = i + 1;
        }
    }
    run.peak_iteration = peak;
    run.candidate_image = run.iterations[static_cast<std::size_t>(peak - 1)].image;

    Verdict forced;
    forced.kind = VerdictKind::converged;
    forced.forced_by_plateau = true;
    forced.rationale = "no keypoint improved across the last " + std::to_string(window) +
                       " iterations; converged at peak iteration " + std::to_string(peak) +
                       " (was: " + verdict.rationale + ")";
    return forced;
}

void EvolutionEngine::finalize(EvolutionRun& run, const Verdict& verdict) {
    auto batch = load_batch_or_throw(run.batch_id);
    auto fire = [&](const std::string& event, const std::string& detail) {
        json payload{{"run_id", run.run_id}, {"batch_id", run.batch_id}, {"detail", detail}};
        if (run.candidate_image) payload["image_id"] = run.candidate_image->image_id;
        deps_.webhooks->fire(event, payload); // retried inside; never blocks state
    };

    switch (verdict.kind) {
    case VerdictKind::converged: {
        if (!verdict.forced_by_plateau) run.candidate_image = run.iterations.back().image;
        run.phase = RunPhase::converged;
        run.current_stage.reset();
        persist(run);
        batch.transition(BatchState::ready_to_apply);
        deps_.store->save_batch(batch);
        fire("evolution-converged", verdict.rationale);
        return; // run pauses awaiting apply
    }
    case VerdictKind::fundamental_limit_model:
        run.phase = RunPhase::failed_model_limit;
        break;
    case VerdictKind::fundamental_limit_architecture:
        run.phase = RunPhase::failed_architecture_limit;
        break;
    case VerdictKind::need_more_work:
        if (static_cast<int>(run.iterations.size()) < run.depth.max_iterations) return; // next iteration
        run.phase = RunPhase::failed; // budget exhausted with work remaining
        break;
    }

    run.current_stage.reset();
    persist(run);
    batch.transition(BatchState::failed);
    deps_.store->save_batch(batch);
    fire("evolution-failed", verdict.rationale.empty() ? run_phase_name(run.phase) : verdict.rationale);
}

void EvolutionEngine::fail_run(EvolutionRun& run, const std::string& detail) {
    run.phase = RunPhase::failed;
    run.current_stage.reset();
    persist(run);
    auto batch = deps_.store->load_batch(run.batch_id);
    if (batch && batch->state == BatchState::evolving) {
        batch->transition(BatchState::failed);
        deps_.store->save_batch(*batch);
    }
    deps_.webhooks->fire("evolution-failed",
                         {{"run_id", run.run_id}, {"batch_id", run.batch_id}, {"detail", detail}});
}

void EvolutionEngine::handle_stop(EvolutionRun& run) {
    run.phase = RunPhase::stopped;
    run.current_stage.reset();
    persist(run);
    auto batch = deps_.store->load_batch(run.batch_id);
    if (batch && batch->state == BatchState::evolving) {
        batch->transition(BatchState::sealed); // hand the batch back
        deps_.store->save_batch(*batch);
    }
    deps_.store->remove(fs::path("runs") / run.run_id / "control.json");
}

void EvolutionEngine::stop(const std::string& run_id) {
    auto run = deps_.store->load_run(run_id);
    if (!run) throw Error(ErrorCode::unknown_run, "no run " + run_id);
    if (!run_phase_active(run->phase))
        throw Error(ErrorCode::run_not_active, "run " + run_id + " is " + run_phase_name(run->phase));

    deps_.store->write_doc(fs::path("runs") / run_id / "control.json", {{"stop_requested", true}});

    // Unblock a collect() in flight; the workspace reset happens at the
    // boundary that observes the flag.
    std::lock_guard<std::mutex> lock(current_mu_);
    if (current_runner_ && current_handle_) current_runner_->cancel(*current_handle_);
}

std::string EvolutionEngine::restart(const std::string& run_id) {
    auto prior = deps_.store->load_run(run_id);
    if (!prior) throw Error(ErrorCode::unknown_run, "no run " + run_id);
    if (run_phase_active(prior->phase))
        throw Error(ErrorCode::run_already_active, "run " + run_id + " is still active");
    if (prior->phase == RunPhase::converged)
        throw Error(ErrorCode::run_not_active, "run " + run_id + " converged; nothing to restart");
    if (auto active = deps_.store->find_active_run())
        throw Error(ErrorCode::run_already_active, "run " + active->run_id + " is active");

    auto batch = load_batch_or_throw(prior->batch_id);
    batch.transition(BatchState::evolving); // from sealed (stopped) or failed
    deps_.store->save_batch(batch);

    EvolutionRun next;
    next.run_id = prefixed_id("run");
    next.batch_id = prior->batch_id;
    next.depth = prior->depth; // restart inherits the original depth
    next.started_at = Timestamp::now();
    if (!prior->baseline_matrix.empty()) {
        // The baseline scores original transcripts, which do not change.
        next.baseline_matrix = prior->baseline_matrix;
        next.tasks = prior->tasks;
        next.phase = RunPhase::iterating;
        auto prior_baseline = deps_.store->run_dir(run_id) / "baseline" / "matrix.json";
        if (auto text = read_file(prior_baseline))
            atomic_write_file(deps_.store->run_dir(next.run_id) / "baseline" / "matrix.json", *text);
    } else {
        next.phase = RunPhase::baseline;
    }
    persist(next);
    return next.run_id;
}

nlohmann::json EvolutionEngine::apply(std::optional<std::string> batch_id) {
    Batch batch;
    if (batch_id) {
        batch = load_batch_or_throw(*batch_id);
    } else {
        std::vector<Batch> ready;
        for (const auto& b : deps_.store->list_batches())
            if (b.state == BatchState::ready_to_apply) ready.push_back(b);
        if (ready.empty())
            throw Error(ErrorCode::no_eligible_batch, "no batch is ready_to_apply");
        if (ready.size() > 1) {
            std::string ids;
            for (const auto& b : ready) ids += (ids.empty() ? "" : ", ") + b.batch_id;
            throw Error(ErrorCode::bad_request, "multiple batches ready_to_apply: " + ids);
        }
        batch = ready[0];
    }
    if (batch.state != BatchState::ready_to_apply)
        throw Error(ErrorCode::no_eligible_batch,
                    "batch " + batch.batch_id + " is " + batch_state_name(batch.state));

    // The converged run carries the candidate image.
    std::optional<EvolutionRun> source;
    for (const auto& id : deps_.store->list_run_ids()) {
        auto run = deps_.store->load_run(id);
        if (run && run->batch_id == batch.batch_id && run->phase == RunPhase::converged)
            if (!source || run->run_id > source->run_id) source = run;
    }
    if (!source || !source->candidate_image)
        throw Error(ErrorCode::no_eligible_batch,
                    "no converged run with a candidate image for batch " + batch.batch_id);

    hostd::SwapRequest request;
    request.request_id = prefixed_id("swap");
    request.candidate_image = *source->candidate_image;
    request.batch_id = batch.batch_id;
    request.run_id = source->run_id;
    request.requested_at = Timestamp::now();
    atomic_write_file(deps_.store->swap_request_path(), request.to_json().dump(2) + "\n");

    return {{"request_id", request.request_id},
            {"batch_id", batch.batch_id},
            {"run_id", source->run_id},
            {"image_id", request.candidate_image.image_id}};
}

nlohmann::json EvolutionEngine::status(std::optional<std::string> run_id) const {
    std::optional<EvolutionRun> run;
    if (run_id) {
        run = deps_.store->load_run(*run_id);
        if (!run) throw Error(ErrorCode::unknown_run, "no run " + *run_id);
    } else {
        auto ids = deps_.store->list_run_ids();
        if (ids.empty()) throw Error(ErrorCode::unknown_run, "no runs exist");
        run = deps_.store->load_run(ids.back());
    }

    json iterations = json::array();
    json verdict_history = json::array();
    for (const auto& iter : run->iterations) {
        json entry{{"index", iter.index}};
        if (iter.matrix) entry["score_sum"] = iter.matrix->score_sum();
        if (iter.image) entry["image_id"] = iter.image->image_id;
        if (iter.verdict) {
            entry["verdict"] = verdict_kind_name(iter.verdict->kind);
            verdict_history.push_back(iter.verdict->to_json());
        }
        entry["plan_rounds_used"] = iter.plan_rounds_used;
        entry["code_rounds_used"] = iter.code_rounds_used;
        iterations.push_back(entry);
    }

    json report{{"run_id", run->run_id},
                {"batch_id", run->batch_id},
                {"phase", run_phase_name(run->phase)},
                {"depth", run->depth.name},
                {"iteration_index", run->iterations.size()},
                {"iterations", iterations},
                {"verdict_history", verdict_history}};
    if (run->current_stage) report["current_stage"] = *run->current_stage;
    if (!run->baseline_matrix.empty()) report["baseline_score_sum"] = run->baseline_matrix.score_sum();
    if (run->candidate_image) report["candidate_image"] = run->candidate_image->image_id;
    if (run->peak_iteration) report["peak_iteration"] = *run->peak_iteration;
    return report;
}

nlohmann::json EvolutionEngine::batches() const {
    json out = json::array();
    for (const auto& b : deps_.store->list_batches()) out.push_back(b.summary_json());
    return {{"batches", out}};
}

nlohmann::json EvolutionEngine::batch(const std::string& batch_id) const {
    return load_batch_or_throw(batch_id).to_json();
}

runners::StageOutput EvolutionEngine::invoke_stage(EvolutionRun& run, IterationRecord* iter,
                                                   StageName stage, const std::string& prompt,
                                                   const std::vector<fs::path>& inputs) {
    if (iter) {
        // Loop bound: <= 1 + 2*plan_rounds + 2*code_rounds + 1 + 1 per
        // iteration. Schema-invalid re-invokes count against it too.
        const int cap = 2 + 2 * run.depth.plan_rounds + 2 * run.depth.code_rounds + 2;
        if (iter->runner_invocations >= cap)
            throw Error(ErrorCode::budget_exhausted,
                        "iteration invocation cap (" + std::to_string(cap) + ") reached");
        iter->runner_invocations++;
    }

    const std::string provider = provider_for(stage);
    auto runner = deps_.registry->get(deps_.default_provider,
                                      provider == deps_.default_provider
                                          ? std::nullopt
                                          : std::optional<std::string>(provider));

    runners::RunnerSpec spec;
    spec.provider = provider;
    spec.stage = stage;
    spec.workspace_scope = deps_.workspace->root();
    spec.prompt = prompt;
    spec.inputs = inputs;
    spec.timeout_ms = scaled_ms(deps_.runner_timeout_ms, deps_.time_scale);

    run.current_stage = stage_name_str(stage);
    persist(run);

    auto plan = runner->prepare(spec);
    auto handle = runner->launch(plan);
    {
        std::lock_guard<std::mutex> lock(current_mu_);
        current_runner_ = runner;
        current_handle_ = handle;
    }
    auto output = runner->collect(handle);
    {
        std::lock_guard<std::mutex> lock(current_mu_);
        current_runner_.reset();
        current_handle_.reset();
    }

    if (output.final_state == runners::HandleState::cancelled && stop_requested(run.run_id))
        throw StopSignal{};
    return output;
}

nlohmann::json EvolutionEngine::invoke_json_stage(
    EvolutionRun& run, IterationRecord* iter, StageName stage, const std::string& prompt,
    const std::vector<fs::path>& inputs, const std::function<std::string(const json&)>& check) {
    std::string problem;
    for (int attempt = 0; attempt < 2; ++attempt) { // one re-invoke, then fail
        auto output = invoke_stage(run, iter, stage, prompt, inputs);
        if (!output.ok()) {
            problem = stage_name_str(stage) + " produced no usable output";
            continue;
        }
        json doc = json::parse(output.body, nullptr, false);
        if (doc.is_discarded() || !doc.is_object()) {
            problem = stage_name_str(stage) + " output is not a JSON object";
            continue;
        }
        problem = check(doc);
        if (problem.empty()) return doc;
    }
    throw Error(ErrorCode::stage_output_invalid, problem);
}

void EvolutionEngine::boundary(EvolutionRun& run, const std::string& label) {
    persist(run); // state on disk before anything can kill us here
    if (deps_.boundary_hook) deps_.boundary_hook(label);
    if (stop_requested(run.run_id)) throw StopSignal{};
}

bool EvolutionEngine::stop_requested(const std::string& run_id) const {
    auto doc = deps_.store->read_doc(fs::path("runs") / run_id / "control.json");
    return doc && doc->value("stop_requested", false);
}

void EvolutionEngine::persist(EvolutionRun& run) { deps_.store->save_run(run); }

void EvolutionEngine::snapshot_runner_state(EvolutionRun& run) {
    json state = json::object();
    for (const auto& name : deps_.registry->names()) {
        auto runner = deps_.registry->get(name);
        if (auto scripted = std::dynamic_pointer_cast<runners::ScriptedRunner>(runner))
            state[name] = scripted->consumption_state();
    }
    run.runner_state = state;
}

void EvolutionEngine::restore_runner_state(const EvolutionRun& run) {
    if (!run.runner_state.is_object()) return;
    for (const auto& [name, snapshot] : run.runner_state.items()) {
        try {
            auto runner = deps_.registry->get(name);
            if (auto scripted = std::dynamic_pointer_cast<runners::ScriptedRunner>(runner))
                scripted->restore_consumption(snapshot);
        } catch (const Error&) {
            // provider no longer registered; nothing to restore
        }
    }
}

std::string EvolutionEngine::chunk_evidence(const Batch& batch) const {
    std::string out = "batch: " + batch.batch_id + "\nchunks:\n";
    for (std::size_t i = 0; i < batch.chunks.size(); ++i) {
        const auto& chunk = batch.chunks[i];
        out += "- index " + std::to_string(i) + " (" + chunk.chunk_id + ")\n";
        for (const auto& entry : chunk.transcript)
            out += "    " + role_name(entry.role) + ": " + entry.content + "\n";
    }
    return out;
}

} // namespace moss::pipeline
