#include "moss/core/errors.hpp"

#include <array>
#include <utility>

namespace moss {

namespace {

constexpr std::array<std::pair<ErrorCode, std::string_view>, 30> kNames{{
    {ErrorCode::io_failure, "io_failure"},
    {ErrorCode::malformed_record, "malformed_record"},
    {ErrorCode::malformed_script, "malformed_script"},
    {ErrorCode::key_set_mismatch, "key_set_mismatch"},
    {ErrorCode::invalid_transition, "invalid_transition"},
    {ErrorCode::unknown_session, "unknown_session"},
    {ErrorCode::unknown_run, "unknown_run"},
    {ErrorCode::unknown_batch, "unknown_batch"},
    {ErrorCode::unknown_image, "unknown_image"},
    {ErrorCode::unknown_provider, "unknown_provider"},
    {ErrorCode::unknown_scenario, "unknown_scenario"},
    {ErrorCode::unknown_op, "unknown_op"},
    {ErrorCode::unknown_worker, "unknown_worker"},
    {ErrorCode::evaluator_failure, "evaluator_failure"},
    {ErrorCode::run_already_active, "run_already_active"},
    {ErrorCode::run_not_active, "run_not_active"},
    {ErrorCode::no_eligible_batch, "no_eligible_batch"},
    {ErrorCode::stage_output_invalid, "stage_output_invalid"},
    {ErrorCode::budget_exhausted, "budget_exhausted"},
    {ErrorCode::build_failed, "build_failed"},
    {ErrorCode::implement_no_commit, "implement_no_commit"},
    {ErrorCode::launch_failure, "launch_failure"},
    {ErrorCode::timeout, "timeout"},
    {ErrorCode::runtime_failure, "runtime_failure"},
    {ErrorCode::worker_spawn_failed, "worker_spawn_failed"},
    {ErrorCode::isolation_violation, "isolation_violation"},
    {ErrorCode::empty_scores, "empty_scores"},
    {ErrorCode::delivery_failed, "delivery_failed"},
    {ErrorCode::bad_request, "bad_request"},
    {ErrorCode::fatal_alert, "fatal_alert"},
}};

} // namespace

std::string_view code_name(ErrorCode code) {
    for (const auto& [c, n] : kNames) {
        if (c == code) return n;
    }
    return "internal";
}

ErrorCode code_from_name(std::string_view name) {
    for (const auto& [c, n] : kNames) {
        if (n == name) return c;
    }
    return ErrorCode::internal;
}

} // namespace moss
