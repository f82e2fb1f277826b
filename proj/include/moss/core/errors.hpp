#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace moss {

// Wire-stable error codes. The string form of each code is what RPC and HTTP
// error responses carry; keep them in sync with code_name().
enum class ErrorCode {
    io_failure,
    malformed_record,
    malformed_script,
    key_set_mismatch,
    invalid_transition,
    unknown_session,
    unknown_run,
    unknown_batch,
    unknown_image,
    unknown_provider,
    unknown_scenario,
    unknown_op,
    unknown_worker,
    evaluator_failure,
    run_already_active,
    run_not_active,
    no_eligible_batch,
    stage_output_invalid,
    budget_exhausted,
    build_failed,
    implement_no_commit,
    launch_failure,
    timeout,
    runtime_failure,
    worker_spawn_failed,
    isolation_violation,
    empty_scores,
    delivery_failed,
    bad_request,
    fatal_alert,
    internal,
};

std::string_view code_name(ErrorCode code);
ErrorCode code_from_name(std::string_view name);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(code_name(code)) + ": " + message), code_(code),
          message_(message) {}

    ErrorCode code() const { return code_; }
    const std::string& message() const { return message_; }

private:
    ErrorCode code_;
    std::string message_;
};

} // namespace moss
