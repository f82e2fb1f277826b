#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace moss::cli {

enum class OutputMode { human, json_mode };

struct CliConfig {
    std::string gateway_http_base; // e.g. http://127.0.0.1:8800
    std::filesystem::path hostd_socket;
    OutputMode output_mode{OutputMode::human};
};

// Environment: MOSS_GATEWAY_URL, MOSS_HOSTD_SOCKET, or MOSS_CONFIG pointing at
// a JSON config file carrying gateway_url / hostd_socket.
CliConfig config_from_env();

// Exit codes: 0 success, 1 domain error, 2 usage error, 3 transport failure.
constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;
constexpr int kExitTransport = 3;

// `args` excludes the program name, e.g. {"evo", "status", "--json"}.
int dispatch(const std::vector<std::string>& args, const CliConfig& config, std::ostream& out,
             std::ostream& err);

// Stable rendering: human mode is fixed-layout text; json mode is the exact
// response document (byte-stable for identical inputs).
std::string render(const nlohmann::json& report, const std::string& kind, OutputMode mode);

} // namespace moss::cli
