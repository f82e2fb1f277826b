#include "moss/cli/cli.hpp"

#include <iostream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    auto config = moss::cli::config_from_env();
    return moss::cli::dispatch(args, config, std::cout, std::cerr);
}
