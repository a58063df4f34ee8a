#include "cli.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

int main(int argc, char** argv)
{
    spdlog::set_default_logger(spdlog::stderr_color_mt("chainobs"));
    spdlog::set_level(spdlog::level::info);
    if (const char* level = std::getenv("CHAINOBS_LOG")) spdlog::set_level(spdlog::level::from_str(level));

    std::vector<std::string> args(argv + 1, argv + argc);
    return chainobs::cli::run(args, std::cout, std::cerr);
}
